"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numeric or convergence
error, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import checks, harness, oracles
from . import geometry as geo
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    DomainError,
    InvariantViolation,
    NumericError,
    UnsupportedCombinationError,
)
from .game import build_game, uniform_profile

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4

# flag dest -> config key
_OVERRIDES = {
    "game": "game.name",
    "players": "game.players",
    "algorithm": "learner.algorithm",
    "regularizer": "learner.regularizer",
    "divergence": "learner.divergence",
    "mu": "learner.mu",
    "eta": "learner.eta",
    "t_sigma": "learner.t_sigma",
    "noise_std": "feedback.noise_std",
    "horizon": "run.horizon",
    "instances": "run.instances",
    "seed": "run.seed",
    "record_every": "run.record_every",
    "init": "run.init",
    "metrics": "run.metrics",
}


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment overrides (applied after the config file; the last flag wins)")
    g.add_argument("--game", help='game descriptor: "biased_rps" or "random:<actions>"')
    g.add_argument("--players", help="number of players in random payoff games (default 3)")
    g.add_argument("--algorithm", help="ftrl_sp, md_sp, mwu, omwu or ogd")
    g.add_argument("--regularizer", help="entropy, log_barrier or l2")
    g.add_argument("--divergence", help='kl, reverse_kl, l2, itakura_saito, alpha:<a>, renyi:<a> or none')
    g.add_argument("--mu", help="perturbation strength")
    g.add_argument("--eta", help="constant learning rate")
    g.add_argument("--t-sigma", dest="t_sigma", help='slingshot update interval, or "inf" to keep it fixed')
    g.add_argument("--noise-std", dest="noise_std", help='Gaussian feedback noise std, or "none" for full feedback')
    g.add_argument("--horizon", help="iterations per instance")
    g.add_argument("--instances", help="number of seeded instances")
    g.add_argument("--seed", help="master seed")
    g.add_argument("--record-every", dest="record_every", help="metric sampling stride")
    g.add_argument("--init", help="auto, uniform or random_interior")
    g.add_argument("--metrics", help='extra columns: comma list of div_to_perturbed, dist_to_nash, or "none"')
    o = p.add_argument_group("output")
    o.add_argument("--out", help="output directory (must be absent or empty unless --force)")
    o.add_argument("--threads", type=int, default=1, help="worker processes (capped by $SLINGSHOT_MAX_WORKERS)")
    o.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    o.add_argument("--dump-config", action="store_true", help="print the resolved config and exit without running")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slingshot",
        description="Learning dynamics with slingshot perturbation for monotone games.",
        epilog="exit codes: 0 ok, 2 config error, 3 numeric/convergence error, 4 invariant violation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a config file and/or flags")
    p.add_argument("config", nargs="?", help="config file ([game], [learner], [feedback], [run] sections)")
    _experiment_flags(p)

    p = sub.add_parser("preset", help="run a named preset or a preset group such as fig2")
    p.add_argument("name", help="preset name; use 'list' to print all names")
    _experiment_flags(p)

    p = sub.add_parser("oracle", help="solve a reference point and print it as JSON")
    p.add_argument("kind", choices=["nash", "perturbed"])
    p.add_argument("--game", default="biased_rps")
    p.add_argument("--players", type=int, default=3)
    p.add_argument("--seed", type=int, default=0, help="seed for random payoff games")
    p.add_argument("--divergence", default="kl")
    p.add_argument("--regularizer", default="entropy")
    p.add_argument("--mu", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=None, help="defaults: 1e-8 (nash), 1e-10 (perturbed)")

    p = sub.add_parser("check", help="run a built-in invariant suite")
    p.add_argument("suite", help=f"one of: {', '.join(checks.SUITES)}")
    return parser


def _overrides(args) -> Dict[str, str]:
    return {key: str(getattr(args, dest)) for dest, key in _OVERRIDES.items() if getattr(args, dest) is not None}


def _prepare_out(path: Optional[str], force: bool) -> Path:
    if path is None:
        raise ConfigError("--out is required")
    out = Path(path)
    if out.exists():
        if not out.is_dir():
            raise ConfigError(f"{out} exists and is not a directory")
        if any(out.iterdir()) and not force:
            raise ConfigError(f"{out} is not empty; pass --force to write into it")
    return out


def _run_configs(configs: Dict[str, harness.ExperimentConfig], args, nested: bool) -> int:
    if args.dump_config:
        for name, cfg in configs.items():
            if nested:
                print(f"# preset {name}")
            print(harness.format_config(cfg))
        return EXIT_OK
    out = _prepare_out(args.out, args.force)
    for name, cfg in configs.items():
        result = harness.run_experiment(cfg, args.threads)
        target = out / name if nested else out
        harness.write_outputs(result, target)
        last = result.summary[-1]
        print(f"{name}: t={last.t} mean exploitability {last.mean_exploitability:.6g} (se {last.stderr:.3g}) -> {target}")
    return EXIT_OK


def _cmd_run(args) -> int:
    mapping = harness.parse_config_text(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    mapping.update(_overrides(args))
    cfg = harness.config_from_mapping(mapping)
    return _run_configs({"run": cfg}, args, nested=False)


def _cmd_preset(args) -> int:
    if args.name == "list":
        print("\n".join(harness.paper_presets()))
        return EXIT_OK
    group = harness.resolve_presets(args.name)
    ov = _overrides(args)
    configs = {name: cfg.with_overrides(ov) if ov else cfg for name, cfg in group.items()}
    return _run_configs(configs, args, nested=len(configs) > 1)


def _cmd_oracle(args) -> int:
    game = build_game(args.game, args.seed, args.players)
    if args.kind == "nash":
        res = oracles.solve_nash_small(game, args.tol or 1e-8)
    else:
        G = geo.Divergence.parse(args.divergence)
        reg = geo.Regularizer.parse(args.regularizer)
        res = oracles.solve_perturbed_equilibrium(game, G, reg, args.mu, uniform_profile(game), args.tol or 1e-10)
    print(json.dumps({"kind": args.kind, "game": args.game, **res.to_dict()}))
    return EXIT_OK


def _cmd_check(args) -> int:
    for r in checks.run_suite(args.suite):
        print(r.line())
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "preset": _cmd_preset, "oracle": _cmd_oracle, "check": _cmd_check}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, DimensionError, UnsupportedCombinationError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence error: {exc} (best residual {exc.best_residual:.3g})", file=sys.stderr)
        return EXIT_NUMERIC
    except (NumericError, DomainError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())
