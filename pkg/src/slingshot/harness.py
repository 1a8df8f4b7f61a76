"""Seeded multi-instance experiments, aggregation and CSV output.

Instances are stepped in fixed-size chunks, each chunk as one numpy batch.
The chunking depends only on the instance count, never on the number of
workers, so outputs are byte-identical for any worker count.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import geometry as geo
from .errors import ConfigError, SlingshotError
from .game import GameSpec, build_game, random_interior_profile, uniform_profile
from .geometry import Divergence, Regularizer, Segments
from .learners import (
    Constant,
    GaussianStream,
    LearnerConfig,
    NoiseModel,
    init_batch,
    iterate_batch,
)

CHUNK = 10
WORKERS_ENV = "SLINGSHOT_MAX_WORKERS"
METRICS = ("div_to_perturbed", "dist_to_nash")
INITS = ("auto", "uniform", "random_interior")
_MASK64 = (1 << 64) - 1


# -- seeds -----------------------------------------------------------------------


def splitmix64(x: int) -> int:
    """SplitMix64 output function applied to ``x + golden gamma``."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """The ``index``-th output of a SplitMix64 generator started at ``seed``.

    The generator state after ``index + 1`` increments is
    ``seed + (index + 1) * gamma``, which is distinct for distinct indices
    below ``2**64``; the output mix is a bijection, so derived seeds are
    pairwise distinct too.
    """
    if index < 0:
        raise ConfigError(f"seed index must be nonnegative, got {index}")
    state = (seed + index * 0x9E3779B97F4A7C15) & _MASK64
    return splitmix64(state)


def instance_seed(master_seed: int, instance_id: int) -> int:
    return derive_seed(master_seed, instance_id)


# sub-streams of one instance seed
_GAME, _INIT, _NOISE = 0, 1, 2


# -- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a game family, a learner, feedback and the sampling protocol.

    ``init="auto"`` picks a random interior start for the biased RPS game and
    the uniform profile for random payoff games.
    """

    game: str = "biased_rps"
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    noise: NoiseModel = NoiseModel()
    horizon: int = 100_000
    n_instances: int = 100
    master_seed: int = 0
    record_every: int = 100
    init: str = "auto"
    n_players: int = 3
    metrics: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.horizon < 1 or self.record_every < 1 or self.n_instances < 1:
            raise ConfigError("horizon, record_every and instances must all be at least 1")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}; expected one of {INITS}")
        if not 0 <= self.master_seed <= _MASK64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}; expected some of {METRICS}")
        if "div_to_perturbed" in self.metrics:
            if not self.learner.perturbed or self.learner.t_sigma is not None:
                raise ConfigError("div_to_perturbed needs a perturbed learner with a fixed slingshot (t_sigma = inf)")
            if not geo.is_certified(self.learner.divergence, self.learner.regularizer):
                raise ConfigError("div_to_perturbed needs a certified divergence/regularizer pair")
        build_game(self.game, 0, self.n_players)  # validates the descriptor

    @property
    def resolved_init(self) -> str:
        if self.init != "auto":
            return self.init
        return "random_interior" if self.game == "biased_rps" else "uniform"

    @property
    def n_slingshot_updates(self) -> int:
        t_sigma = self.learner.t_sigma
        return 0 if t_sigma is None else self.horizon // t_sigma

    def with_overrides(self, overrides: Dict[str, str]) -> "ExperimentConfig":
        return config_from_mapping({**config_to_mapping(self), **overrides})


# Config files: "[section]" headers and "key = value" lines; "#" starts a comment.
_KEYS = {
    "game": ("name", "players"),
    "learner": ("algorithm", "regularizer", "divergence", "mu", "eta", "t_sigma", "reset_on_slingshot"),
    "feedback": ("noise_std",),
    "run": ("horizon", "instances", "seed", "record_every", "init", "metrics"),
}


def config_to_mapping(cfg: ExperimentConfig) -> Dict[str, str]:
    """Flat ``section.key -> text`` view; floats use ``repr`` so they round-trip exactly."""
    lc = cfg.learner
    if not isinstance(lc.rate, Constant):
        raise ConfigError("only constant learning rates can be written to a config file")
    return {
        "game.name": cfg.game,
        "game.players": str(cfg.n_players),
        "learner.algorithm": lc.algorithm,
        "learner.regularizer": lc.regularizer.kind,
        "learner.divergence": "none" if lc.divergence is None else str(lc.divergence),
        "learner.mu": repr(float(lc.mu)),
        "learner.eta": repr(float(lc.rate.eta)),
        "learner.t_sigma": "inf" if lc.t_sigma is None else str(lc.t_sigma),
        "learner.reset_on_slingshot": "true" if lc.reset_on_slingshot else "false",
        "feedback.noise_std": "none" if cfg.noise.std is None else repr(float(cfg.noise.std)),
        "run.horizon": str(cfg.horizon),
        "run.instances": str(cfg.n_instances),
        "run.seed": str(cfg.master_seed),
        "run.record_every": str(cfg.record_every),
        "run.init": cfg.init,
        "run.metrics": ",".join(cfg.metrics) if cfg.metrics else "none",
    }


def _int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from exc


def _float(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from exc


def _none(text: str) -> bool:
    return text.strip().lower() in ("none", "inf", "")


def config_from_mapping(m: Dict[str, str]) -> ExperimentConfig:
    """Inverse of :func:`config_to_mapping`; missing keys take the defaults."""
    known = {f"{s}.{k}" for s, keys in _KEYS.items() for k in keys}
    unknown = sorted(set(m) - known)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; valid keys are {sorted(known)}")
    v = {**config_to_mapping(ExperimentConfig()), **m}
    div = None if v["learner.divergence"].strip().lower() == "none" else Divergence.parse(v["learner.divergence"])
    t_sigma = None if _none(v["learner.t_sigma"]) else _int(v["learner.t_sigma"], "learner.t_sigma")
    reset = v["learner.reset_on_slingshot"].strip().lower()
    if reset not in ("true", "false"):
        raise ConfigError(f"learner.reset_on_slingshot: expected true or false, got {reset!r}")
    learner = LearnerConfig(
        algorithm=v["learner.algorithm"].strip(),
        regularizer=Regularizer.parse(v["learner.regularizer"]),
        divergence=div,
        mu=_float(v["learner.mu"], "learner.mu"),
        rate=Constant(_float(v["learner.eta"], "learner.eta")),
        t_sigma=t_sigma,
        reset_on_slingshot=reset == "true",
    )
    std_text = v["feedback.noise_std"]
    noise = NoiseModel() if _none(std_text) else NoiseModel.gaussian(_float(std_text, "feedback.noise_std"))
    metrics_text = v["run.metrics"].strip()
    metrics = () if _none(metrics_text) else tuple(s.strip() for s in metrics_text.split(",") if s.strip())
    return ExperimentConfig(
        game=v["game.name"].strip(),
        learner=learner,
        noise=noise,
        horizon=_int(v["run.horizon"], "run.horizon"),
        n_instances=_int(v["run.instances"], "run.instances"),
        master_seed=_int(v["run.seed"], "run.seed"),
        record_every=_int(v["run.record_every"], "run.record_every"),
        init=v["run.init"].strip(),
        n_players=_int(v["game.players"], "game.players"),
        metrics=metrics,
    )


def parse_config_text(text: str) -> Dict[str, str]:
    """Read the sectioned key-value format into a flat ``section.key`` mapping."""
    out: Dict[str, str] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _KEYS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]; expected one of {list(_KEYS)}")
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key = key.strip()
        if key not in _KEYS[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]; expected one of {_KEYS[section]}")
        out[f"{section}.{key}"] = value.strip()
    return out


def format_config(cfg: ExperimentConfig) -> str:
    m = config_to_mapping(cfg)
    lines = []
    for section, keys in _KEYS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {m[f'{section}.{k}']}" for k in keys)
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> ExperimentConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text(encoding="utf-8")))


# -- records ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    instance: int
    t: int
    exploitability: float
    div_to_perturbed: Optional[float] = None
    dist_to_nash: Optional[float] = None


@dataclass(frozen=True)
class SummaryRow:
    t: int
    mean_exploitability: float
    stderr: float
    n: int


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: List[RunRecord]
    summary: List[SummaryRow]

    def final(self, instance: int) -> RunRecord:
        return [r for r in self.records if r.instance == instance][-1]

    def at(self, t: int) -> SummaryRow:
        for row in self.summary:
            if row.t == t:
                return row
        raise KeyError(t)


def checkpoints(horizon: int, record_every: int) -> List[int]:
    """Iterations recorded: every positive multiple of ``record_every`` up to ``horizon``, plus ``horizon``."""
    ts = list(range(record_every, horizon + 1, record_every))
    if not ts or ts[-1] != horizon:
        ts.append(horizon)
    return ts


# -- running ---------------------------------------------------------------------------


def _batch_exploitability(matrix_t, x, seg: Segments):
    grad = x @ matrix_t if matrix_t.ndim == 2 else np.matmul(x[:, None, :], matrix_t)[:, 0, :]
    gap = (seg.max(grad) - seg.sum(grad * x)).sum(axis=-1)
    return np.maximum(gap, 0.0)


def _instance_setup(cfg: ExperimentConfig, instance_id: int):
    seed = instance_seed(cfg.master_seed, instance_id)
    game = build_game(cfg.game, derive_seed(seed, _GAME), cfg.n_players)
    if cfg.resolved_init == "random_interior":
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, _INIT)))
        init = random_interior_profile(game, rng)
    else:
        init = uniform_profile(game)
    stream = GaussianStream(derive_seed(seed, _NOISE), game.size) if cfg.noise.std is not None else None
    return game, init, stream


def _references(cfg: ExperimentConfig, game: GameSpec, init):
    from . import oracles

    refs = {}
    if "div_to_perturbed" in cfg.metrics:
        lc = cfg.learner
        res = oracles.solve_perturbed_equilibrium(game, lc.divergence, lc.regularizer, lc.mu, init, 1e-10)
        refs["div_to_perturbed"] = game.flatten(res.point)
    if "dist_to_nash" in cfg.metrics:
        refs["dist_to_nash"] = game.flatten(oracles.solve_nash_small(game, 1e-9).point)
    return refs


def run_chunk(cfg: ExperimentConfig, instance_ids: Sequence[int]) -> List[RunRecord]:
    """Run the given instances as one batch and return their records, instance-major."""
    setups = [_instance_setup(cfg, i) for i in instance_ids]
    games = [s[0] for s in setups]
    refs = [_references(cfg, g, s[1]) for g, s in zip(games, setups)]
    shared = cfg.game == "biased_rps"
    matrices = games[0].matrix if shared else np.stack([g.matrix for g in games])
    matrix_t = matrices.T if shared else np.ascontiguousarray(np.swapaxes(matrices, 1, 2))
    lc = cfg.learner
    state = init_batch(games[0], lc, [s[1] for s in setups])
    seg = state.seg
    streams = [s[2] for s in setups] if cfg.noise.std is not None else None
    marks = set(checkpoints(cfg.horizon, cfg.record_every))
    rows: List[List[RunRecord]] = [[] for _ in instance_ids]
    for state in iterate_batch(matrices, lc, state, cfg.horizon, cfg.noise, streams):
        if state.t not in marks:
            continue
        x = state.iterate
        expl = _batch_exploitability(matrix_t, x, seg)
        for b, iid in enumerate(instance_ids):
            extra = {}
            if "div_to_perturbed" in refs[b]:
                extra["div_to_perturbed"] = float(
                    seg.sum(geo.bregman_terms(lc.regularizer, refs[b]["div_to_perturbed"], x[b], seg)).sum()
                )
            if "dist_to_nash" in refs[b]:
                extra["dist_to_nash"] = float(np.linalg.norm(x[b] - refs[b]["dist_to_nash"]))
            rows[b].append(RunRecord(iid, state.t, float(expl[b]), **extra))
    return [r for per in rows for r in per]


def _run_chunk_safe(cfg: ExperimentConfig, ids: Sequence[int]) -> List[RunRecord]:
    try:
        return run_chunk(cfg, ids)
    except SlingshotError as exc:
        exc.args = (f"instances {ids[0]}..{ids[-1]}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def worker_count(requested: Optional[int] = None) -> int:
    """Requested workers (default 1), capped by the ``SLINGSHOT_MAX_WORKERS`` environment variable."""
    n = 1 if requested is None else int(requested)
    if n < 1:
        raise ConfigError(f"worker count must be at least 1, got {n}")
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {cap!r}") from exc
    return n


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentResult:
    """Run every instance and aggregate. Any failing instance aborts the whole experiment."""
    ids = list(range(cfg.n_instances))
    chunks = [ids[i:i + CHUNK] for i in range(0, len(ids), CHUNK)]
    workers = min(worker_count(threads), len(chunks))
    if workers == 1:
        parts = [_run_chunk_safe(cfg, c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk_safe, [cfg] * len(chunks), chunks))
    records = [r for part in parts for r in part]
    return ExperimentResult(cfg, records, aggregate(records))


def aggregate(records: Iterable[RunRecord]) -> List[SummaryRow]:
    """Per-iteration mean exploitability and standard error over instances.

    The standard error is the sample standard deviation over ``sqrt(n)``;
    it is 0 when only one instance contributes.
    """
    by_t: Dict[int, List[Tuple[int, float]]] = {}
    for r in records:
        by_t.setdefault(r.t, []).append((r.instance, r.exploitability))
    out = []
    for t in sorted(by_t):
        vals = [v for _, v in sorted(by_t[t])]
        n = len(vals)
        mean = math.fsum(vals) / n
        se = 0.0 if n == 1 else math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1) / n)
        out.append(SummaryRow(t, mean, se, n))
    return out


# -- output ----------------------------------------------------------------------------


def _g17(x: float) -> str:
    return f"{x:.17g}"


def runs_csv(result: ExperimentResult) -> str:
    metrics = [m for m in METRICS if m in result.config.metrics]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance", "t", "exploitability", *metrics])
    for r in result.records:
        w.writerow([r.instance, r.t, _g17(r.exploitability), *(_g17(getattr(r, m)) for m in metrics)])
    return buf.getvalue()


def summary_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "mean_exploitability", "stderr"])
    for row in result.summary:
        w.writerow([row.t, _g17(row.mean_exploitability), _g17(row.stderr)])
    return buf.getvalue()


def write_outputs(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.csv").write_text(runs_csv(result), encoding="utf-8")
    (out / "summary.csv").write_text(summary_csv(result), encoding="utf-8")
    status = "certified" if result.config.learner.certified else "uncertified"
    header = f"# step-size status: {status}\n"
    (out / "config.txt").write_text(header + format_config(result.config), encoding="utf-8")


# -- presets ---------------------------------------------------------------------------

_GAMES = {"3brps": "biased_rps", "rand10": "random:10", "rand50": "random:50"}


def _ftrl(reg: Regularizer, div: str, eta: float, mu: float, t_sigma: int, algorithm: str = "ftrl_sp"):
    return LearnerConfig(algorithm, reg, Divergence(div), mu, Constant(eta), t_sigma)


def _learners(game_key: str, noisy: bool) -> Dict[str, LearnerConfig]:
    eta = 0.01 if noisy else 0.1
    t_kl = 1000 if noisy else 100
    # squared-l2 perturbation settings; the 50-action game has its own
    if game_key == "rand50":
        l2_eta, l2_mu, l2_t = (0.001, 1.0, 2000) if noisy else (0.01, 1.0, 200)
    else:
        l2_eta, l2_mu, l2_t = (eta, 0.1, 200 if noisy else 20)
    return {
        "kl": _ftrl(geo.ENTROPY, "kl", eta, 0.1, t_kl),
        "rkl": _ftrl(geo.ENTROPY, "reverse_kl", eta, 0.1, t_kl),
        "l2": _ftrl(geo.SQUARED_L2, "l2", l2_eta, l2_mu, l2_t),
        "mwu": LearnerConfig("mwu", geo.ENTROPY, None, 0.0, Constant(eta)),
        "omwu": LearnerConfig("omwu", geo.ENTROPY, None, 0.0, Constant(eta)),
        "mdsp": _ftrl(geo.SQUARED_L2, "l2", l2_eta, l2_mu, l2_t, "md_sp"),
        "ogd": LearnerConfig("ogd", geo.SQUARED_L2, None, 0.0, Constant(l2_eta)),
    }


def paper_presets() -> Dict[str, ExperimentConfig]:
    """Named experiment configurations, in a stable order.

    ``fig1_<game>`` is FTRL-SP with KL perturbation under full feedback and
    ``fig1_<game>_<variant>`` the other learners (``rkl``, ``l2``, ``mwu``,
    ``omwu``). ``fig2_*`` are the noisy counterparts. ``figH_{full,noisy}_<game>_{mdsp,ogd}``
    add mirror descent and optimistic gradient. ``figI_tsigma_sweep_{full,noisy}_<T>``
    vary the slingshot interval of the KL learner on biased RPS.
    """
    presets: Dict[str, ExperimentConfig] = {}
    for fig, noisy in (("fig1", False), ("fig2", True)):
        noise = NoiseModel.gaussian(0.1) if noisy else NoiseModel()
        for key, desc in _GAMES.items():
            ls = _learners(key, noisy)
            presets[f"{fig}_{key}"] = ExperimentConfig(desc, ls["kl"], noise)
            for variant in ("rkl", "l2", "mwu", "omwu"):
                presets[f"{fig}_{key}_{variant}"] = ExperimentConfig(desc, ls[variant], noise)
    for mode, noisy in (("full", False), ("noisy", True)):
        noise = NoiseModel.gaussian(0.1) if noisy else NoiseModel()
        for key, desc in _GAMES.items():
            ls = _learners(key, noisy)
            for variant in ("mdsp", "ogd"):
                presets[f"figH_{mode}_{key}_{variant}"] = ExperimentConfig(desc, ls[variant], noise)
    for mode, noisy in (("full", False), ("noisy", True)):
        noise = NoiseModel.gaussian(0.1) if noisy else NoiseModel()
        kl = _learners("3brps", noisy)["kl"]
        for t_sigma in (10, 100, 1000, 10000):
            presets[f"figI_tsigma_sweep_{mode}_{t_sigma}"] = ExperimentConfig(
                "biased_rps", replace(kl, t_sigma=t_sigma), noise
            )
    return presets


def resolve_presets(name: str) -> Dict[str, ExperimentConfig]:
    """An exact preset name, or every preset starting with ``name + "_"`` (a group such as ``fig2``)."""
    presets = paper_presets()
    if name in presets:
        return {name: presets[name]}
    group = {k: v for k, v in presets.items() if k.startswith(name + "_")}
    if not group:
        raise ConfigError(f"unknown preset {name!r}; valid names are: {', '.join(presets)}")
    return group
