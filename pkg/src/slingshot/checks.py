"""Built-in invariant suites run by ``slingshot check <suite>``.

Each suite returns a list of :class:`CheckResult`; :func:`run_suite` raises
:class:`InvariantViolation` if any of them failed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import geometry as geo
from . import oracles
from .errors import ConfigError, InvariantViolation
from .game import (
    BIASED_RPS_EQUILIBRIUM,
    build_biased_rps,
    build_random_payoff,
    exploitability,
    payoff,
    payoff_gradient,
    uniform_profile,
)
from .geometry import Divergence
from .learners import Constant, LearnerConfig, eta_upper_bound, init_state, iterate_dynamics


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail}"


ALL_DIVERGENCES = (
    Divergence("kl"),
    Divergence("reverse_kl"),
    Divergence("l2"),
    Divergence("itakura_saito"),
    Divergence("alpha", 0.3),
    Divergence("renyi", 0.3),
)
PAIRS = (
    (Divergence("kl"), geo.ENTROPY),
    (Divergence("l2"), geo.SQUARED_L2),
    (Divergence("itakura_saito"), geo.LOG_BARRIER),
    (Divergence("reverse_kl"), geo.LOG_BARRIER),
)


def _interior(rng, d, margin=0.02):
    x = rng.dirichlet(np.ones(d))
    x = margin / d + (1.0 - margin) * x
    return x / x.sum()


def _tangent(v):
    return v - v.mean()


def fd_relative_error(G: Divergence, x, s) -> float:
    """Relative error between the analytic and finite-difference tangent gradients of ``G(., s)``."""
    fd = oracles.finite_difference_grad(lambda z: geo.divergence_value(G, z, s), x)
    exact = _tangent(geo.divergence_grad(G, x, s))
    return float(np.linalg.norm(fd - exact) / max(np.linalg.norm(exact), 1e-3))


def relative_gap(G: Divergence, x, xp, s) -> float:
    """``G(x, s) - G(x', s) - <grad G(x', s), x - x'>``."""
    return geo.divergence_value(G, x, s) - geo.divergence_value(G, xp, s) - float(
        geo.divergence_grad(G, xp, s) @ (x - xp)
    )


def sandwich_violation(G: Divergence, reg, x, xp, s) -> float:
    """How far ``gamma D_psi(x, x') <= gap <= beta D_psi(x, x')`` is from holding, relative to ``D_psi``."""
    rc = geo.relative_constants(G, reg, s)
    d = geo.bregman(reg, x, xp)
    gap = relative_gap(G, x, xp, s)
    scale = max(d, 1e-300)
    return max(rc.gamma * d - gap, gap - rc.beta * d, 0.0) / scale


# -- suites -------------------------------------------------------------------------


def suite_gradients(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for G in ALL_DIVERGENCES:
        worst = 0.0
        for _ in range(20):
            d = int(rng.integers(2, 7))
            worst = max(worst, fd_relative_error(G, _interior(rng, d), _interior(rng, d)))
        out.append(CheckResult(f"fd-grad {G}", worst < 1e-6, f"max relative error {worst:.2e}"))
    game = build_biased_rps()
    worst = 0.0
    for _ in range(10):
        prof = [_interior(rng, 3) for _ in range(3)]
        grads = payoff_gradient(game, prof)
        for i in range(3):
            def v_i(z, i=i):
                p = list(prof)
                p[i] = z
                return payoff(game, p)[i]

            fd = oracles.finite_difference_grad(v_i, prof[i])
            worst = max(worst, float(np.max(np.abs(fd - _tangent(grads[i])))))
    out.append(CheckResult("fd-grad payoff", worst < 1e-6, f"max abs error {worst:.2e}"))
    return out


def suite_projection(seed: int = 0, cases: int = 300) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_proj = 0.0
    worst_kkt = 0.0
    for _ in range(cases):
        d = int(rng.integers(1, 7))
        y = rng.normal(scale=2.0, size=d)
        worst_proj = max(worst_proj, float(np.max(np.abs(geo.project_simplex(y) - oracles.project_simplex_bruteforce(y)))))
        y = rng.normal(scale=5.0, size=max(d, 2))
        worst_kkt = max(worst_kkt, oracles.log_barrier_kkt_residual(y, geo.log_barrier_argmax(y)))
    return [
        CheckResult("projection vs brute force", worst_proj <= 1e-10, f"max deviation {worst_proj:.2e}"),
        CheckResult("log-barrier argmax KKT", worst_kkt < 1e-10, f"max residual {worst_kkt:.2e}"),
    ]


def suite_contraction(steps: int = 2000) -> List[CheckResult]:
    """Certified-step FTRL with a fixed uniform slingshot stays under the geometric envelope."""
    game = build_biased_rps()
    sigma = uniform_profile(game)
    rng = np.random.default_rng(0)
    init = [_interior(rng, 3, 0.1) for _ in range(3)]
    out = []
    for G, reg in PAIRS[:3]:
        probe = LearnerConfig("ftrl_sp", reg, G, 0.1, Constant(1.0))
        eta = 0.9 * eta_upper_bound(probe, game, sigma)
        cfg = LearnerConfig("ftrl_sp", reg, G, 0.1, Constant(eta))
        target = game.flatten(oracles.solve_perturbed_equilibrium(game, G, reg, 0.1, sigma, 1e-10).point)
        state = init_state(game, cfg, init, sigma)
        seg = state.seg
        dist = lambda x: float(seg.sum(geo.bregman_terms(reg, target, x, seg)).sum())  # noqa: E731
        gamma = geo.relative_constants(G, reg, sigma).gamma
        env = oracles.rate_envelope_full(dist(state.iterate), eta, 0.1, gamma)
        worst = -np.inf
        for st in iterate_dynamics(game, cfg, state, steps):
            worst = max(worst, dist(st.iterate) - env(st.t))
        out.append(CheckResult(f"contraction {G}/{reg}", worst <= 1e-8, f"max excess over envelope {worst:.2e}"))
    return out


def suite_slingshot(steps: int = 20_000) -> List[CheckResult]:
    """Anchors move monotonically toward the equilibrium and the iterate converges."""
    game = build_biased_rps()
    eq = np.tile(BIASED_RPS_EQUILIBRIUM, 3)
    rng = np.random.default_rng(1)
    init = [_interior(rng, 3) for _ in range(3)]
    cfg = LearnerConfig("ftrl_sp", geo.SQUARED_L2, Divergence("l2"), 1.0, Constant(0.1), 100)
    state = init_state(game, cfg, init)
    dists = [float(np.linalg.norm(state.slingshot - eq))]
    for st in iterate_dynamics(game, cfg, state, steps):
        if st.tau == 0:
            dists.append(float(np.linalg.norm(st.slingshot - eq)))
    rise = float(np.max(np.diff(dists)))
    gap = exploitability(game, st.profile)
    rand = build_random_payoff(3, 10, 0)
    nash = oracles.solve_nash_small(rand, 1e-6)
    return [
        CheckResult("anchor distance non-increasing", rise <= 1e-6, f"largest increase {rise:.2e} over {len(dists) - 1} updates"),
        CheckResult("last iterate converges", gap <= 1e-8, f"exploitability {gap:.2e} after {steps} steps"),
        CheckResult("anchored damping Nash oracle", nash.residual <= 1e-6, f"exploitability {nash.residual:.2e}"),
    ]


SUITES: Dict[str, Callable[[], List[CheckResult]]] = {
    "contraction": suite_contraction,
    "gradients": suite_gradients,
    "projection": suite_projection,
    "slingshot": suite_slingshot,
}


def run_suite(name: str) -> List[CheckResult]:
    if name not in SUITES:
        raise ConfigError(f"unknown check suite {name!r}; valid suites are: {', '.join(SUITES)}")
    results = SUITES[name]()
    failed = [r for r in results if not r.ok]
    if failed:
        raise InvariantViolation("; ".join(r.line() for r in failed))
    return results
