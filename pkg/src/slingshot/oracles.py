"""Reference computations used to check the learners.

Everything here is deliberately slow and simple: long certified-step runs,
exhaustive active-set enumeration, finite differences and closed-form rate
envelopes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import geometry as geo
from .errors import ConvergenceError, DomainError, UnsupportedCombinationError
from .game import GameSpec, Profile, check_profile, exploitability, uniform_profile
from .geometry import Divergence, Regularizer, Segments
from .learners import Constant, LearnerConfig, eta_upper_bound, init_state, iterate_dynamics

MAX_ITER = 10_000_000
MIN_TOL = 1e-10
CHECK_EVERY = 64
FD_STEP = 1e-6


@dataclass(frozen=True)
class OracleResult:
    point: Profile
    residual: float
    iterations: int

    def to_dict(self) -> dict:
        return {
            "point": [p.tolist() for p in self.point],
            "residual": self.residual,
            "iterations": self.iterations,
        }


# -- perturbed equilibrium ------------------------------------------------------


def stationarity_residual(game: GameSpec, G: Divergence, mu: float, profile: Profile, sigma: Profile) -> float:
    """``max_i max_j <grad v_i(pi) - mu grad G(pi_i, sigma_i), e_j - pi_i>``.

    Zero exactly at the perturbed equilibrium; positive elsewhere on the simplex.
    """
    x = game.flatten(profile)
    s = game.flatten(sigma)
    return _stationarity_flat(game, Segments(game.action_counts), G, mu, x, s)


def _stationarity_flat(game, seg, G, mu, x, s):
    r = x @ game.matrix.T - mu * geo.divergence_grad(G, x, s, seg)
    return float(np.max(seg.max(r) - seg.sum(r * x)))


def solve_perturbed_equilibrium(
    game: GameSpec,
    G: Divergence,
    reg: Regularizer,
    mu: float,
    sigma: Profile,
    tol: float,
    init: Optional[Profile] = None,
    max_iter: int = MAX_ITER,
) -> OracleResult:
    """Equilibrium of the game with payoffs ``v_i - mu G(., sigma_i)``.

    Runs FTRL with the slingshot frozen at ``sigma`` and the step fixed at 0.9
    times the certified bound, from ``init`` (uniform by default), until the
    stationarity residual drops to ``tol``. Uniqueness of the equilibrium is
    not proven for every divergence; it is only checked by re-solving from
    other starting points.
    """
    if not geo.is_certified(G, reg):
        raise UnsupportedCombinationError(f"no certified step for divergence {G} with regularizer {reg}")
    if not tol >= MIN_TOL:
        raise DomainError(f"tolerance must be at least {MIN_TOL:g}, got {tol}")
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    check_profile(game, sigma)
    probe = LearnerConfig("ftrl_sp", reg, G, mu, Constant(1.0), None)
    eta = 0.9 * eta_upper_bound(probe, game, sigma)
    cfg = LearnerConfig("ftrl_sp", reg, G, mu, Constant(eta), None)
    state = init_state(game, cfg, uniform_profile(game) if init is None else init, sigma)
    seg = state.seg
    s = state.slingshot
    best = _stationarity_flat(game, seg, G, mu, state.iterate, s)
    if best <= tol:
        return OracleResult(game.split(state.iterate), best, 0)
    for state in iterate_dynamics(game, cfg, state, max_iter):
        if state.t % CHECK_EVERY:
            continue
        res = _stationarity_flat(game, seg, G, mu, state.iterate, s)
        best = min(best, res)
        if res <= tol:
            return OracleResult(game.split(state.iterate), res, state.t)
    raise ConvergenceError(
        f"perturbed equilibrium not reached within {max_iter} iterations", best_residual=best, iterations=max_iter
    )


# -- small-game Nash -----------------------------------------------------------------


def solve_nash_small(game: GameSpec, tol: float, max_outer: int = 10_000) -> OracleResult:
    """Nash equilibrium by anchored damping.

    The anchor ``sigma`` is repeatedly replaced by the squared-l2 perturbed
    equilibrium with ``mu = 1`` until the exploitability of the result is at
    most ``tol``. The reported residual is that exploitability.
    """
    if game.n_players > 3 or max(game.action_counts) > 50:
        raise DomainError("solve_nash_small is meant for at most 3 players with at most 50 actions each")
    if not tol > 0:
        raise DomainError(f"tolerance must be positive, got {tol}")
    G, reg = Divergence("l2"), geo.SQUARED_L2
    inner_tol = max(MIN_TOL, 0.01 * tol)
    sigma = uniform_profile(game)
    best = exploitability(game, sigma)
    if best <= tol:
        return OracleResult(sigma, best, 0)
    total = 0
    for _ in range(max_outer):
        res = solve_perturbed_equilibrium(game, G, reg, 1.0, sigma, inner_tol, init=sigma)
        total += res.iterations
        sigma = res.point
        gap = exploitability(game, sigma)
        best = min(best, gap)
        if gap <= tol:
            return OracleResult(sigma, gap, total)
    raise ConvergenceError(
        f"no {tol:g}-equilibrium within {max_outer} anchor updates", best_residual=best, iterations=total
    )


# -- finite differences -----------------------------------------------------------------


def finite_difference_grad(f: Callable[[np.ndarray], float], x, h: float = FD_STEP) -> np.ndarray:
    """Tangent-projected gradient of ``f`` at an interior simplex point by central differences.

    Differences are taken along ``(e_j - e_d) / sqrt(2)`` for ``j < d``; the
    result is the unique zero-sum vector with those directional derivatives.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("finite_difference_grad needs a vector with at least two entries")
    if not h > 0:
        raise DomainError(f"step must be positive, got {h}")
    if not np.min(x) > h:
        raise DomainError(f"point too close to the boundary for step {h:g} (min entry {np.min(x):.3g})")
    d = x.size
    dirs = np.zeros((d, d - 1))
    dirs[np.arange(d - 1), np.arange(d - 1)] = 1.0
    dirs[d - 1, :] = -1.0
    dirs /= math.sqrt(2.0)
    slopes = np.array([(f(x + h * u) - f(x - h * u)) / (2.0 * h) for u in dirs.T])
    # dirs spans the tangent space, so dirs @ c with dirs^T dirs c = slopes is the projected gradient.
    return dirs @ np.linalg.solve(dirs.T @ dirs, slopes)


# -- brute-force references --------------------------------------------------------------


def project_simplex_bruteforce(y) -> np.ndarray:
    """Euclidean projection onto the simplex by enumerating every support set.

    For a support ``S`` the KKT system gives ``x_S = y_S - lam`` with
    ``lam = (sum(y_S) - 1) / |S|``; the feasible candidate closest to ``y``
    is the projection. Exponential in ``d``; meant for ``d <= 10``.
    """
    y = np.asarray(y, dtype=float)
    d = y.size
    best, best_dist = None, math.inf
    for k in range(1, d + 1):
        for support in itertools.combinations(range(d), k):
            idx = list(support)
            lam = (y[idx].sum() - 1.0) / k
            x = np.zeros(d)
            x[idx] = y[idx] - lam
            if np.min(x[idx]) < 0:
                continue
            dist = float(np.sum((x - y) ** 2))
            if dist < best_dist:
                best, best_dist = x, dist
    return best


def log_barrier_kkt_residual(y, x) -> float:
    """Optimality violation of ``x`` for ``max <y, x> + sum(log x)`` on the simplex.

    Stationarity reads ``x_j (nu - y_j) = 1`` for one multiplier ``nu``. The
    multiplier is fitted by least squares to these equations, so the result
    measures only how far ``x`` is from satisfying them jointly. Returns the
    larger of the worst stationarity violation and ``|sum(x) - 1|``.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.min(x) <= 0:
        return math.inf
    nu = float((x * x) @ (y + 1.0 / x) / (x @ x))
    return max(float(np.max(np.abs(x * (nu - y) - 1.0))), abs(float(x.sum()) - 1.0))


# -- rate envelopes ----------------------------------------------------------------------


def rate_envelope_full(D0: float, eta: float, mu: float, gamma: float) -> Callable:
    """``t -> D0 (1 - eta mu gamma / 2)^t``."""
    q = eta * mu * gamma / 2.0
    if not 0.0 < q < 1.0:
        raise DomainError(f"need 0 < eta*mu*gamma/2 < 1, got {q}")
    if not D0 >= 0:
        raise DomainError(f"initial divergence must be nonnegative, got {D0}")
    ratio = 1.0 - q

    def envelope(t):
        return D0 * np.power(ratio, t)

    return envelope


def rate_envelope_noisy(D0: float, kappa: float, theta: float, N: int, C: float, rho: float) -> Callable:
    """Bound on the expected divergence under ``eta_t = 1 / (kappa t + 2 theta)``.

    ``(2 theta - kappa) / (kappa t + 2 theta) D0
    + N C^2 / (rho (kappa t + 2 theta)) (log(kappa t / (2 theta) + 1) / kappa + 1 / (2 theta))``
    """
    if not theta > kappa > 0:
        raise DomainError(f"need theta > kappa > 0, got theta={theta}, kappa={kappa}")
    if not (D0 >= 0 and N >= 1 and C >= 0 and rho > 0):
        raise DomainError("need D0 >= 0, N >= 1, C >= 0 and rho > 0")

    def envelope(t):
        t = np.asarray(t, dtype=float)
        denom = kappa * t + 2.0 * theta
        noise = N * C**2 / (rho * denom) * (np.log1p(kappa * t / (2.0 * theta)) / kappa + 1.0 / (2.0 * theta))
        out = (2.0 * theta - kappa) / denom * D0 + noise
        return float(out) if out.ndim == 0 else out

    return envelope
