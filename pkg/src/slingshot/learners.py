"""Learning dynamics: FTRL and mirror descent with slingshot perturbation, plus baselines.

All state lives in flat player-major arrays (see :class:`slingshot.geometry.Segments`).
Step functions replace the state's arrays with fresh ones and return the same
state object, so arrays previously read from a state are never mutated.
Arrays may carry a leading batch axis; every operation acts row-wise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from . import geometry as geo
from .errors import ConfigError, DomainError, NumericError
from .game import GameSpec, Profile, check_profile, lipschitz_bound, uniform_profile
from .geometry import Divergence, Regularizer, Segments

ALGORITHMS = ("ftrl_sp", "md_sp", "mwu", "omwu", "ogd")
PERTURBED = ("ftrl_sp", "md_sp")


# -- learning rates -------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"learning rate must be positive, got {self.eta}")

    def __call__(self, t: int) -> float:
        return self.eta


@dataclass(frozen=True)
class InverseLinear:
    """``eta_t = 1 / (kappa * t + 2 * theta)``."""

    kappa: float
    theta: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.theta > 0):
            raise ConfigError("InverseLinear needs kappa > 0 and theta > 0")

    def __call__(self, t: int) -> float:
        return 1.0 / (self.kappa * t + 2.0 * self.theta)


Rate = Union[Constant, InverseLinear]


@dataclass(frozen=True)
class LearnerConfig:
    """Algorithm choice and hyperparameters.

    ``t_sigma=None`` means the slingshot is never updated. ``reset_on_slingshot``
    restarts the cumulative gradient from the new anchor at each slingshot
    update; it is off by default.
    """

    algorithm: str = "ftrl_sp"
    regularizer: Regularizer = geo.ENTROPY
    divergence: Optional[Divergence] = Divergence("kl")
    mu: float = 0.1
    rate: Rate = Constant(0.1)
    t_sigma: Optional[int] = None
    reset_on_slingshot: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.algorithm in PERTURBED:
            if self.divergence is None:
                raise ConfigError(f"{self.algorithm} needs a perturbation divergence")
            if not self.mu >= 0:
                raise ConfigError(f"{self.algorithm} needs mu >= 0, got {self.mu}")
        if self.t_sigma is not None and self.t_sigma < 1:
            raise ConfigError(f"t_sigma must be a positive integer or infinite, got {self.t_sigma}")

    @property
    def perturbed(self) -> bool:
        return self.algorithm in PERTURBED

    @property
    def certified(self) -> bool:
        """Whether the perturbation pair has tabulated relative constants (and so a certified step bound)."""
        return self.perturbed and geo.is_certified(self.divergence, self.regularizer)


# -- feedback -----------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Full feedback (``std is None``) or additive i.i.d. Gaussian noise."""

    std: Optional[float] = None

    def __post_init__(self):
        if self.std is not None and not self.std >= 0:
            raise ConfigError(f"noise std must be nonnegative, got {self.std}")

    @classmethod
    def full(cls) -> "NoiseModel":
        return cls(None)

    @classmethod
    def gaussian(cls, std: float) -> "NoiseModel":
        return cls(float(std))

    @property
    def kind(self) -> str:
        return "full" if self.std is None else "gaussian"

    def variance_bound(self, dim: int) -> float:
        """``C`` such that ``E||xi_i||^2 <= C^2`` for a player with ``dim`` actions."""
        return 0.0 if self.std is None else self.std * math.sqrt(dim)


class GaussianStream:
    """Standard normals by Box-Muller from a PCG64 uniform stream.

    Each draw of ``dim`` normals consumes ``2 * ceil(dim / 2)`` uniforms as
    consecutive pairs ``(u, v)``; the pair yields
    ``sqrt(-2 log(1 - u)) * (cos(2 pi v), sin(2 pi v))`` in that order, and the
    trailing odd variate is dropped. Variates fill the flat player-major
    layout, coordinates within a player varying fastest. Uniforms are pulled
    in chunks, which does not change the sequence.
    """

    def __init__(self, seed: int, dim: int, chunk: int = 1024):
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self.dim = dim
        self._pairs = (dim + 1) // 2
        self._chunk = chunk
        self._buf = np.empty((0, dim))
        self._pos = 0

    def _refill(self):
        u = self._rng.random(self._chunk * self._pairs * 2).reshape(self._chunk, self._pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[..., 0]))
        ang = 2.0 * np.pi * u[..., 1]
        z = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1).reshape(self._chunk, -1)
        self._buf = z[:, : self.dim]
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= len(self._buf):
            self._refill()
        z = self._buf[self._pos]
        self._pos += 1
        return z


def observe(game: GameSpec, profile: Profile, noise: NoiseModel, rng: Optional[GaussianStream] = None) -> list:
    """Gradient feedback at ``profile``: exact, or exact plus ``std * N(0, I)`` drawn from ``rng``."""
    flat = game.flatten(profile)
    return game.split(_observe_flat(game, flat, noise, rng))


def _observe_flat(game, flat, noise, rng):
    grad = flat @ game.matrix.T
    if noise.std is None:
        return grad
    if rng is None:
        raise ConfigError("noisy feedback needs a GaussianStream")
    z = rng.next() if flat.ndim == 1 else np.stack([rng.next() for _ in range(flat.shape[0])])
    return grad + noise.std * z


# -- state ------------------------------------------------------------------------


@dataclass
class LearnerState:
    """Mutable per-run state. ``iterate``, ``cumulative``, ``slingshot`` and ``prev_feedback`` are flat."""

    seg: Segments
    iterate: np.ndarray
    cumulative: np.ndarray
    slingshot: np.ndarray
    prev_feedback: np.ndarray
    t: int = 0
    tau: int = 0
    k: int = 0
    workspace: dict = field(default_factory=dict)

    def _split(self, flat):
        return [flat[..., s:s + d].copy() for s, d in zip(self.seg.starts, self.seg.sizes)]

    @property
    def profile(self) -> Profile:
        return self._split(self.iterate)

    @property
    def slingshot_profile(self) -> Profile:
        return self._split(self.slingshot)

    def copy(self) -> "LearnerState":
        return LearnerState(
            self.seg, self.iterate.copy(), self.cumulative.copy(), self.slingshot.copy(),
            self.prev_feedback.copy(), self.t, self.tau, self.k, dict(self.workspace),
        )


def init_state(
    game: GameSpec,
    cfg: LearnerConfig,
    init: Optional[Profile] = None,
    slingshot: Optional[Profile] = None,
) -> LearnerState:
    """Initial state with ``pi^0 = init`` (uniform by default) and ``sigma^0 = slingshot`` (default ``pi^0``).

    The cumulative vector starts at the dual image of ``pi^0`` so that the
    mirror map reproduces ``pi^0``; for a uniform start this is a constant
    vector, equivalent to zero.
    """
    init = uniform_profile(game) if init is None else init
    check_profile(game, init)
    seg = Segments(game.action_counts)
    x0 = game.flatten(init)
    s0 = x0.copy() if slingshot is None else game.flatten(slingshot)
    if slingshot is not None:
        check_profile(game, slingshot)
    reg = geo.ENTROPY if cfg.algorithm in ("mwu", "omwu") else cfg.regularizer
    y0 = _recenter(geo.grad_psi(reg, x0, seg), seg)
    return LearnerState(seg, x0, y0, s0, np.zeros_like(x0))


def init_batch(game: GameSpec, cfg: LearnerConfig, inits) -> LearnerState:
    """Batched state: row ``b`` starts from ``inits[b]`` with its own slingshot ``sigma^0 = pi^0``."""
    states = [init_state(game, cfg, p) for p in inits]
    stack = lambda name: np.stack([getattr(s, name) for s in states])  # noqa: E731
    return LearnerState(
        states[0].seg, stack("iterate"), stack("cumulative"), stack("slingshot"), stack("prev_feedback")
    )


# -- steps --------------------------------------------------------------------------


def _check(x, what):
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite {what} at step")
    return x


def _perturbed_direction(state, cfg, fb):
    grad_g = geo.divergence_grad(cfg.divergence, state.iterate, state.slingshot, state.seg)
    return fb - cfg.mu * grad_g


def _recenter(y, seg):
    # Every mirror map here is invariant to per-player constant shifts; keeping
    # y centered stops its magnitude (and rounding error) from growing with t.
    return y - seg.expand(seg.mean(y))


def ftrl_sp_step(state: LearnerState, cfg: LearnerConfig, fb) -> LearnerState:
    """``y += eta_t * (fb - mu * grad G(pi, sigma))``; ``pi = mirror_argmax(y)``."""
    eta = cfg.rate(state.t)
    y = _check(state.cumulative + eta * _perturbed_direction(state, cfg, fb), "cumulative gradient")
    y = _recenter(y, state.seg)
    state.cumulative = y
    state.iterate = geo.mirror_argmax(cfg.regularizer, y, state.seg, state.workspace)
    state.t += 1
    state.tau += 1
    return state


def md_sp_step(state: LearnerState, cfg: LearnerConfig, fb) -> LearnerState:
    """Proximal step from the current iterate along ``fb - mu * grad G(pi, sigma)``."""
    eta = cfg.rate(state.t)
    g = _check(_perturbed_direction(state, cfg, fb), "perturbed gradient")
    state.iterate = geo.md_prox(cfg.regularizer, state.iterate, g, eta, state.seg, state.workspace)
    state.t += 1
    state.tau += 1
    return state


def mwu_step(state: LearnerState, cfg: LearnerConfig, fb) -> LearnerState:
    eta = cfg.rate(state.t)
    state.cumulative = _recenter(state.cumulative + eta * fb, state.seg)
    state.iterate = geo.softmax(state.cumulative, state.seg)
    state.t += 1
    return state


def omwu_step(state: LearnerState, cfg: LearnerConfig, fb) -> LearnerState:
    """Optimistic FTRL with the latest feedback reused as the prediction of the next one."""
    eta = cfg.rate(state.t)
    state.cumulative = _recenter(state.cumulative + eta * fb, state.seg)
    state.iterate = geo.softmax(state.cumulative + eta * fb, state.seg)
    state.prev_feedback = fb
    state.t += 1
    return state


def ogd_step(state: LearnerState, cfg: LearnerConfig, fb) -> LearnerState:
    """Projected step along the extrapolated gradient ``2 fb - prev_fb``."""
    eta = cfg.rate(state.t)
    step = state.iterate + eta * (2.0 * fb - state.prev_feedback)
    state.iterate = geo.project_simplex(step, state.seg)
    state.prev_feedback = fb
    state.t += 1
    return state


def slingshot_maybe_update(state: LearnerState, cfg: LearnerConfig) -> LearnerState:
    """Overwrite the slingshot with the newest iterate once ``tau`` reaches ``t_sigma``."""
    if cfg.t_sigma is None or state.tau < cfg.t_sigma:
        return state
    state.k += 1
    state.tau = 0
    state.slingshot = state.iterate.copy()
    if cfg.reset_on_slingshot and cfg.algorithm == "ftrl_sp":
        state.cumulative = _recenter(geo.grad_psi(cfg.regularizer, state.iterate, state.seg), state.seg)
    return state


STEPS = {
    "ftrl_sp": ftrl_sp_step,
    "md_sp": md_sp_step,
    "mwu": mwu_step,
    "omwu": omwu_step,
    "ogd": ogd_step,
}


def step(state: LearnerState, cfg: LearnerConfig, fb) -> LearnerState:
    """One full iteration: the algorithm's update followed by the slingshot schedule."""
    STEPS[cfg.algorithm](state, cfg, fb)
    if cfg.perturbed:
        slingshot_maybe_update(state, cfg)
    return state


def iterate_dynamics(
    game: GameSpec,
    cfg: LearnerConfig,
    state: LearnerState,
    horizon: int,
    noise: NoiseModel = NoiseModel(),
    rng: Optional[GaussianStream] = None,
) -> Iterator[LearnerState]:
    """Advance ``state`` ``horizon`` times, yielding it after every step."""
    if noise.std is not None and rng is None:
        raise ConfigError("noisy feedback needs a GaussianStream")
    update = STEPS[cfg.algorithm]
    perturbed = cfg.perturbed
    matrix_t = game.matrix.T
    std = noise.std
    batched = state.iterate.ndim > 1
    for _ in range(horizon):
        fb = state.iterate @ matrix_t
        if std is not None:
            z = np.stack([rng.next() for _ in range(state.iterate.shape[0])]) if batched else rng.next()
            fb = fb + std * z
        update(state, cfg, fb)
        if perturbed:
            slingshot_maybe_update(state, cfg)
        yield state


def iterate_batch(
    matrices: np.ndarray,
    cfg: LearnerConfig,
    state: LearnerState,
    horizon: int,
    noise: NoiseModel = NoiseModel(),
    rngs: Optional[Sequence[GaussianStream]] = None,
) -> Iterator[LearnerState]:
    """Advance a batched state where row ``b`` plays the game with payoff matrix ``matrices[b]``.

    ``matrices`` is ``(B, n, n)``, or ``(n, n)`` when every row plays the same
    game. Row ``b`` draws its noise from ``rngs[b]``.
    """
    if state.iterate.ndim != 2:
        raise ConfigError("iterate_batch needs a batched state")
    rows = state.iterate.shape[0]
    if noise.std is not None and (rngs is None or len(rngs) != rows):
        raise ConfigError("noisy feedback needs one GaussianStream per batch row")
    shared = matrices.ndim == 2
    matrix_t = matrices.T if shared else np.ascontiguousarray(np.swapaxes(matrices, 1, 2))
    update = STEPS[cfg.algorithm]
    perturbed = cfg.perturbed
    std = noise.std
    for _ in range(horizon):
        x = state.iterate
        fb = x @ matrix_t if shared else np.matmul(x[:, None, :], matrix_t)[:, 0, :]
        if std is not None:
            fb = fb + std * np.stack([r.next() for r in rngs])
        update(state, cfg, fb)
        if perturbed:
            slingshot_maybe_update(state, cfg)
        yield state


def run(
    game: GameSpec,
    cfg: LearnerConfig,
    horizon: int,
    init: Optional[Profile] = None,
    noise: NoiseModel = NoiseModel(),
    rng: Optional[GaussianStream] = None,
) -> LearnerState:
    """Run ``horizon`` steps from ``init`` and return the final state."""
    state = init_state(game, cfg, init)
    for state in iterate_dynamics(game, cfg, state, horizon, noise, rng):
        pass
    return state


# -- certified step sizes ------------------------------------------------------------


@dataclass(frozen=True)
class StepSizeConstants:
    """Largest certified constant step and the matching inverse-linear schedule parameters."""

    eta_max: float
    kappa: float
    theta: float
    beta: float
    gamma: float
    rho: float
    lipschitz: float

    def schedule(self) -> InverseLinear:
        return InverseLinear(self.kappa, self.theta)


def step_size_constants(cfg: LearnerConfig, game: GameSpec, slingshot) -> StepSizeConstants:
    """Constants from the full-feedback contraction guarantee.

    ``eta_max = 2 mu gamma rho^2 / (mu^2 gamma rho^2 (gamma + 2 beta) + 8 L^2)``,
    ``kappa = mu gamma / 2`` and ``theta = 1 / eta_max``.
    """
    if not cfg.perturbed:
        raise ConfigError(f"{cfg.algorithm} has no certified step size")
    if not cfg.mu > 0:
        raise DomainError("the certified step size needs mu > 0")
    rc = geo.relative_constants(cfg.divergence, cfg.regularizer, slingshot)
    mu, rho = cfg.mu, cfg.regularizer.rho
    lip = lipschitz_bound(game)
    denom = mu**2 * rc.gamma * rho**2 * (rc.gamma + 2.0 * rc.beta) + 8.0 * lip**2
    theta = denom / (2.0 * mu * rc.gamma * rho**2)
    return StepSizeConstants(1.0 / theta, mu * rc.gamma / 2.0, theta, rc.beta, rc.gamma, rho, lip)


def eta_upper_bound(cfg: LearnerConfig, game: GameSpec, slingshot) -> float:
    """Open upper endpoint of the certified constant learning-rate interval."""
    return step_size_constants(cfg, game, slingshot).eta_max
