"""Bregman geometry on probability simplices.

Regularizers (entropy, log-barrier, squared l2) with their mirror maps and
proximal steps, the perturbation divergences used to anchor iterates to a
slingshot strategy, and the relative smoothness constants that certify step
sizes.

Every kernel takes arrays of shape ``(..., size)`` together with a
:class:`Segments` layout, so the same code serves a single strategy vector,
a whole profile flattened player-major, or a batch of profiles. The public
per-vector functions are thin wrappers with one segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError, DomainError, NumericError, UnsupportedCombinationError

FLOOR = 1e-15
LOG_BARRIER_TOL = 1e-12
LOG_BARRIER_MAX_ITER = 200


class Segments:
    """Contiguous blocks of the last axis, one per player."""

    def __init__(self, sizes: Sequence[int]):
        self.sizes = np.asarray(sizes, dtype=int)
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(int)
        self.total = int(self.sizes.sum())
        self.n = len(self.sizes)
        self.uniform = int(self.sizes[0]) if np.all(self.sizes == self.sizes[0]) else 0

    @classmethod
    def single(cls, d: int) -> "Segments":
        return cls([d])

    def _blocks(self, x):
        return x.reshape(*x.shape[:-1], self.n, self.uniform)

    def max(self, x):
        if self.uniform:
            return self._blocks(x).max(axis=-1)
        return np.maximum.reduceat(x, self.starts, axis=-1)

    def min(self, x):
        if self.uniform:
            return self._blocks(x).min(axis=-1)
        return np.minimum.reduceat(x, self.starts, axis=-1)

    def sum(self, x):
        if self.uniform:
            return self._blocks(x).sum(axis=-1)
        return np.add.reduceat(x, self.starts, axis=-1)

    def expand(self, v):
        """Broadcast one value per segment back to the full axis."""
        if self.uniform:
            return np.repeat(v, self.uniform, axis=-1)
        return np.repeat(v, self.sizes, axis=-1)

    def mean(self, x):
        return self.sum(x) / self.sizes

    def tangent(self, x):
        """Remove each segment's mean, projecting onto ``sum(delta) = 0``."""
        return x - self.expand(self.mean(x))


def _seg(x, seg):
    return seg if seg is not None else Segments.single(np.shape(x)[-1])


def floor_interior(x, seg: Optional[Segments] = None):
    """Clamp entries to at least ``FLOOR`` and renormalize; a no-op on interior points."""
    x = np.asarray(x, dtype=float)
    if (x >= FLOOR).all():
        return x
    seg = _seg(x, seg)
    y = np.maximum(x, FLOOR)
    return y / seg.expand(seg.sum(y))


def _check_finite(y, what):
    if not np.isfinite(y).all():
        raise NumericError(f"non-finite {what}")


# -- regularizers ---------------------------------------------------------------


@dataclass(frozen=True)
class Regularizer:
    """Strongly convex regularizer on the simplex; ``rho`` is its modulus."""

    kind: str  # "entropy" | "log_barrier" | "l2"
    rho: float = 1.0

    KINDS = ("entropy", "log_barrier", "l2")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown regularizer {self.kind!r}; expected one of {self.KINDS}")
        if not self.rho > 0:
            raise ConfigError("regularizer modulus rho must be positive")

    @classmethod
    def parse(cls, name: str) -> "Regularizer":
        return cls(name.strip().lower())

    def __str__(self):
        return self.kind


ENTROPY = Regularizer("entropy")
LOG_BARRIER = Regularizer("log_barrier")
SQUARED_L2 = Regularizer("l2")


def psi(reg: Regularizer, x) -> float:
    x = np.asarray(x, dtype=float)
    if reg.kind == "entropy":
        nz = x > 0
        return float(np.sum(x[nz] * np.log(x[nz])))
    if reg.kind == "log_barrier":
        return float(-np.sum(np.log(floor_interior(x))))
    return float(0.5 * x @ x)


def grad_psi(reg: Regularizer, x, seg: Optional[Segments] = None):
    """Gradient of the regularizer, on the floored interior where needed."""
    if reg.kind == "entropy":
        return np.log(floor_interior(x, seg)) + 1.0
    if reg.kind == "log_barrier":
        return -1.0 / floor_interior(x, seg)
    return np.asarray(x, dtype=float).copy()


def softmax(y, seg: Optional[Segments] = None):
    seg = _seg(y, seg)
    if seg.uniform:
        b = y.reshape(*y.shape[:-1], seg.n, seg.uniform)
        z = np.exp(b - b.max(axis=-1, keepdims=True))
        return (z / z.sum(axis=-1, keepdims=True)).reshape(y.shape)
    z = np.exp(y - seg.expand(seg.max(y)))
    return z / seg.expand(seg.sum(z))


def project_simplex(y, seg: Optional[Segments] = None):
    """Euclidean projection onto the simplex by sorting and thresholding.

    The threshold ``theta`` solves ``sum(max(y - theta, 0)) = 1``; it is read
    off the largest prefix of the sorted vector whose shifted entries stay
    positive.
    """
    y = np.asarray(y, dtype=float)
    seg = _seg(y, seg)
    if seg.uniform:
        blocks = y.reshape(*y.shape[:-1], seg.n, seg.uniform)
        return _project_rows(blocks).reshape(y.shape)
    out = np.empty_like(y)
    for s, d in zip(seg.starts, seg.sizes):
        out[..., s:s + d] = _project_rows(y[..., s:s + d])
    return out


def _project_rows(v):
    d = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, d + 1)
    rho = np.count_nonzero(u - css / k > 0, axis=-1)
    theta = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    return np.maximum(v - theta, 0.0)


def log_barrier_argmax(y, seg: Optional[Segments] = None, workspace: Optional[dict] = None):
    """Maximizer of ``<y, x> + sum(log x)`` on the simplex.

    Stationarity gives ``x_j = 1 / (nu - y_j)`` for a scalar ``nu > max(y)``
    with ``sum(x) = 1``. With ``t = nu - max(y)`` the constraint
    ``f(t) = sum(1 / (t - z_j)) - 1`` is convex and decreasing in ``t > 0``,
    with ``f(1) >= 0`` and ``f(d) <= 0``. Newton started anywhere left of the
    root increases monotonically to it. A start right of the root (a warm
    start kept in ``workspace["lb_t"]``) gets one Newton step, which lands left
    of the root, clamped to ``t >= 1``.
    """
    y = np.asarray(y, dtype=float)
    _check_finite(y, "log-barrier dual input")
    seg = _seg(y, seg)
    if seg.uniform:
        # Work on (..., n_players, d) blocks; avoids repeat/reduceat per iteration.
        zb = y.reshape(*y.shape[:-1], seg.n, seg.uniform)
        zb = zb - zb.max(axis=-1, keepdims=True)
        sum_, expand = (lambda a: a.sum(axis=-1)), (lambda v: v[..., None])
    else:
        zb = y - seg.expand(seg.max(y))
        sum_, expand = seg.sum, seg.expand
    t = np.ones(zb.shape[:-1] if seg.uniform else y.shape[:-1] + (seg.n,))
    if workspace is not None:
        warm = workspace.get("lb_t")
        if warm is not None and warm.shape == t.shape:
            t = warm
    for _ in range(LOG_BARRIER_MAX_ITER):
        r = 1.0 / (expand(t) - zb)
        s1 = sum_(r)
        if (np.abs(s1 - 1.0) < LOG_BARRIER_TOL).all():
            break
        t = np.maximum(t + (s1 - 1.0) / sum_(r * r), np.where(s1 < 1.0, 1.0, 0.0))
    else:
        raise ConvergenceError(
            "log-barrier dual solve did not converge", best_residual=float(np.max(np.abs(s1 - 1.0)))
        )
    if workspace is not None:
        workspace["lb_t"] = t
    return r.reshape(y.shape)


def mirror_argmax(reg: Regularizer, y, seg: Optional[Segments] = None, workspace: Optional[dict] = None):
    """``argmax_x <y, x> - psi(x)`` over the simplex (per segment).

    ``workspace`` is an optional dict carrying solver warm starts between calls.
    """
    y = np.asarray(y, dtype=float)
    _check_finite(y, "mirror map input")
    if reg.kind == "entropy":
        return softmax(y, seg)
    if reg.kind == "log_barrier":
        return log_barrier_argmax(y, seg, workspace)
    return project_simplex(y, seg)


def md_prox(reg: Regularizer, base, g, eta: float, seg: Optional[Segments] = None, workspace: Optional[dict] = None):
    """``argmax_x eta * <g, x> - D_psi(x, base)`` over the simplex.

    Expanding the Bregman term leaves ``<eta * g + grad_psi(base), x> - psi(x)``,
    i.e. a mirror map step from the dual image of ``base``. For entropy this is
    the multiplicative update and for squared l2 the projected gradient step.
    """
    g = np.asarray(g, dtype=float)
    _check_finite(g, "proximal step direction")
    if reg.kind == "entropy":
        return softmax(np.log(floor_interior(base, seg)) + eta * g, seg)
    if reg.kind == "l2":
        return project_simplex(np.asarray(base, dtype=float) + eta * g, seg)
    return log_barrier_argmax(grad_psi(reg, base, seg) + eta * g, seg, workspace)


def bregman(reg: Regularizer, x, x0) -> float:
    """``D_psi(x, x0)``: KL for entropy, Itakura-Saito for log-barrier, half squared distance for l2."""
    return float(np.sum(bregman_terms(reg, x, x0)))


def bregman_terms(reg: Regularizer, x, x0, seg: Optional[Segments] = None):
    """Coordinatewise summands of ``D_psi(x, x0)`` (sum them per segment)."""
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x.shape != x0.shape:
        raise DomainError(f"shape mismatch {x.shape} vs {x0.shape}")
    if reg.kind == "entropy":
        return _kl_terms(x, floor_interior(x0, seg))
    if reg.kind == "log_barrier":
        r = floor_interior(x, seg) / floor_interior(x0, seg)
        return r - np.log(r) - 1.0
    d = x - x0
    return 0.5 * d * d


def _kl_terms(x, s):
    # 0 * log 0 = 0; x - s terms make each summand nonnegative and sum unchanged on the simplex.
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(x > 0, x * np.log(x / s), 0.0)
    return t - x + s


# -- perturbation divergences ---------------------------------------------------


@dataclass(frozen=True)
class Divergence:
    """Perturbation divergence ``G(x, s)`` anchoring ``x`` to a slingshot ``s``."""

    kind: str  # "kl" | "reverse_kl" | "l2" | "itakura_saito" | "alpha" | "renyi"
    alpha: Optional[float] = None

    KINDS = ("kl", "reverse_kl", "l2", "itakura_saito", "alpha", "renyi")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown divergence {self.kind!r}; expected one of {self.KINDS}")
        if self.kind in ("alpha", "renyi"):
            if self.alpha is None or not (0.0 < self.alpha < 1.0):
                raise ConfigError(f"{self.kind} divergence needs 0 < alpha < 1, got {self.alpha}")
        elif self.alpha is not None:
            raise ConfigError(f"{self.kind} divergence takes no alpha")

    @classmethod
    def parse(cls, name: str) -> "Divergence":
        name = name.strip().lower()
        if ":" in name:
            kind, _, a = name.partition(":")
            try:
                return cls(kind, float(a))
            except ValueError as exc:
                raise ConfigError(f"bad divergence parameter in {name!r}") from exc
        return cls(name)

    def __str__(self):
        return self.kind if self.alpha is None else f"{self.kind}:{self.alpha:g}"


def divergence_value(G: Divergence, x, s) -> float:
    """``G(x, s)`` for one strategy vector."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    return float(divergence_values(G, x, s)[..., 0])


def divergence_values(G: Divergence, x, s, seg: Optional[Segments] = None):
    """Per-segment values of ``G(x, s)``, shape ``(..., n_segments)``."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.shape != s.shape:
        raise DomainError(f"shape mismatch {x.shape} vs {s.shape}")
    seg = _seg(x, seg)
    kind = G.kind
    if kind == "l2":
        d = x - s
        return seg.sum(0.5 * d * d)
    if kind == "kl":
        return seg.sum(_kl_terms(x, floor_interior(s, seg)))
    if kind == "reverse_kl":
        return seg.sum(_kl_terms(s, floor_interior(x, seg)))
    if kind == "itakura_saito":
        r = floor_interior(x, seg) / floor_interior(s, seg)
        return seg.sum(r - np.log(r) - 1.0)
    a = G.alpha
    overlap = seg.sum(np.power(floor_interior(x, seg), a) * np.power(s, 1.0 - a))
    if kind == "alpha":
        return np.maximum((1.0 - overlap) / (a * (1.0 - a)), 0.0)
    return np.maximum(np.log(overlap) / (a - 1.0), 0.0)


def divergence_grad(G: Divergence, x, s, seg: Optional[Segments] = None):
    """Gradient of ``G(x, s)`` in its first argument (full ambient gradient, no tangent projection)."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.shape != s.shape:
        raise DomainError(f"shape mismatch {x.shape} vs {s.shape}")
    kind = G.kind
    if kind == "l2":
        return x - s
    xf = floor_interior(x, seg)
    if kind == "kl":
        return np.log(xf / floor_interior(s, seg)) + 1.0
    if kind == "reverse_kl":
        return -s / xf
    if kind == "itakura_saito":
        return 1.0 / floor_interior(s, seg) - 1.0 / xf
    a = G.alpha
    ratio = np.power(s / xf, 1.0 - a)
    if kind == "alpha":
        return -ratio / (1.0 - a)
    seg = _seg(x, seg)
    overlap = seg.sum(np.power(xf, a) * np.power(s, 1.0 - a))
    return -(a / (1.0 - a)) * ratio / seg.expand(overlap)


# -- relative smoothness ------------------------------------------------------------


@dataclass(frozen=True)
class RelativeConstants:
    beta: float
    gamma: float

    def __post_init__(self):
        if not (0.0 < self.gamma <= self.beta):
            raise DomainError(f"need 0 < gamma <= beta, got beta={self.beta}, gamma={self.gamma}")


SUPPORTED_PAIRS = {
    ("kl", "entropy"),
    ("l2", "l2"),
    ("itakura_saito", "log_barrier"),
    ("reverse_kl", "log_barrier"),
}


def relative_constants(G: Divergence, reg: Regularizer, s) -> RelativeConstants:
    """Analytic ``(beta, gamma)`` such that ``G(., s)`` is beta-smooth and gamma-strongly convex relative to ``psi``.

    ``s`` may be a single vector or a whole profile (list of vectors); for the
    reverse-KL / log-barrier pair gamma is the smallest slingshot entry.
    """
    key = (G.kind, reg.kind)
    if key not in SUPPORTED_PAIRS:
        raise UnsupportedCombinationError(
            f"no certified relative constants for divergence {G} with regularizer {reg}"
        )
    if key == ("reverse_kl", "log_barrier"):
        if isinstance(s, (list, tuple)):
            smin = min(float(np.min(v)) for v in s)
        else:
            smin = float(np.min(s))
        if not smin > 0:
            raise DomainError("reverse-KL / log-barrier constants need an interior slingshot")
        return RelativeConstants(1.0, min(1.0, smin))
    return RelativeConstants(1.0, 1.0)


def is_certified(G: Divergence, reg: Regularizer) -> bool:
    return (G.kind, reg.kind) in SUPPORTED_PAIRS
