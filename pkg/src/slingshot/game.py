"""Zero-sum polymatrix games on products of probability simplices.

A game stores one payoff block ``M[(i, j)]`` per ordered pair of distinct
players. Player ``i`` earns ``pi_i @ M[(i, j)] @ pi_j`` from its interaction
with ``j``; the zero-sum pairing ``M[(j, i)] == -M[(i, j)].T`` is built in
when only the upper blocks are supplied.

Strategy profiles are plain lists of 1-D numpy arrays, one per player.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

SIMPLEX_TOL = 1e-9
ZERO_SUM_TOL = 1e-9

Profile = list  # list[np.ndarray], one simplex vector per player


class GameSpec:
    """Immutable zero-sum polymatrix game.

    Parameters
    ----------
    action_counts : sequence of int
        Number of actions of every player.
    blocks : mapping
        ``{(i, j): matrix}`` with shape ``(d_i, d_j)``. When a pair is given in
        one direction only, the reverse block is materialized as the negated
        transpose.
    require_zero_sum : bool
        If both directions of a pair are given, demand exact negated-transpose
        pairing. Disable only to build non-monotone test fixtures.
    """

    def __init__(
        self,
        action_counts: Sequence[int],
        blocks: Mapping[tuple[int, int], np.ndarray],
        require_zero_sum: bool = True,
    ):
        counts = tuple(int(d) for d in action_counts)
        if len(counts) < 2:
            raise DimensionError("a game needs at least two players")
        if any(d < 1 for d in counts):
            raise DimensionError(f"action counts must be positive, got {counts}")
        n = len(counts)

        full: dict[tuple[int, int], np.ndarray] = {}
        for (i, j), m in blocks.items():
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise DimensionError(f"invalid block index ({i}, {j})")
            m = np.array(m, dtype=float)
            if m.shape != (counts[i], counts[j]):
                raise DimensionError(
                    f"block ({i}, {j}) has shape {m.shape}, expected {(counts[i], counts[j])}"
                )
            if not np.all(np.isfinite(m)):
                raise DomainError(f"block ({i}, {j}) has non-finite entries")
            full[(i, j)] = m
        for (i, j), m in list(full.items()):
            if (j, i) not in full:
                full[(j, i)] = -m.T
            elif require_zero_sum and not np.array_equal(full[(j, i)], -m.T):
                raise DomainError(f"blocks ({i}, {j}) and ({j}, {i}) are not zero-sum paired")
        for m in full.values():
            m.setflags(write=False)

        self.n_players = n
        self.action_counts = counts
        self.blocks: dict[tuple[int, int], np.ndarray] = dict(sorted(full.items()))
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(int)

        # Dense block operator: full gradient = matrix @ flat(profile).
        size = int(self.offsets[-1])
        mat = np.zeros((size, size))
        for (i, j), m in self.blocks.items():
            mat[self.offsets[i]:self.offsets[i + 1], self.offsets[j]:self.offsets[j + 1]] = m
        mat.setflags(write=False)
        self.matrix = mat

    @classmethod
    def from_upper_blocks(cls, action_counts, upper):
        """Build from blocks with ``i < j`` only."""
        for i, j in upper:
            if i >= j:
                raise DimensionError(f"upper block ({i}, {j}) must satisfy i < j")
        return cls(action_counts, upper)

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def __repr__(self):
        return f"GameSpec(n_players={self.n_players}, action_counts={self.action_counts})"

    def __eq__(self, other):
        if not isinstance(other, GameSpec):
            return NotImplemented
        return (
            self.action_counts == other.action_counts
            and self.blocks.keys() == other.blocks.keys()
            and all(np.array_equal(self.blocks[k], other.blocks[k]) for k in self.blocks)
        )

    # -- flat <-> per-player conversions --------------------------------------

    def flatten(self, profile: Profile) -> np.ndarray:
        check_shapes(self, profile)
        return np.concatenate([np.asarray(p, dtype=float) for p in profile])

    def split(self, flat: np.ndarray) -> Profile:
        return [flat[self.offsets[i]:self.offsets[i + 1]].copy() for i in range(self.n_players)]

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_players": self.n_players,
            "action_counts": list(self.action_counts),
            "blocks": [
                {"i": i, "j": j, "matrix": m.tolist()}
                for (i, j), m in self.blocks.items()
                if i < j
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GameSpec":
        try:
            counts = [int(d) for d in doc["action_counts"]]
            n = int(doc["n_players"])
            upper = {(int(b["i"]), int(b["j"])): np.array(b["matrix"], dtype=float) for b in doc["blocks"]}
        except (KeyError, TypeError, ValueError) as exc:
            raise DimensionError(f"malformed game document: {exc}") from exc
        if n != len(counts):
            raise DimensionError(f"n_players={n} but {len(counts)} action counts given")
        return cls.from_upper_blocks(counts, upper)


def save_game(game: GameSpec, path) -> None:
    Path(path).write_text(json.dumps(game.to_dict(), indent=1))


def load_game(path) -> GameSpec:
    return GameSpec.from_dict(json.loads(Path(path).read_text()))


# -- profiles -----------------------------------------------------------------


def check_shapes(game: GameSpec, profile: Profile) -> None:
    if len(profile) != game.n_players:
        raise DimensionError(f"profile has {len(profile)} strategies, game has {game.n_players} players")
    for i, (p, d) in enumerate(zip(profile, game.action_counts)):
        if np.shape(p) != (d,):
            raise DimensionError(f"strategy {i} has shape {np.shape(p)}, expected ({d},)")


def is_simplex(x, tol: float = SIMPLEX_TOL) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(x.ndim == 1 and np.all(np.isfinite(x)) and np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol)


def check_profile(game: GameSpec, profile: Profile, tol: float = SIMPLEX_TOL) -> None:
    """Raise unless ``profile`` has the right shapes and lies on the simplices."""
    check_shapes(game, profile)
    for i, p in enumerate(profile):
        if not is_simplex(p, tol):
            raise DomainError(f"strategy {i} is not on the probability simplex: {p}")


def uniform_profile(game: GameSpec) -> Profile:
    return [np.full(d, 1.0 / d) for d in game.action_counts]


def random_interior_profile(game: GameSpec, rng: np.random.Generator) -> Profile:
    """Each strategy drawn from the flat Dirichlet, i.e. uniform on the simplex.

    Sampled as normalized unit exponentials ``-log(1 - u)`` so the result only
    depends on the uniform stream.
    """
    out = []
    for d in game.action_counts:
        e = -np.log1p(-rng.random(d))
        out.append(e / e.sum())
    return out


# -- payoffs ------------------------------------------------------------------


def payoff_gradient(game: GameSpec, profile: Profile) -> list:
    """``grads[i] = sum_{j != i} M[(i, j)] @ profile[j]``."""
    return game.split(game.flatten(profile) @ game.matrix.T)


def payoff(game: GameSpec, profile: Profile) -> list:
    """Per-player payoffs ``v_i = sum_{j != i} pi_i @ M[(i, j)] @ pi_j``."""
    flat = game.flatten(profile)
    prod = flat * (flat @ game.matrix.T)
    return [float(prod[game.offsets[i]:game.offsets[i + 1]].sum()) for i in range(game.n_players)]


def exploitability(game: GameSpec, profile: Profile) -> float:
    """Sum over players of best-response value minus current payoff.

    Each ``v_i`` is linear in the player's own strategy, so the best response
    is attained at a vertex and equals the largest gradient coordinate.
    """
    check_profile(game, profile)
    flat = game.flatten(profile)
    return _exploitability_flat(game, flat)


def _exploitability_flat(game: GameSpec, flat: np.ndarray) -> float:
    grad = flat @ game.matrix.T
    starts = game.offsets[:-1]
    best = np.maximum.reduceat(grad, starts)
    current = np.add.reduceat(grad * flat, starts)
    gap = float(np.sum(best - current))
    if gap < 0.0:
        if gap < -ZERO_SUM_TOL:
            raise DomainError(f"negative exploitability {gap}; profile is off the simplex")
        return 0.0
    return gap


def monotonicity_residual(game: GameSpec, p: Profile, q: Profile) -> float:
    """``sum_i <grad_i v_i(p) - grad_i v_i(q), p_i - q_i>``; zero for zero-sum polymatrix games."""
    diff = game.flatten(p) - game.flatten(q)
    return float(diff @ (game.matrix @ diff))


# -- game-level constants -----------------------------------------------------


def lipschitz_bound(game: GameSpec, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Spectral norm of the block operator, by power iteration on ``A^T A``.

    The gradient map is linear, so this norm bounds the Lipschitz constant.
    A relative margin of 1e-8 covers the residual error of the iteration.
    """
    a = game.matrix
    if not np.any(a):
        return 0.0
    ata = a.T @ a
    v = np.ones(a.shape[1]) + np.linspace(0.0, 0.5, a.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = ata @ v
        new_lam = float(np.linalg.norm(w))
        if new_lam == 0.0:
            # Start vector landed in the null space; restart from a generic direction.
            v = np.cos(np.arange(1, a.shape[1] + 1))
            v /= np.linalg.norm(v)
            continue
        v = w / new_lam
        if abs(new_lam - lam) <= tol * new_lam:
            lam = new_lam
            break
        lam = new_lam
    return float(np.sqrt(lam) * (1.0 + 1e-8))


def gradient_norm_bound(game: GameSpec) -> float:
    """Certified bound on ``sqrt(sum_i ||grad_i v_i(pi)||^2)`` over the product of simplices.

    ``||M p||`` over the simplex is maximized at a vertex, i.e. by the
    largest column norm of ``M``.
    """
    per_player = np.zeros(game.n_players)
    for (i, _j), m in game.blocks.items():
        per_player[i] += np.linalg.norm(m, axis=0).max()
    return float(np.sqrt(np.sum(per_player**2)))


def diameter(game: GameSpec) -> float:
    """Euclidean diameter of the product of simplices (``sqrt(2)`` per player with >1 action)."""
    return float(np.sqrt(2.0 * sum(1 for d in game.action_counts if d > 1)))


# -- constructors -------------------------------------------------------------

BIASED_RPS = np.array(
    [
        [0.0, -1.0 / 3.0, 1.0],
        [1.0 / 3.0, 0.0, -1.0 / 3.0],
        [-1.0, 1.0 / 3.0, 0.0],
    ]
)
BIASED_RPS_EQUILIBRIUM = np.array([0.2, 0.6, 0.2])


def build_biased_rps() -> GameSpec:
    """Three-player biased rock-paper-scissors.

    Every ordered pair plays the same antisymmetric matrix, so the reverse
    blocks equal the forward ones.
    """
    m = BIASED_RPS.copy()
    return GameSpec([3, 3, 3], {(i, j): m for i in range(3) for j in range(3) if i != j})


def build_random_payoff(n_players: int, actions: int, seed: int) -> GameSpec:
    """Random zero-sum polymatrix game with Uniform[-1, 1] upper blocks.

    Blocks for pairs ``i < j`` are drawn in lexicographic order from a PCG64
    stream seeded with ``seed``.
    """
    if n_players < 2 or actions < 1:
        raise DimensionError(f"need n_players >= 2 and actions >= 1, got {n_players}, {actions}")
    rng = np.random.Generator(np.random.PCG64(seed))
    upper = {}
    for i in range(n_players):
        for j in range(i + 1, n_players):
            upper[(i, j)] = rng.uniform(-1.0, 1.0, size=(actions, actions))
    return GameSpec.from_upper_blocks([actions] * n_players, upper)


def build_game(descriptor: str, seed: int = 0, n_players: int = 3) -> GameSpec:
    """Resolve a config descriptor: ``"biased_rps"`` or ``"random:<n_actions>"``."""
    if descriptor == "biased_rps":
        return build_biased_rps()
    if descriptor.startswith("random:"):
        try:
            actions = int(descriptor.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad game descriptor {descriptor!r}") from exc
        return build_random_payoff(n_players, actions, seed)
    raise ConfigError(f"unknown game descriptor {descriptor!r}; expected 'biased_rps' or 'random:<n>'")
