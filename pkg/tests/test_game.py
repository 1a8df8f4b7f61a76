import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_profile
from slingshot.errors import ConfigError, DimensionError, DomainError
from slingshot.game import (
    BIASED_RPS,
    GameSpec,
    build_game,
    build_random_payoff,
    diameter,
    exploitability,
    gradient_norm_bound,
    lipschitz_bound,
    load_game,
    monotonicity_residual,
    payoff,
    payoff_gradient,
    save_game,
    uniform_profile,
)
from slingshot.oracles import finite_difference_grad

EQ = [np.array([0.2, 0.6, 0.2])] * 3


def scalar_game(value):
    return GameSpec([1, 1], {(0, 1): np.array([[value]])})


class TestPayoff:
    def test_uniform_rps_is_zero(self, rps):
        assert payoff(rps, uniform_profile(rps)) == pytest.approx([0.0, 0.0, 0.0], abs=1e-15)

    def test_scalar_block(self):
        assert payoff(scalar_game(1.0), [np.ones(1), np.ones(1)]) == [1.0, -1.0]

    def test_pure_corners(self, rps):
        # R vs (P, S), P vs (R, S), S vs (R, P), read off the matrix by hand
        p = [np.eye(3)[0], np.eye(3)[1], np.eye(3)[2]]
        v = payoff(rps, p)
        assert v == pytest.approx([-1 / 3 + 1, 1 / 3 - 1 / 3, -1 + 1 / 3], abs=1e-15)
        assert sum(v) == pytest.approx(0.0, abs=1e-15)

    def test_shape_mismatch(self, rps):
        with pytest.raises(DimensionError):
            payoff(rps, [np.ones(3) / 3] * 2)
        with pytest.raises(DimensionError):
            payoff(rps, [np.ones(2) / 2] * 3)

    def test_zero_sum_random_games(self, rng):
        for seed in range(5):
            g = build_random_payoff(3, 7, seed)
            assert abs(sum(payoff(g, random_profile(rng, g.action_counts)))) < 1e-9


class TestGradient:
    def test_uniform_rps(self, rps):
        for gr in payoff_gradient(rps, uniform_profile(rps)):
            assert gr == pytest.approx([4 / 9, 0.0, -4 / 9], abs=1e-15)

    def test_zero_block(self):
        g = GameSpec([2, 2], {(0, 1): np.zeros((2, 2))})
        for gr in payoff_gradient(g, uniform_profile(g)):
            assert np.all(gr == 0.0)

    def test_matches_finite_differences(self, rng):
        g = build_random_payoff(3, 4, 7)
        for _ in range(100):
            prof = random_profile(rng, g.action_counts, margin=0.05)
            grads = payoff_gradient(g, prof)
            for i in range(3):
                def v(z, i=i):
                    p = list(prof)
                    p[i] = z
                    return payoff(g, p)[i]

                fd = finite_difference_grad(v, prof[i])
                exact = grads[i] - grads[i].mean()
                assert np.linalg.norm(fd - exact) <= 1e-6 * max(np.linalg.norm(exact), 1.0)


class TestExploitability:
    def test_uniform_rps(self, rps):
        assert exploitability(rps, uniform_profile(rps)) == pytest.approx(4 / 3, abs=1e-14)

    def test_uniform_rps_brute_force(self, rps):
        u = uniform_profile(rps)
        v = payoff(rps, u)
        total = 0.0
        for i in range(3):
            best = max(payoff(rps, [np.eye(3)[a] if k == i else u[k] for k in range(3)])[i] for a in range(3))
            total += best - v[i]
        assert exploitability(rps, u) == pytest.approx(total, abs=1e-14)

    def test_equilibrium(self, rps):
        assert exploitability(rps, EQ) <= 1e-9

    def test_single_action(self):
        assert exploitability(scalar_game(3.0), [np.ones(1), np.ones(1)]) == 0.0

    def test_nonnegative(self, rps, rng):
        for _ in range(200):
            assert exploitability(rps, random_profile(rng, rps.action_counts)) >= 0.0

    def test_off_simplex_rejected(self, rps):
        with pytest.raises(DomainError):
            exploitability(rps, [np.array([0.5, 0.5, 0.5])] * 3)


class TestMonotonicity:
    def test_rps_random_pairs(self, rps, rng):
        for _ in range(50):
            p = random_profile(rng, rps.action_counts)
            q = random_profile(rng, rps.action_counts)
            d = np.linalg.norm(rps.flatten(p) - rps.flatten(q))
            assert abs(monotonicity_residual(rps, p, q)) <= 1e-9 * (1 + d)

    def test_identical(self, rps, rng):
        p = random_profile(rng, rps.action_counts)
        assert monotonicity_residual(rps, p, p) == 0.0

    def test_coordination_fixture_detected(self):
        eye = np.eye(2)
        g = GameSpec([2, 2], {(0, 1): eye, (1, 0): eye}, require_zero_sum=False)
        p = [np.array([1.0, 0.0]), np.array([1.0, 0.0])]
        q = [np.array([0.0, 1.0]), np.array([0.0, 1.0])]
        assert monotonicity_residual(g, p, q) == pytest.approx(4.0)

    def test_unpaired_blocks_rejected(self):
        with pytest.raises(DomainError):
            GameSpec([2, 2], {(0, 1): np.eye(2), (1, 0): np.eye(2)})


class TestConstants:
    def test_scalar_lipschitz(self):
        assert lipschitz_bound(scalar_game(2.0)) == pytest.approx(2.0, rel=1e-7)

    def test_zero_game(self):
        g = GameSpec([2, 3], {(0, 1): np.zeros((2, 3))})
        assert lipschitz_bound(g) == 0.0
        assert gradient_norm_bound(g) == 0.0

    def test_rps_lipschitz_vs_svd(self, rps):
        svd = np.linalg.svd(rps.matrix, compute_uv=False)[0]
        assert lipschitz_bound(rps) == pytest.approx(svd, rel=1e-7)
        assert lipschitz_bound(rps) >= svd

    def test_lipschitz_certified_by_sampling(self, rng):
        g = build_random_payoff(3, 5, 2)
        lip = lipschitz_bound(g)
        for _ in range(1000):
            p = g.flatten(random_profile(rng, g.action_counts))
            q = g.flatten(random_profile(rng, g.action_counts))
            dg = p @ g.matrix.T - q @ g.matrix.T
            assert dg @ dg <= lip**2 * ((p - q) @ (p - q)) + 1e-12

    def test_gradient_norm_scalar(self):
        assert gradient_norm_bound(scalar_game(1.0)) == pytest.approx(np.sqrt(2.0))

    def test_gradient_norm_sampled(self, rps, rng):
        zeta = gradient_norm_bound(rps)
        assert 0 < zeta < np.inf
        for _ in range(10_000 // 50):
            prof = random_profile(rng, rps.action_counts)
            grads = payoff_gradient(rps, prof)
            assert np.sqrt(sum(gr @ gr for gr in grads)) <= zeta

    def test_diameter(self, rps):
        assert diameter(rps) == pytest.approx(np.sqrt(6.0))


class TestConstructors:
    def test_rps_entries(self, rps):
        assert rps.blocks[(1, 2)][0][2] == 1.0
        assert np.array_equal(rps.blocks[(2, 1)], -rps.blocks[(1, 2)].T)
        assert np.array_equal(rps.blocks[(2, 1)], rps.blocks[(1, 2)])
        assert np.array_equal(rps.blocks[(0, 1)], BIASED_RPS)

    def test_random_deterministic(self):
        a, b = build_random_payoff(3, 10, 42), build_random_payoff(3, 10, 42)
        assert a == b
        assert a != build_random_payoff(3, 10, 43)

    def test_random_range_and_pairing(self):
        g = build_random_payoff(4, 6, 1)
        for (i, j), m in g.blocks.items():
            assert np.all(np.abs(m) <= 1.0)
            assert np.array_equal(g.blocks[(j, i)], -m.T)

    def test_random_invalid_sizes(self):
        with pytest.raises(DimensionError):
            build_random_payoff(1, 3, 0)
        with pytest.raises(DimensionError):
            build_random_payoff(3, 0, 0)

    def test_blocks_read_only(self, rps):
        with pytest.raises(ValueError):
            rps.blocks[(0, 1)][0, 0] = 5.0

    def test_descriptors(self):
        assert build_game("random:4", seed=3) == build_random_payoff(3, 4, 3)
        with pytest.raises(ConfigError):
            build_game("chess")
        with pytest.raises(ConfigError):
            build_game("random:x")


class TestSerialization:
    def test_round_trip(self, tmp_path):
        g = build_random_payoff(3, 4, 9)
        path = tmp_path / "g.json"
        save_game(g, path)
        doc = json.loads(path.read_text())
        assert sorted(doc) == ["action_counts", "blocks", "n_players"]
        assert all(b["i"] < b["j"] for b in doc["blocks"])
        assert load_game(path) == g

    def test_dimension_mismatch_rejected(self):
        doc = {"n_players": 3, "action_counts": [2, 2], "blocks": []}
        with pytest.raises(DimensionError):
            GameSpec.from_dict(doc)


@given(st.integers(2, 4), st.integers(1, 5), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_random_games_are_monotone(n, d, seed, pseed):
    g = build_random_payoff(n, d, seed)
    r = np.random.default_rng(pseed)
    p, q = random_profile(r, g.action_counts), random_profile(r, g.action_counts)
    assert abs(monotonicity_residual(g, p, q)) <= 1e-9 * (1 + np.linalg.norm(g.flatten(p) - g.flatten(q)))
    assert abs(sum(payoff(g, p))) <= 1e-9
    assert exploitability(g, p) >= 0.0
