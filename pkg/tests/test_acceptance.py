"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line; the lines are also collected and
repeated in the pytest terminal summary. Run this file directly to get just
the lines.
"""

import math
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from slingshot import checks, oracles
from slingshot import geometry as geo
from slingshot.game import BIASED_RPS_EQUILIBRIUM, build_biased_rps, exploitability, uniform_profile
from slingshot.geometry import Divergence, Segments
from slingshot.harness import instance_seed, paper_presets, run_experiment, runs_csv
from slingshot.learners import (
    Constant,
    GaussianStream,
    LearnerConfig,
    NoiseModel,
    eta_upper_bound,
    init_batch,
    init_state,
    iterate_batch,
    iterate_dynamics,
    step_size_constants,
)

pytestmark = pytest.mark.acceptance

LINES = []
GAME = build_biased_rps()
SIGMA = uniform_profile(GAME)
SEG = Segments(GAME.action_counts)
MU = 0.1
PAIRS = {
    "kl/entropy": (Divergence("kl"), geo.ENTROPY),
    "l2/l2": (Divergence("l2"), geo.SQUARED_L2),
    "reverse_kl/log_barrier": (Divergence("reverse_kl"), geo.LOG_BARRIER),
}
START = [np.array([0.6, 0.3, 0.1]), np.array([0.1, 0.2, 0.7]), np.array([0.25, 0.25, 0.5])]


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


@lru_cache(maxsize=None)
def oracle_point(pair, mu=MU):
    G, reg = PAIRS[pair]
    return GAME.flatten(oracles.solve_perturbed_equilibrium(GAME, G, reg, mu, SIGMA, 1e-10).point)


def certified_cfg(pair, algorithm="ftrl_sp", mu=MU):
    G, reg = PAIRS[pair]
    probe = LearnerConfig(algorithm, reg, G, mu, Constant(1.0))
    return LearnerConfig(algorithm, reg, G, mu, Constant(0.9 * eta_upper_bound(probe, GAME, SIGMA)))


def breg(reg, target, x):
    x = np.asarray(x)
    return geo.bregman_terms(reg, np.broadcast_to(target, x.shape), x, SEG).sum(axis=-1)


def contraction_excess(algorithm):
    """Worst excess of the divergence to the oracle point over the geometric envelope, per pair."""
    out = {}
    for pair, (G, reg) in PAIRS.items():
        target = oracle_point(pair)
        cfg = certified_cfg(pair, algorithm)
        gamma = geo.relative_constants(G, reg, SIGMA).gamma
        began = time.perf_counter()
        state = init_state(GAME, cfg, START, SIGMA)
        env = oracles.rate_envelope_full(float(breg(reg, target, state.iterate)), cfg.rate.eta, MU, gamma)
        ts, ds = [0], [float(breg(reg, target, state.iterate))]
        for st in iterate_dynamics(GAME, cfg, state, 10_000):
            ts.append(st.t)
            ds.append(float(breg(reg, target, st.iterate)))
        excess = float(np.max(np.array(ds[1:]) - env(np.array(ts[1:])) - 1e-8))
        out[pair] = (excess, time.perf_counter() - began)
    return out


def _contraction_report(number, algorithm):
    res = contraction_excess(algorithm)
    ok = all(e <= 0 and sec < 10 for e, sec in res.values())
    detail = "; ".join(f"{p} excess {e + 1e-8:.2e} in {sec:.1f}s" for p, (e, sec) in res.items())
    report(number, ok, f"{algorithm} stays under the geometric envelope to t=1e4 ({detail})")


def test_criterion_1_contraction():
    _contraction_report(1, "ftrl_sp")


def test_criterion_2_md_sp_parity():
    _contraction_report(2, "md_sp")


def test_criterion_3_plateau():
    diam = math.sqrt(2 * GAME.n_players)
    parts, ok = [], True
    for pair, (G, reg) in PAIRS.items():
        target = oracle_point(pair)
        grad = geo.divergence_grad(G, target, GAME.flatten(SIGMA), SEG)
        bound = MU * diam * math.sqrt(float(np.sum(grad**2))) + 1e-6
        state = init_state(GAME, certified_cfg(pair), START, SIGMA)
        for st in iterate_dynamics(GAME, certified_cfg(pair), state, 100_000):
            pass
        gap = exploitability(GAME, st.profile)
        plateau = exploitability(GAME, GAME.split(target))
        halved = exploitability(GAME, GAME.split(oracle_point(pair, MU / 2)))
        good = gap <= bound and halved < plateau
        ok &= good
        parts.append(f"{pair} {gap:.3g} <= {bound:.3g}, halved mu {halved:.3g} < {plateau:.3g}")
    report(3, ok, "; ".join(parts))


def test_criterion_4_noisy_rate():
    pair = "kl/entropy"
    G, reg = PAIRS[pair]
    target = oracle_point(pair)
    probe = LearnerConfig("ftrl_sp", reg, G, MU, Constant(1.0))
    consts = step_size_constants(probe, GAME, SIGMA)
    cfg = replace(probe, rate=consts.schedule())
    seeds = 50
    began = time.perf_counter()
    state = init_batch(GAME, cfg, [START] * seeds)
    state.slingshot[:] = GAME.flatten(SIGMA)
    streams = [GaussianStream(instance_seed(0, k), GAME.size) for k in range(seeds)]
    d0 = float(breg(reg, target, GAME.flatten(START)))
    env = oracles.rate_envelope_noisy(d0, consts.kappa, consts.theta, GAME.n_players, 0.1 * math.sqrt(3), reg.rho)
    means = {}
    for st in iterate_batch(GAME.matrix, cfg, state, 10_000, NoiseModel.gaussian(0.1), streams):
        if st.t in (100, 1000, 10_000):
            means[st.t] = float(np.mean(breg(reg, target, st.iterate)))
    secs = time.perf_counter() - began
    ok = all(m <= 2 * env(t) for t, m in means.items()) and secs < 120
    detail = ", ".join(f"t={t}: {m:.3g} vs 2x{env(t):.3g}" for t, m in means.items())
    report(4, ok, f"mean divergence over {seeds} seeds below twice the envelope ({detail}; {secs:.1f}s)")


def test_criterion_5_slingshot_last_iterate():
    cfg = LearnerConfig("ftrl_sp", geo.SQUARED_L2, Divergence("l2"), 0.1, Constant(0.1), 20)
    eq = np.tile(BIASED_RPS_EQUILIBRIUM, 3)
    state = init_state(GAME, cfg, START)
    dists = [float(np.linalg.norm(state.slingshot - eq))]
    for st in iterate_dynamics(GAME, cfg, state, 100_000):
        if st.tau == 0:
            dists.append(float(np.linalg.norm(st.slingshot - eq)))
    gap = exploitability(GAME, st.profile)
    rise = float(np.max(np.diff(dists)))
    report(5, gap <= 1e-4 and rise <= 1e-6, f"l2 slingshot run: exploitability {gap:.3g} at t=1e5 (need <= 1e-4), largest anchor-distance increase {rise:.3g} (need <= 1e-6)")


def _final_mean(name, **overrides):
    cfg = replace(paper_presets()[name], record_every=100_000, **overrides)
    return run_experiment(cfg).summary[-1].mean_exploitability


def test_criterion_6_baselines_full():
    kw = dict(n_instances=10)
    mwu, omwu = _final_mean("fig1_3brps_mwu", **kw), _final_mean("fig1_3brps_omwu", **kw)
    ours = {n: _final_mean(n, **kw) for n in ("fig1_3brps", "fig1_3brps_rkl", "fig1_3brps_l2")}
    ok = all(v < mwu and v < omwu and mwu >= 10 * v for v in ours.values())
    detail = ", ".join(f"{n} {v:.3g}" for n, v in ours.items())
    report(6, ok, f"t=1e5 mean of 10 instances: {detail}; mwu {mwu:.3g}, omwu {omwu:.3g}")


def test_criterion_7_baselines_noisy():
    ours = _final_mean("fig2_3brps", n_instances=20)
    omwu = _final_mean("fig2_3brps_omwu", n_instances=20)
    report(7, ours < omwu, f"noisy t=1e5 mean of 20 instances: ftrl_sp kl {ours:.3g} < omwu {omwu:.3g}")


def test_criterion_8_t_sigma():
    vals = {t: _final_mean(f"figI_tsigma_sweep_full_{t}", n_instances=10) for t in (10, 100, 1000, 10_000)}
    ordered = vals[100] < vals[1000] < vals[10_000]
    flagged = vals[10] > vals[100]
    detail = ", ".join(f"T={t}: {v:.3g}" for t, v in vals.items())
    report(8, ordered and flagged, f"t=1e5 mean of 10 instances ({detail}); increasing in T over 100..10000: {ordered}; T=10 worse than T=100: {flagged}")


def test_criterion_9_geometry():
    began = time.perf_counter()
    rng = np.random.default_rng(2024)
    fd = 0.0
    for G in checks.ALL_DIVERGENCES:
        for _ in range(20):
            d = int(rng.integers(2, 7))
            fd = max(fd, checks.fd_relative_error(G, checks._interior(rng, d), checks._interior(rng, d)))
    proj = kkt = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        y = rng.normal(scale=2.0, size=d)
        proj = max(proj, float(np.max(np.abs(geo.project_simplex(y) - oracles.project_simplex_bruteforce(y)))))
        y = rng.normal(scale=5.0, size=max(d, 2))
        kkt = max(kkt, oracles.log_barrier_kkt_residual(y, geo.log_barrier_argmax(y)))
    sandwich = 0.0
    for G, reg in checks.PAIRS:
        for _ in range(10_000):
            d = int(rng.integers(2, 7))
            x, xp, s = (checks._interior(rng, d) for _ in range(3))
            sandwich = max(sandwich, checks.sandwich_violation(G, reg, x, xp, s))
    secs = time.perf_counter() - began
    ok = fd < 1e-6 and proj <= 1e-10 and kkt < 1e-10 and sandwich <= 1e-9 and secs < 30
    report(9, ok, f"fd rel err {fd:.2e}, projection dev {proj:.2e}, kkt {kkt:.2e}, sandwich violation {sandwich:.2e}, {secs:.1f}s")


def test_criterion_10_determinism():
    cfg = replace(paper_presets()["fig1_rand10"], horizon=2000, record_every=500)
    one = runs_csv(run_experiment(cfg, 1))
    eight = runs_csv(run_experiment(cfg, 8))
    again = runs_csv(run_experiment(cfg, 1))
    report(10, one == eight == again, f"fig1_rand10 ({cfg.n_instances} instances, horizon {cfg.horizon}) runs.csv identical on 1 and 8 workers: {one == eight}, across repeats: {one == again}")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                pass
