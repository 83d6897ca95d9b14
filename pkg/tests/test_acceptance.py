"""The ten acceptance criteria at their stated sizes and tolerances."""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import ks_2samp

from dysonflow import cli, selftest
from dysonflow.configspace import GapConfig, ParticleConfig
from dysonflow.convergence import (
    coupled_errors, density_partition_check, make_windows, neighbour_ratio, spacing_balance,
    spacing_conservation,
)
from dysonflow.interaction import InteractionParams
from dysonflow.iteration import check_decreasing, iterate_stage, stage_differences, start
from dysonflow.oracles import MatrixEnsembleSpec, matrix_dbm_sample, q_estimate, solve_tau
from dysonflow.sde import SchemeSpec, simulate_gaps, simulate_particles

DT = 1e-3
SPEC = SchemeSpec(dt=DT)


def test_criterion_1_identities(verdict):
    t0 = time.perf_counter()
    suites = [selftest.suite_phifs(cases=1000, seed=1), selftest.suite_resum1(cases=1000, seed=1)]
    elapsed = time.perf_counter() - t0
    worst = max(s.worst for s in suites)
    ok = all(s.passed for s in suites) and worst <= 1e-12 and elapsed < 5
    verdict(1, ok, f"worst relative error {worst:.2e} on 2 x 1000 configurations in {elapsed:.1f} s")
    assert ok


def test_criterion_2_running_averages_and_toppling(verdict):
    t0 = time.perf_counter()
    suites = [selftest.suite_goodset(cases=10_000, seed=2), selftest.suite_topple(cases=10_000, seed=2)]
    elapsed = time.perf_counter() - t0
    ok = all(s.passed for s in suites) and elapsed < 30
    verdict(2, ok, f"goodset and topple exact on 10^4 cases each in {elapsed:.1f} s")
    assert ok


def test_criterion_3_pathwise_comparison(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    y_up = GapConfig(-8, rng.uniform(0.8, 1.6, 16))
    y_lw = GapConfig(-8, y_up.gaps * rng.uniform(0.5, 1.0, 16))

    def z_lw(n, rows):
        # time-dependent outside compression, absent from the upper system
        return -0.5 * (1 + np.sin(6 * n * DT))

    worst = -np.inf
    for beta in (1.0, 2.0):
        up = simulate_gaps(y_up, beta, SPEC, 0.5, 42, range(100))
        lw = simulate_gaps(y_lw, beta, SPEC, 0.5, 42, range(100), z_ext=z_lw)
        worst = max(worst, float(np.max(lw.values - up.values)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 10 * DT and elapsed < 120
    verdict(3, ok, f"max(Y_lw - Y_up) = {worst:.2e} over 100 replicas, beta 1 and 2, in {elapsed:.0f} s")
    assert ok


def test_criterion_4_monotone_iteration(verdict):
    t0 = time.perf_counter()
    details, ok = [], True
    for beta in (1.0, 2.0):
        state = start(GapConfig.constant(-16, 16), 0.5, 4, range(16))
        for _ in range(4):
            state = iterate_stage(state, InteractionParams(beta), SPEC)
        rep = check_decreasing(state, 10 * DT)
        d = stage_differences(state)
        ok &= rep.passed and d[0] > d[1] > d[2]
        details.append(f"beta {beta:g}: rise {rep.max_violation:.1e}, diffs " + ", ".join(f"{v:.3f}" for v in d))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 180
    verdict(4, ok, "; ".join(details) + f" in {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_5_matrix_cross_validation(verdict):
    t0 = time.perf_counter()
    x0 = ParticleConfig(-4, np.arange(8) - 3.5)
    details, ok = [], True
    for beta in (2, 1):
        # matrix increments are exact Gaussians, so one step of length t is exact
        mat = matrix_dbm_sample(MatrixEnsembleSpec(beta=beta, N=8, dt=0.5, T=0.5, seed=5, replicas=5000),
                                initial=x0.positions).eigenvalues[:, -1, :]
        sde = simulate_particles(x0, float(beta), SPEC, 0.5, 7, range(5000), record_every=500).values[:, -1, :]
        pooled = ks_2samp(mat.ravel(), sde.ravel()).statistic
        marginal = max(ks_2samp(mat[:, i], sde[:, i]).statistic for i in range(8))
        ok &= max(pooled, marginal) <= 0.05
        details.append(f"beta {beta}: KS pooled {pooled:.4f}, worst marginal {marginal:.4f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    verdict(5, ok, "; ".join(details) + f" in {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_6_window_convergence(verdict):
    t0 = time.perf_counter()
    x = ParticleConfig.lattice(-128, 128)
    ladder = make_windows(x, [8, 16, 32, 64, 128])
    tab = coupled_errors(x, ladder, 2.0, SPEC, 0.5, 2024, range(100), tracked=0)
    ns = [8, 16, 32, 64]
    med = [tab.median(n) for n in ns]
    msq = [tab.mean_power(n) for n in ns]
    elapsed = time.perf_counter() - t0
    ok = (all(a > b for a, b in zip(med[:-1], med[1:]))
          and all(a > b for a, b in zip(msq[:-1], msq[1:])) and elapsed < 900)
    verdict(6, ok, "median " + ", ".join(f"{v:.4f}" for v in med)
            + "; mean square " + ", ".join(f"{v:.2e}" for v in msq) + f" in {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_7_average_spacing(verdict):
    x = ParticleConfig.lattice(-255, 255)
    p = simulate_particles(x, 2.0, SPEC, 0.5, 11, range(50), record_brownian=True)
    ms = [8, 16, 32, 64]
    dev = spacing_conservation(p, ms, 0.5, rho=1.0).mean()
    residual = max(float(np.max(np.abs(spacing_balance(p, -m, m, 2.0)))) for m in ms)
    ok = all(a > b for a, b in zip(dev[:-1], dev[1:])) and residual <= 5 * DT
    verdict(7, ok, "mean deviation " + ", ".join(f"{v:.4f}" for v in dev)
            + f"; balance residual {residual / DT:.2f} dt")
    assert ok


def test_criterion_8_bessel_scaling(verdict):
    t0 = time.perf_counter()
    # independent noise for t and 4t so the ratio is a genuine check
    ratio = q_estimate(4.0, 1.0, 10**5, seed=2).estimate / q_estimate(1.0, 1.0, 10**5, seed=1).estimate
    tau = solve_tau(1.0 / 400, samples=10**5, seed=1)
    elapsed = time.perf_counter() - t0
    ok = 1.96 <= ratio <= 2.04 and tau.residual <= tau.estimate.ci_half_width and elapsed < 120
    verdict(8, ok, f"q(4,1)/q(1,1) = {ratio:.4f}; tau = {tau.tau:.4e}, residual {tau.residual:.1e}"
            f" vs CI {tau.estimate.ci_half_width:.1e} in {elapsed:.0f} s")
    assert ok


def test_criterion_9_density_partition(verdict):
    alpha = 0.5
    y0 = GapConfig.constant(-256, 256)
    # pick the smallest k that passes on a pilot run, then confirm on fresh noise
    pilot = simulate_gaps(y0, 1.0, SPEC, 0.5, 90, range(8))
    k = next(k for k in (1, 2, 4, 8, 16) if density_partition_check(pilot, alpha, k).passed)
    rep = density_partition_check(simulate_gaps(y0, 1.0, SPEC, 0.5, 91, range(8)), alpha, k)
    rng = np.random.default_rng(9)
    alphas = np.concatenate([[0.25, 0.5], rng.uniform(0.25, 1.0, 200)])
    ratios = [neighbour_ratio(a, int(kk), 8) for a in alphas for kk in (1, 2, 3, 4, 8, 16)]
    ok = rep.passed and max(ratios) <= 16
    verdict(9, ok, f"k = {k}: min cell average {rep.min_average:.3f} over {len(rep.cells)} cells "
            f"(threshold {rep.threshold}); worst neighbour ratio {float(max(ratios)):.3f} "
            f"over {len(ratios)} partitions")
    assert ok


def test_criterion_10_determinism(tmp_path, verdict, monkeypatch):
    monkeypatch.delenv("DYSONFLOW_SEED", raising=False)
    specs = {
        "simulate": {"experiment": "simulate", "N": 16, "replicas": 40, "T": 0.1},
        "iterate": {"experiment": "iterate", "window": 8, "replicas": 20, "T": 0.1},
        "converge": {"experiment": "converge", "ladder": [4, 8, 16], "replicas": 20, "T": 0.1},
        "diagnose": {"experiment": "diagnose", "window": 16, "replicas": 20, "T": 0.1},
        "density": {"experiment": "density", "window": 32, "k": 2, "replicas": 20, "T": 0.1},
        "spacing": {"experiment": "spacing", "window": 32, "m_values": [4, 8], "replicas": 20, "T": 0.1},
        "matrix": {"experiment": "oracle", "oracle": "matrix", "N": 6, "replicas": 40, "dt": 0.01, "T": 0.1},
        "bessel": {"experiment": "oracle", "oracle": "bessel", "samples": 2000, "n_steps": 100},
        "sine": {"experiment": "oracle", "oracle": "sine", "N": 256, "sine_window": 16, "replicas": 4},
        "membership": {"experiment": "membership", "N": 512, "sine_window": 32, "m_max": 16, "replicas": 4},
    }
    mismatched = []
    files = 0
    for name, spec in specs.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps({**spec, "seed": 13}))
        outs = []
        for threads in (1, 4, 1):
            out = tmp_path / f"{name}-{len(outs)}"
            assert cli.main(["run", str(path), "--threads", str(threads), "--out-dir", str(out)]) == 0
            outs.append(out)
        for csv_file in sorted(Path(outs[0]).glob("*.csv")):
            files += 1
            data = [(o / csv_file.name).read_bytes() for o in outs]
            if not data[0] == data[1] == data[2]:
                mismatched.append(f"{name}/{csv_file.name}")
    ok = not mismatched
    verdict(10, ok, f"{files} CSV tables from {len(specs)} experiments identical across threads 1, 4 and reruns"
            if ok else f"differing tables: {', '.join(mismatched)}")
    assert ok
