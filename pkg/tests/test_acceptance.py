"""Acceptance suite: the eight project-level criteria.

Each criterion runs at its stated tolerance and prints one pass/fail line
(written straight to the terminal, so it shows up under pytest's capture).
Criterion 5 is the expensive one: ten full SABC recovery runs; its
population is shared with criterion 6.
"""

import functools
import itertools
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from platelet_abc import (
    DepositionSeries,
    ModelParams,
    SimulationConfig,
    SimulationExecutor,
    SummaryVector,
    adhesion_prob,
    aggregation_prob,
    albumin_deposit_prob,
    bhattacharyya_rho,
    default_prior,
    discrepancy_from_summaries,
    makespan,
    posterior_predictive,
    rejection_abc,
    sabc,
    simulate_schedule,
    summarize,
    synth_dataset,
)
from platelet_abc.deposition import BulkState, diffusion_step, initial_state

from conftest import rng_of

N_WORKERS = 8


def _say(message: str):
    print(f"[acceptance] {message}", file=sys.__stdout__, flush=True)


def criterion(number: int, name: str, budget_s: float):
    """Time a criterion, enforce its runtime budget, print its verdict."""

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException:
                _say(f"criterion {number} ({name}): FAIL "
                     f"after {time.perf_counter() - t0:.1f}s")
                raise
            elapsed = time.perf_counter() - t0
            verdict = "PASS" if elapsed < budget_s else "FAIL (over budget)"
            _say(f"criterion {number} ({name}): {verdict} "
                 f"in {elapsed:.1f}s (budget {budget_s:.0f}s)")
            assert elapsed < budget_s, (
                f"criterion {number} exceeded its runtime budget: "
                f"{elapsed:.1f}s >= {budget_s}s"
            )
        return wrapper
    return decorate


# ---------------------------------------------------------------------------
# 1. Diffusion correctness
# ---------------------------------------------------------------------------

@criterion(1, "diffusion vs heat kernel + mass conservation", 10.0)
def test_criterion_1_diffusion():
    config = SimulationConfig(
        diffusion=1e-3, layer_height=1.0, n_z=200, boundary_layer=0.005,
        obs_times=(0.0, 1.0), init_nap=0.0, init_ap=0.0, init_albumin=0.0,
        substrate_shape=(8, 8), seed=0,
    )
    # delta pulse against the closed-form free-space Gaussian
    state = initial_state(config)
    mid = config.n_z // 2
    state.rho[:, mid] = 1.0 / config.dz
    t_final = 1.0
    for _ in range(int(round(t_final / config.dt))):
        state = diffusion_step(state, config)
    z = (np.arange(config.n_z) + 0.5) * config.dz
    z0 = (mid + 0.5) * config.dz
    assert 4.0 * math.sqrt(config.diffusion * t_final) < config.layer_height / 2
    kernel = np.exp(-((z - z0) ** 2) / (4 * config.diffusion * t_final)) / math.sqrt(
        4 * math.pi * config.diffusion * t_final
    )
    l1_error = np.abs(state.rho[0] - kernel).sum() * config.dz
    assert l1_error < 0.01

    # mass conservation over 10^4 steps on a rough random profile
    state = BulkState(
        rho=rng_of(1).random((3, config.n_z)) * 1e5, boundary=np.zeros(3)
    )
    total0 = state.rho.sum(axis=1) * config.dz
    for _ in range(10_000):
        state = diffusion_step(state, config)
    np.testing.assert_allclose(state.rho.sum(axis=1) * config.dz, total0,
                               rtol=1e-12)


# ---------------------------------------------------------------------------
# 2. Deposition probability formulas
# ---------------------------------------------------------------------------

@criterion(2, "deposition probability formulas", 1.0)
def test_criterion_2_probabilities():
    config = SimulationConfig(
        diffusion=1e-3, layer_height=1.0, n_z=50, boundary_layer=0.005,
        obs_times=(0.0, 1.0), init_nap=0.0, init_ap=0.0, init_albumin=0.0,
        substrate_shape=(8, 8), seed=0,
    )
    # the fixed constants of the deposition model
    assert config.dt == 0.01
    assert config.cell_area == 5.0
    assert config.rho_max == 100_000.0

    rng = rng_of(2)
    rho_grid = np.linspace(0.0, config.rho_max, 1000)
    for _ in range(5):
        p = ModelParams(
            p_ag=rng.uniform(5, 20), p_ad=rng.uniform(50, 150),
            p_t=rng.uniform(0.5e-3, 3e-3), p_f=rng.uniform(0.1, 1.5),
            a_t=rng.uniform(0, 10),
        )
        scaled = rho_grid / config.rho_max
        q_ref = np.minimum(p.p_ad * np.exp(-p.a_t * scaled) * config.dt, 1.0)
        r_ref = np.minimum(p.p_ag * np.exp(-p.a_t * scaled) * config.dt, 1.0)
        np.testing.assert_allclose(
            adhesion_prob(rho_grid, p, config), q_ref, rtol=0, atol=1e-12
        )
        np.testing.assert_allclose(
            aggregation_prob(rho_grid, p, config), r_ref, rtol=0, atol=1e-12
        )

    # P linear in the remaining free space (small rate: clamp inactive)
    p_lin = ModelParams(1.0, 1.0, 1.0, 1e-7, 1.0)
    values = albumin_deposit_prob(rho_grid, p_lin, config)
    expected = p_lin.p_f * (config.rho_max - rho_grid) * config.dt
    np.testing.assert_allclose(values, expected, rtol=0, atol=1e-12)
    residual = np.polyfit(rho_grid, values, 1, full=True)[1]
    assert float(residual) < 1e-18

    # clamped to [0, 1] everywhere, including absurd rates
    huge = ModelParams(1e6, 1e6, 1e6, 1e6, 0.0)
    for fn in (albumin_deposit_prob, adhesion_prob, aggregation_prob):
        v = fn(rho_grid, huge, config)
        assert np.all((v >= 0.0) & (v <= 1.0))


# ---------------------------------------------------------------------------
# 3. Discrepancy formula
# ---------------------------------------------------------------------------

@criterion(3, "discrepancy worked values + bounds", 5.0)
def test_criterion_3_discrepancy():
    assert bhattacharyya_rho(0.0, 2.0, 1.0, 1.0) == pytest.approx(0.5, abs=1e-6)
    assert bhattacharyya_rho(0.0, 0.0, 1.0, 4.0) == pytest.approx(
        0.111572, abs=1e-6
    )

    rng = rng_of(3)

    def summary(correlations=None):
        return SummaryVector(
            mu=rng.normal(size=4) * 10,
            sigma=rng.random(4) * 5 + 1e-3,
            ac=rng.uniform(-1, 1, 4) if correlations is None else correlations[0],
            c=rng.uniform(-1, 1, 6) if correlations is None else correlations[1],
            cc=rng.uniform(-1, 1, 6) if correlations is None else correlations[2],
        )

    # single ac-slot difference of exactly 1 -> d = 0.125
    base = summary()
    shifted = SummaryVector(
        mu=base.mu.copy(), sigma=base.sigma.copy(),
        ac=np.concatenate([[base.ac[0] + 1.0], base.ac[1:]]),
        c=base.c.copy(), cc=base.cc.copy(),
    )
    assert discrepancy_from_summaries(base, shifted) == pytest.approx(
        0.125, abs=1e-6
    )

    # d(x, x) = 0 on simulated-series-shaped data
    for _ in range(10):
        data = rng.random((5, 4)) * 100
        series = DepositionSeries(
            times=np.array([0.0, 20.0, 60.0, 120.0, 300.0]),
            s_agg=data[:, 0], n_agg=data[:, 1],
            n_plt=data[:, 2], n_act=data[:, 3],
        )
        f = summarize(series)
        assert discrepancy_from_summaries(f, f) == 0.0

    # 10^4 random summary pairs: bounds and symmetry
    for _ in range(10_000):
        a, b = summary(), summary()
        d_ab = discrepancy_from_summaries(a, b)
        assert 0.0 <= d_ab <= 1.5
        assert d_ab == pytest.approx(
            discrepancy_from_summaries(b, a), rel=1e-12
        )


# ---------------------------------------------------------------------------
# 4. Prior reproduction under a non-binding threshold
# ---------------------------------------------------------------------------

@criterion(4, "rejection ABC reproduces the prior", 120.0)
def test_criterion_4_prior_reproduction():
    config = SimulationConfig(
        diffusion=2e-3, layer_height=0.5, n_z=16, boundary_layer=0.005,
        obs_times=(0.0, 0.2, 0.4, 0.6, 0.8),
        init_nap=50_000.0, init_ap=5_000.0, init_albumin=1e6,
        substrate_shape=(64, 64), rho_max=60.0, seed=0,
    )
    prior = default_prior()
    observed = synth_dataset(
        ModelParams(12.0, 100.0, 1.75e-3, 0.8, 5.0), config, seed=4040
    )
    population = rejection_abc(
        observed.series, prior, config, n_accept=2000, epsilon=1.5,
        executor=SimulationExecutor(n_workers=N_WORKERS), seed=2026,
        batch_size=250,
    )
    thetas = population.thetas()
    assert len(population) == 2000
    for dim in range(5):
        lo, hi = prior.lower[dim], prior.upper[dim]
        p_value = stats.kstest(thetas[:, dim], "uniform", args=(lo, hi - lo)).pvalue
        assert p_value > 0.01, f"dimension {dim} KS p={p_value:.4f}"


# ---------------------------------------------------------------------------
# 5 & 6. Synthetic recovery and posterior predictive check
# ---------------------------------------------------------------------------

RECOVERY_CONFIG = SimulationConfig(
    diffusion=2e-3, layer_height=1.0, n_z=32, boundary_layer=0.005,
    obs_times=(0.0, 4.0, 8.0, 12.0, 16.0),
    init_nap=200_000.0, init_ap=5_000.0, init_albumin=6e6,
    substrate_shape=(64, 64), rho_max=60.0, seed=7,
)
THETA_STAR = ModelParams(p_ag=15.0, p_ad=70.0, p_t=2.5e-3, p_f=0.4, a_t=7.0)
N_REPEATS = 10


@functools.lru_cache(maxsize=1)
def recovery_runs():
    """Ten SABC runs against one synthetic ground-truth dataset."""
    observed = synth_dataset(THETA_STAR, RECOVERY_CONFIG, seed=20260809)
    executor = SimulationExecutor(n_workers=N_WORKERS, strategy="dynamic")
    populations = []
    for repeat in range(N_REPEATS):
        populations.append(sabc(
            observed.series, default_prior(), RECOVERY_CONFIG,
            n_particles=256, n_steps=10, executor=executor,
            seed=101 + repeat,
        ))
    return observed, populations


@criterion(5, "synthetic ground-truth recovery", 1800.0)
def test_criterion_5_synthetic_recovery():
    _, populations = recovery_runs()
    prior = default_prior()
    star = THETA_STAR.as_array()

    # posterior mean closer to the truth than the prior mean, >= 4/5 params
    post_mean = populations[0].thetas().mean(axis=0)
    closer = np.abs(post_mean - star) < np.abs(prior.center() - star)
    assert closer.sum() >= 4, (
        f"only {closer.sum()}/5 posterior means improved on the prior mean "
        f"(post={post_mean}, star={star})"
    )

    # 95% credible interval for p_Ad covers the truth in >= 8/10 repeats
    covered = 0
    for pop in populations:
        lo, hi = np.quantile(pop.thetas()[:, 1], [0.025, 0.975])
        covered += bool(lo <= star[1] <= hi)
    assert covered >= 8, f"p_Ad CI covered the truth in only {covered}/10 runs"

    # sanity on the annealing: every run reduced the mean discrepancy
    for pop in populations:
        history = pop.mean_discrepancy_history
        assert history[-1] < history[0]


@criterion(6, "posterior predictive check", 600.0)
def test_criterion_6_posterior_predictive():
    observed, populations = recovery_runs()
    table = posterior_predictive(
        populations[0], RECOVERY_CONFIG, n_draws=100,
        executor=SimulationExecutor(n_workers=N_WORKERS), rng=606,
    )
    data = observed.series.variables().T   # (4, T)
    inside_minmax = (table.minimum <= data) & (data <= table.maximum)
    assert inside_minmax.all(), (
        f"observed series escapes the [min, max] band at "
        f"{np.argwhere(~inside_minmax).tolist()}"
    )
    inside_iqr = (table.q25 <= data) & (data <= table.q75)
    fraction = inside_iqr.mean()
    assert fraction >= 0.60, (
        f"only {fraction:.0%} of cells inside the [q25, q75] band"
    )


# ---------------------------------------------------------------------------
# 7. Scheduler
# ---------------------------------------------------------------------------

def optimal_makespan_dp(durations, n_workers: int) -> float:
    """Exact minimum makespan: DP over sorted worker-load states."""
    states = {(0.0,) * n_workers}
    for d in durations:
        states = {
            tuple(sorted(loads[:w] + (loads[w] + d,) + loads[w + 1:]))
            for loads in states for w in range(n_workers)
        }
    return min(max(loads) for loads in states)


@criterion(7, "scheduler makespans + Graham bound", 60.0)
def test_criterion_7_scheduler():
    # exact worked example in simulated-clock mode
    durations = [5.0, 1.0, 1.0, 1.0, 1.0, 1.0]
    assert makespan(simulate_schedule(durations, 2, "chunked")) == 7.0
    assert makespan(simulate_schedule(durations, 2, "dynamic")) == 5.0

    # the DP optimum agrees with literal assignment enumeration (small m)
    rng = rng_of(7)
    for _ in range(25):
        sample = rng.integers(1, 4, size=int(rng.integers(1, 6))).astype(float)
        brute = min(
            max(sum(d for d, w in zip(sample, assignment) if w == worker)
                for worker in range(2))
            for assignment in itertools.product(range(2), repeat=len(sample))
        )
        assert optimal_makespan_dp(sample, 2) == brute

    # Graham bound on every workload with m <= 10, n <= 3, durations {1,2,3}
    for n_workers in (1, 2, 3):
        bound = 2.0 - 1.0 / n_workers
        optimal = {}
        for m in range(1, 11):
            for durations in itertools.product((1.0, 2.0, 3.0), repeat=m):
                key = tuple(sorted(durations))
                if key not in optimal:
                    optimal[key] = optimal_makespan_dp(key, n_workers)
                greedy = makespan(
                    simulate_schedule(durations, n_workers, "dynamic")
                )
                assert greedy <= bound * optimal[key] + 1e-9

    # dynamic beats chunked on >= 95/100 lognormal workloads (m=64, n=8)
    rng = rng_of(6)
    wins = 0
    for _ in range(100):
        sample = rng.lognormal(0.0, 0.5, size=64).tolist()
        chunked = makespan(simulate_schedule(sample, 8, "chunked"))
        dynamic = makespan(simulate_schedule(sample, 8, "dynamic"))
        if chunked > dynamic + 1e-12:
            wins += 1
    assert wins >= 95


# ---------------------------------------------------------------------------
# 8. End-to-end determinism across worker counts
# ---------------------------------------------------------------------------

@criterion(8, "infer determinism across worker counts", 3600.0)
def test_criterion_8_determinism(tmp_path):
    config_doc = {
        "schema_version": 1,
        "simulation": {
            "diffusion": 2e-3, "layer_height": 0.5, "n_z": 12,
            "boundary_layer": 0.005, "obs_times": [0.0, 0.3, 0.6, 0.9, 1.2],
            "init_nap": 300_000.0, "init_ap": 50_000.0, "init_albumin": 3e6,
            "substrate_shape": [32, 32], "rho_max": 40.0, "seed": 5,
        },
        "sampler": {"kind": "sabc", "n_particles": 16, "n_steps": 3},
        "scheduler": {"workers": 1, "strategy": "dynamic"},
        "theta": {"p_Ag": 14.0, "p_Ad": 80.0, "p_T": 2e-3, "p_F": 0.5,
                  "a_T": 6.0},
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config_doc))

    def cli(*args):
        proc = subprocess.run(
            [sys.executable, "-m", "platelet_abc.cli", *args],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        return proc

    obs_dir = tmp_path / "obs"
    cli("--config", str(config_path), "--out-dir", str(obs_dir), "--seed", "9",
        "synth")
    observed = obs_dir / "observed.csv"

    outputs = {}
    for workers in (1, 8):
        out_dir = tmp_path / f"w{workers}"
        cli("--config", str(config_path), "--out-dir", str(out_dir),
            "--seed", "88", "infer", "--observed", str(observed),
            "--workers", str(workers))
        outputs[workers] = {
            name: (out_dir / name).read_bytes()
            for name in ("posterior.csv", "bayes_estimate.json",
                         "correlation.csv")
        }
    assert outputs[1] == outputs[8], (
        "infer outputs differ between 1 and 8 workers"
    )
