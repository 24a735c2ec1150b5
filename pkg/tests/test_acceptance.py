"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The trained-model criteria share session fixtures, so the expensive
weight-sharing sweep runs once.  Run with ``pytest tests/test_acceptance.py``.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from hvae_helpers import GRAD_VARIANTS, fd_check, perturbed_params, small_config
from instances import truncation_instance
from multires import wavelet
from multires.bridge import (
    CellCoefficients,
    FunctionSpec,
    BridgeSchedule,
    coefficients_for,
    integrate,
    simulate_bridge,
)
from multires.data import gen_haar_sparse, normalize
from multires.hvae import (
    HvaeConfig,
    collapsed_fraction,
    elbo_mc_timesteps,
    forward,
    fourier_features,
    residual_norm_probe,
)
from multires.hvae.train import TrainSettings, train
from multires.transport import EmpiricalMeasure, truncation_gap, wasserstein2
from multires.wavelet import coarse_dim

SWEEP_ITERS = 20_000
ABLATION_ITERS = 5_000
SEEDS = (0, 1, 2)
REPEATS = (1, 2, 4, 8)


def _model(**kw):
    return HvaeConfig(resolutions=(16, 4), hidden_width=16, latent_channels=2, **kw)


def _settings(iters):
    return TrainSettings(batch_size=16, eval_every=iters)


@pytest.fixture
def report(capsys):
    def emit(num, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {num:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        return ok

    return emit


# -- wavelet corpus --------------------------------------------------------

N_SIGNALS = 10_000


def _corpus():
    """Half 1D signals of length 2..1024, half 2D of side 2..256, drawn reproducibly."""
    rng = np.random.default_rng(20_240)
    for k in range(N_SIGNALS):
        if k % 2 == 0:
            J = int(rng.integers(1, 11))
            shape = (2**J,)
        else:
            J = int(rng.integers(1, 9))
            shape = (2**J, 2**J)
        yield rng.normal(size=shape) * rng.choice([1e-3, 1.0, 1e3])


def test_criterion_01_conjugacy(report):
    start = time.perf_counter()
    worst = 0.0
    for x in _corpus():
        worst = max(worst, wavelet.verify_conjugacy(x) / wavelet.function_norm(x))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 30
    assert report(1, "pool/analysis conjugacy", ok, f"max relative residual {worst:.2e} over {N_SIGNALS} signals, {elapsed:.1f}s")


def test_criterion_02_parseval(report):
    worst_rec = worst_norm = 0.0
    for x in _corpus():
        pyr = wavelet.haar_analyze(x)
        scale = wavelet.function_norm(x)
        worst_rec = max(worst_rec, wavelet.function_norm(wavelet.haar_synthesize(pyr) - x) / scale)
        worst_norm = max(worst_norm, abs(np.linalg.norm(pyr.to_vector()) - scale) / scale)
    ok = worst_rec <= 1e-12 and worst_norm <= 1e-12
    assert report(2, "orthonormality", ok, f"reconstruction {worst_rec:.2e}, norm preservation {worst_norm:.2e}")


# -- transport -------------------------------------------------------------


def test_criterion_03_truncation_bound(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    violations = sum(not truncation_gap(*truncation_instance(rng, J=3, n=16)).holds for _ in range(200))

    mismatches = 0
    for n in range(1, 7):
        for _ in range(10):
            a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
            cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
            brute = min(float(cost[np.arange(n), list(p)].mean()) for p in itertools.permutations(range(n)))
            mismatches += wasserstein2(EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b)) != np.sqrt(brute)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and mismatches == 0 and elapsed < 120
    detail = f"{violations} violations / 200 instances, {mismatches} brute-force mismatches / 60, {elapsed:.1f}s"
    assert report(3, "truncation bound and exact W2", ok, detail)


# -- bridge ----------------------------------------------------------------


def _ou_cells():
    # mu = -z split evenly across the two drift slots; growth off
    half = FunctionSpec("linear", matrix=-0.5)
    return {
        "em": CellCoefficients(drift1=FunctionSpec("linear", matrix=-1.0), diffusion=FunctionSpec("constant", value=1.0)),
        "vdvae": CellCoefficients(drift1=half, drift2=half, diffusion=FunctionSpec("constant", value=1.0)),
    }


def test_criterion_04_sde_fidelity(report):
    start = time.perf_counter()
    m0, n = 1.5, 10_000
    mean, var = np.exp(-1.0) * m0, (1 - np.exp(-2.0)) / 2
    lines, ok = [], True
    for cell, coeffs in _ou_cells().items():
        z = integrate([m0], coeffs, 1.0, 500, n, cell=cell, seed=4)[:, 0]
        z_mean_err = abs(z.mean() - mean) / np.sqrt(var / n)
        z_var_err = abs(z.var(ddof=1) - var) / (var * np.sqrt(2.0 / (n - 1)))

        quiet = CellCoefficients(coeffs.drift1, coeffs.drift2)
        errs = [abs(integrate([m0], quiet, 1.0, steps, 1, cell=cell)[0, 0] - mean) for steps in (16, 32, 64, 128)]
        ratios = [a / b for a, b in zip(errs, errs[1:])]
        ok &= z_mean_err <= 3 and z_var_err <= 3 and all(1.6 <= r <= 2.5 for r in ratios)
        lines.append(f"{cell}: mean {z_mean_err:.2f} SE, var {z_var_err:.2f} SE, halving ratios {np.round(ratios, 3).tolist()}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    assert report(4, "OU moments and weak order", ok, "; ".join(lines) + f"; {elapsed:.1f}s")


def test_criterion_05_bridge_support(report):
    levels = (0, 1, 2, 3)
    base = BridgeSchedule.uniform(len(levels), 0.8)
    schedule = BridgeSchedule(base.times, levels)
    cells = []
    for lv in levels:
        d = coarse_dim(lv, 1)
        drift = FunctionSpec("linear", matrix=-0.3 * np.eye(d), offset=0.2)
        cells.append(CellCoefficients(drift1=drift, drift2=FunctionSpec("constant", value=0.1), diffusion=FunctionSpec("constant", value=0.5)))
    coeffs = coefficients_for(schedule, cells)
    outside = fresh = 0
    for cell in ("em", "vdvae"):
        for tr in simulate_bridge(schedule, coeffs, 5, 1000, cell=cell, seed=5):
            for i, lv in enumerate(tr.levels):
                outside += int(np.count_nonzero(tr.states[i, coarse_dim(int(lv), 1) :]))
            for j in range(1, len(levels)):
                i = np.flatnonzero((tr.times == schedule.times[j]) & (tr.levels == levels[j]))[0]
                fresh += int(np.count_nonzero(tr.states[i, coarse_dim(levels[j - 1], 1) : coarse_dim(levels[j], 1)]))
    ok = outside == 0 and fresh == 0
    assert report(5, "bridge support", ok, f"{outside} nonzero inactive coordinates, {fresh} nonzero fresh coordinates over 2x1000 paths")


# -- HVAE ------------------------------------------------------------------


def test_criterion_06_gradients(report):
    start = time.perf_counter()
    errors = {}
    for name, kw in GRAD_VARIANTS.items():
        cfg = small_config(**kw)
        x = np.random.default_rng(6).normal(size=(3, cfg.image_size, cfg.image_size))
        errors[name] = fd_check(perturbed_params(cfg), x, n_coords=50)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    ok = worst < 1e-4 and elapsed < 300 and len(errors) == 8
    assert report(6, "finite-difference gradients", ok, f"max relative error {worst:.2e} over {len(errors)} variants, {elapsed:.1f}s")


@pytest.fixture(scope="session")
def toy_data():
    ds = normalize(gen_haar_sparse(5000, 16, alpha=0.5, eta=0.5, seed=0))
    return ds.split("train"), ds.split("val")


@pytest.fixture(scope="session")
def sweep(toy_data):
    tr, va = toy_data
    runs, cpu = {}, 0.0
    for seed in SEEDS:
        for r in REPEATS:
            start = time.process_time()
            runs[r, seed] = train(_model(repeats=r), tr, va, SWEEP_ITERS, _settings(SWEEP_ITERS), seed=seed)
            cpu += time.process_time() - start
    return runs, cpu


@pytest.fixture(scope="session")
def ablation(toy_data):
    tr, va = toy_data
    variants = {"base": {}, "normalized": dict(normalize_state=True), "non_residual": dict(residual_cell=False)}
    runs = {}
    for seed in SEEDS:
        for name, kw in variants.items():
            if name == "non_residual" and seed != SEEDS[0]:
                continue
            runs[name, seed] = train(_model(repeats=2, **kw), tr, va, ABLATION_ITERS, _settings(ABLATION_ITERS), seed=seed)
    return runs


def test_criterion_07_weight_sharing(report, sweep):
    runs, cpu = sweep
    counts = {r: runs[r, 0].params.n_params for r in REPEATS}
    nll = np.array([[runs[r, s].final_val_nll for r in REPEATS] for s in SEEDS])
    curve = nll.mean(axis=0)
    inversions = int(np.sum(np.diff(curve) > 0))
    wins = int(np.sum(nll[:, -1] < nll[:, 0]))
    ok = len(set(counts.values())) == 1 and inversions <= 1 and wins >= 2 and cpu <= 1800
    detail = f"mean NLL by r {np.round(curve, 4).tolist()}, {inversions} inversions, r8<r1 on {wins}/3 seeds, {cpu / 60:.1f} CPU min"
    assert report(7, "weight-sharing direction", ok, detail)


def test_criterion_08_time_representation(report, sweep, toy_data):
    runs, _ = sweep
    _, va = toy_data
    params = runs[8, SEEDS[0]].ema_params
    probe = residual_norm_probe(params, [va[i * 50 : (i + 1) * 50] for i in range(10)])
    rhos = []
    for res in np.unique(probe.backward_res):
        m = probe.backward_mean[probe.backward_res == res]
        rhos.append(spearmanr(np.arange(len(m)), m)[0])
    mean_rho = float(np.mean(rhos))
    ok = mean_rho >= 0.5
    assert report(8, "residual-norm ordering", ok, f"Spearman by resolution {np.round(rhos, 3).tolist()}, mean {mean_rho:.3f}")


def test_criterion_09_normalization(report, ablation):
    rel = [(ablation["normalized", s].final_val_nll - ablation["base", s].final_val_nll) / abs(ablation["base", s].final_val_nll) for s in SEEDS]
    hits = sum(v >= 0.10 for v in rel)
    ok = hits >= 2
    assert report(9, "normalization ablation", ok, f"relative NLL increase {np.round(rel, 3).tolist()}, >=10% on {hits}/3 seeds")


def test_criterion_10_residual_cell(report, ablation, toy_data):
    _, va = toy_data
    seed = SEEDS[0]
    frac = {name: collapsed_fraction(forward(ablation[name, seed].ema_params, va, 0)[0].kl_per_layer) for name in ("base", "non_residual")}
    ok = frac["non_residual"] >= 0.5 and frac["base"] < 0.2
    assert report(10, "posterior collapse", ok, f"collapsed fraction non-residual {frac['non_residual']:.2f}, residual {frac['base']:.2f}")


def test_criterion_11_mc_timestep_elbo(report):
    cfg = small_config(repeats=2)
    params = perturbed_params(cfg, 0, 0.3)
    x = np.random.default_rng(11).normal(size=(6, cfg.image_size, cfg.image_size))
    full = forward(params, x, 3)[0].elbo
    L = cfg.n_layers
    exhaustive = elbo_mc_timesteps(params, x, L, seed=3, layers=np.arange(L))
    draws = np.array([elbo_mc_timesteps(params, x, 2, seed=3, layer_seed=k) for k in range(10_000)])
    z = abs(draws.mean() - full) / (draws.std(ddof=1) / np.sqrt(len(draws)))
    ok = abs(exhaustive - full) <= 1e-9 and z <= 3
    assert report(11, "MC time-step ELBO", ok, f"exhaustive error {abs(exhaustive - full):.1e}, sampled bias {z:.2f} SE over 10^4 draws")


def test_criterion_12_fourier_features(report):
    factors_ok = all(
        fourier_features(np.ones((2, 5)), list(range(k))).shape[1] == 5 * (1 + 2 * k)
        and HvaeConfig(fourier_betas=tuple(range(k))).fourier_factor == 1 + 2 * k
        for k in range(6)
    )
    zero = fourier_features(np.zeros(3), [0.0, 1.0, 2.0])
    expect_zero = np.concatenate([np.zeros(3), np.tile(np.r_[np.zeros(3), np.ones(3)], 3)])
    quarter = fourier_features(np.array([0.25]), [1.0])
    err = max(np.max(np.abs(zero - expect_zero)), np.max(np.abs(quarter - [0.25, 1.0, 0.0])))
    ok = factors_ok and err <= 1e-12
    assert report(12, "Fourier features", ok, f"width factors exact: {factors_ok}, spot-value error {err:.1e}")
