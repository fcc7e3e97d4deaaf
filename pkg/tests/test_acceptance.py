"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``. The full suite takes
10 to 15 minutes on one core; the n = 2000 spectra are sampled
once per session and shared between criteria 6, 9 and 12.
"""

import json
import math
import time

import numpy as np
import pytest

from levylap.cli import main as cli_main
from levylap.eigensolver import check_conservation, empirical_stieltjes, spectrum
from levylap.ensembles import ErdosRenyi, LevyPareto, SparseGaussian, laplacian, row_sums, sample_matrix
from levylap.measures import MeasureEstimate, kolmogorov_distance, moment, row_sum_fit
from levylap.point_processes import AlphaStable, PointMass, ScaledGaussian, natural_drift
from levylap.pwitl import (
    TruncationParams,
    default_params,
    sample_root_resolvent_ensemble,
    sample_tree,
    tree_resolvent_direct,
    tree_resolvent_recursive,
)
from levylap.rde import RdeConfig, coupled_contraction, solve_free_convolution, solve_rde
from levylap.stieltjes import ZGrid
from levylap.streams import task_stream

import oracles

SEED = 20261016


def verdict(capsys, number, summary, passed, started):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {summary} ({time.time() - started:.0f}s)"
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


def _spectra(spec, count, kind="matrix"):
    return [spectrum(laplacian(sample_matrix(spec, task_stream(SEED, kind, i)))) for i in range(count)]


@pytest.fixture(scope="session")
def er_spectra_2000():
    return _spectra(ErdosRenyi(2000, 2.0), 20)


def _averaged_stieltjes(spectra, z):
    return np.mean([empirical_stieltjes(s, z) for s in spectra], axis=0)


def _pooled_esm(spectra):
    return MeasureEstimate.from_samples(np.concatenate([s.eigenvalues for s in spectra]))


# ---------------------------------------------------------------------------


def test_criterion_01_eigensolver_oracle(capsys):
    t0 = time.time()
    worst = 0.0
    for k in range(100):
        n = 1 + k % 6
        a = np.random.default_rng([SEED, k]).normal(size=(n, n))
        a = a + a.T
        worst = max(worst, float(np.abs(spectrum(a).eigenvalues - oracles.bisection_eigenvalues(a)).max()))
    cons = 0.0
    for n in (16, 256, 2048):
        a = np.random.default_rng([SEED, n]).normal(size=(n, n))
        a = a + a.T
        cons = max(cons, *check_conservation(a, np.asarray(spectrum(a).eigenvalues)))
    elapsed = time.time() - t0
    verdict(capsys, 1, f"max oracle deviation {worst:.1e} <= 1e-8, conservation {cons:.1e} <= 1e-10, "
                       f"runtime {elapsed:.0f}s < 60s", worst <= 1e-8 and cons <= 1e-10 and elapsed < 60, t0)


def test_criterion_02_laplacian_kernel(capsys):
    t0 = time.time()
    row_worst, eig_worst = 0.0, 0.0
    for spec_cls, kwargs in ((ErdosRenyi, {"lam": 2.0}), (SparseGaussian, {"lam": 2.0}),
                             (LevyPareto, {"alpha": 0.5})):
        for n in (100, 1000):
            for i in range(3):
                lap = laplacian(sample_matrix(spec_cls(n, **kwargs), task_stream(SEED, f"kernel-{n}", i)))
                dense = lap.to_dense()
                scale = max(np.abs(dense).sum(axis=1).max(), 1.0)
                row_worst = max(row_worst, float(np.abs(row_sums(lap)).max() / scale))
                eig_worst = max(eig_worst, float(np.abs(spectrum(lap).eigenvalues).min()))
    verdict(capsys, 2, f"row sums {row_worst:.1e}*scale <= 1e-12, nearest eigenvalue to 0 at {eig_worst:.1e} <= 1e-8",
            row_worst <= 1e-12 and eig_worst <= 1e-8, t0)


def test_criterion_03_tree_methods_agree(capsys):
    t0 = time.time()
    cases = [
        (PointMass(2.0), TruncationParams(4, 64)),
        (ScaledGaussian(2.0), TruncationParams(4, 64)),
        (AlphaStable(0.5), TruncationParams(3, 256, 1e-3)),
    ]
    worst = 0.0
    for k, (m, params) in enumerate(cases):
        gen = task_stream(SEED, "tree-agreement", k).generator()
        for _ in range(1000):
            tree = sample_tree(m, params, gen)
            z = complex(gen.uniform(-4, 2), gen.uniform(0.25, 2))
            d = abs(tree_resolvent_recursive(tree, z).value - tree_resolvent_direct(tree, z).value)
            worst = max(worst, d)
    elapsed = time.time() - t0
    verdict(capsys, 3, f"recursive vs direct {worst:.1e} <= 1e-10 over 3x1000 trees, runtime {elapsed:.0f}s < 120s",
            worst <= 1e-10 and elapsed < 120, t0)


def test_criterion_04_rde_exact_at_zero(capsys):
    t0 = time.time()
    grid = ZGrid.default()
    est = solve_rde(PointMass(0.0), grid, RdeConfig(), rng=SEED)
    exact = bool(np.array_equal(est.mean, -1.0 / grid.points)) and bool(np.all(est.stderr == 0))
    verdict(capsys, 4, f"lambda=0 returns -1/z bitwise with zero stderr on {len(grid)} points: {exact}", exact, t0)


def test_criterion_05_rde_vs_tree(capsys):
    t0 = time.time()
    m = PointMass(2.0)
    z = np.array([0.5j, 1 + 1j])
    est = solve_rde(m, ZGrid(z), RdeConfig(), rng=task_stream(SEED, "rde", 5))
    trees = sample_root_resolvent_ensemble(m, default_params(m, 8), z, 100_000, task_stream(SEED, "tree", 5))
    tree_mean = trees.mean(axis=0)
    tree_se = trees.std(axis=0, ddof=1) / math.sqrt(len(trees))
    z_scores = np.abs(est.mean - tree_mean) / np.hypot(est.stderr, tree_se)
    pop = est.metadata["population"]
    ks = [kolmogorov_distance(MeasureEstimate.from_samples(pop[g].imag),
                              MeasureEstimate.from_samples(trees[:, g].imag)).value for g in range(len(z))]
    passed = bool(np.all(z_scores <= 3)) and max(ks) <= 0.05
    verdict(capsys, 5, f"|RDE - tree| / se = {np.round(z_scores, 2).tolist()} <= 3, "
                       f"KS of Im parts {max(ks):.3f} <= 0.05", passed, t0)


@pytest.mark.parametrize("case", ["erdos_renyi", "sparse_gaussian", "alpha_stable"])
def test_criterion_06_headline_cross_validation(capsys, er_spectra_2000, case):
    t0 = time.time()
    if case == "erdos_renyi":
        spectra, m, eta, tol = er_spectra_2000, PointMass(2.0), 0.5, 0.03
        cfg = RdeConfig(n_pop=20_000, iterations=100, burn_in=50)
    elif case == "sparse_gaussian":
        spectra, m, eta, tol = _spectra(SparseGaussian(2000, 2.0), 20), ScaledGaussian(2.0), 0.5, 0.03
        cfg = RdeConfig(n_pop=20_000, iterations=100, burn_in=50)
    else:
        spectra, m, eta, tol = _spectra(LevyPareto(2000, 0.5), 20), AlphaStable(0.5), 1.0, 0.05
        cfg = RdeConfig(n_pop=10_000, iterations=60, burn_in=30)
    grid = ZGrid.rectangle(im_values=(eta,))
    emp = _averaged_stieltjes(spectra, grid.points)
    est = solve_rde(m, grid, cfg, rng=task_stream(SEED, "rde", 6))
    sup = float(np.abs(emp - est.mean).max())
    verdict(capsys, 6, f"{case}: sup |E s_L - s_RDE| on Im z = {eta} is {sup:.4f} <= {tol}", sup <= tol, t0)


def test_criterion_07_free_convolution_recovery(capsys):
    t0 = time.time()
    grid = ZGrid.rectangle(im_values=(1.0,))
    fc = solve_free_convolution(grid, tol=1e-12)
    est = solve_rde(ScaledGaussian(100.0), grid, RdeConfig(n_pop=10_000, iterations=60, burn_in=30),
                    rng=task_stream(SEED, "rde", 7))
    sup = float(np.abs(est.mean - fc.mean).max())
    residual = float(fc.metadata["residual"].max())
    far = solve_free_convolution(ZGrid(np.array([100j])), tol=1e-12)
    asym = abs(100j * far.mean[0] + 1)
    passed = sup <= 0.03 and residual < 1e-12 and asym <= 1e-3
    verdict(capsys, 7, f"sup |s_RDE(lam=100) - s_fc| = {sup:.4f} <= 0.03, residual {residual:.1e} < 1e-12, "
                       f"|i t s(it) + 1| at t=100 = {asym:.1e} <= 1e-3", passed, t0)


def test_criterion_08_row_sum_convergence(capsys):
    t0 = time.time()
    er = np.concatenate([row_sums(sample_matrix(ErdosRenyi(2000, 2.0), task_stream(SEED, "row-sums", i)))
                         for i in range(10)])
    er_fit = row_sum_fit(er, PointMass(2.0), natural_drift(PointMass(2.0)))
    feasible = oracles.binomial_poisson_tv(1999, 2.0 / 2000, 2.0)
    sg = np.concatenate([row_sums(sample_matrix(SparseGaussian(2000, 4.0), task_stream(SEED, "row-sums-sg", i)))
                         for i in range(10)])
    sg_fit = row_sum_fit(sg, ScaledGaussian(4.0), 0.0)
    passed = er_fit.total_variation <= 0.02 and sg_fit.cf_deviation <= 0.03 and feasible <= 0.02
    verdict(capsys, 8, f"ER TV {er_fit.total_variation:.4f} <= 0.02 (exact floor {feasible:.1e}), "
                       f"SG CF deviation {sg_fit.cf_deviation:.4f} <= 0.03", passed, t0)


def test_criterion_09_tightness(capsys, er_spectra_2000):
    t0 = time.time()
    moments = {}
    for n in (500, 1000):
        moments[n] = moment(_pooled_esm(_spectra(ErdosRenyi(n, 2.0), 20, kind=f"tight-{n}")), 0.2)
    moments[2000] = moment(_pooled_esm(er_spectra_2000), 0.2)
    ratio = max(moments.values()) / min(moments.values())
    verdict(capsys, 9, f"r=0.2 moments {[round(v, 4) for v in moments.values()]}, max/min {ratio:.4f} <= 1.2",
            ratio <= 1.2, t0)


def test_criterion_10_contraction(capsys):
    t0 = time.time()
    grid = ZGrid(np.array([complex(x, y) for y in (4.0, 6.0) for x in range(-4, 3)]))
    box = grid.points.imag >= 4
    ratios = {}
    for name, m in (("point_mass", PointMass(2.0)), ("scaled_gaussian", ScaledGaussian(2.0)),
                    ("alpha_stable", AlphaStable(0.5))):
        trace = coupled_contraction(m, grid, 5000, 100, task_stream(SEED, "contraction", len(ratios)), box=box)
        ratios[name] = float(trace[-1] / trace[0])
    worst = max(ratios.values())
    verdict(capsys, 10, "coupled distance after 100 sweeps / initial: "
                        + ", ".join(f"{k} {v:.1e}" for k, v in ratios.items()) + " <= 1e-2", worst <= 1e-2, t0)


def test_criterion_11_continuity(capsys):
    t0 = time.time()
    grid = ZGrid.default()
    cfg = RdeConfig(n_pop=20_000, iterations=60, burn_in=30)
    a = solve_rde(PointMass(2.0), grid, cfg, rng=task_stream(SEED, "rde", 11))
    b = solve_rde(PointMass(2.05), grid, cfg, rng=task_stream(SEED, "rde", 12))
    sup = float(np.abs(a.mean - b.mean).max())
    verdict(capsys, 11, f"sup |s(lam=2) - s(lam=2.05)| = {sup:.4f} <= 0.1", sup <= 0.1, t0)


def test_criterion_12_atom_at_zero(capsys, er_spectra_2000):
    t0 = time.time()
    pooled = np.concatenate([s.eigenvalues for s in er_spectra_2000])
    frac = float(np.mean(np.abs(pooled) <= 1e-6))
    bound = math.exp(-2) - 0.02
    verdict(capsys, 12, f"fraction of eigenvalues within 1e-6 of 0 is {frac:.4f} >= {bound:.4f}", frac >= bound, t0)


DETERMINISM_RUNS = [
    ("sample-spectrum", ["ensemble.n=300", "samples=6", "grid.points=0.5j,1+1j,-2+0.5j"]),
    ("sample-spectrum", ["ensemble.kind=levy_pareto", "ensemble.n=200", "samples=4", "ensemble.diagonal=independent",
                         "grid.points=1j,-1+1j"]),
    ("solve-rde", ["rde.n_pop=5000", "rde.iterations=30", "rde.burn_in=15"]),
    ("tree-mc", ["tree.depth=6", "tree.count=6000", "grid.points=0.5j,1+1j"]),
    ("row-sums", ["ensemble.kind=sparse_gaussian", "ensemble.lam=4", "ensemble.n=1000", "samples=4"]),
    ("free-conv", ["grid.im=1"]),
]


def test_criterion_13_determinism(capsys, tmp_path):
    t0 = time.time()
    mismatches = []
    for k, (command, overrides) in enumerate(DETERMINISM_RUNS):
        base = tmp_path / f"{k}-{command}"
        dirs = [base / "w1", base / "w3", base / "rerun"]
        cli_main([command, "--seed", str(SEED), "--workers", "1", "--out", str(dirs[0])] + overrides)
        cli_main([command, "--seed", str(SEED), "--workers", "3", "--out", str(dirs[1])] + overrides)
        cli_main(["rerun", str(dirs[0] / "manifest.json"), "--workers", "2", "--out", str(dirs[2])])
        csvs = [{p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))} for d in dirs]
        digests = [json.loads((d / "manifest.json").read_text())["outputs"] for d in dirs]
        if not csvs[0] or csvs[0] != csvs[1] or csvs[0] != csvs[2] or digests[0] != digests[2]:
            mismatches.append(command)
    verdict(capsys, 13, f"{len(DETERMINISM_RUNS)} experiments byte-identical across workers 1/3 and rerun; "
                        f"mismatches: {mismatches or 'none'}", not mismatches, t0)
