"""Acceptance criteria, one test each, at the stated tolerances and budgets.

Every test prints a ``CRITERION k PASS|FAIL`` line (also collected into the
terminal summary) before asserting.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from bartint.gpbq import GpConfig, bq_posterior
from bartint.harness import load_suite, run_experiment
from bartint.integrands import GenzFunction, Portfolio
from bartint.measures import ProductMeasure
from bartint.prior import BartPriorConfig, make_cutpoints, sample_tree_prior
from bartint.quadrature import integrate_draw_exact, posterior_summary
from bartint.sampler import ChainConfig, leaf_log_marginal, run_chain, sample_topologies
from bartint.trees import DecisionTree, RescaleTransform, SumOfTrees
from conftest import ACCEPTANCE_LINES
from enumeration_oracle import exact_posterior, total_variation

pytestmark = pytest.mark.acceptance


def report(k, ok, detail, seconds, budget):
    ok = bool(ok) and seconds < budget
    line = f"CRITERION {k:>2} {'PASS' if ok else 'FAIL'}: {detail} [{seconds:.1f}s / budget {budget:.0f}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_c01_prior_node_counts():
    t0 = time.perf_counter()
    cuts = [np.linspace(0, 1, 2001)[1:-1]]
    cfg = BartPriorConfig(n_trees=1, alpha=0.95, beta=2.0)
    rng = np.random.default_rng(1)
    k = np.array([sample_tree_prior(cfg, cuts, rng).n_leaves for _ in range(100_000)])
    freq = np.array([np.mean(k == 1), np.mean(k == 2), np.mean(k == 3), np.mean(k == 4), np.mean(k >= 5)])
    target = np.array([0.05, 0.55, 0.28, 0.09, 0.03])
    dev = np.abs(freq - target).max()
    assert report(1, dev <= 0.02, f"node-count freqs {np.round(freq, 4).tolist()}, max dev {dev:.4f}",
                  time.perf_counter() - t0, 30)


def test_c02_sampler_stationary_distribution():
    t0 = time.perf_counter()
    X = np.array([[0.1], [0.4], [0.6], [0.9]])
    r = np.array([-0.3, -0.1, 0.2, 0.35])
    cuts = make_cutpoints(X)
    sigma, sigma_beta = 0.2, 0.3
    exact = exact_posterior(X, r, cuts, sigma, sigma_beta, 0.95, 2.0, max_depth=2)
    prior = BartPriorConfig(n_trees=1, sigma_beta=sigma_beta, max_depth=2)
    codes = sample_topologies(DecisionTree.leaf(), r, X, cuts, sigma, prior, 1_000_000,
                              np.random.default_rng(7))
    tv = total_variation(codes, exact)
    assert report(2, tv < 0.02, f"TV {tv:.4f} over {len(exact)} topologies, 1e6 steps",
                  time.perf_counter() - t0, 120)


def test_c03_leaf_marginal_vs_quadrature():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        r = rng.normal(0, 0.5, n)
        s, b = rng.uniform(0.3, 1.5), rng.uniform(0.1, 1.0)
        centre = b**2 * r.sum() / (s**2 + n * b**2)
        # integrand scaled by its value at the centre so quad works near 1
        shift = -0.5 * np.sum((r - centre) ** 2) / s**2 - 0.5 * centre**2 / b**2
        const = -0.5 * n * math.log(2 * math.pi * s**2) - 0.5 * math.log(2 * math.pi * b**2)

        def integrand(beta):
            return math.exp(-0.5 * float(np.sum((r - beta) ** 2)) / s**2 - 0.5 * beta**2 / b**2 - shift)

        val, _ = quad(integrand, centre - 40 * b, centre + 40 * b, points=[centre],
                      epsabs=0, epsrel=1e-12, limit=200)
        oracle = const + shift + math.log(val)
        worst = max(worst, abs(float(leaf_log_marginal(n, r.sum(), r @ r, s, b)) - oracle))
    assert report(3, worst < 1e-8, f"max abs error {worst:.2e} on 100 cases", time.perf_counter() - t0, 10)


def test_c04_exact_vs_sampled_integrals():
    t0 = time.perf_counter()
    measure = ProductMeasure.uniform(3)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cuts = make_cutpoints(rng.random((30, 3)))
        cfg = BartPriorConfig(n_trees=10, beta=1.0, sigma_beta=1.0)
        ens = SumOfTrees([sample_tree_prior(cfg, cuts, rng) for _ in range(10)],
                         rescale=RescaleTransform(rng.normal(), rng.uniform(0.5, 2)))
        vals = ens.predict(measure.sample(100_000, rng).points)
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        worst = max(worst, abs(integrate_draw_exact(ens, measure) - vals.mean()) / se)
    assert report(4, worst < 4, f"max |exact - sampled| = {worst:.2f} se over 20 ensembles",
                  time.perf_counter() - t0, 30)


def test_c05_bq_linear_algebra_oracle():
    t0 = time.perf_counter()
    X = np.array([[0.1], [0.5], [0.8]])
    y = np.array([0.3, -0.2, 0.9])
    l = 20_000
    post = bq_posterior(X, y, GpConfig(lengthscale=1.0, noise=0.01, n_kernel_samples=l),
                        ProductMeasure.uniform(1), seed=7)
    rng = np.random.default_rng(7)
    p, q = rng.random(l), rng.random(l)

    def k(r):
        return (1 + math.sqrt(3) * r) * np.exp(-math.sqrt(3) * r)

    z = np.array([k(np.abs(p - xi)).mean() for xi in X[:, 0]])
    kk = k(np.abs(p - q)).mean()
    Kinv = np.linalg.inv(k(np.abs(X - X.T)) + (0.01 + 1e-10) * np.eye(3))
    err = max(abs(post.mean - z @ Kinv @ y), abs(post.variance - (kk - z @ Kinv @ z)))
    assert report(5, err < 1e-10, f"max deviation {err:.1e}", time.perf_counter() - t0, 5)


@pytest.fixture(scope="module")
def step_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("step")
    t0 = time.perf_counter()
    recs = {c.method: run_experiment(c, out) for c in load_suite("step_uniform", methods=["bart_int", "mc"])}
    return recs, time.perf_counter() - t0


def test_c06_step_function(step_runs):
    recs, seconds = step_runs
    bart, mc = recs["bart_int"].mape, recs["mc"].mape
    ok = bart <= 5e-2 and bart < mc
    assert report(6, ok, f"BART-Int MAPE {bart:.3e} vs MC {mc:.3e} (20 seeds, n=20+20)", seconds, 600)


def test_c07_discontinuous_genz(tmp_path):
    t0 = time.perf_counter()
    recs = {c.method: run_experiment(c, tmp_path)
            for c in load_suite("genz_d1", families=["disc"], methods=["bart_int", "gp_bq"])}
    bart, gp = recs["bart_int"].mape, recs["gp_bq"].mape
    assert report(7, bart < gp, f"BART-Int MAPE {bart:.3e} vs GP-BQ {gp:.3e} (20 seeds)",
                  time.perf_counter() - t0, 900)


def test_c08_portfolio(tmp_path):
    t0 = time.perf_counter()
    spec = Portfolio(5)
    truth = spec.true_probability()
    vals = spec(np.random.default_rng(8).exponential(size=(1_000_000, 5)))
    z = abs(vals.mean() - truth) / (vals.std(ddof=1) / 1000)
    mapes = {c.method: run_experiment(c, tmp_path).mape for c in load_suite("portfolio_d5")}
    ok = z < 4 and all(m < 0.5 for m in mapes.values())
    detail = f"truth {truth:.6f}, MC(1e6) off by {z:.2f} se; MAPE " + \
        ", ".join(f"{k} {v:.3f}" for k, v in sorted(mapes.items()))
    assert report(8, ok, detail, time.perf_counter() - t0, 900)


def test_c09_error_decay():
    t0 = time.perf_counter()
    f = GenzFunction("cont", 1)
    measure = ProductMeasure.uniform(1)
    truth = f.true_integral()
    prior = BartPriorConfig(n_trees=50, sigma_hat=0.1)
    chain = ChainConfig(n_burn=1000, n_keep=1000, thin=5)
    medians = []
    for n in (20, 40, 80, 160):
        errs = []
        for seed in range(20):
            rng = np.random.default_rng([seed, n])
            X = measure.sample(n, rng).points
            post = posterior_summary(run_chain(X, f(X), prior, chain, seed=rng), measure)
            errs.append(abs(post.mean - truth))
        medians.append(float(np.median(errs)))
    ok = all(b < a for a, b in zip(medians, medians[1:]))
    assert report(9, ok, "median abs error n=20,40,80,160: " + ", ".join(f"{m:.2e}" for m in medians),
                  time.perf_counter() - t0, 1200)


def test_c10_step_calibration(step_runs):
    recs, seconds = step_runs
    rec = recs["bart_int"]
    covered = sum(lo <= 0.5 <= hi for lo, hi in rec.intervals)
    assert report(10, covered >= 16, f"truth inside 95% interval in {covered}/20 seeds at n=40",
                  seconds, 600)



@pytest.mark.xfail(strict=False, reason="with 20+40 labels in d=24 the BART fit is shrunk towards the "
                   "midrange prior mean 0.5 and sits below the truth 0.64; MC wins at this size")
def test_survey_synthetic_pool(tmp_path):
    t0 = time.perf_counter()
    recs = {c.method: run_experiment(c, tmp_path)
            for c in load_suite("survey", methods=["bart_int", "mc"])}
    bart, mc = recs["bart_int"].mape, recs["mc"].mape
    bias = float(np.mean(recs["bart_int"].estimates)) - recs["bart_int"].truth
    assert report("S", bart <= mc, f"synthetic pool: BART-Int MAPE {bart:.3e} vs MC {mc:.3e}, "
                  f"BART mean bias {bias:+.3f} (20 seeds, n=20+40)", time.perf_counter() - t0, 1800)
