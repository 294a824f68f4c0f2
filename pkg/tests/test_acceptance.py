"""Acceptance suite: one test per criterion, each at its stated tolerance and time limit.

A one-line PASS/FAIL verdict per criterion is printed in the terminal summary.
"""

import io
import math
import time

import numpy as np
import pytest

from expconc.bounds import (
    Confidence,
    c_epsilon,
    empirical_H,
    grad_concentration_bound,
    net_deviation_bound,
    theorem1_bound,
    vector_bernstein,
)
from expconc.calculus import (
    SamplingPlan,
    check_lemma1,
    check_optimality_inequality,
    expconcavity_check,
    random_ball_points,
)
from expconc.experiments import (
    ExperimentConfig,
    fit_rate,
    median_standard_error,
    population_minimizer,
    population_objective,
    run_trials,
    summarize,
)
from expconc.problem import L1, Dataset, Domain, L2Squared, Sample, SquareLoss, Zero, regularizer_range
from expconc.solver import combined_prox, solve_erm
from conftest import desk_spec
from oracles.highprec import seven_term_sum
from oracles.prox_grid import grid_prox_2d, l1_ball_objective
from oracles.ridge import ridge_instance
from test_calculus import BOX, SQRT2, parabola_plus_linear

criterion = pytest.mark.criterion
TWO_OVER_E = 2 / math.e


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


# --------------------------------------------------------------------------
# shared Monte Carlo runs (criteria 6 to 9 and 11)

DESK_CFG = dict(spec=desk_spec(), trials=200)
DIM_CFGS = {d: dict(spec=desk_spec(d).with_reg(Zero()), n_grid=(2048,), trials=200, m=500) for d in (5, 20)}
PEN_BASE = dict(spec=desk_spec().with_reg(Zero()), trials=200)


def _run(kwargs):
    cfg = ExperimentConfig(**kwargs)
    buf = io.StringIO()
    with Timer() as t:
        recs = run_trials(cfg, buf)
    return cfg, recs, buf.getvalue(), t.elapsed


@pytest.fixture(scope="session")
def desk_run():
    return _run(DESK_CFG)


@pytest.fixture(scope="session")
def dim_runs():
    return {d: _run(kw) for d, kw in DIM_CFGS.items()}


@pytest.fixture(scope="session")
def penalized_runs():
    return _run(dict(PEN_BASE, mode="erm")), _run(dict(PEN_BASE, mode="penalized", g=L2Squared(1.0)))


# --------------------------------------------------------------------------


@criterion(1, "square loss certified at beta = 1/8")
def test_criterion_1_square_loss_certified():
    with Timer() as t:
        cert = expconcavity_check(SquareLoss(), 0.125, Domain(1.0, 2), SamplingPlan(y_max=1.0))
    print(f"min eigenvalue {cert.min_eig_seen:.3e} over {cert.points_checked} points, {t.elapsed:.2f}s")
    assert cert.certified and cert.min_eig_seen >= -1e-8
    assert t.elapsed < 5


@criterion(2, "non-exp-concave composite refuted at every beta")
def test_criterion_2_composite_refuted():
    e2 = np.array([0.0, 1.0])
    loss = parabola_plus_linear()
    with Timer() as t:
        for beta in (1e-6, 1e-3, 0.1, 0.5):
            cert = expconcavity_check(loss, beta, SQRT2, BOX)
            assert not cert.certified
            wit = cert.witness
            assert wit.quad_form <= -beta + 1e-10
            g = loss.grad(wit.w, wit.z.x, wit.z.y)
            M = loss.hess(wit.w, wit.z.x, wit.z.y) - beta * np.outer(g, g)
            assert e2 @ M @ e2 <= -beta + 1e-10
    assert t.elapsed < 5


@criterion(3, "solver exact on ridge instances, prox matches grid search")
def test_criterion_3_solver_exactness():
    rng = np.random.default_rng(3)
    worst_ridge = worst_prox = 0.0
    with Timer() as t:
        for _ in range(50):
            d = int(rng.integers(2, 11))
            n = int(rng.integers(d, 5 * d))
            X = random_ball_points(d, n, 1.0, rng)
            y = rng.uniform(-1, 1, n) * rng.uniform(0.5, 4)
            lam = float(rng.uniform(0.05, 1.0))
            R = float(rng.uniform(0.1, 1.0))
            spec = desk_spec(d).with_reg(L2Squared(lam))
            spec = type(spec)(spec.loss, spec.reg, Domain(R, d), spec.L, spec.beta)
            res = solve_erm(spec, Dataset(X, y))
            worst_ridge = max(worst_ridge, float(np.linalg.norm(res.w_hat - ridge_instance(X, y, lam, R))))
        dom = Domain(1.0, 2)
        for _ in range(50):
            v = rng.normal(scale=1.5, size=2)
            lam, eta = rng.uniform(0.05, 1.0, 2)
            got = combined_prox(L1(lam), dom, v, eta)
            ref = grid_prox_2d(l1_ball_objective(v, eta, lam), 1.0)
            worst_prox = max(worst_prox, float(np.linalg.norm(got - ref)))
    print(f"worst ridge error {worst_ridge:.2e}, worst prox error {worst_prox:.2e}, {t.elapsed:.2f}s")
    assert worst_ridge <= 1e-6 and worst_prox <= 1e-6
    assert t.elapsed < 30


@criterion(4, "quadratic lower bound and optimality inequality on the desk instance")
def test_criterion_4_inequality_suites(desk):
    spec, dist = desk
    rng = np.random.default_rng(4)
    with Timer() as t:
        W = random_ball_points(spec.dim, 1000, 1.0, rng)
        V = random_ball_points(spec.dim, 1000, 1.0, rng)
        idx = rng.integers(0, dist.m, 1000)
        triples = [(w, v, Sample(dist.X[j], dist.y[j])) for w, v, j in zip(W, V, idx)]
        lower = check_lemma1(spec.loss, spec.constants, triples)
        wstar, _ = population_minimizer(dist, spec)
        gF = population_objective(dist, spec).grad_F(wstar)
        opt = check_optimality_inequality(gF, spec.reg, wstar, random_ball_points(spec.dim, 1000, 1.0, rng))
    print(f"min residuals {lower.min_residual:.3e} / {opt.min_residual:.3e}, {t.elapsed:.2f}s")
    assert lower.min_residual >= -1e-7 and opt.min_residual >= -1e-7
    assert t.elapsed < 10


@criterion(5, "bound arithmetic and monotonicity")
def test_criterion_5_bound_arithmetic():
    with Timer() as t:
        val, note = theorem1_bound(1, 1, 1, 1, 1, 1, TWO_OVER_E)
        ref = float(seven_term_sum(1, 1, 1, 1, 1, 1, TWO_OVER_E))
        assert abs(val - ref) / ref <= 1e-9 and note is Confidence.ONE_MINUS_TWO_DELTA
        assert c_epsilon(TWO_OVER_E, 1, 1, 6) == pytest.approx(4, rel=1e-15)
        assert c_epsilon(2 / math.e ** 2, 2, 1, 6) == pytest.approx(8, rel=1e-15)
        assert c_epsilon(TWO_OVER_E, 1, 1, 6 / math.e) == pytest.approx(8, rel=1e-15)
        assert vector_bernstein(1, 1, 8, TWO_OVER_E) == pytest.approx(0.75, rel=1e-15)
        assert vector_bernstein(0, 0, 8, 0.5) == 0
        assert vector_bernstein(1, 4, 2, TWO_OVER_E) == pytest.approx(3, rel=1e-15)
        assert grad_concentration_bound(1, 0.5, 1, 0.5, 8, TWO_OVER_E) == pytest.approx(0.75, rel=1e-15)
        assert grad_concentration_bound(2, 0.5, 4, 0.5, 32, TWO_OVER_E) == pytest.approx(0.625, rel=1e-15)
        rng = np.random.default_rng(5)
        for _ in range(100):
            L, G, R, sigma = rng.uniform(0.1, 4, 4)
            d, n = int(rng.integers(1, 30)), int(rng.integers(1, 10**5))
            delta = float(rng.uniform(0.01, 0.5))
            bounds = {
                "thm1": lambda n, d, delta: theorem1_bound(L, G, R, d, sigma, n, delta)[0],
                "lemma4": lambda n, d, delta: grad_concentration_bound(G, 0.1, d, sigma, n, delta),
                "lemma5": lambda n, d, delta: net_deviation_bound(L, G, delta, d, R, 0.01, n, R, 0.1),
            }
            for name, f in bounds.items():
                v = f(n, d, delta)
                assert math.isfinite(v) and v >= 0, name
                assert f(2 * n, d, delta) < v, name
                assert f(n, d, delta / 2) > v, name
                d1, d2, d3 = f(n, d, delta), f(n, d + 1, delta), f(n, d + 2, delta)
                assert d1 <= d2 <= d3, name
            # the excess-risk sum and C(eps) are affine in d (equal second differences);
            # the concentration bounds grow like sqrt(d) and are only checked for monotonicity
            for f in (lambda d: theorem1_bound(L, G, R, d, sigma, n, delta)[0],
                      lambda d: c_epsilon(delta, d, R, 0.01)):
                d1, d2, d3 = f(d), f(d + 1), f(d + 2)
                assert d3 - 2 * d2 + d1 == pytest.approx(0, abs=1e-12 * d3)
    assert t.elapsed < 1


@criterion(6, "fast rate: median excess slope in [-1.25, -0.75], r2 >= 0.95")
def test_criterion_6_fast_rate(desk_run):
    cfg, recs, _, elapsed = desk_run
    fit = fit_rate(recs, "median")
    print(f"slope {fit.slope:.3f}, r2 {fit.r2:.4f}, {len(recs)} trials in {elapsed:.1f}s")
    assert -1.25 <= fit.slope <= -0.75
    assert fit.r2 >= 0.95
    assert elapsed < 600
    med = {r["n"]: r["median"] for r in summarize(recs, 0.1, cfg.spec.constants)["per_n"]}
    assert med[128] / med[8192] >= 20


@criterion(7, "0.9-quantile of excess below the explicit bound at delta = 0.05")
def test_criterion_7_bound_dominance(desk_run):
    cfg, recs, _, _ = desk_run
    s = summarize(recs, 0.05, cfg.spec.constants)
    for row in s["per_n"]:
        assert row["bound_level"] == pytest.approx(0.9)
        print(f"n={row['n']}: q0.9={row['bound_quantile']:.3e} bound={row['thm1']:.3e}")
    assert s["violations"] == []
    assert not any(row["violation"] for row in s["per_n"])


@criterion(8, "median excess ratio d=20 / d=5 at n=2048 in [2, 10]")
def test_criterion_8_dimension_scaling(dim_runs):
    med = {d: float(np.median([r.excess_risk for r in run[1] if r.valid])) for d, run in dim_runs.items()}
    ratio = med[20] / med[5]
    print(f"medians {med}, ratio {ratio:.2f}")
    assert all(len(run[1]) == 200 for run in dim_runs.values())
    assert 2 <= ratio <= 10


@criterion(9, "penalized vs plain median excess within B/n + 2 SE")
def test_criterion_9_penalized_consistency(penalized_runs):
    (cfg_e, recs_e, _, _), (cfg_p, recs_p, _, _) = penalized_runs
    B = regularizer_range(L2Squared(1.0), cfg_p.spec.domain.radius)
    assert B == cfg_p.B == 0.5
    for n in cfg_e.n_grid:
        e = np.array([r.excess_risk for r in recs_e if r.n == n and r.valid])
        p = np.array([r.excess_risk for r in recs_p if r.n == n and r.valid])
        se = math.hypot(median_standard_error(e, seed=n), median_standard_error(p, seed=n + 1))
        gap = abs(np.median(p) - np.median(e))
        print(f"n={n}: gap {gap:.3e} allowed {B / n + 2 * se:.3e}")
        assert gap <= B / n + 2 * se


@criterion(10, "H-norm curvature inequality with exact population H")
def test_criterion_10_hnorm_curvature(desk):
    spec, dist = desk
    rng = np.random.default_rng(10)
    with Timer() as t:
        wstar, pstar = population_minimizer(dist, spec)
        pop = population_objective(dist, spec)
        grads = pop.per_atom_grads(wstar)
        W = random_ball_points(spec.dim, 500, spec.domain.radius, rng)
        worst = math.inf
        for alpha in (0.01, 0.1, 1.0):
            h = empirical_H(grads, spec.constants.sigma, alpha, weights=dist.weights)
            for w in W:
                u = w - wstar
                slack = pop.P(w) - pstar + 0.5 * alpha * (u @ u) - 0.5 * alpha * h.norm(u) ** 2
                worst = min(worst, slack)
    print(f"minimum slack {worst:.3e}, {t.elapsed:.2f}s")
    assert worst >= -1e-9
    assert t.elapsed < 10


@criterion(11, "repeated runs of criteria 6 to 9 give byte-identical trial CSVs")
def test_criterion_11_determinism(desk_run, dim_runs, penalized_runs):
    first = {"desk": desk_run, "d5": dim_runs[5], "d20": dim_runs[20],
             "erm": penalized_runs[0], "pen": penalized_runs[1]}
    for name, (cfg, _, text, _) in first.items():
        again = io.StringIO()
        run_trials(cfg, again)
        assert again.getvalue() == text, name
