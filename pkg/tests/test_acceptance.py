"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math

import numpy as np
import pytest
from scipy.integrate import dblquad

from kamkit import arithmetic as ar
from kamkit import operators as op
from kamkit import series as sr
from kamkit.kam import (NonDegeneracyError, SingularHamiltonian, TorusHamiltonian, kam_run, kam_singular_run,
                        solve_homological_singular, solve_homological_torus)
from kamkit.newton import diagonalize_kolmogorov, offdiag

SLACK = 1 + 4 * np.finfo(float).eps
PHI = (1 + math.sqrt(5)) / 2


def _random_pair(rng, lo=0.02):
    t = float(rng.uniform(lo, sr.S_MAX))
    s = float(rng.uniform(0.0, t))
    return max(s, t * 1e-3), t


def test_criterion_01_cauchy_inequalities(verdict):
    rng = np.random.default_rng(101)
    worst_q = worst_p = 0.0
    for _ in range(200):
        dim = int(rng.integers(1, 4))
        f = sr.random_series(rng, dim, sr.Mode.TORUS, (6, 4, 3), nterms=int(rng.integers(1, 20)))
        s, t = _random_pair(rng)
        ft = sr.norm_majorant(f, t)
        for i in range(dim):
            dq = sr.norm_majorant(sr.derive(f, "q", i), s)
            dp = sr.norm_majorant(sr.derive(f, "p", i), s)
            worst_q = max(worst_q, dq / (ft / (math.e * (t - s))))
            worst_p = max(worst_p, dp / (ft / (t - s)))
    ok = worst_q <= SLACK and worst_p <= SLACK
    verdict(1, ok, f"max ratio q d/dq {worst_q:.6f}, d/dp {worst_p:.6f} (limit 1 + 4 ulp)")
    assert ok


def test_criterion_02_composition_law(verdict):
    rng = np.random.default_rng(202)
    worst = 0.0
    for trial in range(100):
        dim = int(rng.integers(1, 3))
        ops = []
        for _ in range(2):
            which = str(rng.choice(["q", "p"]))
            ops.append(op.derivation_operator(which, int(rng.integers(dim)), float(rng.uniform(0.2, 2.0)), dim,
                                              sr.Mode.TORUS, (5, 3, 2)))
        u, v = ops
        cu = op.certify_bound(u, 1, trials=30, seed=trial)
        cv = op.certify_bound(v, 1, trials=30, seed=trial + 1000)
        assert cu.verdict and cv.verdict
        uv = op.compose(u, v)
        cuv = op.certify_bound(uv, 2, trials=30, seed=trial + 2000)
        worst = max(worst, cuv.C_emp / (4 * cu.declared * cv.declared))
    ok = worst <= SLACK
    verdict(2, ok, f"max C_uv / (2^2 C_u C_v) = {worst:.4f} over 100 compositions")
    assert ok


def test_criterion_03_borel_exponential(verdict):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 3))
        s, t = _random_pair(rng)
        pair = sr.ScalePair(s, t)
        nu = float(rng.uniform(0.0, 0.9))
        which = str(rng.choice(["q", "p"]))
        base = math.e if which == "q" else math.e ** 2
        u = op.derivation_operator(which, int(rng.integers(dim)), nu * (t - s) / base, dim, sr.Mode.TORUS,
                                   (6, 4, 2))
        assert abs(op.borel_nu(u, pair) - nu) <= 1e-12
        x = sr.random_series(rng, dim, sr.Mode.TORUS, (6, 4, 2), nterms=10)
        y, _ = op.borel_apply(op.geometric_source(60), u, x, pair)
        worst = max(worst, sr.norm_majorant(y, s) / (sr.norm_majorant(x, t) / (1 - nu)))
    ok = worst <= SLACK
    verdict(3, ok, f"max |e^u x|_s (1 - nu) / |x|_t = {worst:.4f} on 100 draws")
    assert ok


def test_criterion_04_matrix_kolmogorov(verdict):
    lines = []
    ok = True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = np.diag(np.arange(1.0, 6.0)) + 1e-3 * offdiag(rng.standard_normal((5, 5)))
        res = diagonalize_kolmogorov(A, tol=1e-12)
        ev_err = np.max(np.abs(np.sort(np.diag(res.D).real) - np.sort(np.linalg.eigvals(A).real)))
        rep = res.report
        steps = next(n for n, e in enumerate(rep.errors) if e <= 1e-12)
        good = ev_err <= 1e-10 and abs(rep.order - 2) <= 0.2 and steps <= 5
        ok &= good
        lines.append((ev_err, rep.order, steps))
    worst_ev = max(l[0] for l in lines)
    orders = [l[1] for l in lines]
    verdict(4, ok, f"20 matrices: eigenvalue error <= {worst_ev:.1e}, order in [{min(orders):.3f}, "
                   f"{max(orders):.3f}], iterations <= {max(l[2] for l in lines)}")
    assert ok


def _example_torus(beta=2.0):
    tr = (12, 4, 4)
    R = sr.ScaledSeries(2, sr.Mode.TORUS, {(1, 0, 0, 0, 1): 0.5, (-1, 0, 0, 0, 1): 0.5,
                                           (1, 0, 1, 0, 1): 0.5, (-1, 0, 1, 0, 1): 0.5}, tr, real=True)
    return TorusHamiltonian([1.0, PHI], beta * np.eye(2), R)


def _torus_residual_oracle(x, alpha, s):
    """Independent scan: everything with |J| <= 1 outside (alpha, p) and pure-t terms."""
    total = 0.0
    for key, c in x.coeffs.items():
        I, J, k = key.fourier, key.momentum, key.tdeg
        if sum(J) > 1 or (not any(I) and sum(J) == 0):
            continue
        if not any(I) and sum(J) == 1 and k == 0:
            c = c - alpha[J.index(1)]
        total += abs(c) * math.exp(s * sum(map(abs, I))) * s ** sum(J) * s ** (2 * k)
    return total


K_TORUS = 0.5  # measured e_{n+1}/e_n^2 ceiling on the example (observed max about 0.31)


def test_criterion_05_kam_torus(verdict):
    H = _example_torus()
    res = kam_run(H)
    rep = res.report
    oracle = _torus_residual_oracle(res.final, H.alpha, rep.iterations[-1].s)
    errs, resid = rep.errors, rep.extra["residuals"]
    # pairs whose successor is still above rounding level
    pairs = [(errs[i], errs[i + 1]) for i in range(len(errs) - 1) if resid[i + 1] > 1e-13]
    quad = all(b <= K_TORUS * a * a for a, b in pairs)
    with pytest.raises(NonDegeneracyError):
        kam_run(TorusHamiltonian([1.0, PHI], np.zeros((2, 2)),
                                 sr.ScaledSeries(2, sr.Mode.TORUS, {(0, 0, 1, 0, 1): 1.0}, (12, 4, 4), real=True)))
    ok = (oracle <= 1e-10 and res.residual_norm <= 1e-10 and rep.steps <= 6 and abs(rep.order - 2) <= 0.2
          and quad and len(pairs) >= 2)
    verdict(5, ok, f"{rep.steps} iterations, residual {oracle:.2e}, order {rep.order:.3f}, "
                   f"K = {rep.K:.3f}, degenerate beta raises NonDegeneracyError")
    assert ok


def test_criterion_06_kam_singular(verdict):
    R = sr.ScaledSeries(1, sr.Mode.SINGULAR, {(3, 0, 0): 1.0}, (8, 8, 0), real=True)
    res = kam_singular_run(SingularHamiltonian([1.0], R))
    outside = 0.0
    drift = 0.0
    for key, c in res.final.coeffs.items():
        I, J = key.fourier[0], key.momentum[0]
        if I == J == 1:
            drift = max(drift, abs(c - 1.0))
            continue
        if min(I, J) >= 2 or I == J == 0:
            continue
        outside += abs(c)
    ok = outside <= 1e-10 and drift <= 1e-12 and np.max(np.abs(res.drift)) <= 1e-12
    verdict(6, ok, f"{res.report.steps} iteration(s), residual outside C + I^2 {outside:.1e}, drift {drift:.1e}")
    assert ok


def _ulp_error(back, P):
    assert set(map(tuple, back.keys)) <= set(map(tuple, P.keys))
    diff = np.abs(back._lookup(P.keys) - P.values)
    return float(np.max(diff / (np.finfo(float).eps * np.abs(P.values))))


def test_criterion_07_homological_exactness(verdict):
    rng = np.random.default_rng(707)
    worst_t = worst_s = 0.0
    alpha = np.array([1.0, PHI])
    omega = np.array([1.0, PHI])
    H0t = sr.ScaledSeries(2, sr.Mode.TORUS, {(0, 0, 1, 0, 0): 1.0, (0, 0, 0, 1, 0): PHI}, (8, 4, 3), real=True)
    H0s = sr.ScaledSeries(2, sr.Mode.SINGULAR, {(1, 0, 1, 0, 0): 1.0, (0, 1, 0, 1, 0): PHI}, (8, 6, 3),
                          real=True)
    for _ in range(500):
        P = sr.random_series(rng, 2, sr.Mode.TORUS, (8, 4, 3), nterms=int(rng.integers(1, 30)),
                             real=bool(rng.integers(2)))
        P = P.select(np.any(P.keys[:, :2] != 0, axis=1))
        if not P.is_zero():
            h = solve_homological_torus(P, alpha)
            worst_t = max(worst_t, _ulp_error(sr.poisson_bracket(H0t, h), P))
        Q = sr.random_series(rng, 2, sr.Mode.SINGULAR, (8, 6, 3), nterms=int(rng.integers(1, 30)))
        Q = Q.select(np.any(Q.keys[:, :2] != Q.keys[:, 2:4], axis=1))
        if not Q.is_zero():
            h, rej = solve_homological_singular(Q, omega)
            assert rej.is_zero()
            worst_s = max(worst_s, _ulp_error(sr.poisson_bracket(H0s, h), Q))
    ok = worst_t <= 4 and worst_s <= 4
    verdict(7, ok, f"max back-substitution error {worst_t:.2f} ulp (torus), {worst_s:.2f} ulp (singular)")
    assert ok


def test_criterion_08_measure(verdict):
    frac, bound, sigma = ar.measure_estimate(1.0, 1e-3, 1.0, 100_000, 50, seed=8)
    ok = frac <= bound + 3 * sigma
    verdict(8, ok, f"violation fraction {frac:.5f} <= bound {bound:.5f} + 3 sigma ({3 * sigma:.5f})")
    assert ok


def test_criterion_09_liouville(verdict):
    ws = [ar.liouville_witness(N) for N in (2, 3)]
    ok = all(w.holds and w.tail_ok for w in ws)
    ratios = ", ".join(f"N={w.N}: {float(w.pairing_upper ** 2 / w.bound_sq):.3f}" for w in ws)
    verdict(9, ok, f"exact rational check, (pairing / bound)^2 = {ratios}")
    assert ok


def test_criterion_10_l2_norms(verdict):
    worst_quad = 0.0
    for n in range(-5, 6):
        for s in (0.1, 0.3, 0.5):
            f = sr.monomial(1, sr.Mode.TORUS, (n,), (0,), 0, 1.0, (8, 0, 0))
            quad, _ = dblquad(lambda r, th: r ** (2 * n) * r / (2 * math.pi), 0, 2 * math.pi, 1 - s, 1 + s,
                              epsabs=1e-13, epsrel=1e-13)
            worst_quad = max(worst_quad, abs(sr.norm_l2_annulus(f, s) - math.sqrt(quad)))
    rng = np.random.default_rng(1010)
    worst_ratio = 0.0
    for _ in range(50):
        f = sr.random_series(rng, 1, sr.Mode.TORUS, (5, 0, 0), nterms=6)
        s = float(rng.uniform(0.01, 0.3))
        sigma = float(rng.uniform(0.01, sr.S_MAX - s))
        bound = sr.pointwise_bound_from_l2(f, s, sigma)
        r = rng.uniform(1 - s, 1 + s, 400)
        th = rng.uniform(0, 2 * math.pi, 400)
        w = (r * np.exp(1j * th))[:, None]
        vals = np.abs(sr.evaluate(f, w, np.zeros_like(w)))
        worst_ratio = max(worst_ratio, float(vals.max() / bound))
    ok = worst_quad <= 1e-8 and worst_ratio <= 1
    verdict(10, ok, f"max |formula - quadrature| {worst_quad:.1e}; max |f(w)| / bound {worst_ratio:.3f}")
    assert ok
