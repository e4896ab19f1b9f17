import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamkit import kam
from kamkit import series as sr
from kamkit.newton import ResonanceError
from kamkit.operators import lie_exp
from kamkit.series import Mode, ScalePair

PHI = (1 + math.sqrt(5)) / 2
TT = (6, 3, 2)
TS = (8, 8, 0)


def _linear(alpha, tr=TT):
    n = len(alpha)
    return sr.ScaledSeries(n, Mode.TORUS, {(0,) * n + tuple(int(i == j) for j in range(n)) + (0,): a
                                           for i, a in enumerate(alpha)}, tr, real=True)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_decomposition_reconstructs(seed):
    x = sr.random_series(np.random.default_rng(seed), 2, Mode.TORUS, TT, nterms=10)
    parts = kam.decompose_error(x)
    assert (parts.reconstruct() - x).max_abs() <= 1e-15 * max(1.0, x.max_abs())
    # classes are disjoint
    sizes = len(parts.pure_t) + len(parts.osc_const) + len(parts.osc_linear) + len(parts.higher)
    assert sizes + np.count_nonzero(parts.mean_linear) == len(x)


def test_decomposition_example():
    x = sr.ScaledSeries(1, Mode.TORUS, {(0, 0, 1): 2.0, (0, 1, 0): 0.7, (1, 0, 0): 1.0, (-1, 0, 0): 1.0,
                                        (1, 1, 1): 0.5, (-1, 1, 1): 0.5, (0, 2, 0): 1.5}, TT, real=True)
    parts = kam.decompose_error(x)
    assert len(parts.pure_t) == 1 and len(parts.osc_const) == 2 and len(parts.osc_linear) == 2
    assert parts.mean_linear[0, 0] == 0.7
    assert kam.mean_hessian(x)[0, 0, 0] == 3.0
    err = kam.error_part(x, [0.7])
    assert len(err) == 4


def test_torus_solver_zero_and_back_substitution():
    alpha = [0.7]
    assert kam.solve_homological_torus(sr.zero(1, Mode.TORUS, TT), alpha).is_zero()
    P = sr.ScaledSeries(1, Mode.TORUS, {(1, 0, 0): 1.0, (-1, 0, 0): 1.0, (2, 1, 1): 0.3, (-2, 1, 1): 0.3},
                        TT, real=True)
    h = kam.solve_homological_torus(P, alpha)
    assert (sr.poisson_bracket(_linear(alpha), h) - P).max_abs() <= 4 * np.finfo(float).eps
    # real on the real torus
    for th in np.linspace(0, 2 * np.pi, 7):
        v = sr.evaluate(h, [np.exp(1j * th)], [0.2], 0.1)
        assert abs(v.imag) <= 1e-14


def test_torus_solver_errors():
    P = sr.ScaledSeries(2, Mode.TORUS, {(0, 1, 0, 0, 0): 1.0, (0, -1, 0, 0, 0): 1.0}, TT, real=True)
    with pytest.raises(ResonanceError) as err:
        kam.solve_homological_torus(P, [1.0, 0.0])
    assert err.value.where in ((0, 1), (0, -1))
    with pytest.raises(ValueError):
        kam.solve_homological_torus(sr.constant(2, Mode.TORUS, 1.0, TT), [1.0, PHI])
    with pytest.raises(ResonanceError):
        kam.solve_homological_torus(P, [1.0, 1e-3], divisor_floor=0.01)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_torus_solver_inverts_bracket(seed):
    rng = np.random.default_rng(seed)
    alpha = [1.0, PHI]
    P = sr.random_series(rng, 2, Mode.TORUS, TT, nterms=8)
    P = P - sr.mean_over_q(P)
    h = kam.solve_homological_torus(P, alpha)
    diff = sr.poisson_bracket(_linear(alpha), h) - P
    assert diff.max_abs() <= 8 * np.finfo(float).eps * max(1.0, P.max_abs())


def test_singular_solver_examples():
    qp2 = sr.ScaledSeries(1, Mode.SINGULAR, {(2, 2, 0): 1.0}, TS, real=True)
    h, res = kam.solve_homological_singular(qp2, [1.0])
    assert h.is_zero() and res == qp2
    P = sr.ScaledSeries(2, Mode.SINGULAR, {(2, 0, 0, 1, 0): 1.0}, TS, real=True)
    h, res = kam.solve_homological_singular(P, [1.0, PHI])
    assert res.is_zero()
    assert h[(2, 0, 0, 1, 0)] == pytest.approx(1 / (2 - PHI), rel=1e-15)
    with pytest.raises(ResonanceError):
        kam.solve_homological_singular(P, [1.0, 2.0])


def test_frequency_correction_constant_hessian():
    assert np.all(kam.frequency_correction(np.zeros((2, 3)), 2 * np.eye(2)) == 0)
    m = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert np.allclose(kam.frequency_correction(m, 2 * np.eye(2)), m / 2, rtol=0, atol=1e-15)
    with pytest.raises(kam.NonDegeneracyError):
        kam.frequency_correction(m, np.zeros((2, 2)))


def test_frequency_correction_matches_dense_solve():
    rng = np.random.default_rng(6)
    n, K1 = 2, 4
    B = rng.standard_normal((n, n))
    B = B + B.T
    Hs = np.zeros((n, n, K1))
    Hs[:, :, 0] = 2 * np.eye(n)
    Hs[:, :, 1] = B
    m = rng.standard_normal((n, K1))
    # block lower-triangular Toeplitz system in the t-coefficients
    big = np.zeros((n * K1, n * K1))
    for k in range(K1):
        for j in range(k + 1):
            big[k * n:(k + 1) * n, j * n:(j + 1) * n] = Hs[:, :, k - j]
    dense = np.linalg.solve(big, m.T.reshape(-1)).reshape(K1, n).T
    assert np.allclose(kam.frequency_correction(m, Hs), dense, rtol=1e-13, atol=1e-14)


def _torus(R_coeffs, beta=2.0, tr=(12, 4, 4)):
    R = sr.ScaledSeries(2, Mode.TORUS, R_coeffs, tr, real=True)
    return kam.TorusHamiltonian([1.0, PHI], beta * np.eye(2), R)


def test_kam_step_and_run_without_remainder():
    H = _torus({})
    x = H.to_series()
    step = kam.kam_step(x, H.alpha, 0.0, ScalePair(0.2, 0.4))
    assert step.h.is_zero() and step.new == x
    res = kam.kam_run(H)
    assert res.report.steps == 0 and res.residual_norm == 0.0 and res.transform_log == []


def test_kam_run_transform_maps_hamiltonian_to_final():
    H = _torus({(1, 0, 0, 0, 1): 0.5, (-1, 0, 0, 0, 1): 0.5})
    res = kam.kam_run(H)
    assert res.residual_norm <= 1e-10
    again = res.apply(H.to_series())
    assert (again - res.final).max_abs() <= 1e-12


def test_hamiltonian_validation():
    with pytest.raises(ValueError):
        kam.TorusHamiltonian([1.0, PHI], np.array([[1.0, 0.5], [0.0, 1.0]]), sr.zero(2, Mode.TORUS, TT))
    with pytest.raises(ValueError):
        _torus({(1, 0, 0, 0, 0): 0.5, (-1, 0, 0, 0, 0): 0.5})
    with pytest.raises(ValueError):
        kam.SingularHamiltonian([1.0], sr.ScaledSeries(1, Mode.SINGULAR, {(1, 1, 0): 1.0}, TS, real=True))


def test_lie_transform_preserves_brackets():
    q = sr.unit(1, 0, "q", Mode.SINGULAR, TS)
    p = sr.unit(1, 0, "p", Mode.SINGULAR, TS)
    h = q * q * p * 0.05
    pair = ScalePair(0.2, 0.4)
    Q, P = lie_exp(h, None, q, pair), lie_exp(h, None, p, pair)
    br = sr.poisson_bracket(Q, P)
    # compare below the truncation degree
    low = br.select(br.keys[:, :2].sum(axis=1) <= 4)
    expected = sr.poisson_bracket(q, p)
    assert (low - expected).max_abs() <= 1e-12


def test_singular_run_resonant_remainder_is_fixed_point():
    R = sr.ScaledSeries(1, Mode.SINGULAR, {(2, 2, 0): 0.3}, TS, real=True)
    res = kam.kam_singular_run(kam.SingularHamiltonian([1.0], R))
    assert res.report.steps == 0 and res.final == kam.SingularHamiltonian([1.0], R).to_series()


def test_json_round_trip():
    H = _torus({(1, 0, 0, 0, 1): 0.5, (-1, 0, 0, 0, 1): 0.5, (1, 0, 1, 0, 1): 0.25, (-1, 0, 1, 0, 1): 0.25})
    back = kam.hamiltonian_from_dict(json.loads(json.dumps(H.as_dict())))
    assert back.to_series() == H.to_series()
    S = kam.SingularHamiltonian([1.0, PHI], sr.ScaledSeries(2, Mode.SINGULAR, {(2, 0, 0, 1, 0): 1.0}, TS, real=True))
    back = kam.hamiltonian_from_dict(json.loads(json.dumps(S.as_dict())))
    assert back.to_series() == S.to_series()
    with pytest.raises(ValueError):
        kam.hamiltonian_from_dict({"kind": "other"})
