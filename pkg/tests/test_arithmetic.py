import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamkit import arithmetic as ar

GOLDEN = (1 + math.sqrt(5)) / 2


def test_resonant_vector_has_zero_constant():
    cert = ar.best_constant((1.0, 0.0), 0.7, 20)
    assert cert.C == 0.0 and cert.worst_j == (0, 1)


def test_golden_regression_constant():
    cert = ar.best_constant((1.0, GOLDEN), 0.5, 10_000)
    assert cert.C == 1.0 and cert.worst_j == (1, 0)
    assert cert.exponent == 2.5


def test_best_constant_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(5):
        alpha = rng.standard_normal(3)
        nu, N = 0.3, 4
        best = min(abs(np.dot(j, alpha)) * np.linalg.norm(j) ** (3 + nu)
                   for j in np.ndindex(*(2 * N + 1,) * 3) for j in [np.array(j) - N] if np.any(j))
        assert ar.best_constant(alpha, nu, N).C == pytest.approx(best, rel=1e-12)


def test_input_validation_and_resource_limit():
    for bad in [(0.0, 0.0), (float("nan"), 1.0)]:
        with pytest.raises(ValueError):
            ar.best_constant(bad, 0.5, 5)
    with pytest.raises(ValueError):
        ar.best_constant((1.0, 2.0), -1.0, 5)
    with pytest.raises(ar.ResourceError) as err:
        ar.best_constant((1.0, GOLDEN, 3.0), 0.5, 5000)
    assert err.value.radius == int((ar.MAX_BOX ** (1 / 3) - 1) // 2)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.integers(-3, 3))
def test_scaling_by_powers_of_two_is_exact(a, b, k):
    lam = 2.0 ** k
    c1 = ar.best_constant((a, b), 0.5, 30).C
    c2 = ar.best_constant((lam * a, lam * b), 0.5, 30).C
    assert c2 == lam * c1


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10))
def test_constant_non_increasing_in_radius(a, b):
    cs = [ar.best_constant((a, b), 0.5, N).C for N in (5, 10, 20, 40)]
    assert all(x >= y for x, y in zip(cs, cs[1:]))


def test_dirichlet_profile_bounded_and_non_increasing():
    rng = np.random.default_rng(9)
    alpha = (1.0, float(rng.uniform(0, 1)))
    prof = ar.dirichlet_profile(alpha, [100, 1000, 10_000])
    assert prof[0] >= prof[1] >= prof[2]
    assert prof[2] <= 2.0


def test_liouville_witness_values():
    w2 = ar.liouville_witness(2)
    assert w2.beta == (-21, 100)
    for N in (2, 3, 4):
        w = ar.liouville_witness(N)
        assert w.holds and w.norm_ok and w.tail_ok
        assert w.norm_sq >= 10 ** (2 * math.factorial(N))
        # the pairing equals 10^{N!} (l - l_N)
        exact = w.beta[0] + w.beta[1] * ar.liouville_partial(N + 2)
        assert exact > 0 and exact <= w.pairing_upper
    with pytest.raises(ValueError):
        ar.liouville_witness(5)


def test_liouville_partial_sums():
    # the n = 0 and n = 1 terms coincide
    assert ar.liouville_partial(2) == Fraction(21, 100)
    assert ar.liouville_partial(4) - ar.liouville_partial(3) <= ar.liouville_tail_bound(3)


def test_lattice_zeta_converges():
    assert ar.lattice_zeta(1.0, 500) >= ar.lattice_zeta(1.0, 2000) > 9.0
    assert ar.lattice_zeta(1.0, 2000) == pytest.approx(9.0339, abs=1e-3)


def test_measure_trivial_and_linear():
    frac, bound, _ = ar.measure_estimate(1.0, 0.0, 1.0, 1000, 10, seed=1)
    assert frac == 0.0 and bound == 0.0
    _, b1, _ = ar.measure_estimate(1.0, 1e-3, 1.0, 10, 5, seed=1)
    _, b2, _ = ar.measure_estimate(1.0, 2e-3, 1.0, 10, 5, seed=1)
    assert b2 == 2 * b1


def test_measure_deterministic():
    a = ar.measure_estimate(1.0, 1e-2, 1.0, 10_000, 20, seed=5)
    b = ar.measure_estimate(1.0, 1e-2, 1.0, 10_000, 20, seed=5)
    assert a == b
    # the first block is shared by any sample count above one block
    small = ar.measure_estimate(1.0, 1e-2, 1.0, 4096, 20, seed=5)
    assert small[0] > 0


def test_measure_bound_holds():
    frac, bound, sigma = ar.measure_estimate(1.0, 1e-2, 1.0, 20_000, 30, seed=2)
    assert frac <= bound + 3 * sigma


def test_certificate_serialization():
    d = ar.best_constant((1.0, GOLDEN), 0.5, 10).as_dict()
    assert set(d) == {"alpha", "nu", "C", "Ncut", "worst_j", "exponent"}
