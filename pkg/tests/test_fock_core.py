import math

import numpy as np
import pytest

from fock_feedback.errors import AllZero
from fock_feedback.fock_core import (
    DensityMatrix,
    DiagonalState,
    apply_number_function,
    check_psd,
    dephase,
    hs_distance,
    support_stats,
)

from conftest import random_density


def test_number_function_quadratic():
    out = apply_number_function(lambda n: (n - 0) ** 2, 0, 3)
    np.testing.assert_array_equal(out, [0, 1, 4])


def test_number_function_negative_shift_is_zero():
    np.testing.assert_array_equal(apply_number_function(lambda n: n, -1, 3), [0, 0, 1])


def test_number_function_positive_shift():
    theta0 = math.pi
    out = apply_number_function(lambda n: math.sin(theta0 / 2 * math.sqrt(n)) ** 2, 1, 2)
    expected = [math.sin(math.pi / 2) ** 2, math.sin(math.pi / 2 * math.sqrt(2)) ** 2]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


def test_number_function_rejects_empty():
    with pytest.raises(ValueError):
        apply_number_function(lambda n: n, 0, 0)


def test_diagonal_state_validation():
    with pytest.raises(ValueError):
        DiagonalState([0.5, 0.6])
    with pytest.raises(ValueError):
        DiagonalState([1.2, -0.2])
    s = DiagonalState([0.25, 0.75])
    with pytest.raises(ValueError):
        s.probs[0] = 1.0


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        DensityMatrix([[0.5, 0.1], [0.2, 0.5]])
    with pytest.raises(ValueError):
        DensityMatrix([[0.5, 0], [0, 0.6]])


def test_dephase_fock_state():
    rho = DiagonalState.point_mass(3, 5).to_density_matrix()
    assert dephase(rho) == DiagonalState.point_mass(3, 5)


def test_dephase_superposition():
    rho = DensityMatrix.from_vector([1, 1])
    np.testing.assert_allclose(dephase(rho).probs, [0.5, 0.5], atol=1e-15)


def test_dephase_random_matches_projector_traces(rng):
    rho = random_density(rng, 4, 4)
    d = dephase(rho)
    for n in range(4):
        proj = np.zeros((4, 4))
        proj[n, n] = 1
        assert abs(d.probs[n] - np.trace(proj @ rho.entries).real) < 1e-15
    assert d.n_max == rho.n_max


def test_dephase_idempotent(rng):
    d = dephase(random_density(rng))
    assert dephase(d.to_density_matrix()) == d


def test_trace_against_diagonal_operator_unchanged(rng):
    for _ in range(50):
        rho = random_density(rng)
        a = np.diag(rng.normal(size=rho.dim))
        lhs = np.trace(a @ rho.entries)
        rhs = np.trace(a @ dephase(rho).to_density_matrix().entries)
        assert abs(lhs - rhs) < 1e-10


@pytest.mark.parametrize(
    "probs, expected",
    [([0, 0.5, 0.5, 0], (1, 2, 1)), (np.eye(11)[10], (10, 10, 0)), (np.full(16, 1 / 16), (0, 15, 15))],
)
def test_support_stats(probs, expected):
    s = support_stats(DiagonalState(probs), 0.0)
    assert (s.n_min, s.n_max, s.n_length) == expected


def test_support_stats_all_below_tolerance():
    with pytest.raises(AllZero):
        support_stats(DiagonalState([1.0]), zero_tolerance=2.0)


def test_support_point_mass_any_n():
    for n in range(20):
        s = support_stats(DiagonalState.point_mass(n, 25))
        assert (s.n_min, s.n_max, s.n_length) == (n, n, 0)


def test_hs_distance_basic():
    a = DiagonalState.point_mass(0, 2).to_density_matrix()
    b = DiagonalState.point_mass(1, 2).to_density_matrix()
    assert hs_distance(a, a) == 0.0
    assert hs_distance(a, b) == pytest.approx(math.sqrt(2), abs=1e-15)


def test_hs_distance_pads_smaller(rng):
    a = DiagonalState.point_mass(0, 1).to_density_matrix()
    b = DiagonalState.point_mass(0, 3).to_density_matrix()
    assert hs_distance(a, b) == 0.0


def test_hs_distance_double_loop(rng):
    a, b = random_density(rng, 5, 5), random_density(rng, 5, 5)
    total = 0.0
    for m in range(5):
        for n in range(5):
            total += abs(a.entries[m, n] - b.entries[m, n]) ** 2
    assert hs_distance(a, b) == pytest.approx(math.sqrt(total), rel=1e-13)


def test_random_density_is_psd(rng):
    assert check_psd(random_density(rng))
