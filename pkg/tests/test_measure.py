import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambsde import (
    EmpiricalMeasure,
    LiftedFunction,
    dirac,
    lions_derivative_estimate,
    second_moment,
    wasserstein2_1d,
    wasserstein2_exact_smallN,
)


def brute_force_w2(x, y):
    """Minimum over all permutations; the reference for small clouds."""
    x = np.asarray(x, float).reshape(len(x), -1)
    y = np.asarray(y, float).reshape(len(y), -1)
    best = math.inf
    for perm in itertools.permutations(range(len(y))):
        best = min(best, float(np.sum((x - y[list(perm)]) ** 2)))
    return math.sqrt(best / len(x))


E = EmpiricalMeasure


def test_w2_1d_examples():
    assert wasserstein2_1d(E([0, 2]), E([1, 3])) == 1.0
    assert wasserstein2_1d(E([0.3, -1, 4]), E([4, 0.3, -1])) == 0.0
    assert wasserstein2_1d(E([0, 0]), E([0, 2])) == pytest.approx(math.sqrt(2), abs=1e-15)
    assert brute_force_w2([0, 0], [0, 2]) == pytest.approx(math.sqrt(2), abs=1e-15)


def test_w2_small_n_examples():
    assert wasserstein2_exact_smallN(E([[0, 0], [1, 1]]), E([[1, 1], [0, 0]])) == 0.0
    assert wasserstein2_exact_smallN(E([[0, 0]]), E([[3, 4]])) == 5.0


def test_w2_rejections():
    with pytest.raises(ValueError):
        wasserstein2_1d(E(np.zeros((3, 2))), E(np.zeros((3, 2))))
    with pytest.raises(ValueError):
        wasserstein2_1d(E([1, 2]), E([1, 2, 3]))
    with pytest.raises(ValueError):
        wasserstein2_exact_smallN(E(np.zeros(11)), E(np.zeros(11)))


def test_w2_1d_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        x, y = rng.normal(size=n) * 3, rng.normal(size=n) + rng.normal()
        ref = brute_force_w2(x, y)
        assert abs(wasserstein2_1d(E(x), E(y)) - ref) < 1e-12
        assert abs(wasserstein2_exact_smallN(E(x), E(y)) - ref) < 1e-12


def test_small_n_matches_brute_force_in_2d():
    rng = np.random.default_rng(1)
    for _ in range(30):
        n = int(rng.integers(1, 7))
        x, y = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        assert abs(wasserstein2_exact_smallN(E(x), E(y)) - brute_force_w2(x, y)) < 1e-12


def test_coupling_bound_on_random_clouds():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(1, 11))
        q = int(rng.integers(1, 3))
        x = rng.normal(size=(n, q))
        y = x + rng.normal(size=(n, q)) * rng.uniform(0, 2)
        coupled = math.sqrt(np.mean(np.sum((x - y) ** 2, axis=1)))
        assert wasserstein2_exact_smallN(E(x), E(y)) <= coupled + 1e-12
        if q == 1:
            assert wasserstein2_1d(E(x), E(y)) <= coupled + 1e-12




@settings(max_examples=60, deadline=None)
@given(st.integers(1, 7).flatmap(lambda n: st.tuples(*[st.lists(st.floats(-50, 50), min_size=n, max_size=n)] * 3)))
def test_metric_properties(triple):
    a, b, c = (E(v) for v in triple)
    for w2 in (wasserstein2_1d, wasserstein2_exact_smallN):
        assert abs(w2(a, b) - w2(b, a)) < 1e-10
        assert w2(a, c) <= w2(a, b) + w2(b, c) + 1e-10
        assert w2(a, a) == 0.0


def test_second_moment_examples():
    assert second_moment(E([0])) == 0.0
    assert second_moment(E([1, -1])) == 1.0
    assert second_moment(E([3, 4])) == 12.5


def test_dirac_and_measure_basics():
    d = dirac(3)
    assert d.n == 1 and d.q == 3 and d.mean().tolist() == [0, 0, 0]
    mu = E([[1.0, 2.0], [3.0, 4.0]])
    assert mu.marginal(1).samples[:, 0].tolist() == [2.0, 4.0]
    with pytest.raises(ValueError):
        E([np.nan, 1.0]).check_finite()


def test_lions_linear_lift_is_one():
    rng = np.random.default_rng(3)
    mu = E(rng.normal(size=(12, 2)))
    for p in (0, 5, 11):
        est = lions_derivative_estimate(LiftedFunction.mean(0), mu, p)
        assert est[0] == pytest.approx(1.0, abs=1e-9)
        assert est[1] == pytest.approx(0.0, abs=1e-9)


def test_lions_quadratic_lift_is_two_a():
    rng = np.random.default_rng(4)
    x = rng.normal(size=20) * 2
    mu = E(x)
    for p in range(20):
        est = lions_derivative_estimate(LiftedFunction.second_moment(), mu, p)
        assert abs(est[0] - 2 * x[p]) < 1e-9


def test_lions_constant_lift_and_equivariance():
    rng = np.random.default_rng(5)
    x = rng.normal(size=9)
    const = LiftedFunction(lambda mu: 3.0)
    assert lions_derivative_estimate(const, E(x), 2)[0] == 0.0
    phi = LiftedFunction(lambda mu: np.mean(np.sin(mu.samples[:, 0])) * np.mean(mu.samples[:, 0] ** 2))
    perm = rng.permutation(9)
    a = lions_derivative_estimate(phi, E(x), 4)
    b = lions_derivative_estimate(phi, E(x[perm]), int(np.argmax(perm == 4)))
    assert a[0] == pytest.approx(b[0], rel=1e-9, abs=1e-12)


def test_lions_errors():
    with pytest.raises(ValueError):
        lions_derivative_estimate(LiftedFunction.mean(), E([1.0, 2.0]), 0, eps=0.0)
    bad = LiftedFunction(lambda mu: math.inf)
    with pytest.raises(FloatingPointError):
        lions_derivative_estimate(bad, E([1.0, 2.0]), 0)
