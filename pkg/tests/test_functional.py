import math

import numpy as np
import pytest

from rademacher_stein.applications import counterexample_kernel
from rademacher_stein.functional import (
    CapExceededError,
    ChaosExpansion,
    ExpectationEngine,
    RademacherPoint,
    chaos_multiply,
    cumulant4,
    decompose,
    evaluate,
    expectation,
    flip,
    hypercube,
    moment,
    random_expansion,
)
from rademacher_stein.kernel import Kernel, inner, random_kernel

from .oracles import configurations, dense, evaluate_brute

EXACT = ExpectationEngine.exact()


def J(k, n=None):
    return ChaosExpansion.single(k, n)


def test_evaluate_first_chaos_and_constant():
    assert evaluate(J(Kernel(1, [[1]], [1.0])), (1,)) == 1.0
    c = ChaosExpansion(3, 2.5)
    assert evaluate(c, (1, -1, 1)) == 2.5


def test_evaluate_star_kernel_all_plus():
    F = J(counterexample_kernel(3))
    assert evaluate(F, (1, 1, 1)) == pytest.approx(math.sqrt(2))


def test_evaluate_matches_brute_force():
    rng = np.random.default_rng(0)
    f = random_kernel(3, 6, rng)
    F = J(f, 6)
    fd = dense(f, 6)
    for x in configurations(6)[::7]:
        assert evaluate(F, x) == pytest.approx(evaluate_brute(fd, 3, x), abs=1e-12)


def test_evaluate_dimension_and_sign_checks():
    F = J(Kernel(2, [[1, 3]], [1.0]))
    with pytest.raises(ValueError):
        evaluate(F, (1, 1))
    with pytest.raises(ValueError):
        evaluate(F, (1, 0, 1))


def test_hypercube_bit_convention():
    X = hypercube(3)
    assert X.shape == (8, 3)
    # bit k-1 of the configuration number set means x_k = -1
    assert list(X[0]) == [1, 1, 1]
    assert list(X[1]) == [-1, 1, 1]
    assert list(X[4]) == [1, 1, -1]


def test_expectation_basic():
    X1 = lambda X: X[:, 0]  # noqa: E731
    assert expectation(X1, 1, EXACT).value == 0.0
    assert expectation(X1, 1, EXACT).abs_error == 0.0
    F = J(Kernel(2, [[1, 2]], [0.5]))
    assert moment(F, 2, EXACT).value == pytest.approx(1.0)
    assert moment(F, 4, EXACT).value == pytest.approx(1.0)


def test_moments_first_chaos_and_zero():
    F = J(Kernel(1, [[1]], [1.0]))
    assert moment(F, 2, EXACT).value == 1.0
    assert moment(F, 4, EXACT).value == 1.0
    assert cumulant4(F, EXACT) == pytest.approx(-2.0)
    Z = ChaosExpansion(2)
    assert all(moment(Z, k, EXACT).value == 0.0 for k in (1, 2, 3, 4))
    assert moment(J(counterexample_kernel(3)), 2, EXACT).value == pytest.approx(1.0, abs=1e-12)


def test_cap_exceeded():
    with pytest.raises(CapExceededError):
        expectation(lambda X: X[:, 0], 6, ExpectationEngine.exact(cap=5))


def test_isometry_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = 7
        q, p = rng.integers(1, 4, size=2)
        f, g = random_kernel(int(q), n, rng), random_kernel(int(p), n, rng)
        m = expectation(lambda X: J(f, n)(X) * J(g, n)(X), n, EXACT).value
        want = math.factorial(int(q)) * inner(f, g) if q == p else 0.0
        assert m == pytest.approx(want, abs=1e-10)


def test_multiplication_trivial_and_x1x2():
    a = J(Kernel(1, [[1]], [1.0]))
    prod = chaos_multiply(a, a)
    assert prod.constant == pytest.approx(1.0) and not prod.terms
    f = J(Kernel(2, [[1, 2]], [0.5]))
    sq = chaos_multiply(f, f)
    X = hypercube(2)
    assert np.allclose(sq(X), 1.0)


@pytest.mark.parametrize("q,p", [(2, 1), (1, 3), (2, 2), (3, 2), (3, 3)])
def test_multiplication_pointwise(q, p):
    rng = np.random.default_rng(q * 7 + p)
    n = 6
    F, G = J(random_kernel(q, n, rng), n), J(random_kernel(p, n, rng), n)
    X = hypercube(n)
    assert np.max(np.abs(chaos_multiply(F, G)(X) - F(X) * G(X))) <= 1e-10


def test_multiplication_rejects_non_pure():
    F = random_expansion(4, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        chaos_multiply(F, F)


def test_decompose_examples():
    D = decompose(lambda X: X[:, 0] * X[:, 1], 2, 2)
    assert D.constant == 0.0
    assert D.kernel(2)[(1, 2)] == pytest.approx(0.5)
    C = decompose(lambda X: np.full(len(X), 3.0), 3, 3)
    assert C.constant == 3.0 and not C.terms


def test_decompose_round_trip_degree3():
    rng = np.random.default_rng(3)
    F = random_expansion(8, 3, rng, constant=0.7)
    D = decompose(F, 8, 3)
    assert D.allclose(F, atol=1e-10)


def test_decompose_requires_exact():
    with pytest.raises(ValueError):
        decompose(lambda X: X[:, 0], 2, 1, ExpectationEngine.monte_carlo(10))


def test_flip():
    x = RademacherPoint((1, -1))
    assert flip(x, 1, -1).signs == (-1, -1)
    assert flip(x, 2, -1) == x
    y = flip(flip(x, 1, 1), 1, -1)
    assert y.signs[1:] == x.signs[1:]
    with pytest.raises(ValueError):
        flip(x, 3, 1)
    with pytest.raises(ValueError):
        RademacherPoint((1, 0))


def test_mc_reproducible_and_thread_independent(monkeypatch):
    F = random_expansion(10, 2, np.random.default_rng(0))
    e1 = ExpectationEngine.monte_carlo(50_000, 11, chunk_size=4096)
    a = moment(F, 2, e1)
    monkeypatch.setenv("RADSTEIN_THREADS", "4")
    b = moment(F, 2, e1)
    assert (a.value, a.abs_error) == (b.value, b.abs_error)
    assert a.abs_error > 0


def test_mc_coverage_of_three_se():
    F = random_expansion(8, 2, np.random.default_rng(2))
    exact = moment(F, 2, EXACT).value
    hits = 0
    for seed in range(100):
        est = moment(F, 2, ExpectationEngine.monte_carlo(2000, seed))
        hits += abs(est.value - exact) <= est.abs_error
    assert hits >= 99


def test_chaos_expansion_json_round_trip():
    F = random_expansion(6, 3, np.random.default_rng(4), constant=1.5)
    G = ChaosExpansion.from_json(F.to_json())
    assert G.allclose(F, atol=0.0)
