import numpy as np
import pytest

from rademacher_stein.applications import counterexample_kernel
from rademacher_stein.functional import ChaosExpansion, ExpectationEngine, hypercube, random_expansion
from rademacher_stein.kernel import Kernel
from rademacher_stein.malliavin import (
    GradientField,
    divergence,
    divergence_chaos,
    divergence_pathwise,
    gradient,
    gradient_pathwise,
    identity_checks,
    ou,
    ou_inverse,
    pathwise_difference,
    pathwise_gradient_field,
)

EXACT = ExpectationEngine.exact()


def test_gradient_star_kernel():
    F = ChaosExpansion.single(counterexample_kernel(3))
    X = hypercube(3)
    D1 = gradient(F).component(1)(X)
    assert np.allclose(D1, (X[:, 1] + X[:, 2]) / np.sqrt(2))


def test_gradient_constant_and_first_chaos():
    Z = gradient(ChaosExpansion(3, 4.0))
    assert np.allclose(Z(hypercube(3)), 0.0)
    a = np.array([0.3, -1.2, 2.0])
    F = ChaosExpansion.single(Kernel(1, [[1], [2], [3]], a))
    assert np.allclose(gradient(F)(hypercube(3)), a)


def test_gradient_pathwise_examples():
    G = lambda X: X[:, 0] * X[:, 1]  # noqa: E731
    for x in hypercube(2):
        assert gradient_pathwise(G, x.astype(int), 1) == x[1]
    assert gradient_pathwise(lambda X: X[:, 0], (1, -1), 2) == 0.0
    ind = lambda X: (X[:, 0] > 0).astype(float)  # noqa: E731
    assert gradient_pathwise(ind, (-1, 1), 1) == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_gradient_agrees_with_pathwise(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    F = random_expansion(n, 3, rng, constant=0.4)
    X = hypercube(n)
    DF = gradient(F)(X)
    for k in range(1, n + 1):
        assert np.max(np.abs(DF[:, k - 1] - pathwise_difference(F, X, k))) <= 1e-12


def test_divergence_examples():
    a = [0.5, -1.0, 2.0]
    u = GradientField(3, tuple(ChaosExpansion(3, v) for v in a))
    X = hypercube(3)
    assert np.allclose(divergence(u)(X), X @ np.array(a))
    F = ChaosExpansion.single(counterexample_kernel(4))
    assert np.allclose(divergence(gradient(F))(X4 := hypercube(4)), 2 * F(X4))
    assert np.allclose(divergence(GradientField.zero(3))(X), 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_divergence_kernel_level_matches_pathwise(seed):
    rng = np.random.default_rng(100 + seed)
    n = 6
    comps = tuple(random_expansion(n, 2, rng, constant=float(rng.normal())) for _ in range(n))
    u = GradientField(n, comps)
    X = hypercube(n)
    assert np.max(np.abs(divergence_chaos(u)(X) - divergence_pathwise(u)(X))) <= 1e-10


def test_ou_and_inverse():
    f = counterexample_kernel(4)
    F = ChaosExpansion.single(f)
    X = hypercube(4)
    assert np.allclose(ou(F)(X), -2 * F(X))
    assert not ou(ChaosExpansion(2, 3.0)).terms
    G = random_expansion(6, 3, np.random.default_rng(0))
    assert ou(ou_inverse(G)).allclose(G)
    with pytest.raises(ValueError):
        ou_inverse(ChaosExpansion(2, 1.0))


def test_minus_delta_gradient_is_ou():
    G = random_expansion(7, 3, np.random.default_rng(9))
    X = hypercube(7)
    assert np.max(np.abs(-divergence(gradient(G))(X) - ou(G)(X))) <= 1e-12


def test_iterated_gradients_commute():
    G = random_expansion(5, 3, np.random.default_rng(5))
    X = hypercube(5)
    for k, l in [(1, 2), (2, 4), (3, 5)]:
        a = pathwise_difference(lambda Y: pathwise_difference(G, Y, l), X, k)
        b = pathwise_difference(lambda Y: pathwise_difference(G, Y, k), X, l)
        assert np.allclose(a, b, atol=1e-14)


def test_identity_checks_examples():
    F = ChaosExpansion.single(Kernel(1, [[1], [2]], [1.0, 1.0]))
    rep = identity_checks(F, F, gradient(F), EXACT)
    assert rep.passed
    X = hypercube(2)
    assert np.mean(F(X) * divergence(gradient(F))(X)) == pytest.approx(2.0)
    Z = identity_checks(F, F, GradientField.zero(2), EXACT)
    assert Z.residuals["divergence_isometry"] == 0.0
    X1 = ChaosExpansion.single(Kernel(1, [[1]], [1.0]))
    assert identity_checks(X1, X1, gradient(X1), EXACT).residuals["product_rule"] == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_identity_checks_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    F = random_expansion(n, 3, rng)
    G = random_expansion(n, 3, rng)
    u = gradient(random_expansion(n, 3, rng))
    rep = identity_checks(F, G, u, EXACT, threshold=float(rng.normal(0, 0.3)))
    assert rep.passed, rep.to_json()


def test_identity_checks_black_box_field():
    rng = np.random.default_rng(3)
    F = random_expansion(5, 2, rng)
    G = lambda X: np.tanh(X @ np.arange(1.0, 6.0))  # noqa: E731
    u = pathwise_gradient_field(G, 5)
    rep = identity_checks(F, G, u, EXACT)
    assert rep.passed, rep.to_json()
    with pytest.raises(ValueError):
        identity_checks(F, F, GradientField.zero(4), EXACT)
