"""Discrete gradient, divergence and Ornstein-Uhlenbeck operators."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .functional import (
    ChaosExpansion,
    Evaluator,
    ExpectationEngine,
    RademacherPoint,
    flip,
    iterated_difference_mean,
    value_table,
)
from .kernel import IDENTITY_ATOL, DiagonalMask, Kernel, MultiIndexTable, restrict, symmetrize

Functional = Union[ChaosExpansion, Evaluator]


@dataclass(frozen=True)
class GradientField:
    """A random sequence u = (u_1, ..., u_n); components are evaluators.

    When every component is a :class:`ChaosExpansion` the field is a chaos
    field and kernel-level operations apply.
    """

    dimension: int
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.dimension:
            raise ValueError("need exactly one component per coordinate")
        object.__setattr__(self, "components", comps)

    @classmethod
    def zero(cls, n: int) -> "GradientField":
        return cls(n, tuple(ChaosExpansion(n) for _ in range(n)))

    @property
    def is_chaos(self) -> bool:
        return all(isinstance(c, ChaosExpansion) for c in self.components)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        """Values of all components; shape (N, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([np.asarray(c(X), dtype=float) for c in self.components])

    def component(self, k: int):
        return self.components[k - 1]

    def map(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "GradientField":
        """Pointwise transform u_k ↦ fn(u_k(X), X) for every k."""
        return GradientField(
            self.dimension, tuple(_Mapped(c, fn) for c in self.components)
        )


@dataclass(frozen=True)
class _Mapped:
    inner: Callable
    fn: Callable

    def __call__(self, X):
        return self.fn(self.inner(X), X)


def gradient(F: ChaosExpansion) -> GradientField:
    """D_kF = Σ_q q·J_{q-1}(f_q(·, k)) as chaos expansions."""
    n = F.dimension
    comps = []
    for k in range(1, n + 1):
        constant = 0.0
        terms: dict[int, Kernel] = {}
        for q, f in F.terms.items():
            if q == 1:
                constant += f[(k,)]
            else:
                s = f.slice(k)
                if not s.is_zero():
                    terms[q - 1] = s * q
        comps.append(ChaosExpansion(n, constant, terms))
    return GradientField(n, tuple(comps))


def _set_column(X: np.ndarray, k: int, sign: float) -> np.ndarray:
    Y = np.array(X, dtype=float, copy=True)
    Y[:, k - 1] = sign
    return Y


def pathwise_difference(G: Evaluator, X: np.ndarray, k: int) -> np.ndarray:
    """D′_kG at every row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return 0.5 * (np.asarray(G(_set_column(X, k, 1.0))) - np.asarray(G(_set_column(X, k, -1.0))))


def gradient_pathwise(G: Evaluator, x: Union[RademacherPoint, Sequence[int]], k: int) -> float:
    """½(G(x with x_k=+1) − G(x with x_k=−1)) at a single point."""
    if not isinstance(x, RademacherPoint):
        x = RademacherPoint(tuple(x))
    if not 1 <= k <= x.dimension:
        raise ValueError(f"coordinate {k} outside 1..{x.dimension}")
    up = flip(x, k, 1).as_array()[None, :]
    down = flip(x, k, -1).as_array()[None, :]
    return float(0.5 * (np.asarray(G(up))[0] - np.asarray(G(down))[0]))


@dataclass(frozen=True)
class _PathwiseComponent:
    G: Callable
    k: int

    def __call__(self, X):
        return pathwise_difference(self.G, X, self.k)


def pathwise_gradient_field(G: Evaluator, n: int) -> GradientField:
    return GradientField(n, tuple(_PathwiseComponent(G, k) for k in range(1, n + 1)))


@dataclass(frozen=True)
class _PathwiseDivergence:
    u: GradientField

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X))
        for k, c in enumerate(self.u.components, start=1):
            out += np.asarray(c(X)) * X[:, k - 1] - pathwise_difference(c, X, k)
        return out


def divergence_pathwise(u: GradientField) -> Evaluator:
    """δ(u)(x) = Σ_k u_k(x)x_k − Σ_k D_ku_k(x)."""
    return _PathwiseDivergence(u)


def divergence_chaos(u: GradientField) -> ChaosExpansion:
    """Kernel-level divergence of a chaos field.

    The order-m part of u_k, read as a function of (i_1..i_m, k), is
    symmetrized over all m+1 slots and restricted off the diagonals.
    """
    if not u.is_chaos:
        raise ValueError("kernel-level divergence needs chaos components")
    n = u.dimension
    pieces: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
    for k, c in enumerate(u.components, start=1):
        if c.constant != 0.0:
            pieces.setdefault(1, []).append((np.array([[k]]), np.array([c.constant])))
        for m, f in c.terms.items():
            full = f.table()
            idx = np.hstack([full.indices, np.full((len(full), 1), k, dtype=np.int64)])
            pieces.setdefault(m + 1, []).append((idx, full.values))
    terms = {}
    for order, parts in pieces.items():
        t = MultiIndexTable(order, np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
        t = restrict(symmetrize(t), DiagonalMask(order))
        if len(t):
            terms[order] = Kernel.from_table(t, atol=1e-9)
    return ChaosExpansion(n, 0.0, terms)


def divergence(u: GradientField) -> Union[ChaosExpansion, Evaluator]:
    """Chaos expansion when every component is one, otherwise a pathwise evaluator."""
    return divergence_chaos(u) if u.is_chaos else divergence_pathwise(u)


def ou(F: ChaosExpansion) -> ChaosExpansion:
    """L J_q(f) = −q J_q(f)."""
    return ChaosExpansion(F.dimension, 0.0, {q: f * (-q) for q, f in F.terms.items()})


def ou_inverse(F: ChaosExpansion) -> ChaosExpansion:
    """L⁻¹ J_q(f) = −J_q(f)/q on centred expansions."""
    if not F.is_centred:
        raise ValueError("the inverse generator is defined on centred expansions only")
    return ChaosExpansion(F.dimension, 0.0, {q: f * (-1.0 / q) for q, f in F.terms.items()})


@dataclass
class IdentityReport:
    residuals: dict = field(default_factory=dict)
    tolerance: float = IDENTITY_ATOL
    notes: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.residuals.items() if not v <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_json(self) -> dict:
        return {
            "residuals": dict(self.residuals),
            "tolerance": self.tolerance,
            "passed": self.passed,
            "failed": self.failed,
            "notes": dict(self.notes),
        }


def _dimension(*objs, default: int | None = None) -> int:
    for o in objs:
        if isinstance(o, ChaosExpansion):
            return o.dimension
        if isinstance(o, GradientField):
            return o.dimension
    if default is None:
        raise ValueError("cannot infer the dimension")
    return default


def _gradient_values(F: Functional, X: np.ndarray, n: int) -> np.ndarray:
    if isinstance(F, ChaosExpansion):
        return gradient(F.with_dimension(n))(X)
    return np.column_stack([pathwise_difference(F, X, k) for k in range(1, n + 1)])


def identity_checks(
    F: Functional,
    G: Functional,
    u: GradientField,
    engine: ExpectationEngine | None = None,
    threshold: float = 0.0,
    stroock_order: int = 3,
    tolerance: float = IDENTITY_ATOL,
) -> IdentityReport:
    """Evaluate the operator identities and report each residual.

    Checked: integration by parts E[Fδ(u)] = E⟨DF, u⟩; the divergence
    isometry; the gradient product rule pointwise; the Stroock identity
    E[(D′)^T F] = E[F·X_T] on off-diagonal tuples T; and, for the indicator
    1{F > threshold} with u_k = D_kF and u_k = D_kF·|D_kF|, the identity
    E[1{F>t}·Σu_kX_k] = E⟨D′1{F>t}, u⟩.
    """
    engine = engine or ExpectationEngine.exact()
    n = _dimension(F, G, u)
    if u.dimension != n:
        raise ValueError("field dimension differs from the functional's")
    X = engine.points(n)
    rep = IdentityReport(tolerance=tolerance)

    Fv = np.asarray(F(X), dtype=float)
    Gv = np.asarray(G(X), dtype=float)
    DF = _gradient_values(F, X, n)
    DG = _gradient_values(G, X, n)
    U = u(X)
    delta = np.asarray(divergence_pathwise(u)(X))

    # integration by parts
    lhs = np.mean(Fv * delta)
    rhs = np.mean(np.sum(DF * U, axis=1))
    rep.residuals["integration_by_parts"] = float(abs(lhs - rhs))

    # divergence isometry
    Du = np.empty((len(X), n, n))
    for l, c in enumerate(u.components):
        for k in range(1, n + 1):
            Du[:, k - 1, l] = pathwise_difference(c, X, k)
    cross = np.einsum("ikl,ilk->i", Du, Du)
    lhs = np.mean(delta**2)
    rhs = np.mean(np.sum(U**2, axis=1)) + np.mean(cross)
    rep.residuals["divergence_isometry"] = float(abs(lhs - rhs))

    # product rule, pointwise
    FG = lambda Y: np.asarray(F(Y)) * np.asarray(G(Y))  # noqa: E731
    worst = 0.0
    for k in range(1, n + 1):
        left = pathwise_difference(FG, X, k)
        dF, dG = DF[:, k - 1], DG[:, k - 1]
        right = Gv * dF + Fv * dG - 2.0 * X[:, k - 1] * dF * dG
        worst = max(worst, float(np.max(np.abs(left - right))))
    rep.residuals["product_rule"] = worst

    # Stroock identity, needs the full hypercube
    if engine.is_exact:
        values = value_table(F, n, engine)
        worst = 0.0
        for order in range(1, min(stroock_order, n) + 1):
            for T in itertools.combinations(range(1, n + 1), order):
                a = iterated_difference_mean(values, n, T)
                b = np.mean(Fv * np.prod(X[:, [t - 1 for t in T]], axis=1))
                worst = max(worst, abs(a - b))
        rep.residuals["stroock"] = float(worst)

    # second integration by parts with an indicator
    ind = lambda Y: (np.asarray(F(Y)) > threshold).astype(float)  # noqa: E731
    Dind = np.column_stack([pathwise_difference(ind, X, k) for k in range(1, n + 1)])
    Iv = ind(X)
    worst = 0.0
    for name, W in (("u=DF", DF), ("u=DF|DF|", DF * np.abs(DF))):
        if np.any(Dind * W < -tolerance):
            rep.notes[f"sign_condition_violated[{name}]"] = True
        lhs = np.mean(Iv * np.sum(W * X, axis=1))
        rhs = np.mean(np.sum(Dind * W, axis=1))
        worst = max(worst, abs(lhs - rhs))
    rep.residuals["integration_by_parts_indicator"] = float(worst)
    return rep
