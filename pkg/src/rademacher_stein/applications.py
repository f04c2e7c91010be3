"""Constructors and experiment drivers: weighted 2-runs, the combinatorial CLT
with fractional Cartesian products, traces of Bernoulli matrix powers, and
the double-integral counterexample."""

from __future__ import annotations

import dataclasses
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bounds import (
    EXPLICIT,
    UNSPECIFIED,
    BoundReport,
    CovarianceSpec,
    PreconditionError,
    chaos_q_bound,
    malliavin_stein_terms,
    multivariate_contraction_bound,
    necessary_statistic,
    sum12_bound,
)
from .functional import ChaosExpansion, ExpectationEngine
from .kernel import (
    DiagonalMask,
    Kernel,
    MultiIndexTable,
    contract,
    contraction_norm,
    norm2,
    restrict,
    symmetrize,
)


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------- 2-runs


@dataclass(frozen=True)
class TwoRunsSpec:
    """Weights a_1..a_m of the window; they multiply Y_iY_{i+1} on variables 1..m+1."""

    weights: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in np.asarray(self.weights, dtype=float).ravel())
        if not w or not any(w):
            raise ValueError("need at least one nonzero weight")
        object.__setattr__(self, "weights", w)

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.weights)

    @property
    def dimension(self) -> int:
        return len(self.weights) + 1


def two_runs_variance(spec: TwoRunsSpec) -> float:
    a = spec.a
    return 3.0 / 16.0 * float(np.sum(a * a)) + 1.0 / 8.0 * float(np.sum(a[:-1] * a[1:]))


def two_runs_G(spec: TwoRunsSpec):
    """G(X) = Σ a_i Y_iY_{i+1} with Y = (1 − X)/2."""
    a = spec.a

    def G(X):
        Y = 0.5 * (1.0 - np.atleast_2d(np.asarray(X, dtype=float)))
        return (Y[:, :-1] * Y[:, 1:]) @ a

    return G


def two_runs_kernels(spec: TwoRunsSpec) -> tuple[Kernel, Kernel]:
    """Chaos kernels of (G − EG)/√Var G.

    The first-order kernel carries a minus sign: with Y = (1 − X)/2 every
    linear term of Y_iY_{i+1} enters negatively.
    """
    var = two_runs_variance(spec)
    if var <= 0.0:
        raise PreconditionError("2-runs variance must be positive", var)
    a = spec.a
    m = len(a)
    s = math.sqrt(var)
    f1 = np.zeros(m + 1)
    f1[:-1] += a
    f1[1:] += a
    f1 *= -1.0 / (4.0 * s)
    k1 = Kernel(1, np.arange(1, m + 2)[:, None], f1)
    pairs = np.column_stack([np.arange(1, m + 1), np.arange(2, m + 2)])
    k2 = Kernel(2, pairs, a / (8.0 * s))
    return k1, k2


def two_runs_functional(spec: TwoRunsSpec) -> ChaosExpansion:
    f1, f2 = two_runs_kernels(spec)
    return ChaosExpansion(spec.dimension, 0.0, {1: f1, 2: f2})


def two_runs_bound(spec: TwoRunsSpec) -> BoundReport:
    a = spec.a
    var = two_runs_variance(spec)
    f1, f2 = two_runs_kernels(spec)
    cubic = var**-1.5 * float(np.sum(np.abs(a) ** 3))
    quartic = float(np.sum(a**4)) ** 0.5 / var
    explicit = sum12_bound(f1, f2)
    terms = {"variance": var, "max_arg_cubic": cubic, "max_arg_quartic": quartic}
    terms.update({f"sum12.{k}": v for k, v in explicit.terms.items()})
    rep = BoundReport("two_runs_bound", terms, explicit.total, EXPLICIT)
    rep.notes["index_shift"] = "window weight a_i sits on variables i and i+1, i = 1..m"
    mx = max(cubic, quartic)
    rep.related.append(BoundReport("two_runs_max_form", {"max_argument": mx}, mx, UNSPECIFIED))
    return rep


# ---------------------------------------------------------------- combinatorial CLT


@dataclass(frozen=True)
class CombSpec:
    """Index set F ⊂ Δ_q (rows of ``tuples``) with weights b_i = weights[i-1].

    F is replaced by its symmetric closure, so the normalized functional has
    unit variance whatever ordering of each tuple was supplied.
    """

    tuples: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.tuples, dtype=np.int64))
        if t.size == 0:
            raise ValueError("F must not be empty")
        if t.min() < 1:
            raise ValueError("indices are 1-based")
        if not DiagonalMask(t.shape[1]).mask(t).all():
            raise ValueError("every tuple of F must have distinct components")
        perms = list(itertools.permutations(range(t.shape[1])))
        t = np.unique(np.vstack([t[:, list(p)] for p in perms]), axis=0)
        b = np.asarray(self.weights, dtype=float).ravel()
        t.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "tuples", t)
        object.__setattr__(self, "weights", b)
        if self.measure() <= 0.0:
            raise PreconditionError("mu_b(F) must be positive", 0.0)

    @property
    def q(self) -> int:
        return self.tuples.shape[1]

    def b(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        out = np.zeros(idx.shape)
        ok = idx <= len(self.weights)
        out[ok] = self.weights[idx[ok] - 1]
        return out

    def tuple_weights(self) -> np.ndarray:
        """μ_b of each singleton {t}: Π_k b_{t_k}²."""
        return np.prod(self.b(self.tuples) ** 2, axis=1)

    def measure(self) -> float:
        return float(np.sum(self.tuple_weights()))


def comb_functional(spec: CombSpec) -> ChaosExpansion:
    q = spec.q
    mu = spec.measure()
    vals = np.prod(spec.b(spec.tuples), axis=1) / math.sqrt(math.factorial(q) * mu)
    t = MultiIndexTable(q, spec.tuples, vals)
    k = Kernel.from_table(symmetrize(t), atol=1e-14)
    return ChaosExpansion.single(k)


def _signature_weights(spec: CombSpec) -> dict:
    out: dict = defaultdict(float)
    for row, w in zip(map(tuple, np.sort(spec.tuples, axis=1).tolist()), spec.tuple_weights()):
        out[row] += float(w)
    return {k: v for k, v in out.items() if v != 0.0}


def sharp_partners(signatures) -> dict:
    """For each signature S, the signatures T disjoint from S that form a pair in F♯.

    (S, T) qualifies when some K, L in the family satisfy K ∪ L = S ∪ T with
    K different from both S and T as index sets. Writing A = K ∩ S (a
    nonempty proper subset of S), one needs L ∩ S = S \\ A and then
    T = (K \\ S) ∪ (L \\ S); candidates are looked up through a subset index.
    """
    sigs = [tuple(s) for s in signatures]
    present = set(sigs)
    q = len(sigs[0]) if sigs else 0
    index: dict = defaultdict(list)
    for s in sigs:
        for a in range(1, q):
            for sub in itertools.combinations(s, a):
                index[sub].append(s)
    out = {}
    for s in sigs:
        S = set(s)
        found = set()
        for a in range(1, q):
            for A in itertools.combinations(s, a):
                B = tuple(x for x in s if x not in A)
                ks = [frozenset(K) - S for K in index[A] if len(S.intersection(K)) == a]
                ls = [frozenset(L) - S for L in index[B] if len(S.intersection(L)) == q - a]
                for kr in ks:
                    for lr in ls:
                        if kr.isdisjoint(lr):
                            T = tuple(sorted(kr | lr))
                            if T in present:
                                found.add(T)
        out[s] = found
    return out


def comb_phi_psi(spec: CombSpec) -> dict:
    """Φ = μ(F♯)^{1/2}/μ(F) and Ψ_j = μ(F_j*)/μ(F) for every index j in use."""
    mu = spec.measure()
    W = _signature_weights(spec)
    partners = sharp_partners(W.keys())
    mu_sharp = math.fsum(W[s] * math.fsum(W[t] for t in ts) for s, ts in partners.items())
    tw = spec.tuple_weights()
    psi: dict = defaultdict(float)
    for row, w in zip(spec.tuples.tolist(), tw):
        for j in set(row):
            psi[j] += float(w)
    psi = {j: v / mu for j, v in sorted(psi.items())}
    return {
        "Phi": math.sqrt(mu_sharp) / mu,
        "PsiSup": max(psi.values()) if psi else 0.0,
        "Psi": psi,
        "mu_F": mu,
        "mu_F_sharp": mu_sharp,
    }


def comb_bound(spec: CombSpec) -> BoundReport:
    pp = comb_phi_psi(spec)
    F = comb_functional(spec)
    phi, psi4 = pp["Phi"], pp["PsiSup"] ** 0.25
    rep = BoundReport(
        "comb_bound",
        {"Phi": phi, "PsiSup_quarter": psi4, "mu_F": pp["mu_F"], "variance": F.variance()},
        phi + psi4,
        UNSPECIFIED,
    )
    rep.notes["total"] = "Phi + PsiSup^(1/4); each multiplies an unknown q-dependent constant"
    if spec.q >= 2:
        rep.related.append(chaos_q_bound(F.kernel(spec.q)))
    return rep


@dataclass(frozen=True)
class FcpSpec:
    q: int
    m: int
    cover: tuple
    n: int

    def __post_init__(self):
        cover = tuple(tuple(sorted(int(v) for v in M)) for M in self.cover)
        object.__setattr__(self, "cover", cover)
        q, m = self.q, self.m
        if not 2 <= m <= q:
            raise ValueError("need 2 <= m <= q")
        if len(cover) != q or len(set(cover)) != q:
            raise ValueError("cover must consist of q distinct subsets")
        for M in cover:
            if len(M) != m or len(set(M)) != m or not all(1 <= v <= q for v in M):
                raise ValueError(f"subset {M} must have exactly {m} elements of 1..{q}")
        counts = np.bincount([v for M in cover for v in M], minlength=q + 1)[1:]
        if not np.all(counts == m):
            raise ValueError("each index must appear in exactly m subsets")
        if not _connected(cover):
            raise ValueError("cover must be connected")

    @property
    def K(self) -> int:
        k = int(round(self.n ** (1.0 / self.m)))
        while k**self.m > self.n:
            k -= 1
        while (k + 1) ** self.m <= self.n:
            k += 1
        return k


def _connected(cover) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j, M in enumerate(cover):
            if j not in seen and set(M) & set(cover[i]):
                seen.add(j)
                stack.append(j)
    return len(seen) == len(cover)


def fcp_raw(spec: FcpSpec) -> np.ndarray:
    """F** as an array of K^q rows, with φ the lexicographic map [K]^m → [K^m]."""
    K, q, m = spec.K, spec.q, spec.m
    Y = np.array(list(itertools.product(range(K), repeat=q)), dtype=np.int64)
    powers = K ** np.arange(m - 1, -1, -1)
    cols = [Y[:, [v - 1 for v in M]] @ powers + 1 for M in spec.cover]
    return np.column_stack(cols)


def fcp_build(spec: FcpSpec, strict: bool = True) -> CombSpec:
    """Fractional Cartesian product F_n with unit weights on [n]."""
    if strict and spec.n < spec.q**spec.m:
        raise ValueError(f"n must be at least q^m = {spec.q ** spec.m}")
    raw = fcp_raw(spec)
    raw = raw[DiagonalMask(spec.q).mask(raw)]
    if len(raw) == 0:
        raise PreconditionError("every image is diagonal; increase n", 0.0)
    return CombSpec(raw, np.ones(spec.n))


# ---------------------------------------------------------------- matrix traces


@dataclass(frozen=True)
class MatrixSpec:
    n: int
    orders: tuple

    def __post_init__(self):
        orders = tuple(int(v) for v in self.orders)
        if self.n < 1:
            raise ValueError("n must be positive")
        if not orders or orders[0] < 1 or any(b <= a for a, b in zip(orders, orders[1:])):
            raise ValueError("orders must be strictly increasing positive integers")
        object.__setattr__(self, "orders", orders)


def pair_index(i, j, n: int):
    """Flatten the matrix position (i, j), 1-based, to the variable (i−1)n + j."""
    return (np.asarray(i) - 1) * n + np.asarray(j)


def _walk_blocks(q: int, n: int, block: int = 1 << 20):
    """Closed walks i_1..i_q in [n]^q as edge-id arrays, in blocks of rows."""
    rest = n ** (q - 1)
    per = max(1, block // max(rest, 1))
    for start in range(1, n + 1, per):
        firsts = np.arange(start, min(start + per, n + 1))
        tail = np.array(list(itertools.product(range(1, n + 1), repeat=q - 1)), dtype=np.int64)
        tail = tail.reshape(len(tail), q - 1)
        W = np.column_stack(
            [np.repeat(firsts, len(tail)), np.tile(tail, (len(firsts), 1))]
        ).astype(np.int64)
        nxt = np.roll(W, -1, axis=1)
        yield pair_index(W, nxt, n)


def trace_kernel(q: int, n: int) -> Kernel:
    """Kernel of the walk sum over closed walks with pairwise distinct directed edges."""
    if q < 1 or n < 1:
        raise ValueError("q and n must be positive")
    parts = []
    for E in _walk_blocks(q, n):
        E = E[DiagonalMask(q).mask(E)]
        if len(E):
            parts.append(np.sort(E, axis=1))
    if not parts:
        return Kernel.zero(q)
    rows, counts = np.unique(np.vstack(parts), axis=0, return_counts=True)
    vals = counts * n ** (-q / 2.0) / math.factorial(q)
    return Kernel(q, rows, vals)


def trace_expectation(q: int, n: int) -> float:
    """E trace(X_n^q): walks whose directed edges all have even multiplicity."""
    if q % 2:
        return 0.0
    total = 0
    for E in _walk_blocks(q, n):
        S = np.sort(E, axis=1)
        total += int(np.all(S[:, 0::2] == S[:, 1::2], axis=1).sum())
    return total * n ** (-q / 2.0)


def trace_expectation_bruteforce(q: int, n: int) -> float:
    """Mean of trace(X_n^q) over all 2^{n²} sign matrices (n ≤ 4)."""
    if n * n > 16:
        raise ValueError("brute force limited to n <= 4")
    from .functional import hypercube

    X = hypercube(n * n).reshape(-1, n, n) / math.sqrt(n)
    P = np.linalg.matrix_power(X, q)
    return float(np.mean(np.trace(P, axis1=1, axis2=2)))


def _traces(x: np.ndarray, n: int, orders: Sequence[int]) -> np.ndarray:
    """Traces of (x/√n)^q for a batch of flattened sign matrices; shape (N, d)."""
    M = np.asarray(x, dtype=float).reshape(-1, n, n) / math.sqrt(n)
    out = np.empty((len(M), len(orders)))
    P = None
    power = 0
    for col, q in enumerate(orders):
        while power < q:
            P = M.copy() if P is None else np.matmul(P, M)
            power += 1
        out[:, col] = np.trace(P, axis1=1, axis2=2)
    return out


def trace_sample(spec: MatrixSpec, x: np.ndarray, means: Sequence[float] | None = None) -> np.ndarray:
    """Centred traces (trace(X_n^{q_i}) − E trace(X_n^{q_i}))_i for one n×n sign table."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n, spec.n) or not np.all(np.abs(x) == 1):
        raise ValueError("x must be an n x n table of +-1")
    mu = means if means is not None else [trace_expectation(q, spec.n) for q in spec.orders]
    return _traces(x.reshape(1, -1), spec.n, spec.orders)[0] - np.asarray(mu)


def trace_remainder(q: int, n: int, x: np.ndarray, kernel: Kernel | None = None) -> float:
    """Centred trace minus its chaos part J_q(f_n^{(q)}) at the sign table x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (n, n) or not np.all(np.abs(x) == 1):
        raise ValueError("x must be an n x n table of +-1")
    k = kernel if kernel is not None else trace_kernel(q, n)
    centred = _traces(x.reshape(1, -1), n, [q])[0, 0] - trace_expectation(q, n)
    J = ChaosExpansion(n * n, 0.0, {q: k})(x.reshape(1, -1))[0] if not k.is_zero() else 0.0
    return float(centred - J)


def trace_contraction_norms(q: int, n: int, kernel: Kernel | None = None) -> dict:
    k = kernel if kernel is not None else trace_kernel(q, n)
    return {r: contraction_norm(k, k, r, r) for r in range(1, q)}


def trace_experiment(
    spec: MatrixSpec,
    engine: ExpectationEngine | None = None,
    decay_ns: Sequence[int] | None = None,
) -> dict:
    """Covariance of the centred trace vector, exact chaos variances and contraction decay."""
    engine = engine or ExpectationEngine.monte_carlo(100_000, 0)
    n, orders = spec.n, spec.orders
    kernels = {q: trace_kernel(q, n) for q in orders}
    means = [trace_expectation(q, n) for q in orders]
    out: dict = {"n": n, "orders": list(orders), "trace_means": means}
    out["chaos_variance"] = {q: math.factorial(q) * norm2(k) ** 2 for q, k in kernels.items()}
    out["contraction_norms"] = {
        q: {r: v for r, v in trace_contraction_norms(q, n, k).items()} for q, k in kernels.items()
    }

    d = len(orders)
    # keep each chunk near 4M matrix entries; the chunking is part of the seeded stream
    eng = dataclasses.replace(engine, chunk_size=max(1, min(engine.chunk_size, (1 << 22) // (n * n))))
    iu = np.triu_indices(d)

    def stats(X):
        T = _traces(X, n, orders) - np.asarray(means)
        prods = (T[:, :, None] * T[:, None, :])[:, iu[0], iu[1]]
        return np.hstack([T, prods])

    m, err = eng.mean(stats, n * n)
    cov = np.zeros((d, d))
    cerr = np.zeros((d, d))
    cov[iu] = m[d:]
    cerr[iu] = err[d:]
    cov = cov + np.triu(cov, 1).T
    cerr = cerr + np.triu(cerr, 1).T
    target = np.diag(np.asarray(orders, dtype=float))
    out["engine"] = eng.describe()
    out["engine"]["chunk_size"] = eng.chunk_size
    out["mean"] = m[:d].tolist()
    out["covariance"] = cov.tolist()
    out["covariance_abs_error_3se"] = cerr.tolist()
    out["target_covariance"] = target.tolist()
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(cerr > 0, np.abs(cov - target) / (cerr / 3.0), np.where(cov == target, 0.0, np.inf))
    out["covariance_z"] = z.tolist()
    out["covariance_within_3se"] = bool(np.all(np.abs(cov - target) <= cerr))

    fs = [kernels[q] for q in orders if not kernels[q].is_zero()]
    if len(fs) == d:
        out["multivariate_contraction_bound"] = multivariate_contraction_bound(
            fs, CovarianceSpec(target)
        ).to_json()

    if decay_ns:
        decay: dict = {}
        for q in orders:
            if q < 2:
                continue
            curves = {r: [] for r in range(1, q)}
            for nn in decay_ns:
                for r, v in trace_contraction_norms(q, nn).items():
                    curves[r].append(v)
            decay[q] = {
                r: {"n": list(decay_ns), "norm": vals, "slope": loglog_slope(decay_ns, vals)}
                for r, vals in curves.items()
            }
        out["decay"] = decay
    return out


# ---------------------------------------------------------------- counterexample


def counterexample_kernel(n: int) -> Kernel:
    """f(1, k) = 1/(2√(n−1)) for k = 2..n, so J_2(f) = X_1·Σ_{k≥2}X_k/√(n−1)."""
    if n < 2:
        raise ValueError("need n >= 2")
    v = 1.0 / (2.0 * math.sqrt(n - 1))
    idx = np.column_stack([np.ones(n - 1, dtype=np.int64), np.arange(2, n + 1)])
    return Kernel(2, idx, np.full(n - 1, v))


def counterexample_report(n: int, engine: ExpectationEngine | None = None) -> dict:
    """Contraction norms, the necessary-condition statistic and A₁² for the star kernel."""
    engine = engine or ExpectationEngine.exact()
    f = counterexample_kernel(n)
    c = contract(f, f, 1, 1)
    off2 = norm2(restrict(c, DiagonalMask(2))) ** 2
    out = {
        "n": n,
        "star11_norm_sq": contraction_norm(f, f, 1, 1) ** 2,
        "star11_offdiag_norm_sq": off2,
        "necessary_statistic": necessary_statistic(f),
        "necessary_statistic_closed_form": -1.0 / (8.0 * (n - 1)),
    }
    a1_formula = 8.0 * off2
    enum = None
    if engine.is_exact and n <= engine.cap:
        rep = malliavin_stein_terms(ChaosExpansion.single(f, n), engine)
        enum = rep["A1_cs"] ** 2
    alt = (n - 2) / (16.0 * (n - 1))
    out["A1_sq_enumerated"] = enum
    out["A1_sq_contraction_formula"] = a1_formula
    out["A1_sq_closed_form"] = (n - 2) / (2.0 * (n - 1))
    out["A1_sq_alt_closed_form"] = alt
    out["alt_closed_form_discrepancy"] = abs(a1_formula - alt) > 1e-12
    return out
