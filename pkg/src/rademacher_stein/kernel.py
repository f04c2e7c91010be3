"""Sparse kernels on multi-indices: symmetrization, contractions, norms.

Indices are 1-based positive integers. A :class:`MultiIndexTable` is an
arbitrary finitely supported function on q-tuples; a :class:`Kernel` is a
symmetric one that vanishes whenever two components coincide, stored once
per strictly increasing tuple.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from typing import Iterable, Mapping, Union

import numpy as np
from scipy import sparse

IDENTITY_ATOL = 1e-10


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _as_indices(indices, order: int) -> np.ndarray:
    arr = np.asarray(indices, dtype=np.int64)
    if arr.ndim == 2 and arr.shape[1] == order == 0:
        return arr
    if arr.size == 0:
        return np.zeros((0, order), dtype=np.int64)
    if arr.ndim == 1 and order == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != order:
        raise ValueError(f"indices must have shape (m, {order}), got {arr.shape}")
    if (arr < 1).any():
        raise ValueError("indices are 1-based positive integers")
    return arr


def _merge_rows(indices: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum values of duplicate rows, drop exact zeros, sort rows lexicographically."""
    order = indices.shape[1]
    if len(values) == 0:
        return np.zeros((0, order), dtype=np.int64), np.zeros(0)
    if order == 0:
        total = float(np.sum(values))
        if total == 0.0:
            return np.zeros((0, 0), dtype=np.int64), np.zeros(0)
        return np.zeros((1, 0), dtype=np.int64), np.array([total])
    uniq, inv = np.unique(indices, axis=0, return_inverse=True)
    summed = np.bincount(inv.ravel(), weights=values, minlength=len(uniq))
    keep = summed != 0.0
    return uniq[keep], summed[keep]


def _offdiag_rows(indices: np.ndarray) -> np.ndarray:
    """Boolean mask of rows whose components are pairwise distinct."""
    m, order = indices.shape
    if order < 2:
        return np.ones(m, dtype=bool)
    srt = np.sort(indices, axis=1)
    return np.all(srt[:, 1:] != srt[:, :-1], axis=1)


class MultiIndexTable:
    """Finitely supported real function on q-tuples of positive integers.

    Rows are kept unique and lexicographically sorted; zero values are never
    stored. Instances are immutable.
    """

    __slots__ = ("order", "indices", "values", "_lookup")

    def __init__(self, order: int, indices=None, values=None):
        if order < 0:
            raise ValueError("order must be nonnegative")
        idx = _as_indices([] if indices is None else indices, order)
        vals = np.asarray([] if values is None else values, dtype=float).ravel()
        if len(vals) != len(idx):
            raise ValueError("indices and values differ in length")
        idx, vals = _merge_rows(idx, vals)
        self.order = order
        self.indices = _freeze(idx)
        self.values = _freeze(vals)
        self._lookup = None

    @classmethod
    def from_dict(cls, order: int, entries: Mapping[tuple, float]) -> "MultiIndexTable":
        keys = list(entries.keys())
        return cls(order, [tuple(k) for k in keys], [entries[k] for k in keys])

    @classmethod
    def zero(cls, order: int) -> "MultiIndexTable":
        return cls(order)

    def to_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(i) for i in row): float(v) for row, v in zip(self.indices, self.values)}

    def __getitem__(self, key) -> float:
        if self._lookup is None:
            self._lookup = self.to_dict()
        return self._lookup.get(tuple(int(i) for i in key), 0.0)

    def __len__(self) -> int:
        return len(self.values)

    def items(self):
        return self.to_dict().items()

    def __neg__(self) -> "MultiIndexTable":
        return MultiIndexTable(self.order, self.indices, -self.values)

    def __mul__(self, c: float) -> "MultiIndexTable":
        return MultiIndexTable(self.order, self.indices, self.values * float(c))

    __rmul__ = __mul__

    def __add__(self, other: "MultiIndexTable") -> "MultiIndexTable":
        if other.order != self.order:
            raise ValueError("orders differ")
        return MultiIndexTable(
            self.order,
            np.vstack([self.indices, other.indices]),
            np.concatenate([self.values, other.values]),
        )

    def __sub__(self, other: "MultiIndexTable") -> "MultiIndexTable":
        return self + (-other)

    def allclose(self, other: "MultiIndexTable", atol: float = 1e-12) -> bool:
        if other.order != self.order:
            return False
        diff = self - other
        return bool(len(diff) == 0 or np.max(np.abs(diff.values)) <= atol)

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        return self.allclose(symmetrize(self), atol)

    def is_offdiagonal(self) -> bool:
        return bool(np.all(_offdiag_rows(self.indices)))

    def __repr__(self) -> str:
        return f"MultiIndexTable(order={self.order}, nnz={len(self)})"


class Kernel:
    """Symmetric kernel of order q vanishing on diagonals.

    Stored once per strictly increasing tuple. Reading ``kernel[t]`` sorts
    ``t`` first, so every permutation returns the same value.
    """

    __slots__ = ("order", "indices", "values", "_lookup", "_full")

    def __init__(self, order: int, indices=None, values=None):
        if order < 1:
            raise ValueError("kernel order must be at least 1")
        idx = _as_indices([] if indices is None else indices, order)
        vals = np.asarray([] if values is None else values, dtype=float).ravel()
        if len(vals) != len(idx):
            raise ValueError("indices and values differ in length")
        idx = np.sort(idx, axis=1)
        if not np.all(_offdiag_rows(idx)):
            raise ValueError("kernels vanish on diagonals; got a tuple with a repeated index")
        if len(idx):
            uniq, inv, counts = np.unique(idx, axis=0, return_inverse=True, return_counts=True)
            if np.any(counts > 1):
                inv = inv.ravel()
                first = np.full(len(uniq), np.nan)
                for row, v in zip(inv, vals):
                    if np.isnan(first[row]):
                        first[row] = v
                    elif first[row] != v:
                        raise ValueError("conflicting values for permutations of one tuple")
                idx, vals = uniq, first
        idx, vals = _merge_rows(idx, vals)
        self.order = order
        self.indices = _freeze(idx)
        self.values = _freeze(vals)
        self._lookup = None
        self._full = None

    @classmethod
    def from_dict(cls, order: int, entries: Mapping[tuple, float]) -> "Kernel":
        keys = list(entries.keys())
        return cls(order, [tuple(k) for k in keys], [entries[k] for k in keys])

    @classmethod
    def from_table(cls, table: MultiIndexTable, atol: float = 1e-12) -> "Kernel":
        """Convert a symmetric, diagonal-free table into a kernel."""
        if table.order < 1:
            raise ValueError("kernel order must be at least 1")
        if not table.is_offdiagonal():
            raise ValueError("table does not vanish on diagonals")
        if not table.is_symmetric(atol):
            raise ValueError("table is not symmetric")
        idx = table.indices
        inc = np.all(idx[:, 1:] > idx[:, :-1], axis=1) if table.order > 1 else np.ones(len(idx), bool)
        return cls(table.order, idx[inc], table.values[inc])

    @classmethod
    def zero(cls, order: int) -> "Kernel":
        return cls(order)

    def table(self) -> MultiIndexTable:
        """Full table with every permutation of every stored tuple."""
        if self._full is None:
            perms = list(itertools.permutations(range(self.order)))
            idx = np.vstack([self.indices[:, p] for p in perms]) if len(self.values) else None
            vals = np.tile(self.values, len(perms)) if len(self.values) else None
            self._full = MultiIndexTable(self.order, idx, vals)
        return self._full

    def to_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(i) for i in row): float(v) for row, v in zip(self.indices, self.values)}

    def __getitem__(self, key) -> float:
        if self._lookup is None:
            self._lookup = self.to_dict()
        return self._lookup.get(tuple(sorted(int(i) for i in key)), 0.0)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def max_index(self) -> int:
        return int(self.indices.max()) if len(self.values) else 0

    def is_zero(self) -> bool:
        return len(self.values) == 0

    def __mul__(self, c: float) -> "Kernel":
        return Kernel(self.order, self.indices, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "Kernel":
        return self * -1.0

    def __add__(self, other: "Kernel") -> "Kernel":
        if other.order != self.order:
            raise ValueError("orders differ")
        idx, vals = _merge_rows(
            np.vstack([self.indices, other.indices]), np.concatenate([self.values, other.values])
        )
        return Kernel(self.order, idx, vals)

    def __sub__(self, other: "Kernel") -> "Kernel":
        return self + (-other)

    def slice(self, k: int) -> Union["Kernel", float]:
        """The section f(·, k); a number when the order is 1."""
        if self.order == 1:
            return self[(k,)]
        hit = np.any(self.indices == k, axis=1)
        rows = self.indices[hit]
        rest = rows[rows != k].reshape(len(rows), self.order - 1)
        return Kernel(self.order - 1, rest, self.values[hit])

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "entries": [[list(k), v] for k, v in self.to_dict().items()],
        }

    @classmethod
    def from_json(cls, obj: Union[dict, str]) -> "Kernel":
        if isinstance(obj, str):
            obj = json.loads(obj)
        order = int(obj["order"])
        entries = obj["entries"]
        return cls(order, [tuple(e[0]) for e in entries], [float(e[1]) for e in entries])

    def allclose(self, other: "Kernel", atol: float = 1e-12) -> bool:
        return self.order == other.order and self.table().allclose(other.table(), atol)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Kernel):
            return NotImplemented
        return (
            self.order == other.order
            and self.indices.shape == other.indices.shape
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"Kernel(order={self.order}, nnz={len(self)})"


TableLike = Union[MultiIndexTable, Kernel]


def _full(t: TableLike) -> MultiIndexTable:
    return t.table() if isinstance(t, Kernel) else t


class DiagonalMask:
    """Membership in the off-diagonal set of m-tuples with pairwise distinct components."""

    def __init__(self, arity: int):
        if arity < 1:
            raise ValueError("arity must be positive")
        self.arity = arity

    def contains(self, t: Iterable[int]) -> bool:
        t = tuple(t)
        if len(t) != self.arity:
            raise ValueError("tuple length differs from mask arity")
        return len(set(t)) == len(t)

    __contains__ = contains

    def mask(self, indices: np.ndarray) -> np.ndarray:
        return _offdiag_rows(np.asarray(indices))


def restrict(t: TableLike, mask: DiagonalMask, complement: bool = False) -> MultiIndexTable:
    """Keep entries on pairwise-distinct tuples, or on the rest if ``complement``."""
    t = _full(t)
    if mask.arity != t.order:
        raise ValueError(f"mask arity {mask.arity} differs from table order {t.order}")
    keep = mask.mask(t.indices)
    if complement:
        keep = ~keep
    return MultiIndexTable(t.order, t.indices[keep], t.values[keep])


def _multiset_groups(t: MultiIndexTable):
    srt = np.sort(t.indices, axis=1)
    uniq, inv = np.unique(srt, axis=0, return_inverse=True)
    sums = np.bincount(inv.ravel(), weights=t.values, minlength=len(uniq))
    return uniq, sums


def _distinct_permutations(rows: np.ndarray) -> np.ndarray:
    """Number of distinct arrangements of each sorted row."""
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        c = Counter(row.tolist())
        v = math.factorial(len(row))
        for m in c.values():
            v //= math.factorial(m)
        out[i] = v
    return out


def symmetrize(t: TableLike) -> MultiIndexTable:
    """Average over all q! permutations of the arguments."""
    if isinstance(t, Kernel):
        return t.table()
    q = t.order
    if q <= 1 or len(t) == 0:
        return t
    uniq, sums = _multiset_groups(t)
    # the q! permutations hit each distinct arrangement Π(mult!) times
    vals = sums / _distinct_permutations(uniq)
    perms = list(itertools.permutations(range(q)))
    idx = np.vstack([uniq[:, p] for p in perms])
    rep = np.tile(vals, len(perms))
    # repeated components make some permutations coincide; keep one copy each
    _, first = np.unique(idx, axis=0, return_index=True)
    return MultiIndexTable(q, idx[first], rep[first])


def symmetric_norm2(t: TableLike) -> float:
    """‖sym(t)‖ computed by grouping tuples into multisets, without expanding."""
    t = _full(t)
    if len(t) == 0:
        return 0.0
    q = t.order
    if q <= 1:
        return norm2(t)
    uniq, sums = _multiset_groups(t)
    return math.sqrt(math.fsum(sums**2 / _distinct_permutations(uniq)))


def norm2_sq(t: TableLike) -> float:
    """Squared ℓ² norm, without the round trip through a square root."""
    if isinstance(t, Kernel):
        return math.factorial(t.order) * float(np.dot(t.values, t.values))
    return float(np.dot(t.values, t.values))


def norm2(t: TableLike) -> float:
    """ℓ² norm over all tuples (for a kernel, every permutation counts)."""
    return math.sqrt(norm2_sq(t))


def norm4(t: TableLike) -> float:
    """Fourth power of the ℓ⁴ norm, i.e. the raw sum of value⁴."""
    if isinstance(t, Kernel):
        return math.factorial(t.order) * float(np.sum(t.values**4))
    return float(np.sum(t.values**4))


def inner(s: TableLike, t: TableLike) -> float:
    if s.order != t.order:
        raise ValueError("inner product needs equal orders")
    if isinstance(s, Kernel) and isinstance(t, Kernel):
        a, b = s.to_dict(), t.to_dict()
        small, big = (a, b) if len(a) <= len(b) else (b, a)
        return math.factorial(s.order) * math.fsum(v * big.get(k, 0.0) for k, v in small.items())
    a, b = _full(s).to_dict(), _full(t).to_dict()
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    return math.fsum(v * big.get(k, 0.0) for k, v in small.items())


def _check_rl(q: int, p: int, r: int, l: int) -> None:
    if not (0 <= l <= r <= min(q, p)):
        raise ValueError(f"need 0 <= l <= r <= min(q, p); got r={r}, l={l}, q={q}, p={p}")


def _key_ids(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if keys.shape[1] == 0:
        return np.zeros(len(keys), dtype=np.int64), np.zeros((1, 0), dtype=np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    return inv.ravel(), uniq


def _join_matrices(f: TableLike, g: TableLike, r: int, l: int):
    """Sparse matrices whose product A·Bᵀ realizes f⋆ᵣˡg.

    Row keys are (free, shared) coordinates, column keys are (shared, summed)
    coordinates; the shared block appears on both sides so the product only
    pairs entries with equal shared indices.
    """
    F, G = _full(f), _full(g)
    q, p = F.order, G.order
    _check_rl(q, p, r, l)
    fi, fv, gi, gv = F.indices, F.values, G.indices, G.values
    if l >= 2:
        fk = _offdiag_rows(fi[:, q - l :])
        gk = _offdiag_rows(gi[:, p - l :])
        fi, fv, gi, gv = fi[fk], fv[fk], gi[gk], gv[gk]
    f_row, f_rows = _key_ids(fi[:, : q - l])
    g_row, g_rows = _key_ids(gi[:, : p - l])
    cols = np.vstack([fi[:, q - r :], gi[:, p - r :]])
    col_id, col_keys = _key_ids(cols)
    nc = len(col_keys)
    A = sparse.csr_matrix((fv, (f_row, col_id[: len(fv)])), shape=(len(f_rows), nc))
    B = sparse.csr_matrix((gv, (g_row, col_id[len(fv) :])), shape=(len(g_rows), nc))
    return A, B, f_rows, g_rows


def contract(f: TableLike, g: TableLike, r: int, l: int) -> MultiIndexTable:
    """The contraction f⋆ᵣˡg.

    The last r arguments of f and g are identified; of those, the last l are
    summed over pairwise-distinct values. The result is indexed by
    (free part of f, identified-but-not-summed part, free part of g) and is
    in general not symmetric.
    """
    q, p = f.order, g.order
    _check_rl(q, p, r, l)
    out_order = q + p - r - l
    if len(f) == 0 or len(g) == 0:
        return MultiIndexTable.zero(out_order)
    A, B, f_rows, g_rows = _join_matrices(f, g, r, l)
    P = (A @ B.T).tocoo()
    if P.nnz == 0:
        return MultiIndexTable.zero(out_order)
    out = np.hstack([f_rows[P.row], g_rows[P.col][:, : p - r]])
    return MultiIndexTable(out_order, out, P.data)


def contraction_norm(f: TableLike, g: TableLike, r: int, l: int) -> float:
    """‖f⋆ᵣˡg‖ without materializing the contraction when that is cheaper.

    Uses ‖A·Bᵀ‖² = ⟨AᵀA, BᵀB⟩ when the Gram matrices are smaller than the
    product itself.
    """
    if len(f) == 0 or len(g) == 0:
        _check_rl(f.order, g.order, r, l)
        return 0.0
    A, B, _, _ = _join_matrices(f, g, r, l)
    col_a = np.diff(A.tocsc().indptr)
    col_b = np.diff(B.tocsc().indptr)
    direct = float(np.dot(col_a, col_b))
    gram = float(np.sum(np.diff(A.indptr) ** 2) + np.sum(np.diff(B.indptr) ** 2))
    if direct <= gram:
        P = A @ B.T
        return math.sqrt(float(np.dot(P.data, P.data)))
    GA = (A.T @ A).tocsr()
    GB = (B.T @ B).tocsr()
    return math.sqrt(max(float(GA.multiply(GB).sum()), 0.0))


def taqqu_check(f: Kernel) -> tuple[float, float]:
    """Both sides of the norm identity for the symmetrized tensor square of f."""
    q = f.order
    if q < 2:
        raise ValueError("needs order at least 2")
    fq = math.factorial(q)
    lhs = math.factorial(2 * q) * symmetric_norm2(contract(f, f, 0, 0)) ** 2
    n2 = norm2(f) ** 2
    rhs = 2.0 * (fq * n2) ** 2
    for r in range(1, q):
        rhs += fq**2 * math.comb(q, r) ** 2 * contraction_norm(f, f, r, r) ** 2
    return lhs, rhs


def star_relations_check(f: Kernel, atol: float = IDENTITY_ATOL) -> dict:
    """Norms of the partially summed self-contractions and the relations between them."""
    q = f.order
    if q < 2:
        raise ValueError("needs order at least 2")
    norms = {}
    for r in range(1, q + 1):
        for l in (r - 1, r):
            norms[f"{r},{l}"] = contraction_norm(f, f, r, l)
    first = norms["1,0"]
    last = norms[f"{q},{q - 1}"]
    relation01 = abs(first - last)
    chain = {}
    for r in range(2, q + 1):
        chain[r] = norms[f"{r},{r - 1}"] - norms[f"{r - 1},{r - 1}"]
    ok = relation01 <= atol and all(v <= atol for v in chain.values())
    return {
        "norms": norms,
        "relation01_residual": relation01,
        "inequality_slack": {r: -v for r, v in chain.items()},
        "ok": bool(ok),
    }


def random_kernel(
    order: int,
    n: int,
    rng: np.random.Generator,
    density: float = 0.5,
    scale: float = 1.0,
) -> Kernel:
    """Kernel on [n] with a random subset of increasing tuples and Gaussian values."""
    if n < order:
        raise ValueError("need n >= order")
    combos = np.array(list(itertools.combinations(range(1, n + 1), order)), dtype=np.int64)
    keep = rng.random(len(combos)) < density
    if not keep.any():
        keep[rng.integers(len(combos))] = True
    vals = rng.standard_normal(int(keep.sum())) * scale
    return Kernel(order, combos[keep], vals)


def normalized(f: Kernel, variance: float = 1.0) -> Kernel:
    """Rescale so that q!‖f‖² equals ``variance``."""
    v = math.factorial(f.order) * norm2(f) ** 2
    if v == 0:
        raise ValueError("cannot normalize a zero kernel")
    return f * math.sqrt(variance / v)
