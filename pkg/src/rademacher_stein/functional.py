"""Rademacher functionals: points, chaos expansions and expectation engines."""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence, Union

import numpy as np

from .kernel import DiagonalMask, Kernel, contract, restrict, symmetrize

RNG_NAME = "numpy.random.Philox (Philox4x64-10, key=(seed, chunk))"
THREADS_ENV = "RADSTEIN_THREADS"

Evaluator = Callable[[np.ndarray], np.ndarray]


class CapExceededError(RuntimeError):
    """Exact enumeration was requested above the configured dimension cap."""


@dataclass(frozen=True)
class RademacherPoint:
    """A finite ±1 configuration x = (x_1, ..., x_n)."""

    signs: tuple[int, ...]

    def __post_init__(self):
        signs = tuple(int(s) for s in self.signs)
        if any(s not in (-1, 1) for s in signs):
            raise ValueError("every sign must be -1 or +1")
        object.__setattr__(self, "signs", signs)

    @property
    def dimension(self) -> int:
        return len(self.signs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.signs, dtype=float)

    def __getitem__(self, k: int) -> int:
        return self.signs[k - 1]


def flip(x: RademacherPoint, k: int, sign: int) -> RademacherPoint:
    """Copy of x with coordinate k (1-based) set to ``sign``."""
    if not 1 <= k <= x.dimension:
        raise ValueError(f"coordinate {k} outside 1..{x.dimension}")
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    s = list(x.signs)
    s[k - 1] = sign
    return RademacherPoint(tuple(s))


def hypercube(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows of sign configurations with index c in [start, stop).

    Bit k-1 of c set means x_k = -1, so configuration 0 is all +1.
    """
    stop = 2**n if stop is None else stop
    c = np.arange(start, stop, dtype=np.int64)
    bits = (c[:, None] >> np.arange(n, dtype=np.int64)[None, :]) & 1
    return 1.0 - 2.0 * bits


@dataclass(frozen=True)
class EstimatedValue:
    value: float
    abs_error: float = 0.0

    def to_json(self) -> dict:
        return {"value": self.value, "abs_error": self.abs_error}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ExpectationEngine:
    """Exact enumeration of {-1,+1}^n or seeded Monte Carlo sampling.

    Monte Carlo draws are split into chunks of ``chunk_size`` rows; chunk c
    uses a Philox generator keyed by (seed, c), and chunk results are merged
    in index order, so the thread count never changes the result.
    """

    mode: str = "exact"
    samples: int = 100_000
    seed: int = 0
    cap: int = 24
    chunk_size: int = 1 << 14
    workers: int | None = None

    def __post_init__(self):
        if self.mode not in ("exact", "mc"):
            raise ValueError("mode must be 'exact' or 'mc'")
        if self.samples < 1:
            raise ValueError("samples must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def exact(cls, cap: int = 24) -> "ExpectationEngine":
        return cls(mode="exact", cap=cap)

    @classmethod
    def monte_carlo(cls, samples: int, seed: int = 0, **kw) -> "ExpectationEngine":
        return cls(mode="mc", samples=samples, seed=seed, **kw)

    @property
    def is_exact(self) -> bool:
        return self.mode == "exact"

    def describe(self) -> dict:
        if self.is_exact:
            return {"mode": "exact", "samples": None, "seed": None, "cap": self.cap}
        return {"mode": "mc", "samples": self.samples, "seed": self.seed, "rng": RNG_NAME}

    def check(self, n: int) -> None:
        if self.is_exact and n > self.cap:
            raise CapExceededError(f"exact enumeration of dimension {n} exceeds cap {self.cap}")

    def generator(self, chunk: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, chunk]))

    def chunk_bounds(self, n: int) -> list[tuple[int, int]]:
        total = 2**n if self.is_exact else self.samples
        step = self.chunk_size
        return [(a, min(a + step, total)) for a in range(0, total, step)]

    def chunk(self, n: int, index: int, bounds: tuple[int, int]) -> np.ndarray:
        a, b = bounds
        if self.is_exact:
            return hypercube(n, a, b)
        rng = self.generator(index)
        return 1.0 - 2.0 * rng.integers(0, 2, size=(b - a, n), dtype=np.int8)

    def chunks(self, n: int) -> Iterator[np.ndarray]:
        self.check(n)
        for i, bnd in enumerate(self.chunk_bounds(n)):
            yield self.chunk(n, i, bnd)

    def points(self, n: int) -> np.ndarray:
        """All configurations (exact) or all samples (MC) as one array."""
        self.check(n)
        if self.is_exact:
            return hypercube(n)
        return np.vstack(list(self.chunks(n)))

    def map_chunks(self, fn: Callable[[np.ndarray], object], n: int) -> list:
        """Apply fn to each chunk; results come back in chunk order."""
        self.check(n)
        bounds = self.chunk_bounds(n)
        work = lambda item: fn(self.chunk(n, item[0], item[1]))  # noqa: E731
        workers = self.workers or _threads()
        if workers > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(work, enumerate(bounds)))
        return [work(item) for item in enumerate(bounds)]

    def mean(self, fn: Evaluator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean of fn over the engine's law; fn may return (N,) or (N, d) arrays.

        Returns (value, abs_error) arrays, abs_error being three standard
        errors in MC mode and zero in exact mode.
        """

        def stats(X):
            v = np.asarray(fn(X), dtype=float)
            return len(X), v.sum(axis=0), (v * v).sum(axis=0)

        parts = self.map_chunks(stats, n)
        count = sum(p[0] for p in parts)
        s1 = np.sum([p[1] for p in parts], axis=0)
        s2 = np.sum([p[2] for p in parts], axis=0)
        m = s1 / count
        if self.is_exact or count < 2:
            return m, np.zeros_like(m)
        var = np.maximum(s2 - count * m * m, 0.0) / (count - 1)
        return m, 3.0 * np.sqrt(var / count)

    def expect(self, G: Evaluator, n: int) -> EstimatedValue:
        m, e = self.mean(G, n)
        return EstimatedValue(float(m), float(e))


def _subsets_product(X: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Products X[:, i1-1]···X[:, iq-1] for each row of idx; shape (N, m)."""
    P = X[:, idx[:, 0] - 1].copy()
    for j in range(1, idx.shape[1]):
        P *= X[:, idx[:, j] - 1]
    return P


@dataclass(frozen=True)
class ChaosExpansion:
    """F = c + Σ_q J_q(f_q) on the index universe 1..dimension.

    Instances are callable on an (N, n) array of signs and return the N
    values of F.
    """

    dimension: int
    constant: float = 0.0
    terms: Mapping[int, Kernel] = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 0:
            raise ValueError("dimension must be nonnegative")
        clean = {}
        for q, k in sorted(dict(self.terms).items()):
            if not isinstance(k, Kernel):
                raise TypeError("terms must map orders to Kernel objects")
            if k.order != q:
                raise ValueError(f"kernel of order {k.order} filed under order {q}")
            if k.max_index > self.dimension:
                raise ValueError("kernel index exceeds the dimension")
            if not k.is_zero():
                clean[q] = k
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "constant", float(self.constant))

    @classmethod
    def single(cls, kernel: Kernel, dimension: int | None = None, constant: float = 0.0):
        dim = kernel.max_index if dimension is None else dimension
        return cls(dim, constant, {kernel.order: kernel})

    @property
    def orders(self) -> list[int]:
        return list(self.terms)

    @property
    def degree(self) -> int:
        return max(self.terms, default=0)

    @property
    def is_centred(self) -> bool:
        return self.constant == 0.0

    def is_pure(self) -> bool:
        return self.constant == 0.0 and len(self.terms) == 1

    def kernel(self, q: int) -> Kernel:
        return self.terms.get(q, Kernel.zero(q))

    def with_dimension(self, n: int) -> "ChaosExpansion":
        return ChaosExpansion(n, self.constant, self.terms)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] < self.dimension:
            raise ValueError(f"points have {X.shape[1]} coordinates, need {self.dimension}")
        out = np.full(len(X), self.constant)
        for q, k in self.terms.items():
            fq = math.factorial(q)
            # keep the (rows x entries) intermediate near 4M floats
            step = max(1, (1 << 22) // max(len(X), 1))
            for a in range(0, len(k.values), step):
                idx = k.indices[a : a + step]
                out += fq * (_subsets_product(X, idx) @ k.values[a : a + step])
        return out[0] if single else out

    def scale(self, c: float) -> "ChaosExpansion":
        return ChaosExpansion(
            self.dimension, self.constant * c, {q: k * c for q, k in self.terms.items()}
        )

    def __add__(self, other: "ChaosExpansion") -> "ChaosExpansion":
        terms = dict(self.terms)
        for q, k in other.terms.items():
            terms[q] = terms[q] + k if q in terms else k
        return ChaosExpansion(
            max(self.dimension, other.dimension), self.constant + other.constant, terms
        )

    def __neg__(self) -> "ChaosExpansion":
        return self.scale(-1.0)

    def __sub__(self, other: "ChaosExpansion") -> "ChaosExpansion":
        return self + (-other)

    def centred(self) -> "ChaosExpansion":
        return ChaosExpansion(self.dimension, 0.0, self.terms)

    def variance(self) -> float:
        from .kernel import norm2

        return math.fsum(math.factorial(q) * norm2(k) ** 2 for q, k in self.terms.items())

    def allclose(self, other: "ChaosExpansion", atol: float = 1e-10) -> bool:
        if abs(self.constant - other.constant) > atol:
            return False
        for q in set(self.terms) | set(other.terms):
            if not self.kernel(q).allclose(other.kernel(q), atol):
                return False
        return True

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "constant": self.constant,
            "terms": [{"order": q, "kernel": k.to_json()} for q, k in self.terms.items()],
        }

    @classmethod
    def from_json(cls, obj: Union[dict, str]) -> "ChaosExpansion":
        if isinstance(obj, str):
            obj = json.loads(obj)
        terms = {int(t["order"]): Kernel.from_json(t["kernel"]) for t in obj["terms"]}
        return cls(int(obj["dimension"]), float(obj["constant"]), terms)


def evaluate(F: ChaosExpansion, x: Union[RademacherPoint, Sequence[int]]) -> float:
    """Value of F at a single configuration."""
    arr = x.as_array() if isinstance(x, RademacherPoint) else np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError("evaluate expects a single point")
    if len(arr) < F.dimension:
        raise ValueError(f"point has dimension {len(arr)}, F needs {F.dimension}")
    if not np.all(np.abs(arr) == 1):
        raise ValueError("point entries must be +-1")
    return float(F(arr[None, :])[0])


def expectation(G: Evaluator, n: int, engine: ExpectationEngine) -> EstimatedValue:
    return engine.expect(G, n)


def moment(F: ChaosExpansion, k: int, engine: ExpectationEngine) -> EstimatedValue:
    if k < 1:
        raise ValueError("moment order must be positive")
    return engine.expect(lambda X: F(X) ** k, F.dimension)


def cumulant4(F: ChaosExpansion, engine: ExpectationEngine) -> float:
    """E[F⁴] − 3E[F²]² for centred F (equals E[F⁴] − 3 at unit variance)."""
    m, _ = engine.mean(lambda X: np.column_stack([F(X) ** 2, F(X) ** 4]), F.dimension)
    return float(m[1] - 3.0 * m[0] ** 2)


def chaos_multiply(F: ChaosExpansion, G: ChaosExpansion) -> ChaosExpansion:
    """Chaos expansion of the product of two pure multiple integrals."""
    if not (F.is_pure() and G.is_pure()):
        raise ValueError("chaos_multiply needs two single pure-chaos terms")
    (q, f), = F.terms.items()
    (p, g), = G.terms.items()
    n = max(F.dimension, G.dimension)
    constant = 0.0
    terms: dict[int, Kernel] = {}
    for r in range(min(q, p) + 1):
        coef = math.factorial(r) * math.comb(q, r) * math.comb(p, r)
        order = q + p - 2 * r
        c = contract(f, g, r, r)
        if order == 0:
            constant += coef * (float(c.values.sum()) if len(c) else 0.0)
            continue
        t = restrict(symmetrize(c), DiagonalMask(order))
        if len(t) == 0:
            continue
        k = Kernel.from_table(t, atol=1e-9) * coef
        terms[order] = terms[order] + k if order in terms else k
    return ChaosExpansion(n, constant, terms)


def value_table(G: Evaluator, n: int, engine: ExpectationEngine | None = None) -> np.ndarray:
    """Values of G on every configuration, indexed by configuration number."""
    engine = engine or ExpectationEngine.exact()
    engine.check(n)
    out = np.empty(2**n)
    step = engine.chunk_size
    for a in range(0, 2**n, step):
        b = min(a + step, 2**n)
        out[a:b] = np.asarray(G(hypercube(n, a, b)), dtype=float)
    return out


def iterated_difference_mean(values: np.ndarray, n: int, coords: Sequence[int]) -> float:
    """E[(D′)^k G] for the coordinates ``coords`` from a full value table.

    Each D′_k halves the difference of G at x_k = +1 and x_k = -1; applying
    them over ``coords`` gives a signed average over the 2^k half-flip
    combinations, which is then averaged over the remaining coordinates.
    """
    cube = values.reshape((2,) * n) if n else values.reshape(())
    half = np.array([0.5, -0.5])
    out = cube
    # coordinate k lives on axis n - k (bit k-1 in C order); increasing k
    # removes axes from the right, so the remaining axis numbers stay valid
    for k in sorted(coords):
        out = np.tensordot(out, half, axes=([n - k], [0]))
    return float(np.mean(out))


def decompose(
    G: Evaluator, n: int, max_order: int, engine: ExpectationEngine | None = None
) -> ChaosExpansion:
    """Recover the chaos kernels of G up to ``max_order`` by exact enumeration."""
    engine = engine or ExpectationEngine.exact()
    if not engine.is_exact:
        raise ValueError("decompose requires the exact engine")
    if max_order > n:
        raise ValueError("max_order cannot exceed n")
    values = value_table(G, n, engine)
    constant = float(np.mean(values))
    terms = {}
    for k in range(1, max_order + 1):
        tuples = list(itertools.combinations(range(1, n + 1), k))
        vals = [iterated_difference_mean(values, n, t) / math.factorial(k) for t in tuples]
        vals = np.asarray(vals)
        keep = vals != 0.0
        if keep.any():
            terms[k] = Kernel(k, np.asarray(tuples, dtype=np.int64)[keep], vals[keep])
    return ChaosExpansion(n, constant, terms)


def random_expansion(
    n: int,
    max_order: int,
    rng: np.random.Generator,
    constant: float = 0.0,
    density: float = 0.5,
) -> ChaosExpansion:
    """Random expansion on [n] with unit total variance spread over orders 1..max_order."""
    from .kernel import normalized, random_kernel

    orders = range(1, min(max_order, n) + 1)
    share = 1.0 / len(orders)
    terms = {q: normalized(random_kernel(q, n, rng, density), share) for q in orders}
    return ChaosExpansion(n, constant, terms)
