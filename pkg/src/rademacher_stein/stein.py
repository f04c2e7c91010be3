"""Normal CDF, the Stein solution f_x, Kolmogorov distances and small-ball sums."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .functional import Evaluator, ExpectationEngine

SQRT_2PI = math.sqrt(2.0 * math.pi)
STEIN_SUP = SQRT_2PI / 4.0
MERGE_TOL = 1e-12


def normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    return special.ndtr(x)


def _left_piece(x, z):
    """f_x(z) for z <= x: √(2π)e^{z²/2}Φ(z)(1−Φ(x)), evaluated without overflow."""
    neg = z < 0
    zn = np.where(neg, z, 0.0)
    zp = np.where(neg, 0.0, z)
    xp = np.where(neg, 0.0, x)
    # z < 0: e^{z²/2}Φ(z) = ½erfcx(−z/√2)
    a = SQRT_2PI * 0.5 * special.erfcx(-zn / math.sqrt(2.0)) * special.ndtr(-x)
    # 0 <= z <= x: e^{z²/2}(1−Φ(x)) = ½erfcx(x/√2)e^{(z²−x²)/2}
    b = SQRT_2PI * special.ndtr(zp) * 0.5 * special.erfcx(xp / math.sqrt(2.0)) * np.exp(
        0.5 * (zp * zp - xp * xp)
    )
    return np.where(neg, a, b)


def stein_solution(x, z):
    """Bounded solution f_x of f′(z) − z f(z) = 1{z ≤ x} − Φ(x)."""
    x, z = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
    # f_x(z) = f_{−x}(−z) maps the z > x branch onto the z <= x one
    left = z <= x
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.where(left, _left_piece(x, z), _left_piece(-x, -z))
    return out[()] if out.ndim == 0 else out


def stein_solution_derivative(x, z):
    """f′_x(z) for z ≠ x from differentiating the closed form."""
    x, z = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
    f = stein_solution(x, z)
    left = z <= x
    # d/dz e^{z²/2}Φ(z) = z·e^{z²/2}Φ(z) + 1/√(2π), likewise for 1−Φ
    out = np.where(left, z * f + special.ndtr(-x), z * f - special.ndtr(x))
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class AtomicDistribution:
    """Finitely supported law with strictly increasing atoms."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.ndim != 1 or v.shape != p.shape or len(v) == 0:
            raise ValueError("values and probs must be nonempty 1-d arrays of equal length")
        if np.any(np.diff(v) <= 0):
            raise ValueError("atoms must be strictly increasing")
        if np.any(p <= 0):
            raise ValueError("probabilities must be positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_samples(cls, samples, weights=None, tol: float = MERGE_TOL) -> "AtomicDistribution":
        """Merge equal (within ``tol`` relative to max(1,|v|)) values into atoms."""
        s = np.asarray(samples, dtype=float).ravel()
        if len(s) == 0:
            raise ValueError("no samples")
        w = np.full(len(s), 1.0 / len(s)) if weights is None else np.asarray(weights, float).ravel()
        order = np.argsort(s, kind="stable")
        s, w = s[order], w[order]
        vals, probs = _merge_sorted(s, w, tol)
        keep = probs > 0
        probs = probs[keep] / probs[keep].sum()
        return cls(vals[keep], probs)

    @classmethod
    def point_mass(cls, v: float = 0.0) -> "AtomicDistribution":
        return cls(np.array([float(v)]), np.array([1.0]))

    def cdf(self, x) -> np.ndarray:
        """P(S ≤ x)."""
        c = np.concatenate([[0.0], np.cumsum(self.probs)])
        return np.minimum(c[np.searchsorted(self.values, x, side="right")], 1.0)

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def moment(self, k: int) -> float:
        return float(np.dot(self.values**k, self.probs))

    def __len__(self) -> int:
        return len(self.values)


def _merge_sorted(s: np.ndarray, w: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    gap = np.diff(s) > tol * np.maximum(1.0, np.abs(s[1:]))
    starts = np.concatenate([[0], np.nonzero(gap)[0] + 1])
    probs = np.add.reduceat(w, starts)
    # average of the merged group keeps the representative symmetric under sign flips
    sums = np.add.reduceat(s, starts)
    counts = np.diff(np.concatenate([starts, [len(s)]]))
    return sums / counts, probs


def law_of(F: Evaluator, n: int, engine: ExpectationEngine | None = None) -> AtomicDistribution:
    """Law of F under the engine: all 2ⁿ configurations, or the MC samples."""
    engine = engine or ExpectationEngine.exact()
    X = engine.points(n)
    return AtomicDistribution.from_samples(np.asarray(F(X), dtype=float))


def rademacher_sum_law(weights: Sequence[float], tol: float = MERGE_TOL) -> AtomicDistribution:
    """Exact law of Σ a_i X_i by repeated two-point convolution with atom merging."""
    a = np.asarray(weights, dtype=float).ravel()
    vals, probs = np.array([0.0]), np.array([1.0])
    scale = 1.0 + float(np.sum(np.abs(a)))
    for w in a:
        if w == 0.0:
            continue
        v = np.concatenate([vals - abs(w), vals + abs(w)])
        p = np.concatenate([probs, probs]) * 0.5
        order = np.argsort(v, kind="stable")
        vals, probs = _merge_sorted(v[order], p[order], tol * scale)
        # atoms whose mass underflowed (below 2^-1074) carry no weight
        live = probs > 0.0
        vals, probs = vals[live], probs[live]
    return AtomicDistribution(vals, probs / probs.sum())


def exact_dK(law: AtomicDistribution, sigma2: float = 1.0) -> float:
    """sup_x |P(S ≤ x) − Φ(x/σ)|, attained at an atom from the left or the right."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    phi = normal_cdf(law.values / math.sqrt(sigma2))
    right = np.cumsum(law.probs)
    left = right - law.probs
    return float(max(np.max(np.abs(right - phi)), np.max(np.abs(left - phi))))


def dkw_band(N: int, alpha: float = 0.01) -> float:
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * N))


def empirical_dK(samples, sigma2: float = 1.0, alpha: float = 0.01) -> tuple[float, float]:
    """Kolmogorov-Smirnov statistic against N(0, σ²) and the DKW half-width."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    N = len(s)
    if N == 0:
        raise ValueError("need at least one sample")
    phi = normal_cdf(s / math.sqrt(sigma2))
    i = np.arange(1, N + 1)
    d = max(float(np.max(i / N - phi)), float(np.max(phi - (i - 1) / N)))
    return d, dkw_band(N, alpha)


def dk_curve(law: AtomicDistribution, sigma2: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """(atom, max of left/right |CDF − Φ|) pairs for plotting."""
    phi = normal_cdf(law.values / math.sqrt(sigma2))
    right = np.cumsum(law.probs)
    left = right - law.probs
    return law.values.copy(), np.maximum(np.abs(right - phi), np.abs(left - phi))


def _excluded_law(a: np.ndarray, k: int, engine: ExpectationEngine) -> AtomicDistribution:
    rest = np.delete(a, k - 1)
    if engine.is_exact:
        return rademacher_sum_law(rest)
    X = engine.points(len(a))
    return AtomicDistribution.from_samples(X @ a - a[k - 1] * X[:, k - 1])


def small_ball(
    a: Sequence[float], exclude: int, engine: ExpectationEngine | None = None
) -> Callable[[np.ndarray], np.ndarray]:
    """x ↦ P(x − |a_k| < Σ_{i≠k} a_iX_i ≤ x + |a_k|) for k = ``exclude``."""
    a = np.asarray(a, dtype=float)
    if not 1 <= exclude <= len(a):
        raise ValueError("excluded index out of range")
    engine = engine or ExpectationEngine.exact()
    law = _excluded_law(a, exclude, engine)
    h = abs(a[exclude - 1])

    def prob(x):
        x = np.asarray(x, dtype=float)
        return law.cdf(x + h) - law.cdf(x - h)

    return prob


@dataclass(frozen=True)
class SmallBallSup:
    value: float
    argmax: float
    candidates: int
    groups: int


def small_ball_sup(a: Sequence[float], engine: ExpectationEngine | None = None) -> SmallBallSup:
    """sup_x Σ_k a_k²·P(x − |a_k| < Σ_{i≠k} a_iX_i ≤ x + |a_k|).

    Coordinates with equal |a_k| share the law of the excluded sum, so one
    law is built per distinct |a_k|. The weighted sum is a right-continuous
    step function with jumps at {atom ± |a_k|}; it is evaluated once inside
    every piece between consecutive candidates.
    """
    a = np.asarray(a, dtype=float)
    engine = engine or ExpectationEngine.exact()
    absval = np.abs(a)
    mags, inverse = np.unique(absval, return_inverse=True)
    groups = []
    for g, m in enumerate(mags):
        members = np.nonzero(inverse == g)[0]
        w = float(np.sum(a[members] ** 2))
        if w == 0.0:
            continue
        law = _excluded_law(a, int(members[0]) + 1, engine)
        groups.append((law, float(m), w))
    if not groups:
        return SmallBallSup(0.0, 0.0, 0, 0)
    cands = np.concatenate([np.concatenate([lw.values - h, lw.values + h]) for lw, h, _ in groups])
    cands = np.sort(cands)
    scale = 1.0 + float(np.max(np.abs(cands)))
    keep = np.concatenate([[True], np.diff(cands) > MERGE_TOL * scale])
    b = cands[keep]
    probe = np.concatenate([(b[:-1] + b[1:]) / 2.0, [b[-1] + 1.0]]) if len(b) > 1 else b + 0.5
    total = np.zeros(len(probe))
    for law, h, w in groups:
        total += w * (law.cdf(probe + h) - law.cdf(probe - h))
    i = int(np.argmax(total))
    return SmallBallSup(float(total[i]), float(probe[i]), int(len(b)), len(groups))
