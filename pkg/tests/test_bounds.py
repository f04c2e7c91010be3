import json
import math

import numpy as np
import pytest

from rademacher_stein.applications import counterexample_kernel, counterexample_report
from rademacher_stein.bounds import (
    EXPLICIT,
    UNSPECIFIED,
    CovarianceSpec,
    PreconditionError,
    a4_candidate_sup,
    a4_grid_sup,
    chaos_q_bound,
    contraction_profile,
    first_chaos_bound,
    fourth_moment_J2,
    malliavin_stein_terms,
    mixed_contraction_estimate,
    multivariate_bound,
    multivariate_contraction_bound,
    necessary_statistic,
    sum12_bound,
)
from rademacher_stein.functional import ChaosExpansion, ExpectationEngine, moment, random_expansion
from rademacher_stein.kernel import Kernel, contraction_norm, normalized, random_kernel
from rademacher_stein.malliavin import ou_inverse

from . import frozen
from .suites import bound_validity_cases

EXACT = ExpectationEngine.exact()
X1 = ChaosExpansion.single(Kernel(1, [[1]], [1.0]))


def test_abstract_terms_single_sign():
    rep = malliavin_stein_terms(X1)
    for k, v in frozen.X1_TERMS.items():
        assert rep[k] == pytest.approx(v, abs=1e-12)
    assert rep.total == pytest.approx(frozen.X1_TOTAL, abs=1e-12)
    assert rep.total >= frozen.DK_SINGLE_SIGN


def test_abstract_first_chaos_a1_vanishes():
    a = np.random.default_rng(0).standard_normal(6)
    a /= np.linalg.norm(a)
    F = ChaosExpansion.single(Kernel(1, np.arange(1, 7)[:, None], a))
    assert malliavin_stein_terms(F)["A1"] == pytest.approx(0.0, abs=1e-14)


def test_abstract_rejects_non_centred():
    with pytest.raises(PreconditionError):
        malliavin_stein_terms(ChaosExpansion(2, 1.0, {1: Kernel(1, [[1]], [1.0])}))


def test_abstract_star_a1_squared():
    f = counterexample_kernel(3)
    rep = malliavin_stein_terms(ChaosExpansion.single(f))
    off = frozen.STAR_N3_OFFDIAG_SQ
    assert rep["A1_cs"] ** 2 == pytest.approx(8 * off, abs=1e-12)


def test_abstract_mc_metadata():
    F = random_expansion(6, 2, np.random.default_rng(1))
    rep = malliavin_stein_terms(F, ExpectationEngine.monte_carlo(5000, 3))
    assert rep.engine["mode"] == "mc" and rep.engine["seed"] == 3
    assert rep.notes["abs_error_3se"]["A1"] > 0
    ex = malliavin_stein_terms(F)
    assert abs(rep["A2"] - ex["A2"]) <= rep.notes["abs_error_3se"]["A2"] * 2


@pytest.mark.parametrize("seed", range(8))
def test_a4_candidate_matches_grid(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    F = random_expansion(n, 3, rng)
    X = EXACT.points(n)
    cand, xstar = a4_candidate_sup(F, X)
    vals = np.unique(F(X))
    mids = (vals[:-1] + vals[1:]) / 2
    dense = np.linspace(vals.min() - 1, vals.max() + 1, 20001)
    grid = np.concatenate([dense, mids, [vals.min() - 1]])
    assert a4_grid_sup(F, X, dense) <= cand + 1e-12
    assert a4_grid_sup(F, X, grid) == pytest.approx(cand, abs=1e-12)
    G = ou_inverse(F).scale(-1.0)
    assert cand == pytest.approx(a4_candidate_sup(F, X, dlf=G)[0], abs=0)


def test_first_chaos_examples():
    rep = first_chaos_bound([0.5] * 4)
    assert rep["cubic"] == pytest.approx(1.0)
    single = first_chaos_bound([1.0])
    assert single.total == pytest.approx(3.0)
    n = 16
    a = first_chaos_bound(np.full(n, n**-0.5))["cubic"]
    b = first_chaos_bound(np.full(4 * n, (4 * n) ** -0.5))["cubic"]
    assert b == pytest.approx(a / 2)
    with pytest.raises(PreconditionError):
        first_chaos_bound([1.0, 1.0])


def test_chaos_q_examples():
    rep = chaos_q_bound(counterexample_kernel(9))
    assert rep["full_norm[1]"] ** 2 == pytest.approx(1 / 8)
    assert rep.constants_policy == EXPLICIT
    assert {r.constants_policy for r in rep.related} == {UNSPECIFIED}
    assert chaos_q_bound(Kernel(2, [[1, 2]], [0.5]))["variance_gap"] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        chaos_q_bound(Kernel(1, [[1]], [1.0]))
    big = chaos_q_bound(Kernel(2, [[1, 2]], [0.5]))
    assert big.notes["hypothesis_offdiag_below_one"]


def test_chaos_q_sigma_scaling():
    f = normalized(random_kernel(2, 6, np.random.default_rng(3)), 2.0)
    a = chaos_q_bound(f, 2.0)
    b = chaos_q_bound(f * (1 / math.sqrt(2.0)), 1.0)
    assert a.total == pytest.approx(b.total, rel=1e-12)
    assert a["variance_gap"] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(15))
def test_chaos_q_offdiag_dominated_termwise(seed):
    rng = np.random.default_rng(seed)
    q = 2 + seed % 2
    f = normalized(random_kernel(q, int(rng.integers(q + 1, 10)), rng), float(rng.uniform(0.5, 1.5)))
    rep = chaos_q_bound(f)
    for key in ("A1", "A2", "A3_F4", "A3", "A4_prime", "A4"):
        assert rep[f"offdiag_{key}"] <= rep[key] * (1 + 1e-12) + 1e-15
    assert rep["offdiag_total"] <= rep.total * (1 + 1e-12)
    assert rep["offdiag_A3_F4_literal"] <= rep["offdiag_A3_F4"] * (1 + 1e-12)


def test_contraction_profile_keys():
    prof = contraction_profile(random_kernel(3, 6, np.random.default_rng(1)))
    assert set(prof["full"]) == {1, 2} and set(prof["part"]) == {1, 2, 3}


def test_sum12_reductions():
    a = np.full(4, 0.5)
    f1 = Kernel(1, np.arange(1, 5)[:, None], a)
    rep = sum12_bound(f1, None)
    assert rep.total == pytest.approx(2 * np.sum(a**4) ** 0.5 + 2 * np.sum(a**3))
    f2 = counterexample_kernel(5)
    rep2 = sum12_bound(None, f2)
    assert rep2["f1_star_f2"] == 0.0 and rep2["f1_f2_mixed"] == 0.0 and rep2["f1_l4_squared"] == 0.0
    with pytest.raises(PreconditionError):
        sum12_bound(f1 * 2.0, None)


def test_fourth_moment_and_statistic_x1x2():
    f = Kernel(2, [[1, 2]], [0.5])
    assert fourth_moment_J2(f) == pytest.approx(1.0, abs=1e-14)
    assert necessary_statistic(f) == pytest.approx(-1 / 8, abs=1e-15)


@pytest.mark.parametrize("n", [3, 5, 8, 12])
def test_fourth_moment_star(n):
    f = counterexample_kernel(n)
    F = ChaosExpansion.single(f)
    e4 = moment(F, 4, EXACT).value
    assert fourth_moment_J2(f) == pytest.approx(e4, abs=1e-10)
    assert necessary_statistic(f) == pytest.approx(frozen.star_statistic(n), abs=1e-12)
    assert necessary_statistic(f) == pytest.approx((e4 - 3) / 16, abs=1e-10)


@pytest.mark.parametrize("seed", range(30))
def test_fourth_moment_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11))
    f = normalized(random_kernel(2, n, rng))
    e4 = moment(ChaosExpansion.single(f, n), 4, EXACT).value
    assert abs(fourth_moment_J2(f) - e4) <= 1e-10
    assert abs(necessary_statistic(f) - (e4 - 3) / 16) <= 1e-10


def test_fourth_moment_rejects_non_unit():
    with pytest.raises(PreconditionError) as exc:
        fourth_moment_J2(Kernel(2, [[1, 2]], [1.0]))
    # variance 2! * ||f||^2 with the norm taken over ordered tuples
    assert exc.value.measured == pytest.approx(4.0)


def test_counterexample_report_discrepancy():
    rep = counterexample_report(6)
    assert rep["A1_sq_enumerated"] == pytest.approx(rep["A1_sq_contraction_formula"], abs=1e-10)
    assert rep["A1_sq_contraction_formula"] == pytest.approx(frozen.star_a1_sq(6), abs=1e-12)
    assert rep["A1_sq_alt_closed_form"] == pytest.approx(frozen.star_a1_sq_alt(6))
    assert rep["alt_closed_form_discrepancy"]


def test_multivariate_two_signs():
    F1 = ChaosExpansion.single(Kernel(1, [[1]], [1.0]), 2)
    F2 = ChaosExpansion.single(Kernel(1, [[2]], [1.0]), 2)
    rep = multivariate_bound([F1, F2], CovarianceSpec.identity(2))
    assert rep["covariance_term"] == pytest.approx(0.0, abs=1e-15)
    assert rep["remainder_term"] == pytest.approx(frozen.MULTI_X1X2_TERM2)


def test_multivariate_single_reduces():
    F = random_expansion(5, 2, np.random.default_rng(2))
    rep = multivariate_bound([F], CovarianceSpec(np.array([[1.0]])))
    ms = malliavin_stein_terms(F)
    assert rep["covariance_term"] == pytest.approx(0.5 * ms["A1_cs"], abs=1e-12)


def test_multivariate_disjoint_blocks_gap_shrinks():
    gaps = []
    for n in (2, 4, 6):
        f = Kernel(1, np.arange(1, n + 1)[:, None], np.full(n, n**-0.5))
        g = Kernel(1, np.arange(n + 1, 2 * n + 1)[:, None], np.full(n, n**-0.5))
        Fs = [ChaosExpansion.single(f, 2 * n), ChaosExpansion.single(g, 2 * n)]
        gaps.append(multivariate_bound(Fs, CovarianceSpec.identity(2))["covariance_term"])
    assert all(v <= 1e-12 for v in gaps)
    # a path kernel in the second chaos: the covariance term decays with n
    decay = []
    for n in (4, 6, 8, 10):
        f = normalized(Kernel(2, [[i, i + 1] for i in range(1, n)], np.ones(n - 1)))
        Fs = [ChaosExpansion.single(f, n)]
        decay.append(multivariate_bound(Fs, CovarianceSpec.identity(1))["covariance_term"])
    assert all(b < a for a, b in zip(decay, decay[1:]))


def test_multivariate_dimension_mismatch():
    with pytest.raises(ValueError):
        multivariate_bound([X1], CovarianceSpec.identity(2))


def test_covariance_spec_validation():
    with pytest.raises(ValueError):
        CovarianceSpec(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        CovarianceSpec(np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("seed", range(30))
def test_mixed_contraction_domination(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 3))
    q = int(rng.integers(p + 1, 4))
    n = 6
    f, g = random_kernel(p, n, rng), random_kernel(q, n, rng)
    for r in range(1, p + 1):
        est = mixed_contraction_estimate(f, g, r)
        assert est["lhs"] <= est["rhs"] + 1e-12
        if est["kind"] == "r<p":
            assert est["lhs"] <= est["product_bound"] + 1e-12


def test_mixed_contraction_equal_orders():
    rng = np.random.default_rng(4)
    f, g = random_kernel(2, 6, rng), random_kernel(2, 6, rng)
    est = mixed_contraction_estimate(f, g, 1)
    assert est["lhs"] <= est["product_bound"] + 1e-12
    assert est["lhs"] ** 2 == pytest.approx(
        sum(contraction_norm(f, g, 1, 1) ** 2 for _ in [0]), rel=1e-12
    )


def test_multivariate_contraction_bound_structure():
    rng = np.random.default_rng(5)
    f1 = normalized(random_kernel(1, 6, rng))
    f2 = normalized(random_kernel(2, 6, rng), 2.0)
    rep = multivariate_contraction_bound([f1, f2], CovarianceSpec(np.diag([1.0, 2.0])))
    assert rep["covariance_gap[1,1]"] == pytest.approx(0.0, abs=1e-12)
    assert rep["covariance_gap[2,2]"] == pytest.approx(0.0, abs=1e-12)
    assert rep["covariance_term_exact"] <= rep["covariance_term_displayed"] + 1e-12
    assert rep["covariance_term_displayed"] <= rep["covariance_term_surrogate"] + 1e-12
    with pytest.raises(PreconditionError):
        multivariate_contraction_bound([f1, f2], CovarianceSpec(np.array([[1.0, 0.1], [0.1, 2.0]])))


def test_multivariate_contraction_dominates_enumerated_terms():
    """The contraction form bounds the enumerated covariance and remainder terms."""
    rng = np.random.default_rng(6)
    for _ in range(8):
        n = int(rng.integers(4, 9))
        qs = sorted(rng.choice([1, 2, 3], size=2, replace=False).tolist())
        fs = [normalized(random_kernel(q, n, rng), float(q)) for q in qs]
        cov = CovarianceSpec(np.diag([float(q) for q in qs]))
        Fs = [ChaosExpansion.single(f, n) for f in fs]
        enum = multivariate_bound(Fs, cov)
        rep = multivariate_contraction_bound(fs, cov)
        assert enum["covariance_term"] <= rep["covariance_term_exact"] + 1e-10
        assert enum["remainder_term"] <= rep["remainder_term"] * (1 + 1e-10)


def test_bound_report_json():
    rep = chaos_q_bound(counterexample_kernel(4))
    obj = json.loads(json.dumps(rep.to_json()))
    assert set(obj) >= {"name", "terms", "total", "constants_policy", "engine"}


def test_bound_validity_suite():
    cases = list(bound_validity_cases())
    assert len(cases) >= 100
    families = {c[0] for c in cases}
    assert {"first_chaos", "pure_q2", "pure_q3", "sum12", "abstract"} <= families
    for family, desc, dk, totals in cases:
        for name, total in totals.items():
            assert dk <= total, (family, desc, name, dk, total)
