"""Command-line runner: every subcommand emits one JSON report.

Report layout: ``{config, results, engine, timing, version}`` with sorted keys.
Only ``timing`` depends on the machine; ``results`` is a pure function of the
resolved config. Curves found under ``results["curves"]`` can be written as
CSV files with ``--curves-dir``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from typing import Sequence

import numpy as np

from . import __version__
from .applications import (
    CombSpec,
    FcpSpec,
    MatrixSpec,
    TwoRunsSpec,
    comb_bound,
    comb_phi_psi,
    counterexample_kernel,
    counterexample_report,
    fcp_build,
    loglog_slope,
    trace_experiment,
    two_runs_bound,
    two_runs_functional,
    two_runs_variance,
)
from .bounds import (
    CovarianceSpec,
    PreconditionError,
    _jsonable,
    chaos_q_bound,
    first_chaos_bound,
    fourth_moment_J2,
    malliavin_stein_terms,
    multivariate_bound,
    necessary_statistic,
    sum12_bound,
)
from .functional import (
    CapExceededError,
    ChaosExpansion,
    ExpectationEngine,
    chaos_multiply,
    decompose,
    random_expansion,
)
from .kernel import Kernel, inner, norm2, normalized, random_kernel, star_relations_check, taqqu_check
from .malliavin import divergence_pathwise, gradient, identity_checks, ou
from .stein import dk_curve, empirical_dK, exact_dK, law_of

COMMANDS = (
    "verify-identities",
    "bound",
    "simulate",
    "app-two-runs",
    "app-comb",
    "app-fcp",
    "app-matrix",
)
BOUND_TYPES = ("first-chaos", "chaos-q", "sum12", "abstract", "necessary", "multivariate")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parsing helpers


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _rows(text) -> list[list[int]]:
    """'1,2;2,3' -> [[1,2],[2,3]]; nested lists pass through."""
    if isinstance(text, (list, tuple)):
        return [[int(v) for v in row] for row in text]
    return [_ints(part) for part in str(text).split(";") if part.strip()]


def _engine(args) -> ExpectationEngine:
    if args.engine == "exact":
        return ExpectationEngine.exact(args.cap)
    return ExpectationEngine.monte_carlo(args.samples, args.seed, cap=args.cap)


def _load_kernel(args) -> Kernel:
    if args.kernel:
        with open(args.kernel, encoding="utf-8") as fh:
            return Kernel.from_json(json.load(fh))
    if args.example:
        return counterexample_kernel(args.example)
    rng = np.random.default_rng(args.seed)
    return normalized(random_kernel(args.order, args.n, rng))


# ---------------------------------------------------------------- identity suite


def identity_suite(
    cases: int = 50, seed: int = 0, max_order: int = 3, max_n: int = 10, min_n: int = 3
) -> dict:
    """Randomized algebraic and operator identities under exact enumeration.

    Returns the worst residual per identity over all cases.
    """
    rng = np.random.default_rng(seed)
    exact = ExpectationEngine.exact()
    worst: dict[str, float] = {}

    def record(name, value):
        worst[name] = max(worst.get(name, 0.0), float(value))

    for _ in range(cases):
        n = int(rng.integers(min_n, max_n + 1))
        q = int(rng.integers(1, max_order + 1))
        p = int(rng.integers(1, max_order + 1))
        f = normalized(random_kernel(q, n, rng))
        g = normalized(random_kernel(p, n, rng))
        Ff, Gg = ChaosExpansion.single(f, n), ChaosExpansion.single(g, n)
        X = exact.points(n)
        Fv, Gv = Ff(X), Gg(X)

        iso = float(np.mean(Fv * Gv)) - (math.factorial(q) * inner(f, g) if q == p else 0.0)
        record("isometry", abs(iso))
        prod = chaos_multiply(Ff, Gg)
        record("multiplication_formula", np.max(np.abs(prod(X) - Fv * Gv)))

        if q >= 2:
            lhs, rhs = taqqu_check(f)
            record("taqqu", abs(lhs - rhs) / max(1.0, abs(lhs)))
            star = star_relations_check(f)
            viol = max([0.0] + [-v for v in star["inequality_slack"].values()])
            record("star_relations", max(star["relation01_residual"], viol))

        F = random_expansion(n, max_order, rng)
        G = random_expansion(n, max_order, rng)
        H = random_expansion(n, max_order, rng)
        rt = decompose(F, n, F.degree, exact)
        record("stroock_round_trip", np.max(np.abs(rt(X) - F(X))))
        Lf = ou(F)(X)
        record("minus_delta_D_is_L", np.max(np.abs(-divergence_pathwise(gradient(F))(X) - Lf)))
        rep = identity_checks(F, G, gradient(H), exact, threshold=float(rng.normal(0, 0.5)))
        for k, v in rep.residuals.items():
            record(k, v)
    return worst


# ---------------------------------------------------------------- commands


def cmd_verify_identities(args) -> dict:
    worst = identity_suite(args.cases, args.seed, args.max_order, args.max_n)
    tol = 1e-10
    return {
        "cases": args.cases,
        "tolerance": tol,
        "residuals": worst,
        "passed": all(v <= tol for v in worst.values()),
    }


def _dk_block(F: ChaosExpansion, engine: ExpectationEngine) -> dict:
    n = F.dimension
    if engine.is_exact:
        law = law_of(F, n, engine)
        x, y = dk_curve(law)
        return {"dK": exact_dK(law), "dK_kind": "exact", "curve": (x, y)}
    X = engine.points(n)
    d, band = empirical_dK(F(X))
    return {"dK": d, "dK_kind": "empirical", "dkw_band": band, "curve": None}


def cmd_bound(args) -> dict:
    engine = _engine(args)
    t = args.type
    if t is None:
        raise UsageError("--type is required")
    if t == "first-chaos":
        if not args.weights:
            raise UsageError("--weights is required for first-chaos")
        rep = first_chaos_bound(_floats(args.weights), engine)
        return {"report": rep.to_json()}
    if t == "chaos-q":
        f = _load_kernel(args)
        return {"kernel": f.to_json(), "report": chaos_q_bound(f, args.sigma2).to_json()}
    if t == "necessary":
        f = _load_kernel(args)
        out = {
            "kernel": f.to_json(),
            "fourth_moment": fourth_moment_J2(f),
            "necessary_statistic": necessary_statistic(f),
        }
        if args.example:
            out["counterexample"] = counterexample_report(args.example, engine)
        return out
    if t == "sum12":
        rng = np.random.default_rng(args.seed)
        n = args.n
        f1 = random_kernel(1, n, rng, density=1.0)
        f2 = random_kernel(2, n, rng)
        s = math.sqrt(norm2(f1) ** 2 + 2.0 * norm2(f2) ** 2)
        f1, f2 = f1 * (1.0 / s), f2 * (1.0 / s)
        return {"f1": f1.to_json(), "f2": f2.to_json(), "report": sum12_bound(f1, f2).to_json()}
    if t == "abstract":
        rng = np.random.default_rng(args.seed)
        F = random_expansion(args.n, args.order, rng)
        rep = malliavin_stein_terms(F, engine)
        out = {"functional": F.to_json(), "report": rep.to_json()}
        dk = _dk_block(F, engine)
        out["dK"] = dk["dK"]
        return out
    if t == "multivariate":
        rng = np.random.default_rng(args.seed)
        Fs = [random_expansion(args.n, args.order, rng) for _ in range(args.d)]
        sigma = np.eye(args.d)
        rep = multivariate_bound(Fs, CovarianceSpec(sigma), engine)
        return {"report": rep.to_json()}
    raise UsageError(f"unknown bound type {t!r}")


def cmd_simulate(args) -> dict:
    engine = _engine(args)
    if args.weights:
        a = np.asarray(_floats(args.weights))
        n = len(a)
        F = ChaosExpansion.single(Kernel(1, np.arange(1, n + 1)[:, None], a), n)
    else:
        f = _load_kernel(args)
        F = ChaosExpansion.single(f, f.max_index)
    n = F.dimension
    m, e = engine.mean(lambda X: np.column_stack([F(X) ** 2, F(X) ** 4]), n)
    dk = _dk_block(F, engine)
    out = {
        "dimension": n,
        "variance": {"value": float(m[0]), "abs_error": float(e[0])},
        "fourth_moment": {"value": float(m[1]), "abs_error": float(e[1])},
        "dK": dk["dK"],
        "dK_kind": dk["dK_kind"],
    }
    if "dkw_band" in dk:
        out["dkw_band"] = dk["dkw_band"]
    if dk["curve"] is not None:
        x, y = dk["curve"]
        out["curves"] = {"dk_curve": {"columns": ["x", "abs_cdf_gap"], "rows": np.column_stack([x, y])}}
    return out


def cmd_two_runs(args) -> dict:
    engine = _engine(args)
    ms = _ints(args.ms) if args.ms else []
    weights = _floats(args.weights) if args.weights else [1.0] * (ms[0] if ms else 4)
    spec = TwoRunsSpec(weights)
    rep = two_runs_bound(spec)
    out = {"weights": list(spec.weights), "variance": two_runs_variance(spec), "report": rep.to_json()}
    if spec.dimension <= engine.cap and engine.is_exact:
        out["dK"] = exact_dK(law_of(two_runs_functional(spec), spec.dimension, engine))
    if ms:
        cubic, quartic, explicit = [], [], []
        for m in ms:
            r = two_runs_bound(TwoRunsSpec(np.ones(m)))
            cubic.append(r["max_arg_cubic"])
            quartic.append(r["max_arg_quartic"])
            explicit.append(r.total)
        out["decay"] = {
            "m": ms,
            "slope_cubic": loglog_slope(ms, cubic),
            "slope_quartic": loglog_slope(ms, quartic),
            "slope_explicit": loglog_slope(ms, explicit),
        }
        out["curves"] = {
            "two_runs_decay": {
                "columns": ["m", "max_arg_cubic", "max_arg_quartic", "explicit_total"],
                "rows": np.column_stack([ms, cubic, quartic, explicit]),
            }
        }
    return out


def cmd_comb(args) -> dict:
    if not args.tuples:
        raise UsageError("--tuples is required")
    rows = _rows(args.tuples)
    weights = _floats(args.weights) if args.weights else [1.0] * max(max(r) for r in rows)
    spec = CombSpec(np.asarray(rows), np.asarray(weights))
    pp = comb_phi_psi(spec)
    return {"phi_psi": pp, "report": comb_bound(spec).to_json()}


def cmd_fcp(args) -> dict:
    cover = _rows(args.cover)
    ns = _ints(args.ns)
    rows, phis, psis, sizes = [], [], [], []
    for n in ns:
        spec = FcpSpec(args.q, args.m, cover, n)
        cs = fcp_build(spec, strict=not args.allow_small)
        pp = comb_phi_psi(cs)
        sizes.append(len(cs.tuples))
        phis.append(pp["Phi"])
        psis.append(pp["PsiSup"])
        rows.append({"n": n, "K": spec.K, "size": sizes[-1], "Phi": pp["Phi"], "PsiSup": pp["PsiSup"]})
    out = {"q": args.q, "m": args.m, "cover": cover, "points": rows}
    if len(ns) >= 2:
        out["slopes"] = {
            "Phi": loglog_slope(ns, phis) if all(p > 0 for p in phis) else None,
            "PsiSup_quarter": loglog_slope(ns, [p**0.25 for p in psis]),
            "size": loglog_slope(ns, sizes),
        }
    out["curves"] = {
        "fcp_decay": {
            "columns": ["n", "size", "Phi", "PsiSup"],
            "rows": np.column_stack([ns, sizes, phis, psis]),
        }
    }
    return out


def cmd_matrix(args) -> dict:
    args_engine = args.engine if args.engine_explicit else "mc"
    engine = (
        ExpectationEngine.exact(args.cap)
        if args_engine == "exact"
        else ExpectationEngine.monte_carlo(args.samples, args.seed, cap=args.cap)
    )
    spec = MatrixSpec(args.n, tuple(_ints(args.orders)))
    decay_ns = _ints(args.decay_ns) if args.decay_ns else None
    rep = trace_experiment(spec, engine, decay_ns)
    curves = {}
    for q, per_r in rep.get("decay", {}).items():
        for r, c in per_r.items():
            curves[f"contraction_q{q}_r{r}"] = {
                "columns": ["n", "norm"],
                "rows": np.column_stack([c["n"], c["norm"]]),
            }
    if curves:
        rep["curves"] = curves
    return rep


HANDLERS = {
    "verify-identities": cmd_verify_identities,
    "bound": cmd_bound,
    "simulate": cmd_simulate,
    "app-two-runs": cmd_two_runs,
    "app-comb": cmd_comb,
    "app-fcp": cmd_fcp,
    "app-matrix": cmd_matrix,
}


# ---------------------------------------------------------------- output


def emit_curves(results: dict, directory: str) -> list[str]:
    """Write each curve in ``results['curves']`` to ``directory/<name>.csv``."""
    curves = results.get("curves") or {}
    written = []
    if not curves:
        return written
    os.makedirs(directory, exist_ok=True)
    for name in sorted(curves):
        c = curves[name]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(c["columns"])
        for row in np.atleast_2d(np.asarray(c["rows"], dtype=float)):
            w.writerow(["%.17g" % v for v in row])
        path = os.path.join(directory, f"{name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        written.append(path)
    return written


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine and output")
    g.add_argument("--engine", choices=("exact", "mc"), default=None)
    g.add_argument("--samples", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cap", type=int, default=24)
    g.add_argument("--out", default=None, help="JSON report path (stdout when omitted)")
    g.add_argument("--curves-dir", default=None, help="directory for curve CSVs")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="radstein",
        description="Malliavin-Stein bounds for Rademacher functionals.",
        epilog="Thread count for Monte Carlo chunks: RADSTEIN_THREADS.",
    )
    p.add_argument("--config", default=None, help="JSON config; its keys override flags")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("verify-identities", help="randomized identity suite (exact engine)")
    s.add_argument("--cases", type=int, default=50)
    s.add_argument("--max-order", type=int, default=3)
    s.add_argument("--max-n", type=int, default=10)

    s = sub.add_parser("bound", help="evaluate one of the bounds")
    s.add_argument("--type", choices=BOUND_TYPES, default=None)
    s.add_argument("--weights", default=None, help="comma separated first-chaos weights")
    s.add_argument("--kernel", default=None, help="kernel JSON file")
    s.add_argument("--example", type=int, default=None, help="use the star kernel on [n]")
    s.add_argument("--order", type=int, default=2)
    s.add_argument("--n", type=int, default=6)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--sigma2", type=float, default=1.0)

    s = sub.add_parser("simulate", help="moments and Kolmogorov distance of a single chaos")
    s.add_argument("--weights", default=None)
    s.add_argument("--kernel", default=None)
    s.add_argument("--example", type=int, default=None)
    s.add_argument("--order", type=int, default=2)
    s.add_argument("--n", type=int, default=8)

    s = sub.add_parser("app-two-runs", help="weighted 2-runs")
    s.add_argument("--weights", default=None)
    s.add_argument("--ms", default=None, help="window lengths for the all-ones decay curve")

    s = sub.add_parser("app-comb", help="combinatorial CLT for an explicit index set")
    s.add_argument("--tuples", default=None, help="e.g. '1,2;2,1'")
    s.add_argument("--weights", default=None)

    s = sub.add_parser("app-fcp", help="fractional Cartesian products")
    s.add_argument("--q", type=int, default=3)
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--cover", default="1,2;2,3;1,3")
    s.add_argument("--ns", default="16,81,256")
    s.add_argument("--allow-small", action="store_true", help="permit n < q^m")

    s = sub.add_parser("app-matrix", help="traces of Bernoulli matrix powers")
    s.add_argument("--n", type=int, default=40)
    s.add_argument("--orders", default="1,2,3")
    s.add_argument("--decay-ns", default=None)

    for sp in sub.choices.values():
        _common(sp)
    return p


def _resolve(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    config = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        config = json.loads(text) if text.strip() else {}
        if not isinstance(config, dict) or not config:
            raise UsageError("config file is empty")
        command = config.get("command", args.command)
        if command not in COMMANDS:
            raise UsageError(f"config must name a command from {', '.join(COMMANDS)}")
        if command != args.command:
            rest = [a for a in argv if a != args.command]
            args = parser.parse_args(rest + [command])
        known = vars(args)
        for key, value in config.items():
            k = key.replace("-", "_")
            if k in ("command", "config"):
                continue
            if k not in known:
                raise UsageError(f"unknown config key {key!r} for {command}")
            setattr(args, k, value)
    if args.command is None:
        raise UsageError("no command given")
    args.engine_explicit = args.engine is not None
    if args.engine is None:
        args.engine = "exact"
    return args


def resolved_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("config", "engine_explicit", "out", "curves_dir")}
    return cfg


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = _resolve(argv)
    except UsageError as exc:
        print(f"radstein: usage error: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        results = HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"radstein: usage error: {exc}", file=sys.stderr)
        return 2
    except CapExceededError as exc:
        print(f"radstein: {exc}", file=sys.stderr)
        return 3
    except (PreconditionError, ValueError) as exc:
        print(f"radstein: invalid input: {exc}", file=sys.stderr)
        return 4
    elapsed = time.perf_counter() - start
    engine = results.get("engine") if isinstance(results.get("engine"), dict) else None
    if engine is None:
        engine = _engine(args).describe() if args.command != "verify-identities" else ExpectationEngine.exact(args.cap).describe()
    report = {
        "config": resolved_config(args),
        "results": results,
        "engine": engine,
        "timing": {"seconds": elapsed},
        "version": __version__,
    }
    text = dumps(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    if args.curves_dir:
        emit_curves(results, args.curves_dir)
    if args.command == "verify-identities" and not results["passed"]:
        return 1
    return 0


def main() -> None:
    sys.exit(run())
