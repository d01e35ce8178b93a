"""Command-line entry point.

Exit status: 0 success or passing verdict, 1 failing verdict or
check, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from . import io, kernel
from .experiments import ConfigError, ExperimentConfig, run_experiment
from .geometry import (
    ConstructionError,
    DomainSpec,
    ahlfors_infimum,
    build_domain,
    hole_count,
    john_constant,
)
from .inequality_lab import FunctionFamily, estimate_constant, necessity_probe, poincare_ratio
from .kernel import FracParams, GridFunction
from .truncation import (
    DiscreteMeasureSpace,
    PreconditionError,
    check_measure_lemma,
    random_instance,
    run_truncation_pipeline,
)


class UsageError(Exception):
    pass


def _parse_float(text):
    try:
        return float(text) if text.lower() not in ("inf", "infinity") else math.inf
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _parse_h(text):
    """Accepts ``0.0625`` or ``1/16``."""
    if "/" in text:
        a, b = text.split("/", 1)
        return _parse_float(a) / _parse_float(b)
    return _parse_float(text)


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--domain", help="domain JSON file")
    p.add_argument("--function", help="grid function CSV file")
    p.add_argument("--p", type=_parse_float, default=2.0)
    p.add_argument("--q", type=_parse_float, default=None, help="default: Sobolev conjugate")
    p.add_argument("--delta", type=_parse_float, default=0.5)
    p.add_argument("--tau", type=_parse_float, default=1.0)
    p.add_argument("--h", type=_parse_h, default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="output path prefix (default: standard output)")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--family", default="random_bandlimited")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="fracpoincare",
                                     description="Grid laboratory for fractional Poincare-type inequalities.")
    sub = parser.add_subparsers(dest="group", required=True)

    dom = sub.add_parser("domain", help="build or describe a domain")
    dom.add_argument("action", choices=("build", "info"))
    dom.add_argument("--kind", choices=("unit_square", "slit_square", "rooms_passages", "annulus_test"))
    dom.add_argument("--s", type=_parse_float)
    dom.add_argument("--K", type=int)
    _common(dom)

    sem = sub.add_parser("seminorm", help="full or improved seminorm, or the local density")
    sem.add_argument("action", choices=("full", "improved", "density"))
    sem.add_argument("--refine", type=int, default=1, help="subcell factor for adjacent cells")
    _common(sem)

    rz = sub.add_parser("riesz", help="Riesz potential of a grid function")
    rz.add_argument("--self-term", action="store_true")
    _common(rz)

    pc = sub.add_parser("poincare", help="ratio of one function or estimate over a family")
    pc.add_argument("action", choices=("ratio", "estimate"))
    pc.add_argument("--variant", choices=("full", "improved"), default="improved")
    pc.add_argument("--count", type=int, default=8)
    pc.add_argument("--ascent-steps", type=int, default=20)
    _common(pc)

    tr = sub.add_parser("truncation", help="weak-to-strong chain or the measure lemma",
                        description="Without --domain the seeded random instance is used.")
    tr.add_argument("action", choices=("run", "lemma"))
    _common(tr)

    ne = sub.add_parser("necessity", help="tail-set diagnostics")
    ne.add_argument("action", choices=("probe",))
    ne.add_argument("--omega", type=_parse_float, nargs=2, required=True)
    ne.add_argument("--d", type=_parse_float, required=True)
    ne.add_argument("--b0", type=_parse_float, nargs=3, required=True, metavar=("X", "Y", "R"))
    ne.add_argument("--grid", type=int, default=10)
    _common(ne)

    ex = sub.add_parser("experiment", help="run a named study")
    ex.add_argument("action", choices=("run",))
    _common(ex)
    return parser


def _params(a):
    """Exponents from the flags; a ``--config`` JSON with a ``params`` block overrides them."""
    kw = dict(p=a.p, delta=a.delta, tau=a.tau, q=a.q)
    if a.config:
        try:
            with open(a.config) as fh:
                kw.update(json.load(fh).get("params", {}))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {a.config}: {exc}") from None
    try:
        return FracParams(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _domain(a):
    if a.domain:
        try:
            return io.load_domain(a.domain)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot load domain {a.domain}: {exc}") from None
    raise UsageError("--domain is required")


def _function(a, domain):
    if not a.function:
        raise UsageError("--function is required")
    try:
        return io.load_function(a.function, domain)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load function {a.function}: {exc}") from None


def _emit(a, obj, rows=None, columns=None):
    """JSON to stdout or ``<out>.json``; CSV when asked and rows are given."""
    if a.format == "csv" and rows is not None:
        if a.out:
            io.write_rows(rows, columns, f"{a.out}.csv")
        else:
            import csv

            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([io._cell(r.get(c, "")) for c in columns])
        return
    text = io.dumps(obj)
    if a.out:
        with open(f"{a.out}.json", "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _grid_rows(u):
    return [{"cell_index": int(i), "value": float(v)} for i, v in zip(u.domain.active_index, u.values)]


def cmd_domain(a):
    if a.action == "build":
        if not a.kind or a.h is None:
            raise UsageError("domain build needs --kind and --h")
        d = build_domain(DomainSpec(a.kind, a.h, a.s, a.K))
        text = io.dumps(io.domain_to_dict(d))
        if a.out:
            with open(f"{a.out}.json", "w") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        return 0
    d = _domain(a)
    info = {"kind": d.kind, "h": d.h, "nx": d.nx, "ny": d.ny, "active": d.n_active, "area": d.area,
            "center": list(d.center), "max_dist": float(d.dist.max()), "holes": hole_count(d),
            "blocked_edges": len(d.blocked_edges), "john_constant": john_constant(d)}
    if d.kind == "unit_square":
        info["ahlfors_corner"] = ahlfors_infimum(d, [((d.h / 2, d.h / 2), 1.0)])
    if d.meta:
        info["meta"] = d.meta
    _emit(a, info)
    return 0


def cmd_seminorm(a):
    d = _domain(a)
    u = _function(a, d)
    params = _params(a)
    if a.action == "density":
        g = kernel.local_density(u, params, refine=a.refine)
        rows = _grid_rows(g)
        _emit(a, {"values": rows}, rows, ["cell_index", "value"])
        return 0
    fn = kernel.gagliardo_full if a.action == "full" else kernel.gagliardo_improved
    _emit(a, fn(u, params, refine=a.refine).as_dict())
    return 0


def cmd_riesz(a):
    d = _domain(a)
    f = _function(a, d)
    if not 0 < a.delta < 2:
        raise UsageError("delta must lie in (0, 2)")
    out = kernel.riesz_potential(f, a.delta, self_term=a.self_term)
    rows = _grid_rows(out)
    _emit(a, {"values": rows}, rows, ["cell_index", "value"])
    return 0


def cmd_poincare(a):
    d = _domain(a)
    params = _params(a)
    if a.action == "ratio":
        u = _function(a, d)
        _emit(a, {"ratio": poincare_ratio(u, params, a.variant), "variant": a.variant, "params": params.as_dict()})
        return 0
    try:
        fam = FunctionFamily(a.family, a.count, a.seed)
        if a.family == "custom_list":
            fam.options["values"] = [_function(a, d).values]
        est = estimate_constant(d, params, fam, a.ascent_steps, a.variant, seed=a.seed)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    rows = [{"family_id": i, "ratio": r, "variant": a.variant, "params": json.dumps(params.as_dict())}
            for i, r in enumerate(est.ratios)]
    _emit(a, est.as_dict(), rows, ["family_id", "ratio", "variant", "params"])
    return 0


def cmd_truncation(a):
    params = _params(a)
    if a.domain:
        d = _domain(a)
        u = _function(a, d)
        space = DiscreteMeasureSpace.from_grid_function(u)
    else:
        # no domain: the seeded random instance, with its own exponents
        space, params = random_instance(a.seed)
    if a.action == "lemma":
        w = space.values - space.values.min()
        try:
            res = check_measure_lemma(w, space.weights)
        except PreconditionError as exc:
            print(f"precondition: {exc}", file=sys.stderr)
            return 1
        _emit(a, res.as_dict())
        return 0 if res.passed else 1
    try:
        rep = run_truncation_pipeline(None, None, params, space=space)
    except PreconditionError as exc:
        raise UsageError(str(exc)) from None
    _emit(a, rep.as_dict())
    return 0 if rep.passed else 1


def cmd_necessity(a):
    d = _domain(a)
    params = _params(a)
    try:
        rec = necessity_probe(d, tuple(a.omega), a.d, ((a.b0[0], a.b0[1]), a.b0[2]), params, grid=a.grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cols = ["rho", "r", "ring_r", "ring_rho", "ring_ratio", "poincare_ratio"]
    _emit(a, rec.as_dict(), rec.rows, cols)
    return 0


def cmd_experiment(a):
    if not a.config:
        raise UsageError("experiment run needs --config")
    cfg = ExperimentConfig.load(a.config)
    if a.out:
        cfg.output = a.out
    res = run_experiment(cfg)
    print(io.dumps(res.summary()))
    return 0 if res.passed else 1


COMMANDS = {
    "domain": cmd_domain,
    "seminorm": cmd_seminorm,
    "riesz": cmd_riesz,
    "poincare": cmd_poincare,
    "truncation": cmd_truncation,
    "necessity": cmd_necessity,
    "experiment": cmd_experiment,
}


def main(argv=None):
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if a.threads < 1:
            raise UsageError("--threads must be >= 1")
        kernel.set_threads(a.threads)
        return COMMANDS[a.group](a)
    except (UsageError, ConfigError, ConstructionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
