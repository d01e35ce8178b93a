"""Named refinement studies with CSV output and a pass/fail verdict.

Every study writes ``<output>.csv`` (one row per level and member or probe)
and ``<output>_summary.json`` (the checks behind the verdict).  Neither file
holds timings, so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import io
from .geometry import ConstructionError, DomainSpec, admissible_h, build_domain, john_constant
from .inequality_lab import (
    FunctionFamily,
    comparability_ratio,
    estimate_constant,
    necessity_probe,
    representation_constant,
    riesz_weak_ratio,
)
from .kernel import FracParams, GridFunction, gagliardo_full, gagliardo_improved
from .truncation import instance_seeds, random_instance, run_truncation_pipeline

log = logging.getLogger(__name__)

EXPERIMENTS = ("slit_divergence", "lipschitz_comparability", "rooms_blowup", "john_stability",
               "truncation_equivalence", "riesz_checks", "necessity_scan")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


DEFAULTS = {
    "slit_divergence": dict(h_list=[1 / 16, 1 / 32, 1 / 64, 1 / 128], params=dict(p=2, delta=0.5, tau=1.0),
                            thresholds=dict(increment_factor=2.0, improved_change=0.05)),
    "lipschitz_comparability": dict(h_list=[1 / 64, 1 / 128], params=dict(p=2, delta=0.5, tau=1.0),
                                    family=dict(kind="random_bandlimited", count=32),
                                    thresholds=dict(drift=0.10)),
    "rooms_blowup": dict(params=dict(p=2, delta=0.5, tau=0.5, q=1.0), s=2.0, K_list=[4, 6, 8],
                         ascent_steps=20, thresholds=dict(blowup_factor=2.0)),
    "john_stability": dict(h_list=[1 / 64, 1 / 128], params=dict(p=1, delta=0.5, tau=0.5, q=4 / 3),
                           family=dict(kind="random_bandlimited", count=32),
                           riesz_family=dict(kind="radial_bumps", count=16),
                           ascent_steps=20,
                           thresholds=dict(estimate_drift=0.15, representation_drift=0.20, riesz_drift=0.20)),
    "truncation_equivalence": dict(count=200, max_points=64, params=dict(p=1, delta=0.5, tau=1.0)),
    "riesz_checks": dict(h_list=[1 / 32, 1 / 64], params=dict(p=1, delta=0.5, tau=0.5), riesz_delta=1.0,
                         family=dict(kind="random_bandlimited", count=8),
                         thresholds=dict(drift=0.20, homogeneity=1e-9)),
    "necessity_scan": dict(params=dict(p=2, delta=0.5, tau=1.0), s=2.0, K=4, grid=10,
                           square_h=1 / 64, square_d=[0.1, 0.2, 0.3, 0.4], thresholds=dict(max_spread=1e6)),
}


@dataclass
class ExperimentConfig:
    name: str
    h_list: list = field(default_factory=list)
    params: FracParams = None
    seed: int = 1
    output: str = "results/experiment"
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        name = d.pop("name", None)
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
        base = json.loads(json.dumps(DEFAULTS[name]))
        for k, v in d.items():
            if isinstance(v, dict) and isinstance(base.get(k), dict):
                base[k].update(v)
            else:
                base[k] = v
        h_list = [float(h) for h in base.pop("h_list", [])]
        if any(b >= a for a, b in zip(h_list, h_list[1:])):
            raise ConfigError("h_list must be strictly decreasing")
        try:
            params = FracParams(**base.pop("params"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        seed = int(base.pop("seed", 1))
        output = str(base.pop("output", f"results/{name}"))
        return cls(name, h_list, params, seed, output, base)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def threshold(self, key):
        return float(self.options["thresholds"][key])


@dataclass
class ExperimentResult:
    name: str
    columns: list
    rows: list
    checks: dict
    passed: bool

    def summary(self):
        return {"experiment": self.name, "pass": self.passed, "checks": self.checks}


def drift(a, b):
    """Relative change from the coarser value ``a`` to the finer ``b``."""
    if a == b:
        return 0.0
    if a == 0 or not (math.isfinite(a) and math.isfinite(b)):
        return math.inf
    return abs(b - a) / abs(a)


def _family(cfg, key="family"):
    f = cfg.options[key]
    return FunctionFamily(f["kind"], int(f["count"]), int(f.get("seed", cfg.seed)), bool(f.get("smoothing", True)))


def slit_function(domain):
    """``x1`` on the open upper-right quadrant, 0 elsewhere."""
    return GridFunction.from_callable(domain, lambda x, y: np.where((x > 0) & (y > 0), x, 0.0))


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def _slit_divergence(cfg):
    rows = []
    for h in cfg.h_list:
        d = build_domain(DomainSpec("slit_square", h))
        u = slit_function(d)
        full = gagliardo_full(u, cfg.params)
        imp = gagliardo_improved(u, cfg.params)
        rows.append(dict(experiment=cfg.name, h=h, full=full.value, improved=imp.value,
                         ratio=full.value / imp.value if imp.value else math.inf,
                         full_pairs=full.pairs_evaluated, improved_pairs=imp.pairs_evaluated))
    full = [r["full"] for r in rows]
    inc = [b - a for a, b in zip(full, full[1:])]
    increasing = all(x > 0 for x in inc)
    spread = max(inc) / min(inc) if inc and min(inc) > 0 else math.inf
    change = drift(rows[-2]["improved"], rows[-1]["improved"]) if len(rows) > 1 else math.inf
    for r, i in zip(rows[1:], inc):
        r["full_increment"] = i
    checks = {
        "full_strictly_increasing": increasing,
        "increment_spread": spread,
        "increments_within_factor": spread <= cfg.threshold("increment_factor"),
        "improved_change_finest": change,
        "improved_converging": change < cfg.threshold("improved_change"),
    }
    passed = checks["full_strictly_increasing"] and checks["increments_within_factor"] and checks["improved_converging"]
    cols = ["experiment", "h", "full", "improved", "ratio", "full_increment", "full_pairs", "improved_pairs"]
    return cols, rows, checks, passed


def _lipschitz_comparability(cfg):
    fam = _family(cfg)
    rows, best = [], []
    for h in cfg.h_list:
        d = build_domain(DomainSpec("unit_square", h))
        ratios = []
        for mid, v in fam.members(d):
            r = comparability_ratio(GridFunction(d, v), cfg.params)
            ratios.append(r)
            rows.append(dict(experiment=cfg.name, h=h, member=mid, ratio=r))
        best.append(max(ratios))
    dr = drift(best[-2], best[-1]) if len(best) > 1 else math.inf
    checks = {"max_ratio": best, "drift": dr, "stable": dr < cfg.threshold("drift")}
    return ["experiment", "h", "member", "ratio"], rows, checks, checks["stable"]


def _rooms_blowup(cfg):
    s = float(cfg.options["s"])
    rows, est = [], []
    max_cells = int(cfg.options.get("max_cells", 4_000_000))
    fam_smooth = bool(cfg.options.get("smoothing", True))
    for K in cfg.options["K_list"]:
        # per-K lattice override, e.g. {"h": {"4": 0.00390625}}
        h = float(cfg.options.get("h", {}).get(str(K), admissible_h(s, K)))
        try:
            d = build_domain(DomainSpec("rooms_passages", h, s=s, K=int(K)), max_cells=max_cells)
        except ConstructionError as exc:
            rows.append(dict(experiment=cfg.name, K=K, h=h, s=s, error=str(exc)))
            est.append(math.nan)
            continue
        fam = FunctionFamily("room_indicators", int(K), cfg.seed, fam_smooth)
        e = estimate_constant(d, cfg.params, fam, int(cfg.options["ascent_steps"]), seed=cfg.seed)
        for (mid, _), r in zip(fam.members(d), e.ratios):
            rows.append(dict(experiment=cfg.name, K=K, h=h, s=s, member=mid, ratio=r))
        rows.append(dict(experiment=cfg.name, K=K, h=h, s=s, member="estimate", ratio=e.value,
                         argmax=e.argmax_id, ascent_gain=e.ascent_gain))
        est.append(e.value)
    ok = not any(math.isnan(x) for x in est)
    monotone = ok and all(b > a for a, b in zip(est, est[1:]))
    factor = est[-1] / est[0] if ok and est[0] > 0 else math.nan
    checks = {"estimates": est, "all_levels_built": ok, "monotone": monotone, "blowup": factor,
              "blowup_ok": ok and factor >= cfg.threshold("blowup_factor")}
    return (["experiment", "K", "h", "s", "member", "ratio", "argmax", "ascent_gain", "error"], rows, checks,
            monotone and checks["blowup_ok"])


def _john_stability(cfg):
    fam = _family(cfg)
    rfam = _family(cfg, "riesz_family")
    rows = []
    est, rep, rz = [], [], []
    for h in cfg.h_list:
        d = build_domain(DomainSpec("unit_square", h))
        e = estimate_constant(d, cfg.params, fam, int(cfg.options["ascent_steps"]), seed=cfg.seed)
        for mid, r in enumerate(e.ratios):
            rows.append(dict(experiment=cfg.name, h=h, quantity="poincare_ratio", member=mid, value=r))
        rows.append(dict(experiment=cfg.name, h=h, quantity="estimate", member=e.argmax_id, value=e.value))
        est.append(e.value)
        c = john_constant(d)
        rows.append(dict(experiment=cfg.name, h=h, quantity="john_constant", member="", value=c))
        reps = []
        for mid, v in fam.members(d):
            r = representation_constant(GridFunction(d, v), cfg.params, c=c)
            reps.append(r)
            rows.append(dict(experiment=cfg.name, h=h, quantity="representation", member=mid, value=r))
        rep.append(max(reps))
        rzs = []
        for mid, v in rfam.members(d):
            r = riesz_weak_ratio(GridFunction(d, v), cfg.params.delta)
            rzs.append(r)
            rows.append(dict(experiment=cfg.name, h=h, quantity="riesz_weak", member=mid, value=r))
        rz.append(max(rzs))
    d1, d2, d3 = (drift(x[-2], x[-1]) if len(x) > 1 else math.inf for x in (est, rep, rz))
    checks = {
        "estimate": est, "estimate_drift": d1, "estimate_stable": d1 < cfg.threshold("estimate_drift"),
        "representation": rep, "representation_drift": d2,
        "representation_stable": d2 < cfg.threshold("representation_drift"),
        "riesz": rz, "riesz_drift": d3, "riesz_stable": d3 < cfg.threshold("riesz_drift"),
    }
    passed = checks["estimate_stable"] and checks["representation_stable"] and checks["riesz_stable"]
    return ["experiment", "h", "quantity", "member", "value"], rows, checks, passed


def _truncation_equivalence(cfg):
    rows = []
    n_fail = n_remark = n_vac = 0
    for s in instance_seeds(cfg.seed, int(cfg.options["count"])):
        space, params = random_instance(s, int(cfg.options["max_points"]))
        rep = run_truncation_pipeline(None, None, params, space=space)
        mean_step = next(st for st in rep.steps if st.name == "mean_vs_inf")
        n_fail += not rep.passed
        n_remark += not mean_step.passed
        n_vac += rep.vacuous
        rows.append(dict(experiment=cfg.name, seed=s, points=space.values.size, p=params.p, q=params.q,
                         delta=params.delta, tau=params.tau, b=rep.b, weak_constant=rep.weak_constant,
                         composed_constant=rep.composed_constant, final_strong=rep.final_strong,
                         final_rhs=rep.final_rhs, mean_deviation=mean_step.lhs, steps=len(rep.steps),
                         failed_steps=";".join(f.name for f in rep.failures), vacuous=rep.vacuous,
                         remark_pass=mean_step.passed, **{"pass": rep.passed}))
    checks = {"instances": len(rows), "failures": n_fail, "mean_vs_inf_failures": n_remark,
              "vacuous": n_vac}
    cols = ["experiment", "seed", "points", "p", "q", "delta", "tau", "b", "weak_constant", "composed_constant",
            "final_strong", "final_rhs", "mean_deviation", "steps", "failed_steps", "vacuous", "remark_pass", "pass"]
    return cols, rows, checks, n_fail == 0 and n_remark == 0


def _riesz_checks(cfg):
    rows = []
    dl = float(cfg.options["riesz_delta"])
    single, homog, reps = [], [], []
    fam = _family(cfg)
    for h in cfg.h_list:
        d = build_domain(DomainSpec("unit_square", h))
        f = np.zeros(d.n_active)
        f[np.searchsorted(d.active_index, d.center_cell[0] * d.nx + d.center_cell[1])] = 1.0
        r1 = riesz_weak_ratio(GridFunction(d, f), dl)
        r2 = riesz_weak_ratio(GridFunction(d, 2 * f), dl)
        single.append(r1)
        homog.append(abs(r2 - r1) / r1)
        rows.append(dict(experiment=cfg.name, h=h, check="single_cell", member="", value=r1))
        rows.append(dict(experiment=cfg.name, h=h, check="homogeneity_error", member="", value=homog[-1]))
        c = john_constant(d)
        vals = []
        for mid, v in fam.members(d):
            r = representation_constant(GridFunction(d, v), cfg.params, c=c)
            vals.append(r)
            rows.append(dict(experiment=cfg.name, h=h, check="representation", member=mid, value=r))
        reps.append(max(vals))
    dr = drift(single[-2], single[-1]) if len(single) > 1 else math.inf
    checks = {"single_cell": single, "single_cell_drift": dr, "single_cell_stable": dr < cfg.threshold("drift"),
              "homogeneity_error": max(homog), "homogeneous": max(homog) <= cfg.threshold("homogeneity"),
              "representation": reps, "representation_finite": all(math.isfinite(x) for x in reps)}
    passed = checks["single_cell_stable"] and checks["homogeneous"] and checks["representation_finite"]
    return ["experiment", "h", "check", "member", "value"], rows, checks, passed


def tower_probe_setup(domain):
    """Centre of passage 1, its width as ``d`` and a reference ball in room 0."""
    r0, r1, c0, c1 = domain.meta["passages"][0]
    h = domain.h
    omega = (domain.origin[0] + 0.5 * (c0 + c1) * h, domain.origin[1] + 0.5 * (r0 + r1) * h)
    d = domain.meta["passage_widths_rounded"][0]
    return omega, d, ((0.5, 0.5), 0.25)


def _necessity_scan(cfg):
    rows = []
    s, K = float(cfg.options["s"]), int(cfg.options["K"])
    h = float(cfg.options.get("h", admissible_h(s, K)))
    grid = int(cfg.options["grid"])
    p = cfg.params
    checks = {}
    try:
        d = build_domain(DomainSpec("rooms_passages", h, s=s, K=K),
                         max_cells=int(cfg.options.get("max_cells", 4_000_000)))
    except ConstructionError as exc:
        rows.append(dict(experiment=cfg.name, domain="rooms_passages", error=str(exc)))
        checks["tower_built"] = False
        tower_ok = False
    else:
        omega, dd, b0 = tower_probe_setup(d)
        sweep = [dd * 2.0**k for k in range(6) if dd * 2.0**k < 0.5]
        rec = necessity_probe(d, omega, dd, b0, p, grid=grid, d_sweep=sweep)
        for r in rec.rows:
            rows.append(dict(experiment=cfg.name, domain="rooms_passages", d=dd, **r))
        for r in rec.sweep:
            rows.append(dict(experiment=cfg.name, domain="rooms_passages", **r))
        spread = rec.postponed_spread
        checks.update(tower_built=True, tail_measure=rec.tail_measure, postponed_spread=spread,
                      fitted_diameter_constant=rec.fitted_diameter_constant,
                      fitted_measure_constant=rec.fitted_measure_constant)
        tower_ok = (bool(rec.rows) and spread <= cfg.threshold("max_spread")
                    and math.isfinite(rec.fitted_diameter_constant) and math.isfinite(rec.fitted_measure_constant))
    sq = build_domain(DomainSpec("unit_square", float(cfg.options["square_h"])))
    empty = True
    for dd in cfg.options["square_d"]:
        rec = necessity_probe(sq, (0.5, 0.5), float(dd), ((0.1, 0.1), 0.05), p, grid=grid)
        empty &= rec.empty
        rows.append(dict(experiment=cfg.name, domain="unit_square", d=float(dd), measure=rec.tail_measure,
                         diameter=rec.tail_diameter, c_diameter=rec.fitted_diameter_constant,
                         c_measure=rec.fitted_measure_constant))
    checks["square_tail_empty"] = bool(empty)
    cols = ["experiment", "domain", "d", "rho", "r", "ring_r", "ring_rho", "ring_ratio", "poincare_ratio",
            "measure", "diameter", "c_diameter", "c_measure", "error"]
    return cols, rows, checks, tower_ok and empty


_RUNNERS = {
    "slit_divergence": _slit_divergence,
    "lipschitz_comparability": _lipschitz_comparability,
    "rooms_blowup": _rooms_blowup,
    "john_stability": _john_stability,
    "truncation_equivalence": _truncation_equivalence,
    "riesz_checks": _riesz_checks,
    "necessity_scan": _necessity_scan,
}


def run_experiment(cfg, write=True):
    """Run the named study; writes ``<output>.csv`` and ``<output>_summary.json``."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_dict(cfg)
    cols, rows, checks, passed = _RUNNERS[cfg.name](cfg)
    res = ExperimentResult(cfg.name, cols, rows, checks, bool(passed))
    if write:
        io.write_rows(rows, cols, f"{cfg.output}.csv")
        with open(f"{cfg.output}_summary.json", "w") as fh:
            fh.write(io.dumps(res.summary()) + "\n")
    log.info("%s: %s", cfg.name, "pass" if passed else "fail")
    return res
