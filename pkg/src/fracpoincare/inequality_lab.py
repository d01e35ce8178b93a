"""Empirical constants and pointwise checks for fractional Poincare-type bounds."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _jit
from .geometry import ball_cells, john_constant, tail_components
from .kernel import (
    GridFunction,
    ball_offsets,
    full_kernel_table,
    gagliardo_full,
    gagliardo_improved,
    local_density,
    lq_deviation,
    riesz_potential,
    _p_mode,
)
from .truncation import rng

log = logging.getLogger(__name__)

FAMILY_KINDS = ("random_bandlimited", "radial_bumps", "coordinate", "room_indicators", "necessity", "custom_list")
MAX_MODE = 4


def _seminorm(u, params, variant):
    if variant == "full":
        return gagliardo_full(u, params).value
    if variant == "improved":
        return gagliardo_improved(u, params).value
    raise ValueError(f"unknown variant {variant!r}")


def _ratio(lhs, rhs, power):
    if lhs == 0:
        return 0.0
    if rhs == 0:
        return math.inf
    return lhs / rhs**power


def poincare_ratio(u, params, variant="improved"):
    """``sum |u - u_G|^q h^2 / seminorm^(q/p)``; ``inf`` when only the seminorm vanishes."""
    lhs = lq_deviation(u, params.q, "mean")
    if lhs == 0:
        return 0.0
    return _ratio(lhs, _seminorm(u, params, variant), params.q / params.p)


# ---------------------------------------------------------------------------
# function families
# ---------------------------------------------------------------------------


@dataclass
class FunctionFamily:
    """Deterministic list of test functions on a domain.

    ``options`` carries kind-specific settings: ``values`` (custom_list),
    ``omega``/``pairs``/``tail`` (necessity).
    """

    kind: str
    count: int = 8
    seed: int = 1
    smoothing: bool = True
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")

    def members(self, domain):
        """List of ``(member_id, values)`` pairs."""
        fn = globals()[f"_family_{self.kind}"]
        out = fn(domain, self)
        if not out:
            raise ValueError("family is empty")
        return out


def _unit_coords(domain):
    c = domain.centers
    x0, y0, x1, y1 = domain.extent
    return (c[:, 0] - x0) / (x1 - x0), (c[:, 1] - y0) / (y1 - y0)


def bandlimited_coefficients(count, seed):
    """Per-member normal coefficients ``(a, b)`` of shape (count, 9, 9); prefix stable."""
    g = rng(seed)
    n = 2 * MAX_MODE + 1
    return [(g.standard_normal((n, n)), g.standard_normal((n, n))) for _ in range(count)]


def _family_random_bandlimited(domain, fam):
    X, Y = _unit_coords(domain)
    ks = np.arange(-MAX_MODE, MAX_MODE + 1)
    phase = math.pi * (ks[:, None, None] * X[None, None, :] + ks[None, :, None] * Y[None, None, :])
    C, S = np.cos(phase), np.sin(phase)
    out = []
    for m, (a, b) in enumerate(bandlimited_coefficients(fam.count, fam.seed)):
        out.append((m, np.einsum("ij,ijn->n", a, C) + np.einsum("ij,ijn->n", b, S)))
    return out


def _family_radial_bumps(domain, fam):
    X, Y = _unit_coords(domain)
    g = rng(fam.seed)
    out = []
    for m in range(fam.count):
        cx, cy = g.uniform(0.1, 0.9, size=2)
        sigma = g.uniform(0.05, 0.3)
        out.append((m, np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * sigma**2))))
    return out


COORDINATE_FUNCTIONS = (
    lambda x, y: x,
    lambda x, y: y,
    lambda x, y: x + y,
    lambda x, y: x - y,
    lambda x, y: x * y,
    lambda x, y: x * x,
    lambda x, y: y * y,
    lambda x, y: np.hypot(x, y),
)


def _family_coordinate(domain, fam):
    c = domain.centers
    n = min(fam.count, len(COORDINATE_FUNCTIONS))
    return [(m, COORDINATE_FUNCTIONS[m](c[:, 0], c[:, 1]).astype(float)) for m in range(n)]


def room_indicator(domain, j, smoothing=True):
    """1 on rooms ``>= j``, 0 on rooms ``< j``, ramped along passage ``j``."""
    if domain.kind != "rooms_passages":
        raise ValueError("room indicators need a rooms_passages domain")
    grid = np.zeros(domain.mask.shape)
    rooms = domain.meta["rooms"]
    passages = domain.meta["passages"]
    for k, (r0, r1, c0, c1) in enumerate(rooms):
        if k >= j:
            grid[r0:r1, c0:c1] = 1.0
    for k, (r0, r1, c0, c1) in enumerate(passages, start=1):
        if k > j:
            grid[r0:r1, c0:c1] = 1.0
        elif k == j:
            t = (np.arange(r0, r1) - r0 + 0.5) / (r1 - r0)
            if not smoothing:
                t = (t > 0.5).astype(float)
            grid[r0:r1, c0:c1] = t[:, None]
    return grid[domain.mask]


def _family_room_indicators(domain, fam):
    if domain.kind != "rooms_passages":
        raise ValueError("room indicators need a rooms_passages domain")
    K = domain.meta["K"]
    return [(j, room_indicator(domain, j, fam.smoothing)) for j in range(1, K + 1)][: fam.count]


def necessity_function(domain, tail, omega, rho, r):
    """1 on ``T(r)``, ``(|x - omega| - rho)/(r - rho)`` on ``T(rho) \\ T(r)``, 0 elsewhere."""
    if not rho < r:
        raise ValueError("need rho < r")
    grid = np.zeros(domain.ny * domain.nx)
    cells = tail.cells
    i, j = np.divmod(cells, domain.nx)
    px = domain.origin[0] + (j + 0.5) * domain.h
    py = domain.origin[1] + (i + 0.5) * domain.h
    dist = np.hypot(px - omega[0], py - omega[1])
    val = np.where(dist >= r, 1.0, np.where(dist >= rho, np.maximum(dist - rho, 0.0) / (r - rho), 0.0))
    grid[cells] = val
    return grid[domain.active_index]


def _family_necessity(domain, fam):
    tail = fam.options["tail"]
    omega = fam.options["omega"]
    return [(m, necessity_function(domain, tail, omega, rho, r)) for m, (rho, r) in enumerate(fam.options["pairs"])]


def _family_custom_list(domain, fam):
    return [(m, np.asarray(v, float)) for m, v in enumerate(fam.options["values"])]


# ---------------------------------------------------------------------------
# constant estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantEstimate:
    value: float
    argmax_id: object
    ascent_gain: float
    ratios: tuple = ()

    def as_dict(self):
        return {"value": self.value, "argmax_id": self.argmax_id, "ascent_gain": self.ascent_gain,
                "ratios": list(self.ratios)}


class _IncrementalSeminorm:
    """Seminorm of a grid function under single-cell updates."""

    def __init__(self, u, params, variant):
        dom = u.domain
        self.U = u.grid()
        self.M = dom.mask
        self.mode = _p_mode(params.p)
        self.p = float(params.p)
        self.full = variant == "full" or math.isinf(params.tau)
        if self.full:
            self.Kt = full_kernel_table(self.M.shape, dom.h, params)
            self.value = gagliardo_full(u, params).value
        else:
            self.R = np.zeros(self.M.shape)
            self.R[self.M] = params.tau * dom.active_dist
            self.off = ball_offsets(dom.h, float(self.R.max()), params.exponent, limit=self.M.shape)
            self.scale = dom.h**params.n
            self.value = gagliardo_improved(u, params).value

    def contrib(self, i, j, val):
        if self.full:
            return _jit.full_cell_contrib(self.U, self.M, self.Kt, i, j, val, self.mode, self.p)
        odi, odj, orad, okern = self.off
        return self.scale * _jit.ball_cell_contrib(self.U, self.M, self.R, i, j, val, odi, odj, orad, okern,
                                                   self.mode, self.p)


def _local_range(grid, mask, i, j):
    sl = (slice(max(i - 1, 0), i + 2), slice(max(j - 1, 0), j + 2))
    vals = grid[sl][mask[sl]]
    return float(vals.max() - vals.min())


def ascend(u, params, variant="improved", steps=20, batch=32, seed=0):
    """Greedy single-cell perturbation ascent of the Poincare ratio.

    Each round tries ``+-0.1 x`` (local 3x3 value range) on ``batch``
    seeded cells and keeps only improvements.  Returns the final function.
    """
    dom = u.domain
    state = _IncrementalSeminorm(u, params, variant)
    vals = u.values.copy()
    w = u.weights
    q = params.q
    power = q / params.p
    ai, aj = dom.active_ij
    flat_pos = np.full(dom.mask.shape, -1, dtype=np.int64)
    flat_pos[dom.mask] = np.arange(vals.size)

    def lhs_of(v):
        return float(np.dot(w, np.abs(v - np.dot(w, v) / w.sum()) ** q))

    lhs = lhs_of(vals)
    best = _ratio(lhs, state.value, power)
    if math.isinf(best) or vals.size < 2:
        return u
    global_range = float(vals.max() - vals.min())
    g = rng(seed)
    for _ in range(steps):
        for a in g.choice(vals.size, size=min(batch, vals.size), replace=False):
            i, j = int(ai[a]), int(aj[a])
            old = vals[a]
            step = 0.1 * (_local_range(state.U, state.M, i, j) or global_range)
            if step == 0:
                continue
            c_old = state.contrib(i, j, old)
            for new in (old + step, old - step):
                trial = state.value - c_old + state.contrib(i, j, new)
                vals[a] = new
                t_lhs = lhs_of(vals)
                r = _ratio(t_lhs, max(trial, 0.0), power)
                if r > best:
                    best = r
                    state.U[i, j] = new
                    state.value = trial
                    break
                vals[a] = old
    return GridFunction(dom, vals)


def estimate_constant(domain, params, family, ascent_steps=20, variant="improved", batch=32, seed=0):
    """Largest Poincare ratio over the family, then greedy ascent from the best member.

    The result is a lower bound on the best constant.
    """
    members = family.members(domain)
    ratios = []
    for mid, v in members:
        ratios.append(poincare_ratio(GridFunction(domain, v), params, variant))
    k = int(np.argmax(ratios))
    base = ratios[k]
    value = base
    if ascent_steps > 0 and 0 < base < math.inf:
        u = ascend(GridFunction(domain, members[k][1]), params, variant, ascent_steps, batch, seed)
        value = max(base, poincare_ratio(u, params, variant))
    gain = value / base - 1.0 if 0 < base < math.inf else 0.0
    return ConstantEstimate(value, members[k][0], gain, tuple(ratios))


# ---------------------------------------------------------------------------
# pointwise representation and weak-type Riesz bound
# ---------------------------------------------------------------------------


def representation_constant(u, params, M=None, c=None):
    """Smallest ``C`` with ``|u(x) - u_B0| <= C I_delta(g)(x)`` at every cell.

    ``B0`` is the open ball about the domain centre of radius
    ``dist(x0)/(M c)``; ``g`` is :func:`local_density`.
    """
    dom = u.domain
    tau = params.tau
    M = 9.0 / tau if M is None else float(M)
    if not M > 8.0 / tau:
        raise ValueError("M must exceed 8/tau")
    if c is None:
        c = john_constant(dom)
    ci, cj = dom.center_cell
    radius = dom.dist[ci, cj] / (M * c)
    ref = ball_cells(dom, dom.center, radius)
    if ref.size == 0:
        raise ValueError("the reference ball holds no cell centre; refine the grid")
    pos = np.searchsorted(dom.active_index, ref)
    u_b0 = float(np.mean(u.values[pos]))
    num = np.abs(u.values - u_b0)
    if not num.any():
        return 0.0
    g = local_density(u, params)
    pot = riesz_potential(g, params.delta).values
    if (num[pot <= 0] > 0).any():
        return math.inf
    ok = pot > 0
    return float((num[ok] / pot[ok]).max())


def riesz_weak_ratio(f, delta):
    """``max_v |{I f >= v}| v^(n/(n-delta)) / (sum f h^2)^(n/(n-delta))``."""
    dom = f.domain
    mass = math.fsum(f.values * dom.h**2)
    if mass == 0:
        return 0.0
    e = 2.0 / (2.0 - delta)
    pot = np.abs(riesz_potential(f, delta).values)
    vals, counts = np.unique(pot, return_counts=True)
    at_least = np.cumsum(counts[::-1])[::-1] * dom.h**2
    return float((at_least * vals**e).max() / mass**e)


def comparability_ratio(u, params):
    """Full over improved seminorm; ``0/0`` is reported as 1."""
    full = gagliardo_full(u, params).value
    imp = gagliardo_improved(u, params).value
    if full == 0 and imp == 0:
        log.info("comparability ratio of a constant function: 0/0 reported as 1")
        return 1.0
    if imp == 0:
        return math.inf
    return full / imp


# ---------------------------------------------------------------------------
# necessity diagnostics
# ---------------------------------------------------------------------------


@dataclass
class NecessityRecord:
    omega: tuple
    d: float
    tail_measure: float
    tail_diameter: float
    empty: bool
    rows: list = field(default_factory=list)
    sweep: list = field(default_factory=list)
    fitted_diameter_constant: float = 0.0
    fitted_measure_constant: float = 0.0

    @property
    def postponed_spread(self):
        """max/min of the ring ratio over the probed (rho, r) pairs."""
        vals = [r["ring_ratio"] for r in self.rows]
        if not vals:
            return 1.0
        return max(vals) / min(vals) if min(vals) > 0 else math.inf

    def as_dict(self):
        return {
            "omega": list(self.omega), "d": self.d, "tail_measure": self.tail_measure,
            "tail_diameter": self.tail_diameter, "empty": self.empty, "rows": self.rows,
            "sweep": self.sweep, "fitted_diameter_constant": self.fitted_diameter_constant,
            "fitted_measure_constant": self.fitted_measure_constant,
            "postponed_spread": self.postponed_spread,
        }


def tail_fit(tail, d, params):
    """The two constants that make the tail-size inequalities hold at this ``d``."""
    p, q, delta, n = params.p, params.q, params.delta, params.n
    c_diam = tail.diameter / (d + tail.measure ** ((1 / p - 1 / q) / delta))
    c_meas = tail.measure ** (1 / n) / (d + d ** ((n - delta * p) * q / (n * p)))
    return c_diam, c_meas


def necessity_probe(domain, omega, d, b0, params, grid=10, d_sweep=None, with_poincare=True):
    """Tail set diagnostics for the removed ball ``B(omega, d)``.

    For a ``grid x grid`` set of radii ``d <= rho < r`` (pairs with an
    empty ``T(rho)`` or ``T(r)`` skipped) records the ring ratio
    ``|T(r)|^(p/q) (r - rho)^(delta p) / |T(rho)|`` and the Poincare ratio of
    the ramp function; over ``d_sweep`` fits the two tail-size constants.
    """
    tail = tail_components(domain, omega, d, b0)
    rec = NecessityRecord(tuple(omega), float(d), tail.measure, tail.diameter, tail.empty)
    p, q, delta = params.p, params.q, params.delta
    if not tail.empty:
        top = float(tail.radii[-1])
        radii = d + (top - d) * np.arange(grid + 1) / grid
        for rho in radii[:-1]:
            for r in radii[1:]:
                if not rho < r:
                    continue
                t_rho, t_r = tail.ring(rho), tail.ring(r)
                if t_rho == 0 or t_r == 0:
                    continue
                row = {"rho": float(rho), "r": float(r), "ring_r": t_r, "ring_rho": t_rho,
                       "ring_ratio": t_r ** (p / q) * (r - rho) ** (delta * p) / t_rho}
                if with_poincare:
                    u = GridFunction(domain, necessity_function(domain, tail, omega, rho, r))
                    row["poincare_ratio"] = poincare_ratio(u, params)
                rec.rows.append(row)
    if d_sweep is None:
        d_sweep = [d]
    for dd in d_sweep:
        t = tail if dd == d else tail_components(domain, omega, dd, b0)
        c_diam, c_meas = tail_fit(t, dd, params)
        rec.sweep.append({"d": float(dd), "measure": t.measure, "diameter": t.diameter,
                          "c_diameter": c_diam, "c_measure": c_meas})
    rec.fitted_diameter_constant = max(s["c_diameter"] for s in rec.sweep)
    rec.fitted_measure_constant = max(s["c_measure"] for s in rec.sweep)
    return rec
