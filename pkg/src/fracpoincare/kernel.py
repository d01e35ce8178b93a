"""Nonlocal functionals of piecewise-constant grid functions.

Quadrature is the midpoint rule on cell centres with same-cell pairs left
out.  Pair sums are split into fixed blocks that may run on a thread pool
(``set_threads``) and are reduced in block order, so every result is
bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.signal import fftconvolve

from . import _jit

log = logging.getLogger(__name__)

_THREADS = 1
CELL_BLOCK = 2048
WEAK_EXACT_MAX = 96


def set_threads(n):
    """Worker count for blocked pair sums (results do not depend on it)."""
    global _THREADS
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _THREADS = n


def get_threads():
    return _THREADS


def _map_blocks(fn, blocks):
    blocks = list(blocks)
    if _THREADS == 1 or len(blocks) < 2:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=_THREADS) as pool:
        return list(pool.map(fn, blocks))


@dataclass(frozen=True)
class FracParams:
    """Exponents ``(p, q, delta, tau)`` in dimension ``n``.

    ``q=None`` selects the Sobolev conjugate ``np/(n - delta p)``;
    ``tau=math.inf`` means the whole domain.
    """

    p: float = 2.0
    delta: float = 0.5
    tau: float = 1.0
    q: float | None = None
    n: int = 2

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not (self.tau == math.inf or 0 < self.tau <= 1):
            raise ValueError(f"tau must lie in (0, 1] or be inf, got {self.tau}")
        if self.q is None:
            object.__setattr__(self, "q", self.q_star)
        elif not self.q > 0:
            raise ValueError(f"q must be positive, got {self.q}")

    @property
    def q_star(self):
        if self.delta * self.p >= self.n:
            raise ValueError("Sobolev conjugate needs delta * p < n")
        return self.n * self.p / (self.n - self.delta * self.p)

    @property
    def exponent(self):
        """Kernel exponent ``n + delta p``."""
        return self.n + self.delta * self.p

    def replace(self, **kw):
        d = dict(p=self.p, delta=self.delta, tau=self.tau, q=self.q, n=self.n)
        d.update(kw)
        return FracParams(**d)

    def as_dict(self):
        return dict(p=self.p, q=self.q, delta=self.delta, tau=self.tau, n=self.n)


@dataclass(eq=False)
class GridFunction:
    """One value per active cell of ``domain`` (row-major order)."""

    domain: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.shape != (self.domain.n_active,):
            raise ValueError(f"expected {self.domain.n_active} values, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("function values must be finite")

    @classmethod
    def from_callable(cls, domain, f):
        c = domain.centers
        return cls(domain, np.asarray(f(c[:, 0], c[:, 1]), float) * np.ones(len(c)))

    @classmethod
    def constant(cls, domain, value=1.0):
        return cls(domain, np.full(domain.n_active, float(value)))

    def grid(self, fill=0.0):
        """Values on the full (ny, nx) lattice, ``fill`` off the domain."""
        out = np.full(self.domain.mask.shape, fill, dtype=float)
        out[self.domain.mask] = self.values
        return out

    @property
    def weights(self):
        return np.full(self.values.shape, self.domain.h**2)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class FunctionalValue:
    value: float
    pairs_evaluated: int
    elapsed: float

    def as_dict(self):
        return {"value": self.value, "pairs": self.pairs_evaluated, "seconds": self.elapsed}


def _p_mode(p):
    return 1 if p == 1 else 2 if p == 2 else 0


# ---------------------------------------------------------------------------
# kernel tables
# ---------------------------------------------------------------------------


def _adjacent_kernel(h, exponent, refine):
    """Average of ``|x - y|^-exponent`` over ``refine^2`` subcells of two
    cells at offsets (0, 1) and (1, 1); returned as a 2x2 table indexed by
    ``(|di|, |dj|)`` (centre entry unused)."""
    s = (np.arange(refine) + 0.5) / refine - 0.5
    X, Y = np.meshgrid(s, s)
    pts = np.column_stack([X.ravel(), Y.ravel()]) * h
    out = np.zeros((2, 2))
    for di in (0, 1):
        for dj in (0, 1):
            if di == dj == 0:
                continue
            d = pts[:, None, :] - pts[None, :, :] + np.array([dj * h, di * h])
            out[di, dj] = np.mean(np.hypot(d[..., 0], d[..., 1]) ** -exponent)
    return out


def full_kernel_table(shape, h, params, refine=1):
    """``h^{2n} |o h|^{-(n + delta p)}`` on offsets ``(ny-1+di, nx-1+dj)``."""
    ny, nx = shape
    di = np.arange(-(ny - 1), ny)[:, None]
    dj = np.arange(-(nx - 1), nx)[None, :]
    r = h * np.sqrt(di * di + dj * dj)
    with np.errstate(divide="ignore"):
        Kt = h ** (2 * params.n) * r ** -params.exponent
    Kt[ny - 1, nx - 1] = 0.0
    if refine > 1:
        adj = _adjacent_kernel(h, params.exponent, refine)
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                if (a or b) and abs(a) < ny and abs(b) < nx:
                    Kt[ny - 1 + a, nx - 1 + b] = h ** (2 * params.n) * adj[abs(a), abs(b)]
    return np.ascontiguousarray(Kt)


def ball_offsets(h, max_radius, exponent, n=2, refine=1, limit=None):
    """Offsets with ``|o| h < max_radius`` sorted by (length, di, dj).

    Returns ``(di, dj, length, kern)`` where ``length = h |o|`` and
    ``kern = h^n |o h|^-exponent``.  ``limit`` caps the offset box at the
    lattice extents ``(ny, nx)``.
    """
    if math.isinf(max_radius):
        if limit is None:
            raise ValueError("unbounded radius needs a lattice limit")
        ri, rj = limit[0] - 1, limit[1] - 1
    else:
        m = int(math.ceil(max_radius / h)) + 1
        ri = rj = m
        if limit is not None:
            ri, rj = min(ri, limit[0] - 1), min(rj, limit[1] - 1)
    di, dj = np.meshgrid(np.arange(-ri, ri + 1), np.arange(-rj, rj + 1), indexing="ij")
    di, dj = di.ravel(), dj.ravel()
    keep = (di != 0) | (dj != 0)
    di, dj = di[keep], dj[keep]
    length = h * np.sqrt(di * di + dj * dj)
    keep = length < max_radius
    di, dj, length = di[keep], dj[keep], length[keep]
    order = np.lexsort((dj, di, length))
    di, dj, length = di[order], dj[order], length[order]
    kern = h**n * length**-exponent
    if refine > 1:
        adj = _adjacent_kernel(h, exponent, refine)
        near = (np.abs(di) <= 1) & (np.abs(dj) <= 1)
        kern[near] = h**n * adj[np.abs(di[near]), np.abs(dj[near])]
    return (np.ascontiguousarray(di, dtype=np.int64), np.ascontiguousarray(dj, dtype=np.int64),
            np.ascontiguousarray(length), np.ascontiguousarray(kern))


# ---------------------------------------------------------------------------
# seminorms
# ---------------------------------------------------------------------------


def gagliardo_full(u, params, refine=1):
    """Full double sum over ordered pairs of distinct active cells."""
    t0 = time.perf_counter()
    dom = u.domain
    U = u.grid()
    M = dom.mask
    Kt = full_kernel_table(M.shape, dom.h, params, refine)
    ny, nx = M.shape
    mode = _p_mode(params.p)
    p = float(params.p)

    def block(di):
        return _jit.full_offset_row(U, M, di, Kt[ny - 1 + di], mode, p)

    parts = _map_blocks(block, range(ny))
    total = 2.0 * math.fsum([x for s, c, _ in parts for x in (s, c)])
    pairs = 2 * sum(k for _, _, k in parts)
    return FunctionalValue(total, pairs, time.perf_counter() - t0)


def _ball_sums(u, radius, exponent, p, refine=1):
    """Per-active-cell ``sum_{|o|h < radius} h^n |o h|^-exponent |u - u(.+o)|^p``."""
    dom = u.domain
    U = u.grid()
    M = dom.mask
    ci, cj = dom.active_ij
    ci = np.ascontiguousarray(ci, dtype=np.int64)
    cj = np.ascontiguousarray(cj, dtype=np.int64)
    radius = np.ascontiguousarray(radius, dtype=float)
    rmax = float(radius.max()) if radius.size else 0.0
    odi, odj, orad, okern = ball_offsets(dom.h, rmax, exponent, refine=refine, limit=M.shape)
    out = np.zeros(ci.size)
    counts = np.zeros(ci.size, dtype=np.int64)
    mode = _p_mode(p)

    def block(start):
        stop = min(start + CELL_BLOCK, ci.size)
        _jit.ball_cells(U, M, ci, cj, radius, odi, odj, orad, okern, mode, float(p), start, stop, out, counts)

    _map_blocks(block, range(0, ci.size, CELL_BLOCK))
    return out, int(counts.sum())


def gagliardo_improved(u, params, refine=1):
    """Ordered-pair sum restricted to ``|x - y| < tau dist(x)``.

    ``tau = inf`` is the full seminorm.
    """
    if math.isinf(params.tau):
        return gagliardo_full(u, params, refine)
    t0 = time.perf_counter()
    dom = u.domain
    radius = params.tau * dom.active_dist
    out, pairs = _ball_sums(u, radius, params.exponent, params.p, refine)
    total = dom.h**params.n * math.fsum(out)
    return FunctionalValue(total, pairs, time.perf_counter() - t0)


def local_density(u, params, refine=1):
    """``g(y) = sum_{|y - z| < tau dist(y)} h^n |u(y) - u(z)| / |y - z|^{n + delta}``."""
    dom = u.domain
    radius = params.tau * dom.active_dist if not math.isinf(params.tau) else np.full(dom.n_active, math.inf)
    out, _ = _ball_sums(u, radius, params.n + params.delta, 1.0, refine)
    return GridFunction(dom, out)


# ---------------------------------------------------------------------------
# Riesz potential
# ---------------------------------------------------------------------------


def self_cell_integral(h, delta):
    """``int_{cell} |x - c|^{delta - 2} dx`` over a square cell about its centre c."""
    # 8 congruent triangles, radial extent h / (2 cos theta)
    from scipy.integrate import quad

    val, _ = quad(lambda th: (h / (2.0 * math.cos(th))) ** delta, 0.0, math.pi / 4)
    return 8.0 / delta * val


def riesz_potential(f, delta, self_term=False):
    """``I(x) = sum_{y != x} f(y) |x - y|^{delta - n} h^n`` at every active cell.

    Evaluated as one FFT convolution of the zero-extended grid with the
    kernel on all lattice offsets.
    """
    if not 0 < delta < 2:
        raise ValueError("delta must lie in (0, n)")
    dom = f.domain
    ny, nx = dom.mask.shape
    h = dom.h
    di = np.arange(-(ny - 1), ny)[:, None]
    dj = np.arange(-(nx - 1), nx)[None, :]
    r = h * np.sqrt(di * di + dj * dj)
    with np.errstate(divide="ignore"):
        Kr = h**2 * r ** (delta - 2.0)
    Kr[ny - 1, nx - 1] = self_cell_integral(h, delta) if self_term else 0.0
    F = f.grid()
    if not F.any():
        return GridFunction(dom, np.zeros(dom.n_active))
    out = fftconvolve(F, Kr, mode="valid")
    return GridFunction(dom, out[dom.mask])


# ---------------------------------------------------------------------------
# deviations and weak quasinorm (value level, arbitrary weights)
# ---------------------------------------------------------------------------


def weighted_lower_median(v, w):
    """Smallest value ``b`` with ``w(v <= b) >= W/2``; then ``w(v >= b) >= W/2`` too."""
    vals, inv = np.unique(np.asarray(v, float), return_inverse=True)
    cum = np.cumsum(np.bincount(inv, weights=np.asarray(w, float)))
    k = int(np.searchsorted(cum, 0.5 * cum[-1], side="left"))
    return float(vals[min(k, vals.size - 1)])


def deviation_values(v, w, q, mode="inf_a"):
    """``sum w |v - a|^q`` at the mean (``mode='mean'``) or minimized over a."""
    v = np.asarray(v, float)
    w = np.asarray(w, float)
    if q <= 0:
        raise ValueError("q must be positive")
    if v.size == 0 or v.min() == v.max():
        return 0.0

    def obj(a):
        return math.fsum(w * np.abs(v - a) ** q)

    if mode == "mean":
        return obj(math.fsum(w * v) / math.fsum(w))
    if mode != "inf_a":
        raise ValueError(f"unknown mode {mode!r}")
    if q == 1:
        return obj(weighted_lower_median(v, w))
    if q < 1:
        # concave between data points: the minimum sits on a data value
        return min(obj(a) for a in np.unique(v))

    def slope(a):
        d = v - a
        return math.fsum(w * np.sign(d) * np.abs(d) ** (q - 1))

    lo, hi = float(v.min()), float(v.max())
    a = optimize.brentq(slope, lo, hi, xtol=1e-15 * max(1.0, abs(lo), abs(hi)), rtol=1e-15, maxiter=400)
    return obj(a)


def lq_deviation(u, q, mode="inf_a"):
    """``sum |u - a|^q h^2`` at ``a = u_G`` (``mean``) or the best ``a`` (``inf_a``)."""
    return deviation_values(u.values, u.weights, q, mode)


def weak_objective_values(v, w, a, q):
    """``sup_t w(|v - a| > t) t^q``."""
    vals, inv = np.unique(np.asarray(v, float), return_inverse=True)
    m = np.bincount(inv, weights=np.asarray(w, float))
    return float(_jit.weak_objective(vals, m, float(a), float(q)))


def weak_values(v, w, q):
    """``inf_a sup_t w(|v - a| > t) t^q`` for point values ``v`` with weights ``w``.

    Up to ``WEAK_EXACT_MAX`` distinct values the infimum is exact (interval
    analysis); above that, a scan over values and consecutive midpoints is
    followed by a golden-section pass between the neighbours of the best
    candidate.
    """
    if q <= 0:
        raise ValueError("q must be positive")
    vals, inv = np.unique(np.asarray(v, float), return_inverse=True)
    if vals.size <= 1:
        return 0.0
    m = np.bincount(inv, weights=np.asarray(w, float))
    if vals.size <= WEAK_EXACT_MAX:
        return float(_jit.weak_exact(vals, m, float(q)))
    cands = np.sort(np.concatenate([vals, 0.5 * (vals[1:] + vals[:-1])]))
    best, k = _jit.weak_scan(vals, m, cands, float(q))
    lo = cands[max(k - 1, 0)]
    hi = cands[min(k + 1, cands.size - 1)]
    res = optimize.minimize_scalar(lambda a: _jit.weak_objective(vals, m, a, float(q)),
                                   bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * max(1.0, abs(hi - lo))})
    return float(min(best, res.fun))


def weak_quasinorm(u, q):
    """``inf_a sup_t |{|u - a| > t}| t^q`` with cell measure ``h^2``."""
    return weak_values(u.values, u.weights, q)
