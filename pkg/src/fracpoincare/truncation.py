"""Weak-to-strong upgrade by dyadic band truncation, run as a checked chain.

Every inequality used to pass from a weak-type bound on band truncations
to a strong-type bound on ``u`` is evaluated numerically on a finite
measure space and recorded with its two sides and factor.  A failed step
means a bug, since each one is a theorem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import FracParams, deviation_values, weak_objective_values, weak_values

RTOL = 1e-12
N_DIM = 2


class PreconditionError(ValueError):
    """Inputs violate the hypothesis of the checked inequality."""


@dataclass(eq=False)
class DiscreteMeasureSpace:
    """Finitely many weighted points carrying function values.

    ``points`` (shape (N, 2)) and ``dist`` (distance of each point to the
    boundary) are needed only for the improved pair sum.
    """

    weights: np.ndarray
    values: np.ndarray
    points: np.ndarray | None = None
    dist: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float)
        self.values = np.asarray(self.values, float)
        if self.weights.shape != self.values.shape or self.weights.ndim != 1:
            raise ValueError("weights and values must be 1-D of equal length")
        if not (np.isfinite(self.weights).all() and (self.weights > 0).all()):
            raise ValueError("weights must be positive and finite")
        if not np.isfinite(self.values).all():
            raise ValueError("values must be finite")
        if self.points is not None:
            self.points = np.asarray(self.points, float)
            self.dist = np.asarray(self.dist, float)

    @classmethod
    def from_grid_function(cls, u):
        dom = u.domain
        return cls(u.weights, u.values.copy(), dom.centers, dom.active_dist)

    @property
    def total_mass(self):
        return math.fsum(self.weights)

    def pair_weights(self, params):
        """``W[y, z] = mu(y) mu(z) |y - z|^-(n + delta p)`` on ``|y - z| < tau dist(y)``."""
        if self.points is None:
            raise ValueError("pair sums need point positions")
        P = self.points
        r = np.hypot(P[:, None, 0] - P[None, :, 0], P[:, None, 1] - P[None, :, 1])
        inside = r > 0
        if not math.isinf(params.tau):
            inside &= r < params.tau * self.dist[:, None]
        W = np.zeros_like(r)
        W[inside] = (self.weights[:, None] * self.weights[None, :])[inside] * r[inside] ** -params.exponent
        return W


def pair_sum(v, W, p):
    """``sum_{y, z} W[y, z] |v(y) - v(z)|^p``."""
    D = np.abs(v[:, None] - v[None, :]) ** p
    return math.fsum((W * D).ravel())


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MedianSplit:
    b: float
    v_plus: np.ndarray
    v_minus: np.ndarray


def median_split(u, mu):
    """Lower weighted median ``b`` with the positive and negative parts of ``u - b``."""
    u = np.asarray(u, float)
    mu = np.asarray(mu, float)
    vals, inv = np.unique(u, return_inverse=True)
    mass = np.bincount(inv, weights=mu)
    half = 0.5 * math.fsum(mass)
    below = 0.0
    for k, m in enumerate(mass):
        below = math.fsum([below, m])
        if below >= half:
            b = float(vals[k])
            break
    return MedianSplit(b, np.maximum(u - b, 0.0), -np.minimum(u - b, 0.0))


def truncate_band(v, t1, t2):
    """``t2 - t1`` where ``v >= t2``, ``v - t1`` between, 0 where ``v <= t1``."""
    if not t1 < t2:
        raise ValueError(f"need t1 < t2, got {t1}, {t2}")
    return np.clip(np.asarray(v, float) - t1, 0.0, t2 - t1)


def layer_index(v):
    """``k`` with ``2^(k-1) < v <= 2^k`` for positive ``v`` (exact on powers of 2)."""
    m, e = np.frexp(np.asarray(v, float))
    return np.where(m == 0.5, e - 1, e).astype(np.int64)


@dataclass(frozen=True)
class DyadicLayers:
    """``A_k = {2^(k-1) < v <= 2^k}`` as index arrays, plus ``A_{-inf} = {v = 0}``."""

    zero: np.ndarray
    layers: dict
    index: np.ndarray  # per-point layer, -2**62 standing in for -inf

    @property
    def ks(self):
        return sorted(self.layers)

    def masses(self, mu):
        out = {k: math.fsum(mu[idx]) for k, idx in self.layers.items()}
        return out


NEG_INF_LAYER = -(2**62)


def dyadic_layers(v):
    v = np.asarray(v, float)
    if (v < 0).any():
        raise ValueError("layers need v >= 0")
    pos = v > 0
    index = np.full(v.shape, NEG_INF_LAYER, dtype=np.int64)
    index[pos] = layer_index(v[pos])
    layers = {int(k): np.flatnonzero(index == k) for k in np.unique(index[pos])}
    return DyadicLayers(np.flatnonzero(~pos), layers, index)


MIN_BAND = -1074  # 2.0**k is the smallest subnormal here; band edges below it underflow to 0


def band_range(v):
    """``[floor(log2 min+ v) - 1, ceil(log2 max v)]`` or empty when ``v = 0``."""
    v = np.asarray(v, float)
    pos = v[v > 0]
    if pos.size == 0:
        return range(0)
    lo = int(np.frexp(pos.min())[1]) - 1 - 1  # floor(log2 x) = e - 1 for x = m 2^e
    lo = max(lo, MIN_BAND)
    hi = int(layer_index(pos.max()))
    return range(lo, hi + 1)


def bands(v):
    """``{k: truncate_band(v, 2^(k-1), 2^k)}`` over the band range."""
    return {k: truncate_band(v, 2.0 ** (k - 1), 2.0**k) for k in band_range(v)}


# ---------------------------------------------------------------------------
# measure lemma
# ---------------------------------------------------------------------------


@dataclass
class TailMassCheck:
    passed: bool
    worst_ratio: float
    witnesses: list = field(default_factory=list)

    def as_dict(self):
        return {"pass": self.passed, "worst_ratio": self.worst_ratio,
                "witnesses": [dict(t=t, lhs=a, rhs=b) for t, a, b in self.witnesses]}


def _inf_tail_mass(w, mu, s):
    """``inf_a mu(|w - a| > s)``; attained at some ``a = w_i +- s``."""
    vals = np.unique(w)
    cands = np.concatenate([vals - s, vals + s, vals, 0.5 * (vals[1:] + vals[:-1])])
    best = math.inf
    for a in cands:
        best = min(best, math.fsum(mu[np.abs(w - a) > s]))
    return best


def check_measure_lemma(omega, gamma, t_grid=None):
    """Check ``gamma(omega > t) <= 2 inf_a gamma(|omega - a| > t/2)`` on ``t_grid``.

    Requires ``gamma(omega = 0) >= gamma(X)/2``.  The default grid is every
    distinct positive value of ``omega``, the midpoints between them and
    half the smallest one.
    """
    omega = np.asarray(omega, float)
    gamma = np.asarray(gamma, float)
    if (omega < 0).any():
        raise PreconditionError("omega must be nonnegative")
    if math.fsum(gamma[omega == 0]) < 0.5 * math.fsum(gamma):
        raise PreconditionError("the zero set of omega carries less than half the mass")
    if t_grid is None:
        pos = np.unique(omega[omega > 0])
        t_grid = np.concatenate([pos[:1] / 2, pos, 0.5 * (pos[1:] + pos[:-1])])
    passed = True
    worst = 0.0
    witnesses = []
    for t in np.sort(np.asarray(t_grid, float)):
        lhs = math.fsum(gamma[omega > t])
        rhs = 2.0 * _inf_tail_mass(omega, gamma, 0.5 * t)
        ok = lhs <= rhs * (1 + RTOL)
        if lhs > 0:
            worst = max(worst, lhs / rhs if rhs > 0 else math.inf)
        if not ok:
            passed = False
        witnesses.append((float(t), lhs, rhs))
    return TailMassCheck(passed, worst, witnesses)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class Step:
    name: str
    lhs: float
    rhs: float
    factor: float
    passed: bool

    def as_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "factor": self.factor, "pass": self.passed}


@dataclass
class ProofChainReport:
    b: float
    layer_masses: dict
    steps: list
    final_strong: float
    final_rhs: float
    composed_constant: float
    weak_constant: float
    factorization: dict
    params: dict
    vacuous: bool = False
    seed: int | None = None

    @property
    def passed(self):
        return all(s.passed for s in self.steps)

    @property
    def failures(self):
        return [s for s in self.steps if not s.passed]

    def as_dict(self):
        steps = {}
        for s in self.steps:
            key = s.name
            k = 2
            while key in steps:
                key = f"{s.name}#{k}"
                k += 1
            steps[key] = s.as_dict()
        return {
            "seed": self.seed,
            "params": self.params,
            "b": self.b,
            "layer_masses": {str(k): m for k, m in self.layer_masses.items()},
            "weak_constant": self.weak_constant,
            "composed_constant": self.composed_constant,
            "factorization": self.factorization,
            "final_strong": self.final_strong,
            "final_rhs": self.final_rhs,
            "vacuous": self.vacuous,
            "pass": self.passed,
            "steps": steps,
        }


def _le(lhs, rhs):
    if math.isinf(rhs) and rhs > 0:
        return True
    return lhs <= rhs * (1 + RTOL) + 1e-300


def _times(c, x):
    """``c * x`` with ``inf * 0`` read as ``inf`` (an infinite constant bounds nothing)."""
    if math.isinf(c):
        return math.inf
    return c * x


def measured_weak_constant(functions, mu, W, params):
    """``sup_w weak(w) / RHS(w)^(q/p)`` over ``functions`` (``inf`` if some RHS is 0 < weak)."""
    c = 0.0
    for w in functions:
        weak = weak_values(w, mu, params.q)
        if weak == 0:
            continue
        rhs = pair_sum(w, W, params.p)
        if rhs == 0:
            return math.inf
        c = max(c, weak / rhs ** (params.q / params.p))
    return c


def composed_factors(p, q):
    """Factorization of ``C(p, q)`` in the order the chain applies them."""
    geo = 4.0**p / (1.0 - 2.0**-p)
    return {
        "recombination": 2.0**q,
        "layer_sum": 2.0 ** (1 + 4 * q),
        "split_geometric": (2.0 * geo) ** (q / p),
    }


def run_truncation_pipeline(u, mu, params, weak_constant_oracle=None, space=None, W=None):
    """Run the weak-to-strong chain on values ``u`` with masses ``mu``.

    Parameters
    ----------
    u, mu : array_like
        Values and point masses.  Alternatively pass ``space`` (a
        :class:`DiscreteMeasureSpace`) and leave ``u``/``mu`` as None.
    params : FracParams
        Needs ``q >= p``.
    weak_constant_oracle : callable, optional
        ``oracle(functions, mu, W, params) -> C1``; defaults to the measured
        sup over the band truncations of ``v+`` and ``v-``.
    W : ndarray, optional
        Pair weights; computed from ``space`` when omitted.
    """
    if space is None:
        raise ValueError("a DiscreteMeasureSpace with point positions is required")
    u = space.values if u is None else np.asarray(u, float)
    mu = space.weights if mu is None else np.asarray(mu, float)
    p, q = float(params.p), float(params.q)
    if q < p:
        raise PreconditionError("the chain needs q >= p")
    if W is None:
        W = space.pair_weights(params)
    oracle = weak_constant_oracle or measured_weak_constant

    split = median_split(u, mu)
    sides = {"+": split.v_plus, "-": split.v_minus}
    side_bands = {s: bands(v) for s, v in sides.items()}
    family = [w for bs in side_bands.values() for w in bs.values()]
    C1 = float(oracle(family, mu, W, params))
    vacuous = math.isinf(C1)

    geo = 4.0**p / (1.0 - 2.0**-p)
    f_mas = 2.0 ** (1 + q)
    f_layer = 2.0 ** (1 + 4 * q)
    steps = []

    def add(name, lhs, rhs, factor=1.0, ok=None):
        steps.append(Step(name, float(lhs), float(rhs), float(factor), _le(lhs, rhs) if ok is None else ok))

    rhs_u = pair_sum(u, W, p)
    layer_masses = {}
    side_total = {}
    for s, v in sides.items():
        lay = dyadic_layers(v)
        for k, m in lay.masses(mu).items():
            layer_masses[f"{s}{k}"] = m
        bs = side_bands[s]
        rhs_v = pair_sum(v, W, p)

        # per band: measure lemma and the weak estimate with C1
        rhs_band = {}
        for k, w in bs.items():
            rhs_band[k] = pair_sum(w, W, p)
            if not (w > 0).any():
                continue
            lemma = check_measure_lemma(w, mu)
            add(f"{s}measure_lemma[k={k}]", lemma.worst_ratio, 1.0, 2.0, lemma.passed)
            weak = weak_values(w, mu, q)
            sup_t = weak_objective_values(w, mu, 0.0, q)
            add(f"{s}band_weak[k={k}]", sup_t, f_mas * weak, f_mas)
            add(f"{s}band_constant[k={k}]", f_mas * weak, _times(f_mas * C1, rhs_band[k] ** (q / p)), f_mas)

        # layer sums
        strong_v = math.fsum(mu * v**q)
        side_total[s] = strong_v
        lay_sum = math.fsum(2.0 ** ((k) * q) * math.fsum(mu[idx]) for k, idx in lay.layers.items())
        band_sum = math.fsum(2.0 ** ((k + 1) * q) * math.fsum(mu[bs[k] >= 2.0 ** (k - 1)])
                             for k in (kk - 1 for kk in lay.layers))
        sum_rhs = math.fsum(rhs_band.values())
        add(f"{s}layer_sum", strong_v, lay_sum)
        add(f"{s}layer_to_band", lay_sum, band_sum)
        add(f"{s}band_sum", band_sum, _times(f_layer * C1, sum_rhs ** (q / p)), f_layer)

        # pointwise estimate and the split of the band sums
        n = v.size
        I = np.broadcast_to(lay.index[:, None], (n, n))
        J = np.broadcast_to(lay.index[None, :], (n, n))
        dv = np.abs(v[:, None] - v[None, :])
        dvp = W * dv**p
        worst = 0.0
        s1, s2, t1, t2 = [], [], [], []
        for k, w in bs.items():
            dw = np.abs(w[:, None] - w[None, :])
            # y in A_i, z in A_j: i <= k <= j, or else j <= k <= i
            m1 = (I <= k) & (k <= J)
            m2 = (J <= k) & (k <= I) & ~m1
            sel = m1 & (dv > 0)
            if sel.any():
                worst = max(worst, float((dw[sel] / (4.0 * 2.0 ** (k - J[sel].astype(float)) * dv[sel])).max()))
            # a band difference vanishes unless k lies between the two layers
            if (dw[~(m1 | m2)] > 0).any():
                worst = math.inf
            dwp = W * dw**p
            s1.append(math.fsum(dwp[m1]))
            s2.append(math.fsum(dwp[m2]))
            t1.append(math.fsum(2.0 ** (p * (k - J[m1].astype(float))) * dvp[m1]))
            t2.append(math.fsum(2.0 ** (p * (k - I[m2].astype(float))) * dvp[m2]))
        S1, S2 = math.fsum(s1), math.fsum(s2)
        T1, T2 = 4.0**p * math.fsum(t1), 4.0**p * math.fsum(t2)
        add(f"{s}pair_estimate", worst, 1.0, 4.0, worst <= 1.0 + 1e-12)
        add(f"{s}split_sums", sum_rhs, S1 + S2)
        add(f"{s}pair_sum_1", S1, T1, 4.0**p)
        add(f"{s}pair_sum_2", S2, T2, 4.0**p)
        add(f"{s}geometric_sum_1", T1, geo * rhs_v, geo)
        add(f"{s}geometric_sum_2", T2, geo * rhs_v, geo)
        add(f"{s}side_bound", strong_v, _times(f_layer * C1, (2.0 * geo * rhs_v) ** (q / p)),
            f_layer * (2.0 * geo) ** (q / p))
        add(f"{s}contraction", rhs_v, rhs_u)

    strong_b = math.fsum(mu * np.abs(u - split.b) ** q)
    add("recombination", abs(strong_b - (side_total["+"] + side_total["-"])),
        RTOL * max(strong_b, 1e-300), ok=math.isclose(strong_b, side_total["+"] + side_total["-"],
                                                       rel_tol=1e-12, abs_tol=0.0))
    final_strong = deviation_values(u, mu, q, "inf_a")
    add("strong_at_median", final_strong, strong_b)
    factors = composed_factors(p, q)
    c_pq = math.prod(factors.values())
    composed = _times(c_pq, C1)
    final_rhs = rhs_u ** (q / p)
    add("end_to_end", final_strong, _times(composed, final_rhs), c_pq)
    mean_dev = deviation_values(u, mu, q, "mean")
    add("mean_vs_inf", mean_dev, 2.0**q * final_strong, 2.0**q)

    return ProofChainReport(
        b=split.b,
        layer_masses=layer_masses,
        steps=steps,
        final_strong=final_strong,
        final_rhs=final_rhs,
        composed_constant=composed,
        weak_constant=C1,
        factorization={**factors, "C(p,q)": c_pq, "C1": C1},
        params=params.as_dict(),
        vacuous=vacuous,
        seed=space.seed,
    )


# ---------------------------------------------------------------------------
# random instances
# ---------------------------------------------------------------------------

P_CHOICES = (1.0, 1.5, 2.0)
DELTA_CHOICES = (0.25, 0.5, 0.75)
TAU_CHOICES = (math.inf, 1.0, 0.5)


def rng(seed):
    """Counter-based generator used for every seeded draw in the package."""
    return np.random.Generator(np.random.Philox(int(seed)))


def instance_seeds(master, count):
    """``count`` 64-bit seeds derived from ``master``."""
    return [int(s) for s in np.random.SeedSequence(int(master)).generate_state(count, dtype=np.uint64)]


def random_instance(seed, max_points=64):
    """Random points in the unit square with weights in [0.1, 1] and values in [-1, 1].

    Returns ``(space, params)``; ``p`` is drawn from {1, 1.5, 2}, ``q`` from
    {p, 2p}, ``delta`` and ``tau`` from fixed menus.
    """
    g = rng(seed)
    n = int(g.integers(2, max_points + 1))
    pts = g.uniform(0.0, 1.0, size=(n, 2))
    weights = g.uniform(0.1, 1.0, size=n)
    values = g.uniform(-1.0, 1.0, size=n)
    p = float(g.choice(P_CHOICES))
    q = p * float(g.choice((1.0, 2.0)))
    delta = float(g.choice(DELTA_CHOICES))
    tau = float(g.choice(TAU_CHOICES))
    dist = np.minimum.reduce([pts[:, 0], 1 - pts[:, 0], pts[:, 1], 1 - pts[:, 1]])
    space = DiscreteMeasureSpace(weights, values, pts, dist, seed=int(seed))
    return space, FracParams(p=p, q=q, delta=delta, tau=tau)


def run_random_instances(master_seed=20240601, count=200, max_points=64):
    """Pipeline reports for ``count`` seeded random instances."""
    out = []
    for s in instance_seeds(master_seed, count):
        space, params = random_instance(s, max_points)
        out.append(run_truncation_pipeline(None, None, params, space=space))
    return out
