"""Independent brute-force references shared by the test modules.

These deliberately avoid the package's own tables and compiled loops:
they work from cell-centre coordinates and explicit boundary segments.
"""

import math
import sys

import numpy as np
import pytest

from fracpoincare.geometry import from_mask


def boundary_segments(domain):
    """All boundary faces as ((x0, y0), (x1, y1)) segments."""
    m = domain.mask
    ny, nx = m.shape
    h = domain.h
    ox, oy = domain.origin
    segs = []

    def active(i, j):
        return 0 <= i < ny and 0 <= j < nx and m[i, j]

    for i in range(ny + 1):
        for j in range(nx):
            below, above = active(i - 1, j), active(i, j)
            cut = 0 < i < ny and below and above and domain.block_up[i - 1, j]
            if below != above or cut:
                segs.append(((ox + j * h, oy + i * h), (ox + (j + 1) * h, oy + i * h)))
    for i in range(ny):
        for j in range(nx + 1):
            left, right = active(i, j - 1), active(i, j)
            cut = 0 < j < nx and left and right and domain.block_right[i, j - 1]
            if left != right or cut:
                segs.append(((ox + j * h, oy + i * h), (ox + j * h, oy + (i + 1) * h)))
    return segs


def point_segment_distance(p, a, b):
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def brute_distance(domain):
    segs = boundary_segments(domain)
    out = np.zeros(domain.mask.shape)
    for i, j in zip(*np.nonzero(domain.mask)):
        c = domain.cell_center(i, j)
        out[i, j] = min(point_segment_distance(c, a, b) for a, b in segs)
    return out


def brute_seminorm(domain, values, p, delta, tau, n=2):
    """Double loop over ordered pairs of distinct active cells."""
    pts = [domain.cell_center(i, j) for i, j in zip(*np.nonzero(domain.mask))]
    dist = brute_distance(domain)[domain.mask]
    h = domain.h
    terms = []
    for a, (xa, ya) in enumerate(pts):
        for b, (xb, yb) in enumerate(pts):
            if a == b:
                continue
            r = math.hypot(xa - xb, ya - yb)
            if not math.isinf(tau) and not r < tau * dist[a]:
                continue
            terms.append(abs(values[a] - values[b]) ** p * h ** (2 * n) / r ** (n + delta * p))
    return math.fsum(terms)


def brute_weak(values, weights, q):
    """Exact infimum by enumerating every pair crossing on every ordering interval."""
    v = np.asarray(values, float)
    w = np.asarray(weights, float)
    vals = np.unique(v)
    m = np.array([w[v == x].sum() for x in vals])
    if vals.size <= 1:
        return 0.0

    def at(a):
        d = np.abs(vals - a)
        return max((m[d >= dk].sum() * dk**q for dk in d if dk > 0), default=0.0)

    bps = np.unique(np.concatenate([vals, [(x + y) / 2 for k, x in enumerate(vals) for y in vals[k + 1:]]]))
    best = min(at(a) for a in bps)
    I, J = np.triu_indices(vals.size, 1)
    for L, R in zip(bps[:-1], bps[1:]):
        mid = 0.5 * (L + R)
        d = np.abs(vals - mid)
        c = np.array([m[d >= x].sum() for x in d])

        def env(a):
            return np.max(c * np.abs(vals - a) ** q)

        rho = (c[J] / c[I]) ** (1 / q)
        cross = (vals[I] + rho * vals[J]) / (1 + rho)
        cand = [L, R] + [a for a in cross if L < a < R]
        best = min(best, min(env(a) for a in cand))
    return float(best)


def brute_deviation(values, weights, q, mode):
    from scipy.optimize import minimize_scalar

    v = np.asarray(values, float)
    w = np.asarray(weights, float)

    def obj(a):
        return math.fsum(w * np.abs(v - a) ** q)

    if v.min() == v.max():
        return 0.0
    if mode == "mean":
        return obj((w * v).sum() / w.sum())
    best = min(obj(a) for a in v)
    if q > 1:
        res = minimize_scalar(obj, bounds=(v.min(), v.max()), method="bounded",
                              options={"xatol": 1e-14})
        best = min(best, res.fun)
    return best


def random_small_domain(rng, max_side=6, slits=True):
    """Random connected mask on at most max_side x max_side cells, with optional slits."""
    while True:
        ny, nx = rng.integers(1, max_side + 1, size=2)
        if ny * nx < 2:
            continue
        mask = rng.random((ny, nx)) < 0.8
        if mask.sum() < 2:
            continue
        h = float(2.0 ** -rng.integers(0, 4))
        edges = []
        if slits:
            for i in range(ny):
                for j in range(nx):
                    a = i * nx + j
                    if j + 1 < nx and mask[i, j] and mask[i, j + 1] and rng.random() < 0.1:
                        edges.append((a, a + 1))
                    if i + 1 < ny and mask[i, j] and mask[i + 1, j] and rng.random() < 0.1:
                        edges.append((a, a + nx))
        try:
            return from_mask(mask, h, (float(rng.integers(-2, 2)), 0.0), edges)
        except ValueError:
            continue


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
