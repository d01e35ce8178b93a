"""Grid-discretized planar domains and their metric/topological diagnostics.

A domain is a boolean cell mask on a uniform lattice of side ``h`` plus an
optional set of severed cell faces (slits).  Cell ``(i, j)`` is row ``i``
(increasing ``y``) and column ``j`` (increasing ``x``); its flat index is
``i * nx + j`` and its centre is ``origin + ((j + 1/2) h, (i + 1/2) h)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _csgraph_components
from scipy.spatial import ConvexHull, QhullError

from . import _jit

log = logging.getLogger(__name__)

N_DIM = 2
KINDS = ("unit_square", "slit_square", "rooms_passages", "annulus_test")
DEFAULT_MAX_CELLS = 4_000_000


class ConstructionError(ValueError):
    """The requested geometry cannot be represented on the lattice."""


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    h: float
    s: float | None = None
    K: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.kind == "rooms_passages":
            if self.s is None or not self.s > 1:
                raise ValueError("rooms_passages needs s > 1")
            if self.K is None or int(self.K) != self.K or self.K < 1:
                raise ValueError("rooms_passages needs an integer K >= 1")


@dataclass(eq=False)
class GridDomain:
    """Cell-mask domain with slits, boundary-distance field and a centre.

    Parameters
    ----------
    h : float
        Cell side length.
    mask : ndarray of bool, shape (ny, nx)
        Active cells.
    origin : (float, float)
        Lower-left corner of the lattice.
    block_right : ndarray of bool, shape (ny, nx - 1), optional
        ``block_right[i, j]`` severs the face between (i, j) and (i, j + 1).
    block_up : ndarray of bool, shape (ny - 1, nx), optional
        ``block_up[i, j]`` severs the face between (i, j) and (i + 1, j).
    center : (float, float), optional
        Requested John-centre candidate; snapped to the nearest active cell
        centre.  Defaults to the deepest cell.
    """

    h: float
    mask: np.ndarray
    origin: tuple = (0.0, 0.0)
    block_right: np.ndarray | None = None
    block_up: np.ndarray | None = None
    center: tuple | None = None
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.h = float(self.h)
        self.mask = np.ascontiguousarray(self.mask, dtype=bool)
        if self.mask.ndim != 2 or not self.mask.any():
            raise ValueError("mask must be a non-empty 2-D array")
        ny, nx = self.mask.shape
        if self.block_right is None:
            self.block_right = np.zeros((ny, max(nx - 1, 0)), bool)
        if self.block_up is None:
            self.block_up = np.zeros((max(ny - 1, 0), nx), bool)
        self.block_right = np.ascontiguousarray(self.block_right, dtype=bool)
        self.block_up = np.ascontiguousarray(self.block_up, dtype=bool)
        if self.block_right.shape != (ny, max(nx - 1, 0)) or self.block_up.shape != (max(ny - 1, 0), nx):
            raise ValueError("blocked-edge arrays have the wrong shape")
        m = self.mask
        if (self.block_right & ~(m[:, :-1] & m[:, 1:])).any() or (self.block_up & ~(m[:-1] & m[1:])).any():
            raise ValueError("blocked edges must join two active cells")
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        n_comp = int(connected_components(self).max()) + 1
        if n_comp != 1:
            raise ValueError(f"domain is not connected ({n_comp} components)")
        self.dist = boundary_distance(self)
        target = self.center
        if target is None:
            flat = int(np.argmax(self.dist))
            i, j = divmod(flat, nx)
            target = self.cell_center(i, j)
        self.center_cell = self.snap(target)
        self.center = self.cell_center(*self.center_cell)

    # -- lattice helpers -----------------------------------------------------

    @property
    def ny(self):
        return self.mask.shape[0]

    @property
    def nx(self):
        return self.mask.shape[1]

    @property
    def n_active(self):
        return int(self.mask.sum())

    @property
    def active_index(self):
        """Flat row-major indices of the active cells."""
        return np.flatnonzero(self.mask)

    @property
    def active_ij(self):
        return np.nonzero(self.mask)

    def cell_center(self, i, j):
        return (self.origin[0] + (j + 0.5) * self.h, self.origin[1] + (i + 0.5) * self.h)

    @property
    def centers(self):
        """Centres of the active cells, shape (n_active, 2)."""
        i, j = self.active_ij
        return np.column_stack([self.origin[0] + (j + 0.5) * self.h, self.origin[1] + (i + 0.5) * self.h])

    @property
    def active_dist(self):
        return self.dist[self.mask]

    @property
    def extent(self):
        """Lattice bounding box ``(x0, y0, x1, y1)``."""
        x0, y0 = self.origin
        return (x0, y0, x0 + self.nx * self.h, y0 + self.ny * self.h)

    def snap(self, point):
        """Nearest active cell to ``point``; ties go to the lowest flat index."""
        c = self.centers
        d2 = (c[:, 0] - point[0]) ** 2 + (c[:, 1] - point[1]) ** 2
        k = int(np.argmin(d2))
        flat = int(self.active_index[k])
        return divmod(flat, self.nx)

    @property
    def blocked_edges(self):
        """Severed faces as a set of ``(a, b)`` flat-index pairs with a < b."""
        nx = self.nx
        out = set()
        for i, j in zip(*np.nonzero(self.block_right)):
            a = int(i) * nx + int(j)
            out.add((a, a + 1))
        for i, j in zip(*np.nonzero(self.block_up)):
            a = int(i) * nx + int(j)
            out.add((a, a + nx))
        return frozenset(out)

    @property
    def area(self):
        return self.n_active * self.h**2

    def __repr__(self):
        return f"GridDomain(kind={self.kind!r}, h={self.h:g}, grid={self.ny}x{self.nx}, active={self.n_active})"


def _cells(length, h, what):
    n = length / h
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise ConstructionError(f"h={h:g} does not tile {what} of length {length:g}")
    return k


def passage_width(k, s):
    """Width ``2 (2^-k)^s / 8^s`` of the passage attached to room ``k``."""
    return 2.0 * (2.0 ** (-k)) ** s / 8.0**s


def admissible_h(s, K):
    """Largest dyadic ``h`` for which the K-generation tower can be built."""
    h_max = min(passage_width(K, s) / 2.0, 2.0 ** (-K - 1))
    return 2.0 ** (-math.ceil(-math.log2(h_max) - 1e-12))


def tower_bbox_cells(s, K, h):
    """Bounding-box cell count of the tower lattice at side ``h``."""
    height = 1.0 + 2.0 * (1.0 - 2.0 ** (-K))
    return int(round(1.0 / h)) * int(round(height / h))


def build_domain(spec, max_cells=DEFAULT_MAX_CELLS):
    """Discretize one of the named domains.

    ``max_cells`` bounds the lattice bounding box; larger requests raise
    :class:`ConstructionError` before anything is allocated.
    """
    h = spec.h
    if spec.kind == "unit_square":
        n = _cells(1.0, h, "the unit square")
        _check_budget(n * n, max_cells)
        return GridDomain(h, np.ones((n, n), bool), (0.0, 0.0), center=(0.5, 0.5), kind=spec.kind)

    if spec.kind == "slit_square":
        m = _cells(1.0, h, "the slit")
        n = 2 * m
        _check_budget(n * n, max_cells)
        block_up = np.zeros((n - 1, n), bool)
        # faces on y = 0 for x in (0, 1): between rows m-1 and m, columns m..n-1
        block_up[m - 1, m:] = True
        return GridDomain(h, np.ones((n, n), bool), (-1.0, -1.0), block_up=block_up,
                          center=(-0.5, 0.0), kind=spec.kind)

    if spec.kind == "annulus_test":
        n = _cells(1.0, h, "the unit square")
        a = _cells(1.0 / 3.0, h, "the hole")
        _check_budget(n * n, max_cells)
        mask = np.ones((n, n), bool)
        mask[a:2 * a, a:2 * a] = False
        return GridDomain(h, mask, (0.0, 0.0), center=(1.0 / 6.0, 0.5), kind=spec.kind)

    return _build_tower(spec.s, int(spec.K), h, max_cells)


def _check_budget(cells, max_cells):
    if cells > max_cells:
        raise ConstructionError(f"lattice needs {cells} cells, budget is {max_cells}")


def _build_tower(s, K, h, max_cells):
    _cells(2.0 ** (-K - 1), h, "the smallest half-room")
    narrowest = passage_width(K, s)
    if narrowest < 2.0 * h * (1.0 - 1e-12):
        raise ConstructionError(
            f"passage {K} has width {narrowest:.3e} < 2 cells at h={h:g}; "
            f"need h <= {admissible_h(s, K):.3e}")
    nx = _cells(1.0, h, "the base room")
    height = 1.0 + 2.0 * (1.0 - 2.0 ** (-K))
    ny = _cells(height, h, "the tower")
    _check_budget(nx * ny, max_cells)
    mask = np.zeros((ny, nx), bool)
    half = nx // 2
    rooms, passages, widths, rounded = [], [], [], []
    side = nx
    mask[0:side, :] = True
    rooms.append((0, side, 0, nx))
    row = side
    for k in range(1, K + 1):
        w = passage_width(k, s)
        cells = math.ceil(w / h - 1e-9)
        cells += cells % 2
        side_k = nx >> k
        if cells > side_k:
            raise ConstructionError(f"passage {k} wider than room {k}")
        widths.append(w)
        rounded.append(cells * h)
        length = side_k
        passages.append((row, row + length, half - cells // 2, half + cells // 2))
        mask[row:row + length, half - cells // 2:half + cells // 2] = True
        row += length
        rooms.append((row, row + side_k, half - side_k // 2, half + side_k // 2))
        mask[row:row + side_k, half - side_k // 2:half + side_k // 2] = True
        row += side_k
    meta = {
        "s": s,
        "K": K,
        # (row0, row1, col0, col1) half-open cell ranges
        "rooms": rooms,
        "passages": passages,
        "passage_widths": widths,
        "passage_widths_rounded": rounded,
    }
    return GridDomain(h, mask, (0.0, 0.0), center=(0.5, 0.5), kind="rooms_passages", meta=meta)


def tower_area(domain):
    """Closed-form area of a built tower from its recorded (rounded) widths."""
    K = domain.meta["K"]
    rooms = sum(4.0 ** (-k) for k in range(K + 1))
    passages = sum(w * 2.0 ** (-k) for k, w in enumerate(domain.meta["passage_widths_rounded"], start=1))
    return rooms + passages


def from_mask(mask, h, origin=(0.0, 0.0), blocked_edges=(), center=None, kind="custom"):
    """Domain from an explicit mask and flat-index blocked-edge pairs."""
    mask = np.asarray(mask, dtype=bool)
    ny, nx = mask.shape
    br = np.zeros((ny, max(nx - 1, 0)), bool)
    bu = np.zeros((max(ny - 1, 0), nx), bool)
    for a, b in blocked_edges:
        a, b = sorted((int(a), int(b)))
        if b == a + 1 and a // nx == b // nx:
            br[divmod(a, nx)] = True
        elif b == a + nx:
            bu[divmod(a, nx)] = True
        else:
            raise ValueError(f"cells {a} and {b} are not face neighbours")
    return GridDomain(h, mask, origin, br, bu, center=center, kind=kind)


def disk_domain(h, radius=0.5):
    """Cells of ``[-r, r]^2`` whose centres lie in the open disk of radius r."""
    n = _cells(2.0 * radius, h, "the disk diameter")
    c = (np.arange(n) + 0.5) * h - radius
    X, Y = np.meshgrid(c, c)
    return from_mask(X**2 + Y**2 < radius**2, h, (-radius, -radius), center=(0.0, 0.0), kind="disk")


# ---------------------------------------------------------------------------
# distance field
# ---------------------------------------------------------------------------


def boundary_faces(domain):
    """Boolean arrays of boundary faces.

    Returns ``(hface, vface)``: ``hface[i, j]`` is the horizontal face on
    lattice line ``y = i`` over column ``j`` (shape (ny+1, nx)); ``vface[i, j]``
    the vertical face on line ``x = j`` over row ``i`` (shape (ny, nx+1)).
    A face is on the boundary if it separates active from inactive (or the
    outside), or is a severed interior face.
    """
    m = domain.mask
    ny, nx = m.shape
    pad = np.zeros((ny + 2, nx + 2), bool)
    pad[1:-1, 1:-1] = m
    hface = pad[0:ny + 1, 1:-1] != pad[1:ny + 2, 1:-1]
    hface[1:ny] |= domain.block_up
    vface = pad[1:-1, 0:nx + 1] != pad[1:-1, 1:nx + 2]
    vface[:, 1:nx] |= domain.block_right
    return hface, vface


def boundary_distance(domain):
    """Exact distance from every active cell centre to the boundary.

    On the half-step lattice (vertices, face midpoints and cell centres) the
    nearest point of a boundary face to a cell centre is either an endpoint
    or, for faces in the same row/column, the face midpoint; so an exact
    Euclidean transform to those seeds gives the exact distance.
    """
    hface, vface = boundary_faces(domain)
    ny, nx = domain.mask.shape
    free = np.ones((2 * ny + 1, 2 * nx + 1), bool)
    hi, hj = np.nonzero(hface)
    for dc in (0, 1, 2):
        free[2 * hi, 2 * hj + dc] = False
    vi, vj = np.nonzero(vface)
    for dr in (0, 1, 2):
        free[2 * vi + dr, 2 * vj] = False
    edt = ndimage.distance_transform_edt(free, sampling=domain.h / 2.0)
    dist = np.ascontiguousarray(edt[1::2, 1::2])
    dist[~domain.mask] = 0.0
    return dist


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------


def connected_components(domain, removed=None):
    """Edge-connectivity labels of the active cells.

    Parameters
    ----------
    removed : ((x, y), r), optional
        Cells whose centres lie in this closed ball are excluded.

    Returns
    -------
    ndarray of int, shape (ny, nx)
        Component label per cell, ``-1`` for inactive or excluded cells.
        Labels are numbered by their lowest flat cell index.
    """
    keep = domain.mask.copy()
    ny, nx = keep.shape
    if removed is not None:
        (wx, wy), r = removed
        yy = domain.origin[1] + (np.arange(ny) + 0.5) * domain.h
        xx = domain.origin[0] + (np.arange(nx) + 0.5) * domain.h
        keep &= ((xx[None, :] - wx) ** 2 + (yy[:, None] - wy) ** 2) > r * r
    flat = np.flatnonzero(keep)
    labels = np.full(ny * nx, -1, dtype=np.int64)
    if flat.size == 0:
        return labels.reshape(ny, nx)
    node = np.full(ny * nx, -1, dtype=np.int64)
    node[flat] = np.arange(flat.size)
    right = keep[:, :-1] & keep[:, 1:] & ~domain.block_right
    up = keep[:-1] & keep[1:] & ~domain.block_up
    ri, rj = np.nonzero(right)
    ui, uj = np.nonzero(up)
    src = np.concatenate([node[ri * nx + rj], node[ui * nx + uj]])
    dst = np.concatenate([node[ri * nx + rj + 1], node[(ui + 1) * nx + uj]])
    graph = coo_matrix((np.ones(src.size, np.int8), (src, dst)), shape=(flat.size, flat.size))
    _, lab = _csgraph_components(graph, directed=False)
    # relabel by first (lowest-index) member
    first = np.full(lab.max() + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, lab, np.arange(flat.size))
    rank = np.empty_like(first)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    labels[flat] = rank[lab]
    return labels.reshape(ny, nx)


def hole_count(domain):
    """Bounded components of the complement (8-connected); 0 = simply connected."""
    pad = np.ones((domain.ny + 2, domain.nx + 2), bool)
    pad[1:-1, 1:-1] = ~domain.mask
    _, n = ndimage.label(pad, structure=np.ones((3, 3), int))
    return int(n) - 1


@dataclass(eq=False)
class TailSet:
    """Union of the components of ``G \\ B(omega, d)`` that miss ``B0``."""

    cells: np.ndarray
    diameter: float
    measure: float
    omega: tuple
    d: float
    h: float
    radii: np.ndarray = field(repr=False)

    def ring(self, r):
        """``|T(r)| = |T \\ B(omega, r)|`` (cells with centre distance >= r)."""
        k = np.searchsorted(self.radii, r, side="left")
        return (self.radii.size - k) * self.h**2

    def rings(self, rs):
        rs = np.asarray(rs, float)
        k = np.searchsorted(self.radii, rs, side="left")
        return (self.radii.size - k) * self.h**2

    @property
    def empty(self):
        return self.cells.size == 0


def _diameter(points):
    if len(points) <= 1:
        return 0.0
    if len(points) > 64:
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            # collinear: extremes along the principal direction suffice
            c = points - points.mean(axis=0)
            _, _, vt = np.linalg.svd(c, full_matrices=False)
            t = c @ vt[0]
            points = points[[int(np.argmin(t)), int(np.argmax(t))]]
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def ball_cells(domain, center, radius):
    """Flat indices of active cells whose centres lie in the open ball."""
    c = domain.centers
    d2 = (c[:, 0] - center[0]) ** 2 + (c[:, 1] - center[1]) ** 2
    return domain.active_index[d2 < radius * radius]


def tail_components(domain, omega, d, b0):
    """Tail set ``T`` for the removed ball ``B(omega, d)`` and reference ball ``B0``.

    ``b0`` is ``((x, y), radius)``; its cells are those with centres in the
    open ball.  Raises ``ValueError`` if ``B0`` holds no cell centre.
    """
    if not d > 0:
        raise ValueError("d must be positive")
    (bx, by), br = b0
    ref = ball_cells(domain, (bx, by), br)
    if ref.size == 0:
        raise ValueError("B0 contains no cell centre")
    labels = connected_components(domain, removed=(omega, d)).ravel()
    bad = np.unique(labels[ref])
    bad = bad[bad >= 0]
    tail = (labels >= 0) & ~np.isin(labels, bad)
    cells = np.flatnonzero(tail)
    i, j = np.divmod(cells, domain.nx)
    pts = np.column_stack([domain.origin[0] + (j + 0.5) * domain.h, domain.origin[1] + (i + 0.5) * domain.h])
    radii = np.sort(np.hypot(pts[:, 0] - omega[0], pts[:, 1] - omega[1]))
    return TailSet(cells=cells, diameter=_diameter(pts), measure=cells.size * domain.h**2,
                   omega=tuple(omega), d=float(d), h=domain.h, radii=radii)


# ---------------------------------------------------------------------------
# John and Ahlfors diagnostics
# ---------------------------------------------------------------------------


def default_john_sources(domain, x0_cell=None, n_far=16):
    """Local minima of ``dist`` (8-neighbourhood, non-strict) plus the
    ``n_far`` active cells farthest from the centre, as (i, j) pairs."""
    m = domain.mask
    d = np.where(m, domain.dist, np.inf)
    pad = np.pad(d, 1, constant_values=np.inf)
    ny, nx = m.shape
    is_min = m.copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_min &= d <= pad[1 + di:1 + di + ny, 1 + dj:1 + dj + nx]
    flat = set(np.flatnonzero(is_min).tolist())
    ci, cj = x0_cell if x0_cell is not None else domain.center_cell
    cx, cy = domain.cell_center(ci, cj)
    c = domain.centers
    far = np.argsort(-np.hypot(c[:, 0] - cx, c[:, 1] - cy), kind="stable")[:n_far]
    flat.update(domain.active_index[far].tolist())
    return [divmod(f, nx) for f in sorted(flat)]


def john_constant(domain, x0=None, sources=None, c_max=1e6, rtol=1e-2, n_far=16):
    """Smallest ``c`` such that every source reaches ``x0`` with
    ``dist(y) >= t / c`` along a grid path (8-connected, arc length ``t``).

    The search is a geometric bisection on ``[1, c_max]`` to relative
    tolerance ``rtol``; the returned value is the feasible end of the final
    bracket.  Returns ``inf`` if some source fails even at ``c_max``.
    """
    x0_cell = domain.center_cell if x0 is None else domain.snap(x0)
    if sources is None:
        sources = default_john_sources(domain, x0_cell, n_far)
    else:
        sources = [domain.snap(s) if isinstance(s[0], float) else tuple(s) for s in sources]
    sources = [s for s in sources if tuple(s) != tuple(x0_cell)]
    if not sources:
        return 1.0
    args = (domain.mask, domain.block_right, domain.block_up, domain.dist, domain.h)
    ti, tj = x0_cell
    order = list(range(len(sources)))

    def feasible(c):
        for pos, k in enumerate(order):
            si, sj = sources[k]
            if not _jit.clearance_reach(*args, si, sj, ti, tj, c):
                # retry the failing source first next time
                order.insert(0, order.pop(pos))
                return False
        return True

    if not feasible(c_max):
        return math.inf
    lo, hi = 1.0, float(c_max)
    if feasible(lo):
        return lo
    while hi / lo > 1.0 + rtol:
        mid = math.sqrt(lo * hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def ahlfors_infimum(domain, samples):
    """``min |G ∩ B(x, r)| / r^2`` over ``(x, r)`` samples (open balls)."""
    c = domain.centers
    h2 = domain.h**2
    best = math.inf
    for x, r in samples:
        if not 0 < r:
            raise ValueError("radius must be positive")
        i, j = domain.snap(x)
        px, py = domain.cell_center(i, j)
        count = np.count_nonzero((c[:, 0] - px) ** 2 + (c[:, 1] - py) ** 2 < r * r)
        best = min(best, h2 * count / r**N_DIM)
    return best


def tower_ahlfors_samples(domain):
    """Passage midpoints with radius half the passage length."""
    out = []
    for r0, r1, c0, c1 in domain.meta["passages"]:
        i = (r0 + r1) // 2
        j = (c0 + c1) // 2
        out.append((domain.cell_center(i, j), (r1 - r0) * domain.h / 2.0))
    return out
