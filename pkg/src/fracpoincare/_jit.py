"""Compiled inner loops.

Everything here is ``nogil`` so the block drivers in :mod:`kernel` can run
blocks on a thread pool; every function is deterministic for fixed input.
Sums use Neumaier compensation.
"""

import heapq

import numba as nb
import numpy as np

SQRT2 = np.sqrt(2.0)

# ---------------------------------------------------------------------------
# pair sums
# ---------------------------------------------------------------------------


@nb.njit(inline="always")
def _pw(d, p_mode, p):
    if p_mode == 1:
        return d
    if p_mode == 2:
        return d * d
    return d**p


@nb.njit(cache=True, nogil=True)
def full_offset_row(U, M, di, kt_row, p_mode, p):
    """Sum over the half-plane offsets with vertical component ``di``.

    Returns ``(sum, compensation, pairs)`` for unordered pairs
    ``x, x + (di, dj)`` with both cells active, each weighted by
    ``kt_row[dj + nx - 1]``.
    """
    ny, nx = U.shape
    s = 0.0
    comp = 0.0
    count = 0
    for dj in range(-(nx - 1), nx):
        if di == 0 and dj <= 0:
            continue
        k = kt_row[dj + nx - 1]
        j0 = max(0, -dj)
        j1 = min(nx, nx - dj)
        ss = 0.0
        sc = 0.0
        for i in range(ny - di):
            for j in range(j0, j1):
                if M[i, j] and M[i + di, j + dj]:
                    term = _pw(abs(U[i, j] - U[i + di, j + dj]), p_mode, p)
                    t = ss + term
                    if abs(ss) >= abs(term):
                        sc += (ss - t) + term
                    else:
                        sc += (term - t) + ss
                    ss = t
                    count += 1
        term = k * (ss + sc)
        t = s + term
        if abs(s) >= abs(term):
            comp += (s - t) + term
        else:
            comp += (term - t) + s
        s = t
    return s, comp, count


@nb.njit(cache=True, nogil=True)
def ball_cells(U, M, ci, cj, radius, odi, odj, orad, okern, p_mode, p,
               start, stop, out, counts):
    """Per-cell sums over the open ball ``|o| h < radius[a]``.

    ``out[a] = sum_o okern[o] * |U(c_a) - U(c_a + o)|^p``; offsets are
    pre-sorted by length so the loop stops at the first offset outside.
    """
    ny, nx = U.shape
    n_off = orad.shape[0]
    for a in range(start, stop):
        i = ci[a]
        j = cj[a]
        R = radius[a]
        u0 = U[i, j]
        ss = 0.0
        sc = 0.0
        cnt = 0
        for k in range(n_off):
            if orad[k] >= R:
                break
            ii = i + odi[k]
            jj = j + odj[k]
            if ii < 0 or ii >= ny or jj < 0 or jj >= nx:
                continue
            if not M[ii, jj]:
                continue
            term = okern[k] * _pw(abs(u0 - U[ii, jj]), p_mode, p)
            t = ss + term
            if abs(ss) >= abs(term):
                sc += (ss - t) + term
            else:
                sc += (term - t) + ss
            ss = t
            cnt += 1
        out[a] = ss + sc
        counts[a] = cnt


@nb.njit(cache=True, nogil=True)
def ball_cell_contrib(U, M, R_grid, i, j, val, odi, odj, orad, okern, p_mode, p):
    """Ordered-pair contributions involving cell (i, j) if it held ``val``.

    Counts pairs (c, y) with y in the ball of c and pairs (x, c) with c in
    the ball of x; ``R_grid`` holds the ball radius of every cell.
    """
    ny, nx = U.shape
    R = R_grid[i, j]
    s = 0.0
    for k in range(orad.shape[0]):
        ii = i + odi[k]
        jj = j + odj[k]
        if ii < 0 or ii >= ny or jj < 0 or jj >= nx or not M[ii, jj]:
            continue
        w = okern[k] * _pw(abs(val - U[ii, jj]), p_mode, p)
        if orad[k] < R:
            s += w
        # offsets are symmetric, so (ii, jj) -> (i, j) uses the same kernel
        if orad[k] < R_grid[ii, jj]:
            s += w
    return s


@nb.njit(cache=True, nogil=True)
def full_cell_contrib(U, M, Kt, i, j, val, p_mode, p):
    """Ordered-pair contributions of cell (i, j) to the full double sum."""
    ny, nx = U.shape
    s = 0.0
    for ii in range(ny):
        for jj in range(nx):
            if not M[ii, jj] or (ii == i and jj == j):
                continue
            s += Kt[ii - i + ny - 1, jj - j + nx - 1] * _pw(abs(val - U[ii, jj]), p_mode, p)
    return 2.0 * s


# ---------------------------------------------------------------------------
# clearance-constrained path search
# ---------------------------------------------------------------------------


@nb.njit(inline="always")
def _octile(i, j, ti, tj, h):
    a = abs(i - ti)
    b = abs(j - tj)
    if a < b:
        a, b = b, a
    return h * (a + (SQRT2 - 1.0) * b)


@nb.njit(cache=True, nogil=True)
def _open(M, BR, BU, i, j, di, dj):
    """Whether the 8-neighbour move (i, j) -> (i+di, j+dj) is admissible."""
    ny, nx = M.shape
    ii = i + di
    jj = j + dj
    if ii < 0 or ii >= ny or jj < 0 or jj >= nx or not M[ii, jj]:
        return False
    if di == 0:
        return not BR[i, min(j, jj)]
    if dj == 0:
        return not BU[min(i, ii), j]
    # diagonal: the whole 2x2 block must be open so the shared corner is interior
    if not (M[ii, j] and M[i, jj]):
        return False
    lo_i = min(i, ii)
    lo_j = min(j, jj)
    if BR[i, lo_j] or BR[ii, lo_j]:
        return False
    if BU[lo_i, j] or BU[lo_i, jj]:
        return False
    return True


@nb.njit(cache=True, nogil=True)
def clearance_reach(M, BR, BU, dist, h, si, sj, ti, tj, c):
    """A* from (si, sj) to (ti, tj) keeping ``dist(y) >= t / c`` on the way.

    ``t`` is the centre-to-centre arc length from the source. Arriving
    earlier never hurts later constraints, so the first admissible arrival
    found by the search is optimal.
    """
    ny, nx = M.shape
    n = ny * nx
    best = np.full(n, np.inf)
    done = np.zeros(n, np.bool_)
    src = si * nx + sj
    tgt = ti * nx + tj
    if src == tgt:
        return True
    best[src] = 0.0
    heap = [(_octile(si, sj, ti, tj, h), src)]
    slack = 1.0 + 1e-12
    while len(heap) > 0:
        f, node = heapq.heappop(heap)
        if done[node]:
            continue
        done[node] = True
        i = node // nx
        j = node - i * nx
        t0 = best[node]
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                if not _open(M, BR, BU, i, j, di, dj):
                    continue
                ii = i + di
                jj = j + dj
                nb_ = ii * nx + jj
                if done[nb_]:
                    continue
                step = h if (di == 0 or dj == 0) else h * SQRT2
                t = t0 + step
                if t > c * dist[ii, jj] * slack:
                    continue
                if t < best[nb_]:
                    if nb_ == tgt:
                        return True
                    best[nb_] = t
                    heapq.heappush(heap, (t + _octile(ii, jj, ti, tj, h), nb_))
    return False


# ---------------------------------------------------------------------------
# weak-type quasinorm
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def weak_objective(v, m, a, q):
    """``sup_t mu(|u - a| > t) t^q`` for distinct values ``v`` with masses ``m``.

    The supremum is attained in the limit ``t -> d^-`` for ``d`` a value of
    ``|u - a|``, where the measure is that of ``{|u - a| >= d}``.
    """
    d = np.abs(v - a)
    order = np.argsort(-d, kind="mergesort")
    best = 0.0
    cum = 0.0
    k = 0
    n = v.shape[0]
    while k < n:
        dk = d[order[k]]
        g = k
        while g < n and d[order[g]] == dk:
            cum += m[order[g]]
            g += 1
        if dk > 0.0:
            val = cum * dk**q
            if val > best:
                best = val
        k = g
    return best


@nb.njit(cache=True)
def _side_max(v, c, a, q, inc):
    best = 0.0
    arg = -1
    for x in range(v.shape[0]):
        if inc and v[x] < a:
            val = c[x] * (a - v[x]) ** q
        elif (not inc) and v[x] > a:
            val = c[x] * (v[x] - a) ** q
        else:
            continue
        if val > best:
            best = val
            arg = x
    return best, arg


@nb.njit(cache=True)
def weak_exact(v, m, q):
    """Exact ``inf_a sup_t mu(|u - a| > t) t^q`` for distinct sorted ``v``.

    Between consecutive breakpoints (values and pairwise midpoints) the
    ordering of ``|v - a|`` is fixed, so the objective is the max of an
    increasing and a decreasing envelope; their crossing is found by
    bisection and then solved in closed form for the active pair.
    """
    n = v.shape[0]
    if n <= 1:
        return 0.0
    nb_ = n + n * (n - 1) // 2
    bp = np.empty(nb_)
    for i in range(n):
        bp[i] = v[i]
    k = n
    for i in range(n):
        for j in range(i + 1, n):
            bp[k] = 0.5 * (v[i] + v[j])
            k += 1
    bp = np.unique(bp)
    best = np.inf
    for k in range(bp.shape[0]):
        val = weak_objective(v, m, bp[k], q)
        if val < best:
            best = val
    c = np.empty(n)
    for k in range(bp.shape[0] - 1):
        L = bp[k]
        R = bp[k + 1]
        mid = 0.5 * (L + R)
        d = np.abs(v - mid)
        # mass with |v - a| >= |v_x - a| is fixed on the open interval
        for x in range(n):
            s = 0.0
            for y in range(n):
                if d[y] >= d[x]:
                    s += m[y]
            c[x] = s
        IL, _ = _side_max(v, c, L, q, True)
        DL, _ = _side_max(v, c, L, q, False)
        IR, _ = _side_max(v, c, R, q, True)
        DR, _ = _side_max(v, c, R, q, False)
        if IL >= DL:
            cand = IL
        elif IR <= DR:
            cand = DR
        else:
            lo = L
            hi = R
            for _ in range(200):
                md = 0.5 * (lo + hi)
                if md <= lo or md >= hi:
                    break
                Im, _ = _side_max(v, c, md, q, True)
                Dm, _ = _side_max(v, c, md, q, False)
                if Im < Dm:
                    lo = md
                else:
                    hi = md
            Ih, ai = _side_max(v, c, hi, q, True)
            Dh, aj = _side_max(v, c, hi, q, False)
            cand = max(Ih, Dh)
            if ai >= 0 and aj >= 0:
                rho = (c[aj] / c[ai]) ** (1.0 / q)
                a = (v[ai] + rho * v[aj]) / (1.0 + rho)
                if L < a < R:
                    Ia, _ = _side_max(v, c, a, q, True)
                    Da, _ = _side_max(v, c, a, q, False)
                    cand = min(cand, max(Ia, Da))
            Il, _ = _side_max(v, c, lo, q, True)
            Dl, _ = _side_max(v, c, lo, q, False)
            cand = min(cand, max(Il, Dl))
        if cand < best:
            best = cand
    return best


@nb.njit(cache=True)
def weak_scan(v, m, cands, q):
    best = np.inf
    arg = 0
    for k in range(cands.shape[0]):
        val = weak_objective(v, m, cands[k], q)
        if val < best:
            best = val
            arg = k
    return best, arg
