import math

import numpy as np
import pytest

from fracpoincare.geometry import DomainSpec, ball_cells, build_domain, from_mask, tail_components
from fracpoincare.inequality_lab import (
    FunctionFamily,
    ascend,
    comparability_ratio,
    estimate_constant,
    necessity_function,
    necessity_probe,
    poincare_ratio,
    representation_constant,
    riesz_weak_ratio,
    room_indicator,
)
from fracpoincare.kernel import FracParams, GridFunction, gagliardo_improved, local_density, riesz_potential


@pytest.fixture(scope="module")
def square16():
    return build_domain(DomainSpec("unit_square", 1 / 16))


@pytest.fixture(scope="module")
def tower():
    return build_domain(DomainSpec("rooms_passages", 1 / 256, s=1.5, K=2))


# -- ratios -----------------------------------------------------------------------


def test_ratio_invariances(square16):
    u = GridFunction.from_callable(square16, lambda x, y: np.sin(4 * x) + y * y)
    prm = FracParams(p=2, delta=0.5, tau=1)
    r = poincare_ratio(u, prm)
    shifted = GridFunction(square16, u.values + 11.0)
    # q = p keeps the ratio scale invariant
    scaled = GridFunction(square16, -5.0 * u.values)
    assert poincare_ratio(shifted, prm) == pytest.approx(r, rel=1e-10)
    assert poincare_ratio(scaled, prm.replace(q=2)) == pytest.approx(poincare_ratio(u, prm.replace(q=2)), rel=1e-12)
    assert poincare_ratio(GridFunction.constant(square16, 4.0), prm) == 0.0


def test_ratio_inf_when_seminorm_vanishes():
    d = from_mask(np.ones((1, 2), bool), 1.0)
    u = GridFunction(d, [0.0, 1.0])
    assert poincare_ratio(u, FracParams(tau=1)) == math.inf
    assert poincare_ratio(u, FracParams(tau=math.inf), "full") < math.inf
    with pytest.raises(ValueError):
        poincare_ratio(u, FracParams(), "bogus")


def test_comparability(square16):
    prm = FracParams(p=2, delta=0.5, tau=1)
    assert comparability_ratio(GridFunction.constant(square16), prm) == 1.0
    for _, v in FunctionFamily("random_bandlimited", 4, seed=3).members(square16):
        assert comparability_ratio(GridFunction(square16, v), prm) >= 1.0


# -- families --------------------------------------------------------------------


def test_bandlimited_prefix_stable(square16):
    a = FunctionFamily("random_bandlimited", 3, seed=5).members(square16)
    b = FunctionFamily("random_bandlimited", 6, seed=5).members(square16)
    for (ia, va), (ib, vb) in zip(a, b):
        assert ia == ib and np.array_equal(va, vb)
    c = FunctionFamily("random_bandlimited", 3, seed=6).members(square16)
    assert not np.array_equal(a[0][1], c[0][1])


def test_family_kinds(square16):
    assert len(FunctionFamily("radial_bumps", 5).members(square16)) == 5
    assert len(FunctionFamily("coordinate", 3).members(square16)) == 3
    vals = [np.ones(square16.n_active)]
    assert FunctionFamily("custom_list", options={"values": vals}).members(square16)[0][0] == 0
    with pytest.raises(ValueError):
        FunctionFamily("nope")
    with pytest.raises(ValueError):
        FunctionFamily("room_indicators").members(square16)


def test_room_indicators(tower):
    h = tower.h
    K = tower.meta["K"]
    for j in range(1, K + 1):
        v = room_indicator(tower, j)
        g = np.zeros(tower.mask.shape)
        g[tower.mask] = v
        for k, (r0, r1, c0, c1) in enumerate(tower.meta["rooms"]):
            assert (g[r0:r1, c0:c1] == (1.0 if k >= j else 0.0)).all()
        r0, r1, c0, c1 = tower.meta["passages"][j - 1]
        ramp = g[r0:r1, c0]
        assert (np.diff(ramp) > 0).all() and 0 < ramp[0] < ramp[-1] < 1
        assert np.allclose(g[r0:r1, c0:c1], ramp[:, None])
        step = room_indicator(tower, j, smoothing=False)
        assert set(np.unique(step)) <= {0.0, 1.0}
    fam = FunctionFamily("room_indicators", 10).members(tower)
    assert [m for m, _ in fam] == list(range(1, K + 1))
    # with tau = 1 the 4-cell passage cells see their neighbours across the ramp
    prm = FracParams(p=2, delta=0.5, tau=1, q=1)
    assert gagliardo_improved(GridFunction(tower, fam[-1][1]), prm).value > 0
    # at tau = 1/2 the strict ball of a passage cell (radius <= h) holds no other centre
    w = tower.meta["passage_widths_rounded"][-1]
    if w <= 4 * h:
        assert gagliardo_improved(GridFunction(tower, fam[-1][1]), prm.replace(tau=0.5)).value == 0.0


# -- estimation -------------------------------------------------------------------


def test_estimate_monotone_in_family(square16):
    prm = FracParams(p=2, delta=0.5, tau=1)
    small = estimate_constant(square16, prm, FunctionFamily("random_bandlimited", 3, seed=2), ascent_steps=0)
    big = estimate_constant(square16, prm, FunctionFamily("random_bandlimited", 8, seed=2), ascent_steps=0)
    assert big.value >= small.value
    assert small.ratios == big.ratios[:3]
    assert big.value == max(big.ratios)


def test_ascent_never_decreases(square16):
    prm = FracParams(p=1, delta=0.5, tau=0.5, q=4 / 3)
    fam = FunctionFamily("random_bandlimited", 4, seed=1)
    base = estimate_constant(square16, prm, fam, ascent_steps=0)
    est = estimate_constant(square16, prm, fam, ascent_steps=3, seed=4)
    assert est.value >= base.value and est.ascent_gain >= 0
    again = estimate_constant(square16, prm, fam, ascent_steps=3, seed=4)
    assert again.value == est.value


def test_ascend_returns_valid_function(square16):
    u = GridFunction.from_callable(square16, lambda x, y: x)
    prm = FracParams(p=2, delta=0.5, tau=1)
    out = ascend(u, prm, steps=2, batch=8)
    assert poincare_ratio(out, prm) >= poincare_ratio(u, prm)


# -- pointwise bounds ----------------------------------------------------------------


def test_representation_constant_holds_pointwise(square16):
    prm = FracParams(p=1, delta=0.5, tau=0.5, q=4 / 3)
    u = GridFunction.from_callable(square16, lambda x, y: np.cos(3 * x) * y)
    C = representation_constant(u, prm, c=1.5)
    assert 0 < C < math.inf
    pot = riesz_potential(local_density(u, prm), prm.delta).values
    ref = ball_cells(square16, square16.center, square16.dist[square16.center_cell] / (18 * 1.5))
    ub0 = u.values[np.searchsorted(square16.active_index, ref)].mean()
    assert (np.abs(u.values - ub0) <= C * pot * (1 + 1e-12)).all()
    assert representation_constant(GridFunction.constant(square16), prm, c=1.5) == 0.0
    with pytest.raises(ValueError):
        representation_constant(u, prm, M=16.0, c=1.5)


def test_riesz_weak_ratio(square16):
    f = GridFunction.from_callable(square16, lambda x, y: np.exp(-((x - 0.3) ** 2 + y**2) * 8))
    r = riesz_weak_ratio(f, 0.5)
    assert 0 < r < math.inf
    # degree-0 homogeneous in f
    assert riesz_weak_ratio(GridFunction(square16, 7 * f.values), 0.5) == pytest.approx(r, rel=1e-10)
    assert riesz_weak_ratio(GridFunction.constant(square16, 0.0), 0.5) == 0.0


# -- necessity -----------------------------------------------------------------------


def test_necessity_square_empty(square16):
    prm = FracParams(p=2, delta=0.5, tau=1)
    for omega in [(0.5, 0.5), (0.4, 0.6), (0.55, 0.45)]:
        rec = necessity_probe(square16, omega, 0.2, ((0.1, 0.1), 0.08), prm)
        assert rec.empty and rec.rows == [] and rec.tail_measure == 0.0


def test_necessity_tower(tower):
    prm = FracParams(p=1, delta=0.5, tau=1, q=4 / 3)
    r0, r1, c0, c1 = tower.meta["passages"][0]
    omega = tower.cell_center((r0 + r1) // 2, (c0 + c1) // 2)
    d = tower.meta["passage_widths_rounded"][0]
    rec = necessity_probe(tower, omega, d, ((0.5, 0.5), 0.25), prm, grid=4,
                          d_sweep=[d, 1.5 * d, 2 * d])
    assert not rec.empty and rec.rows
    assert all(r["ring_r"] <= r["ring_rho"] for r in rec.rows)
    assert 1.0 <= rec.postponed_spread < math.inf
    assert len(rec.sweep) == 3 and rec.fitted_measure_constant > 0
    assert all(math.isfinite(r["poincare_ratio"]) for r in rec.rows)


def test_necessity_function_shape(tower):
    r0, r1, c0, c1 = tower.meta["passages"][0]
    omega = tower.cell_center((r0 + r1) // 2, (c0 + c1) // 2)
    d = tower.meta["passage_widths_rounded"][0]
    tail = tail_components(tower, omega, d, ((0.5, 0.5), 0.25))
    v = necessity_function(tower, tail, omega, d, 3 * d)
    assert v.min() == 0.0 and v.max() == 1.0
    # zero off the tail
    g = np.zeros(tower.ny * tower.nx)
    g[tower.active_index] = v
    off = np.setdiff1d(tower.active_index, tail.cells)
    assert not g[off].any()
    with pytest.raises(ValueError):
        necessity_function(tower, tail, omega, 2 * d, d)
