import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concavity_lab.domain import ConvexDomain, GridSpec, build_mask
from concavity_lab.envelope import (
    EnvelopeError,
    concave_envelope_1d,
    concave_envelope_2d,
    hyers_ulam_ratio,
    lattice_concavity_defect,
    lp_envelope,
    sweep_envelope,
    upper_hull_1d,
)
from concavity_lab.fields import GridField
from concavity_lab.solver import solve_poisson

SQUARE = ConvexDomain.rectangle(-1, 1, -1, 1)


def small_mask(n=9):
    # one-cell margin so that x, y = +-1 are grid lines
    h = 2.0 / (n - 3)
    return build_mask(SQUARE, GridSpec(n, n, (-1 - h, 1 + h, -1 - h, 1 + h)))


def random_field(mask, rng, scale=1.0):
    vals = np.where(mask.usable, scale * rng.normal(size=mask.shape), np.nan)
    return GridField(mask, vals, extended=True)


def nodes_of(e):
    return e.values[e.mask.usable]


# -- 1-D ---------------------------------------------------------------------------------

def test_1d_concave_input_has_zero_gap():
    x = np.linspace(-1, 1, 41)
    r = concave_envelope_1d(x, 1 - x**2)
    assert r.gap <= 1e-15
    assert np.allclose(r.envelope, 1 - x**2, atol=1e-15)


def test_1d_abs_value():
    x = np.linspace(-1, 1, 41)
    r = concave_envelope_1d(x, np.abs(x))
    assert np.allclose(r.envelope, 1.0)
    assert abs(r.gap - 1.0) < 1e-15 and r.argmax == 0.0
    assert abs(r.witness_distance - 0.5) < 1e-15
    assert np.max(np.abs(r.witness - np.abs(x))) == pytest.approx(0.5)


def test_1d_input_validation():
    with pytest.raises(EnvelopeError):
        concave_envelope_1d([0.0], [1.0])
    with pytest.raises(EnvelopeError):
        concave_envelope_1d([0.0, 0.0, 1.0], [1.0, 2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=40))
def test_1d_hull_is_concave_majorant(ys):
    ys = np.asarray(ys)
    x = np.arange(len(ys), dtype=float)
    r = concave_envelope_1d(x, ys)
    assert np.all(r.envelope >= ys)
    second = r.envelope[:-2] - 2 * r.envelope[1:-1] + r.envelope[2:]
    assert np.all(second <= 1e-9 * (1 + np.max(np.abs(ys))))
    hull = upper_hull_1d(x, ys)
    assert hull[0] == 0 and hull[-1] == len(ys) - 1


def test_1d_distance_is_optimal():
    # in 1-D, gap/2 is the sup-distance to concave sequences; check against an LP
    from scipy.optimize import linprog

    rng = np.random.default_rng(7)
    for _ in range(5):
        ys = rng.normal(size=12)
        n = len(ys)
        # variables (c_0..c_{n-1}, t): minimize t with |c - y| <= t, c concave
        cost = np.r_[np.zeros(n), 1.0]
        rows, rhs = [], []
        for i in range(n):
            e = np.zeros(n + 1)
            e[i], e[-1] = 1, -1
            rows.append(e.copy())
            rhs.append(ys[i])
            e[i] = -1
            rows.append(e)
            rhs.append(-ys[i])
        for i in range(1, n - 1):
            e = np.zeros(n + 1)
            e[i - 1], e[i], e[i + 1] = 1, -2, 1
            rows.append(e)
            rhs.append(0.0)
        res = linprog(cost, A_ub=np.array(rows), b_ub=rhs, bounds=[(None, None)] * (n + 1), method="highs")
        r = concave_envelope_1d(np.arange(n, dtype=float), ys)
        assert abs(res.fun - r.witness_distance) < 1e-8


# -- 2-D ---------------------------------------------------------------------------------

def test_2d_concave_field_zero_gap(disk16):
    u = GridField.from_function(disk16, lambda x, y: 1 - x * x - 2 * y * y + 0.3 * x * y)
    r = concave_envelope_2d(u)
    assert r.gap <= 1e-12


def test_2d_planar_field_exact(disk16):
    u = GridField.from_function(disk16, lambda x, y: 0.5 + 2 * x - y)
    r = concave_envelope_2d(u)
    assert r.gap == 0.0


def test_2d_convex_paraboloid_square():
    m = small_mask(9)
    u = GridField.from_function(m, lambda x, y: x * x + y * y)
    r = concave_envelope_2d(u)
    # on the square the envelope of x^2 + y^2 is 2 (its value on the corners)
    assert np.allclose(nodes_of(r.envelope), 2.0, atol=1e-12)
    assert abs(r.gap - 2.0) < 1e-12 and r.argmax == (0.0, 0.0)


def test_2d_degenerate_inputs(disk16):
    u = GridField.from_function(disk16, lambda x, y: x)
    X, Y = disk16.coords
    line = disk16.usable & (np.abs(Y) < 1e-12)
    with pytest.raises(EnvelopeError):
        concave_envelope_2d(u, point_filter=line)
    two = np.zeros(disk16.shape, bool)
    two[np.nonzero(disk16.usable)[0][:2], np.nonzero(disk16.usable)[1][:2]] = True
    with pytest.raises(EnvelopeError):
        concave_envelope_2d(u, point_filter=two)


def test_hull_matches_lp_and_sweep(rng):
    m = small_mask(9)
    for _ in range(4):
        u = random_field(m, rng)
        hull = concave_envelope_2d(u).envelope
        lp = lp_envelope(u)
        sw = sweep_envelope(u)
        assert np.max(np.abs(nodes_of(hull) - nodes_of(lp))) < 1e-9
        assert np.all(nodes_of(sw) <= nodes_of(hull) + 1e-9)


def test_hull_matches_lp_on_disk(rng):
    m = build_mask(ConvexDomain.disk(), GridSpec.covering(ConvexDomain.disk(), 0.25))
    u = random_field(m, rng)
    hull = concave_envelope_2d(u).envelope
    lp = lp_envelope(u)
    assert np.max(np.abs(nodes_of(hull) - nodes_of(lp))) < 1e-9


def test_torsion_powers(torsion32):
    from concavity_lab.fields import Transform, apply_transform

    root = apply_transform(torsion32, Transform.power(0.5))
    assert concave_envelope_2d(root).gap <= 1e-12
    sq = apply_transform(torsion32, Transform.power(2.0))
    assert concave_envelope_2d(sq).gap > 1e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_envelope_properties(seed):
    rng = np.random.default_rng(seed)
    m = small_mask(7)
    u = random_field(m, rng)
    r = concave_envelope_2d(u)
    e = r.envelope
    un = nodes_of(u)
    en = nodes_of(e)
    # majorant, lattice concavity, idempotence
    assert np.all(en >= un)
    assert lattice_concavity_defect(e) <= 1e-9
    again = concave_envelope_2d(e)
    assert again.gap <= 1e-9
    # the witness is within gap/2 and the lattice defect of u is at most the gap
    assert np.max(np.abs(nodes_of(r.witness) - un)) <= r.gap / 2 + 1e-12
    assert lattice_concavity_defect(u) <= r.gap + 1e-12
    # affine equivariance and monotonicity
    X, Y = m.coords
    aff = 0.3 + 1.7 * X - 0.4 * Y
    shifted = GridField(m, np.where(m.usable, u.values + aff, np.nan), extended=True)
    es = concave_envelope_2d(shifted).envelope
    assert np.max(np.abs(nodes_of(es) - (en + aff[m.usable]))) < 1e-9
    bigger = GridField(m, np.where(m.usable, u.values + np.abs(rng.normal(size=m.shape)), np.nan), extended=True)
    assert np.all(nodes_of(concave_envelope_2d(bigger).envelope) >= en - 1e-9)


def test_lattice_defect_examples():
    m = small_mask(9)
    conc = GridField.from_function(m, lambda x, y: -(x * x) - y * y)
    assert lattice_concavity_defect(conc) <= 1e-15
    conv = GridField.from_function(m, lambda x, y: x * x)
    # largest chord gap of x^2 between x=-1 and x=1 at the midpoint
    assert abs(lattice_concavity_defect(conv) - 1.0) < 1e-12


def test_hyers_ulam_ratio(torsion32):
    m = small_mask(9)
    u = GridField.from_function(m, lambda x, y: np.abs(x))
    r = hyers_ulam_ratio(u, 0.25)
    assert abs(r.ratio - 2.0) < 1e-12 and r.delta == 0.25
    z = hyers_ulam_ratio(u, 0.0)
    assert z.ratio == math.inf and "discretization" in z.diagnostic
    flat = hyers_ulam_ratio(GridField.from_function(m, lambda x, y: 1 + 0 * x), 0.0)
    assert flat.ratio == 0.0
    with pytest.raises(ValueError):
        hyers_ulam_ratio(u, -1.0)


def test_summary_is_json_ready(torsion32):
    import json

    s = concave_envelope_2d(torsion32).summary()
    json.dumps(s)
    assert set(s) == {"gap", "witness_distance", "argmax"}
