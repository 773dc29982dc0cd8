"""Least concave majorants of sampled functions.

The 2-D envelope is read off the upper facets of the convex hull of the
lifted points ``(x, y, u)``.  Two independent checks are provided: a
line-by-line sweep that concavifies ``u`` along every lattice direction until
nothing changes, and a per-node linear program that maximizes a convex
combination of samples representing the node.

The witness ``envelope − gap/2`` is concave and lies within ``gap/2`` of the
input, so ``gap/2`` bounds the distance from the input to concave functions.
In 1-D that bound is attained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .fields import GridField


class EnvelopeError(ValueError):
    """Degenerate input for an envelope computation."""


@dataclass
class EnvelopeResult:
    envelope: object  # GridField (2-D) or ndarray (1-D)
    gap: float
    witness: object
    witness_distance: float
    argmax: object

    def summary(self) -> dict:
        am = self.argmax
        if isinstance(am, (tuple, list, np.ndarray)):
            am = [float(a) for a in am]
        else:
            am = float(am)
        return {"gap": float(self.gap), "witness_distance": float(self.witness_distance), "argmax": am}


# -- 1-D ------------------------------------------------------------------------------

def upper_hull_1d(xs: np.ndarray, ys: np.ndarray) -> list[int]:
    """Indices of the upper convex hull (monotone chain), left to right."""
    hull: list[int] = []
    for k in range(len(xs)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (xs[b] - xs[a]) * (ys[k] - ys[a]) - (ys[b] - ys[a]) * (xs[k] - xs[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    return hull


def concave_envelope_1d(xs, values) -> EnvelopeResult:
    """Upper concave hull of ``(xs, values)`` evaluated at ``xs``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(values, dtype=float)
    if xs.ndim != 1 or len(xs) < 2 or xs.shape != ys.shape:
        raise EnvelopeError("need at least two samples")
    if np.any(np.diff(xs) <= 0):
        raise EnvelopeError("xs must be strictly increasing")
    hull = upper_hull_1d(xs, ys)
    env = np.interp(xs, xs[hull], ys[hull])
    env[hull] = ys[hull]
    env = np.maximum(env, ys)
    diff = env - ys
    k = int(np.argmax(diff))
    gap = float(diff[k])
    return EnvelopeResult(env, gap, env - gap / 2.0, gap / 2.0, float(xs[k]))


# -- 2-D ------------------------------------------------------------------------------

def _node_arrays(u: GridField, point_filter=None):
    sel = u.mask.usable & np.isfinite(u.values)
    if point_filter is not None:
        sel &= point_filter
    J, I = np.nonzero(sel)
    return sel, I, J, u.values[J, I]


def concave_envelope_2d(u: GridField, point_filter=None) -> EnvelopeResult:
    """Concave envelope on the usable nodes (optionally a filtered subset).

    Raises :class:`EnvelopeError` when the nodes are all collinear.
    """
    sel, I, J, v = _node_arrays(u, point_filter)
    if len(I) < 3:
        raise EnvelopeError("need at least three nodes")
    P = np.stack([I, J], 1).astype(float)
    if np.linalg.matrix_rank(P[1:] - P[0]) < 2:
        raise EnvelopeError("degenerate (collinear) node set")
    env_nodes = _hull_envelope(I, J, v)
    env = np.full(u.mask.shape, np.nan)
    env[J, I] = env_nodes
    return _result(u, env, sel)


def _result(u: GridField, env: np.ndarray, sel: np.ndarray) -> EnvelopeResult:
    diff = np.where(sel, env - u.values, -np.inf)
    k = int(np.argmax(diff))
    j, i = divmod(k, u.mask.shape[1])
    gap = float(diff[j, i])
    X, Y = u.mask.coords
    efield = GridField(u.mask, env, extended=True)
    wfield = GridField(u.mask, env - gap / 2.0, extended=True)
    return EnvelopeResult(efield, gap, wfield, gap / 2.0, (float(X[j, i]), float(Y[j, i])))


def _hull_envelope(I, J, v) -> np.ndarray:
    """Upper-hull values at integer nodes ``(I, J)`` with samples ``v``."""
    scale = float(np.max(np.abs(v))) or 1.0
    # exactly planar data gives a flat hull; answer directly
    A = np.stack([I, J, np.ones_like(I)], 1).astype(float)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    plane = A @ coef
    if np.max(np.abs(plane - v)) <= 1e-13 * scale:
        return v.astype(float).copy()
    pts = np.stack([I.astype(float), J.astype(float), v / scale], 1)
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:  # pragma: no cover - guarded by the planar test
        raise EnvelopeError(f"hull construction failed: {exc}") from exc
    eq = hull.equations
    up = eq[:, 2] > 1e-12
    tris = hull.simplices[up]
    out = np.full(len(I), -np.inf)
    imin, jmin = int(I.min()), int(J.min())
    grid = np.full((int(J.max()) - jmin + 1, int(I.max()) - imin + 1), -1, dtype=np.int64)
    grid[J - jmin, I - imin] = np.arange(len(I))
    ti = I[tris].astype(float)
    tj = J[tris].astype(float)
    tv = v[tris]
    lo_i = np.floor(ti.min(1)).astype(int)
    hi_i = np.ceil(ti.max(1)).astype(int)
    lo_j = np.floor(tj.min(1)).astype(int)
    hi_j = np.ceil(tj.max(1)).astype(int)
    wi = hi_i - lo_i
    wj = hi_j - lo_j
    det = (tj[:, 1] - tj[:, 2]) * (ti[:, 0] - ti[:, 2]) + (ti[:, 2] - ti[:, 1]) * (tj[:, 0] - tj[:, 2])
    keep = np.abs(det) > 0.5  # lattice triangles have |det| >= 1
    for w, hgt in sorted(set(zip(wi[keep].tolist(), wj[keep].tolist()))):
        grp = np.nonzero(keep & (wi == w) & (wj == hgt))[0]
        oi, oj = np.meshgrid(np.arange(w + 1), np.arange(hgt + 1))
        oi, oj = oi.ravel(), oj.ravel()
        ci = lo_i[grp, None] + oi[None, :]
        cj = lo_j[grp, None] + oj[None, :]
        a, b, c = ti[grp], tj[grp], tv[grp]
        d = det[grp, None]
        l0 = ((b[:, 1, None] - b[:, 2, None]) * (ci - a[:, 2, None]) + (a[:, 2, None] - a[:, 1, None]) * (cj - b[:, 2, None])) / d
        l1 = ((b[:, 2, None] - b[:, 0, None]) * (ci - a[:, 2, None]) + (a[:, 0, None] - a[:, 2, None]) * (cj - b[:, 2, None])) / d
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -1e-12) & (l1 >= -1e-12) & (l2 >= -1e-12)
        gi = np.clip(ci - imin, 0, grid.shape[1] - 1)
        gj = np.clip(cj - jmin, 0, grid.shape[0] - 1)
        inb = (ci >= imin) & (ci - imin < grid.shape[1]) & (cj >= jmin) & (cj - jmin < grid.shape[0])
        node = np.where(inb, grid[gj, gi], -1)
        ok = inside & (node >= 0)
        val = l0 * c[:, 0, None] + l1 * c[:, 1, None] + l2 * c[:, 2, None]
        np.maximum.at(out, node[ok], val[ok])
    # hull vertices carry their own sample; guard against roundoff elsewhere
    out[hull.vertices] = np.maximum(out[hull.vertices], v[hull.vertices])
    if not np.all(np.isfinite(out)):
        raise EnvelopeError("hull facets do not cover every node")
    return np.maximum(out, v)


def sweep_envelope(u: GridField, point_filter=None, max_rounds: int = 1000, tol: float = 0.0) -> GridField:
    """Smallest majorant that is concave along every lattice line.

    Repeats line-wise 1-D concave envelopes over all primitive lattice
    directions until a full round changes nothing (beyond ``tol``).  This is
    a lower bound for the hull envelope; the two coincide on the test inputs
    used here but not for every node function.
    """
    sel, I, J, v = _node_arrays(u, point_filter)
    e = np.where(sel, u.values, np.nan)
    ny, nx = e.shape
    dirs = _primitive_dirs(nx, ny)
    lines = []
    for dx, dy in dirs:
        # start points: nodes whose predecessor along (dx, dy) is off the set
        pi, pj = I - dx, J - dy
        inside = (pi >= 0) & (pi < nx) & (pj >= 0) & (pj < ny)
        prev_sel = np.zeros(len(I), bool)
        prev_sel[inside] = sel[pj[inside], pi[inside]]
        for s in np.nonzero(~prev_sel)[0]:
            ii, jj = [I[s]], [J[s]]
            while True:
                a, b = ii[-1] + dx, jj[-1] + dy
                if 0 <= a < nx and 0 <= b < ny and sel[b, a]:
                    ii.append(a)
                    jj.append(b)
                else:
                    break
            if len(ii) >= 3:
                lines.append((np.array(jj), np.array(ii)))
    for _ in range(max_rounds):
        changed = 0.0
        for jj, ii in lines:
            t = np.arange(len(ii), dtype=float)
            vals = e[jj, ii]
            hull = upper_hull_1d(t, vals)
            env = np.interp(t, t[hull], vals[hull])
            env = np.maximum(env, vals)
            changed = max(changed, float(np.max(env - vals)))
            e[jj, ii] = env
        if changed <= tol:
            break
    return GridField(u.mask, e, extended=True)


def _primitive_dirs(nx: int, ny: int):
    out = []
    for dx in range(0, nx):
        for dy in range(-(ny - 1), ny):
            if dx == 0 and dy <= 0:
                continue
            if math.gcd(dx, abs(dy)) == 1:
                out.append((dx, dy))
    return out


def lp_envelope(u: GridField, point_filter=None) -> GridField:
    """Envelope by one linear program per node: the largest convex
    combination of samples whose nodes average to the given node."""
    sel, I, J, v = _node_arrays(u, point_filter)
    n = len(I)
    A_eq = np.vstack([I.astype(float), J.astype(float), np.ones(n)])
    out = np.full(u.mask.shape, np.nan)
    for k in range(n):
        res = linprog(-v, A_eq=A_eq, b_eq=[I[k], J[k], 1.0], bounds=(0, None), method="highs")
        if res.status != 0:
            raise EnvelopeError(f"LP failed at node {k}: {res.message}")
        out[J[k], I[k]] = max(-res.fun, v[k])
    return GridField(u.mask, out, extended=True)


def lattice_concavity_defect(e: GridField, point_filter=None) -> float:
    """Concavity defect ``max C_{−e} = max(λe(y1) + (1−λ)e(y3) − e(y2))`` over
    node triples with ``y2`` a node on the segment ``[y1, y3]`` (``-inf`` when
    there is none).  Nonpositive iff ``e`` is concave along lattice lines."""
    sel, I, J, _ = _node_arrays(e, point_filter)
    vals = e.values
    ny, nx = vals.shape
    best = -math.inf
    for dx in range(0, nx):
        for dy in range(-(ny - 1), ny):
            if dx == 0 and dy <= 0:
                continue
            g = math.gcd(dx, abs(dy))
            if g < 2:
                continue
            a_i, a_j = I, J
            c_i, c_j = I + dx, J + dy
            ok = (c_i < nx) & (c_j >= 0) & (c_j < ny)
            a_i, a_j, c_i, c_j = a_i[ok], a_j[ok], c_i[ok], c_j[ok]
            ok = sel[c_j, c_i]
            a_i, a_j, c_i, c_j = a_i[ok], a_j[ok], c_i[ok], c_j[ok]
            if len(a_i) == 0:
                continue
            sx, sy = dx // g, dy // g
            for t in range(1, g):
                lam = 1.0 - t / g
                b = vals[a_j + t * sy, a_i + t * sx]
                d = lam * vals[a_j, a_i] + (1.0 - lam) * vals[c_j, c_i] - b
                best = max(best, float(np.max(d)))
    return best


@dataclass
class HyersUlam:
    ratio: float
    witness_distance: float
    delta: float
    diagnostic: str = ""


def hyers_ulam_ratio(u: GridField, delta: float, point_filter=None, envelope: EnvelopeResult | None = None) -> HyersUlam:
    """Empirical constant ``witness_distance / δ``.

    With ``δ = 0`` and a nonzero gap the ratio is ``inf`` and the diagnostic
    says the gap is discretization-dominated.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    env = concave_envelope_2d(u, point_filter) if envelope is None else envelope
    wd = env.witness_distance
    if delta == 0:
        if wd > 0:
            return HyersUlam(math.inf, wd, 0.0, "delta is zero; gap is discretization-dominated")
        return HyersUlam(0.0, wd, 0.0, "delta and gap both zero")
    return HyersUlam(wd / delta, wd, delta)
