"""Convexity defect functionals and boundary checks.

For a function ``u`` and a triple ``(y1, y3, λ)`` with ``y2 = λy1 + (1−λ)y3``

    C_u = u(y2) − λ u(y1) − (1−λ) u(y3)

is nonpositive everywhere iff ``u`` is convex.  For a function ``g`` of
``(y, s)`` the joint version pairs ``s2 = λs1 + (1−λ)s3`` with ``y2``, and the
harmonic version subtracts the weighted harmonic mean instead:

    HC_g = g2 − g1 g3 / ((1−λ) g1 + λ g3),

defined when the denominator is positive or when ``g1 = g3 = 0`` (then
``HC_g = g2``).  Where defined, ``HC_g − C_g = λ(1−λ)(g1−g3)² / D ≥ 0``.

Sweeps run over pairs of grid nodes and a dyadic λ grid.  Off-grid ``y2`` is
located in fractional index coordinates, so dyadic λ give exact positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import BOUNDARY, INTERIOR
from .fields import FieldError, GridField, field_stats, interpolate
from .solver import Nonlinearity

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class InadmissibleQuery(ValueError):
    """Harmonic concavity is undefined for this query."""


@dataclass(frozen=True)
class Triple:
    y1: tuple[float, float]
    y3: tuple[float, float]
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    @property
    def y2(self) -> np.ndarray:
        return self.lam * np.asarray(self.y1, float) + (1.0 - self.lam) * np.asarray(self.y3, float)

    def to_dict(self) -> dict:
        return {"y1": list(map(float, self.y1)), "y3": list(map(float, self.y3)), "lambda": float(self.lam)}


@dataclass(frozen=True)
class HCQuery:
    """Argument pairs ``(y1, s1)``, ``(y3, s3)`` and weight ``λ``."""

    y1: tuple[float, float]
    s1: float
    y3: tuple[float, float]
    s3: float
    lam: float

    @property
    def y2(self) -> np.ndarray:
        return self.lam * np.asarray(self.y1, float) + (1.0 - self.lam) * np.asarray(self.y3, float)

    @property
    def s2(self) -> float:
        return self.lam * self.s1 + (1.0 - self.lam) * self.s3


# -- pointwise functionals -------------------------------------------------------

def convexity_value(u: GridField, t: Triple) -> float:
    """``C_u`` at one triple, off-grid values by interpolation."""
    v1 = interpolate(u, t.y1)
    v3 = interpolate(u, t.y3)
    if not (np.isfinite(v1) and np.isfinite(v3)):
        raise FieldError("triple touches a node flagged -inf")
    v2 = interpolate(u, t.y2)
    return float(v2 - t.lam * v1 - (1.0 - t.lam) * v3)


def _g_values(g: Nonlinearity, q: HCQuery):
    pts = np.array([q.y1, q.y2, q.y3], dtype=float)
    s = np.array([q.s1, q.s2, q.s3])
    if not np.all(g.in_range(s)):
        raise ValueError("query outside the validity range of g")
    return g(pts[:, 0], pts[:, 1], s)


def joint_convexity_value(g: Nonlinearity, q: HCQuery) -> float:
    g1, g2, g3 = _g_values(g, q)
    return float(g2 - q.lam * g1 - (1.0 - q.lam) * g3)


def admissibility(g1, g3, lam) -> np.ndarray:
    """Case codes: 1 positive mix, 0 both zero, -1 inadmissible."""
    g1, g3, lam = np.broadcast_arrays(*(np.asarray(a, float) for a in (g1, g3, lam)))
    d = (1.0 - lam) * g1 + lam * g3
    return np.where(d > 0, 1, np.where((g1 == 0) & (g3 == 0), 0, -1)).astype(np.int8)


def hc_values(g1, g2, g3, lam) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``HC`` from endpoint and midpoint values; NaN where inadmissible."""
    g1, g2, g3, lam = np.broadcast_arrays(*(np.asarray(a, float) for a in (g1, g2, g3, lam)))
    case = admissibility(g1, g3, lam)
    d = (1.0 - lam) * g1 + lam * g3
    with np.errstate(divide="ignore", invalid="ignore"):
        mix = g2 - g1 * g3 / d
    out = np.where(case == 1, mix, np.where(case == 0, g2, np.nan))
    return out, case


def query_case(g: Nonlinearity, q: HCQuery) -> str:
    g1, _, g3 = _g_values(g, q)
    return {1: "positive-mix", 0: "both-zero", -1: "inadmissible"}[int(admissibility(g1, g3, q.lam))]


def harmonic_convexity_value(g: Nonlinearity, q: HCQuery) -> float:
    g1, g2, g3 = _g_values(g, q)
    val, case = hc_values(g1, g2, g3, q.lam)
    if case < 0:
        raise InadmissibleQuery(f"HC undefined: g1={g1!r}, g3={g3!r}, lambda={q.lam!r}")
    return float(val)


# -- sweeps -----------------------------------------------------------------------

@dataclass
class SearchOptions:
    """Triple-sweep options.

    ``stride > 1`` replaces the all-pairs sweep by pairs of a coarse node set
    (every ``stride``-th node plus every node next to the boundary) and, with
    ``local_radius > 0``, all pairs within that Chebyshev index radius.
    ``point_filter`` further restricts the usable nodes.
    """

    lambda_steps: int = 16
    refine: bool = False
    stride: int = 1
    local_radius: int = 0
    point_filter: np.ndarray | None = None
    record: bool = False

    def describe(self) -> dict:
        return {
            "lambda_steps": self.lambda_steps,
            "refine": self.refine,
            "stride": self.stride,
            "local_radius": self.local_radius,
            "filtered": self.point_filter is not None,
        }


@dataclass
class DefectReport:
    sup_value: float
    argmax: Triple | None
    location_class: str
    evaluations: int
    lambda_steps: int
    n_points: int
    coarse_value: float = -math.inf
    refined: bool = False
    skipped: int = 0
    options: dict = field(default_factory=dict)
    table: list | None = None

    def to_dict(self) -> dict:
        return {
            "sup_value": _json_float(self.sup_value),
            "argmax": None if self.argmax is None else self.argmax.to_dict(),
            "location_class": self.location_class,
            "evaluations": self.evaluations,
            "lambda_steps": self.lambda_steps,
            "n_points": self.n_points,
            "coarse_value": _json_float(self.coarse_value),
            "refined": self.refined,
            "skipped": self.skipped,
            "options": self.options,
        }


def _json_float(v: float):
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return float(v)


def _combine_convexity(v2, v1, v3, lam):
    return v2 - lam * v1 - (1.0 - lam) * v3


def _combine_neg_hc(v2, v1, v3, lam):
    hc, _ = hc_values(v1, v2, v3, lam)
    return -hc


class _Sweep:
    """Best-triple accumulator with lexicographic tie-break on
    ``(first node, second node, λ index)`` in row-major node order."""

    def __init__(self, record=False):
        self.best = -math.inf
        self.key = None
        self.evaluations = 0
        self.skipped = 0
        self.table = [] if record else None

    def offer(self, vals, p, q, k):
        """``vals`` has shape (n, L+1) for node pairs ``(p[i], q[i])``."""
        self.evaluations += vals.size
        nan = np.isnan(vals)
        if nan.any():
            self.skipped += int(nan.sum())
            vals = np.where(nan, -np.inf, vals)
        if self.table is not None:
            for a in range(vals.shape[0]):
                for b in range(vals.shape[1]):
                    self.table.append((int(p[a]), int(q[a]), int(k[b]), float(vals[a, b])))
        if vals.size == 0:
            return
        vmax = float(vals.max())
        if vmax < self.best or vmax == -math.inf:
            return
        rows, cols = np.nonzero(vals == vmax)
        order = np.lexsort((k[cols], q[rows], p[rows]))
        r, c = rows[order[0]], cols[order[0]]
        key = (int(p[r]), int(q[r]), int(k[c]))
        if vmax > self.best or key < self.key:
            self.best, self.key = vmax, key


def _node_sets(mask, valid, opts: SearchOptions):
    base = mask.usable & valid
    if opts.point_filter is not None:
        base &= opts.point_filter
    ny, nx = mask.shape
    if opts.stride <= 1:
        return base, base
    J, I = np.indices((ny, nx))
    coarse = base & (I % opts.stride == 0) & (J % opts.stride == 0)
    inner = mask.cls == INTERIOR
    near = np.zeros_like(inner)
    near[1:-1, 1:-1] = ~(inner[1:-1, 2:] & inner[1:-1, :-2] & inner[2:, 1:-1] & inner[:-2, 1:-1])
    near |= mask.cls == BOUNDARY
    return base, coarse | (base & near)


def sweep_defect(mask, node_values: np.ndarray, evaluate_index: Callable, combine: Callable,
                 opts: SearchOptions, scalar_eval: Callable | None = None) -> DefectReport:
    """Generic supremum of ``combine(value(y2), value(y1), value(y3), λ)``.

    ``node_values`` holds values at nodes (non-finite entries exclude the
    node); ``evaluate_index(fi, fj)`` evaluates at fractional indices.
    """
    L = int(opts.lambda_steps)
    if L < 1:
        raise ValueError("lambda_steps must be >= 1")
    ny, nx = mask.shape
    valid = np.isfinite(node_values)
    base, glob = _node_sets(mask, valid, opts)
    k = np.arange(L + 1)
    lam = k / L
    acc = _Sweep(opts.record)

    gj, gi = np.nonzero(glob)
    gflat = gj * nx + gi
    gval = node_values[gj, gi]
    for a in range(len(gflat)):
        qi, qj, qv, qf = gi[a:], gj[a:], gval[a:], gflat[a:]
        fi = (k[None, :] * gi[a] + (L - k)[None, :] * qi[:, None]) / L
        fj = (k[None, :] * gj[a] + (L - k)[None, :] * qj[:, None]) / L
        v2 = evaluate_index(fi, fj)
        vals = combine(v2, gval[a], qv[:, None], lam[None, :])
        acc.offer(vals, np.full(len(qf), gflat[a]), qf, k)

    r = int(opts.local_radius) if opts.stride > 1 else 0
    for dj in range(0, r + 1):
        for di in range(-r, r + 1):
            if dj == 0 and di <= 0:
                continue
            pj, pi = np.nonzero(base)
            qj, qi = pj + dj, pi + di
            ok = (qi >= 0) & (qi < nx) & (qj < ny)
            pj, pi, qj, qi = pj[ok], pi[ok], qj[ok], qi[ok]
            ok = base[qj, qi]
            pj, pi, qj, qi = pj[ok], pi[ok], qj[ok], qi[ok]
            if len(pj) == 0:
                continue
            fi = (k[None, :] * pi[:, None] + (L - k)[None, :] * qi[:, None]) / L
            fj = (k[None, :] * pj[:, None] + (L - k)[None, :] * qj[:, None]) / L
            v2 = evaluate_index(fi, fj)
            vals = combine(v2, node_values[pj, pi][:, None], node_values[qj, qi][:, None], lam[None, :])
            acc.offer(vals, pj * nx + pi, qj * nx + qi, k)

    n_points = int(glob.sum())
    if acc.key is None:
        return DefectReport(-math.inf, None, "interior", acc.evaluations, L, n_points,
                            skipped=acc.skipped, options=opts.describe(), table=acc.table)
    p, q, kk = acc.key
    pj_, pi_ = divmod(p, nx)
    qj_, qi_ = divmod(q, nx)
    X, Y = mask.coords
    y1 = (float(X[pj_, pi_]), float(Y[pj_, pi_]))
    y3 = (float(X[qj_, qi_]), float(Y[qj_, qi_]))
    best, lam_best = acc.best, kk / L
    refined = False
    if opts.refine and scalar_eval is not None and p != q:
        def f(t):
            fi = t * pi_ + (1.0 - t) * qi_
            fj = t * pj_ + (1.0 - t) * qj_
            v2 = scalar_eval(np.array(fi), np.array(fj))
            return float(combine(v2, node_values[pj_, pi_], node_values[qj_, qi_], t))

        t, v = _golden_max(f, max(0.0, lam_best - 1.0 / L), min(1.0, lam_best + 1.0 / L))
        if v > best:
            best, lam_best = v, t
        refined = True
    trip = Triple(y1, y3, lam_best)
    inside = mask.cls[pj_, pi_] == INTERIOR and mask.cls[qj_, qi_] == INTERIOR
    return DefectReport(
        sup_value=best,
        argmax=trip,
        location_class="interior" if inside else "boundary",
        evaluations=acc.evaluations,
        lambda_steps=L,
        n_points=n_points,
        coarse_value=acc.best,
        refined=refined,
        skipped=acc.skipped,
        options=opts.describe(),
        table=acc.table,
    )


def _golden_max(f, a, b, tol=1e-10, maxiter=200):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if abs(b - a) < tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    t = 0.5 * (a + b)
    return t, f(t)


def _field_node_values(u: GridField) -> np.ndarray:
    vals = np.where(u.mask.usable, u.values, np.nan)
    return np.where(np.isfinite(vals), vals, np.nan)


def defect_sup(u: GridField, opts: SearchOptions | None = None, **kw) -> DefectReport:
    """Supremum of ``C_u`` over node pairs and the λ grid.

    Positive values measure non-convexity; apply it to ``−u`` (or to a
    ``neg_power``/``neg_log`` transform) to measure non-concavity.  The
    degenerate triples ``y1 = y3`` are included, so the result is ``>= 0``
    whenever at least one node is usable; an empty search returns ``-inf``.
    """
    opts = SearchOptions(**kw) if opts is None else opts
    return sweep_defect(u.mask, _field_node_values(u), u.evaluate_index, _combine_convexity, opts,
                        u.evaluate_index)


@dataclass
class DeltaEstimate:
    delta: float
    raw: float
    report: DefectReport | None
    z_samples: int = 0

    def __float__(self):
        return self.delta

    def to_dict(self) -> dict:
        return {"delta": self.delta, "raw": _json_float(self.raw), "z_samples": self.z_samples,
                "report": None if self.report is None else self.report.to_dict()}


def z_grid(radius: float, angles: int = 8, radii: int = 4) -> np.ndarray:
    """Polar sample of the closed ball of given radius (center included)."""
    pts = [(0.0, 0.0)]
    for r in radius * np.arange(1, radii + 1) / radii:
        for a in 2 * np.pi * np.arange(angles) / angles:
            pts.append((r * math.cos(a), r * math.sin(a)))
    return np.array(pts)


def _composite(b: Nonlinearity, u: GridField, sign: float, z=None):
    spec = u.mask.spec
    x0, y0, h = spec.bbox[0], spec.bbox[2], spec.h
    zx, zy = (None, None) if z is None else z

    def ev(fi, fj):
        s = u.evaluate_index(fi, fj)
        return sign * b(x0 + h * fi, y0 + h * fj, s, zx, zy)

    X, Y = u.mask.coords
    s = _field_node_values(u)
    with np.errstate(invalid="ignore"):
        nodes = sign * b(X, Y, s, zx, zy)
    nodes = np.where(np.isfinite(s), nodes, np.nan)
    return ev, nodes


def _check_range(b: Nonlinearity, u: GridField):
    s = u.values[u.mask.usable]
    s = s[np.isfinite(s)]
    if not np.all(b.in_range(s)):
        raise ValueError(f"field values leave the validity range {b.valid} of the nonlinearity")


def delta_estimate_concavity(b: Nonlinearity, u: GridField, z_samples: np.ndarray | None = None,
                             opts: SearchOptions | None = None) -> DeltaEstimate:
    """``δ = max(0, sup C_{−b(·, u(·), z)})`` over triples (and over ``z_samples``
    when ``b`` depends on the gradient variable)."""
    opts = SearchOptions() if opts is None else opts
    _check_range(b, u)
    zs = [None] if (b.bz is None or z_samples is None) else list(map(tuple, z_samples))
    best = None
    for z in zs:
        ev, nodes = _composite(b, u, -1.0, z)
        rep = sweep_defect(u.mask, nodes, ev, _combine_convexity, opts, ev)
        if best is None or rep.sup_value > best.sup_value:
            best = rep
    return DeltaEstimate(max(0.0, best.sup_value), best.sup_value, best, 0 if zs == [None] else len(zs))


def delta_estimate_harmonic(b: Nonlinearity, u: GridField, opts: SearchOptions | None = None) -> DeltaEstimate:
    """``δ = sup max(0, −HC_{b(·, u(·))})`` over admissible triples; the
    report's ``skipped`` counts inadmissible ones."""
    opts = SearchOptions() if opts is None else opts
    _check_range(b, u)
    ev, nodes = _composite(b, u, 1.0)
    rep = sweep_defect(u.mask, nodes, ev, _combine_neg_hc, opts, None)
    return DeltaEstimate(max(0.0, rep.sup_value), rep.sup_value, rep)


@dataclass
class BetaEstimate:
    beta: float
    argmin: tuple[float, float, float]
    n_s: int
    n_x: int

    def __float__(self):
        return self.beta


def beta_estimate(b: Nonlinearity, s_range: tuple[float, float], x_samples=None, n_s: int = 201) -> BetaEstimate:
    """Infimum of ``∂_s b`` over ``x_samples × linspace(s_range, n_s)``."""
    x = np.zeros((1, 2)) if x_samples is None else np.atleast_2d(np.asarray(x_samples, float))
    s = np.linspace(s_range[0], s_range[1], n_s)
    X = np.repeat(x[:, 0], len(s))
    Y = np.repeat(x[:, 1], len(s))
    S = np.tile(s, len(x))
    d = b.d_s(X, Y, S)
    k = int(np.argmin(d))
    return BetaEstimate(float(d[k]), (float(X[k]), float(Y[k]), float(S[k])), n_s, len(x))


# -- boundary checks ----------------------------------------------------------------

@dataclass
class GrowthCheck:
    surrogate: float
    u_z: float
    passed: bool
    ratios: np.ndarray


def boundary_growth_check(u: GridField, alpha: float, y, z, t_grid=None) -> GrowthCheck:
    """Surrogate of ``limsup_{t→0+} t^(−1/α) u(y + t(z − y))``: the maximum
    over the smallest decade of ``t_grid``; passes iff it exceeds ``u(z)``.

    The default grid stops two cells away from ``y``: below that the bilinear
    interpolant decays linearly whatever the field does, which would make
    every profile look like it grows at rate 1.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    if t_grid is None:
        t_min = min(0.5, 2.0 * u.mask.h / max(float(np.hypot(*(z - y))), 1e-300))
        t = np.geomspace(1.0, t_min, 31)
    else:
        t = np.asarray(t_grid, float)
    if np.any(t <= 0) or np.any(t > 1) or np.any(np.diff(t) >= 0):
        raise ValueError("t_grid must be decreasing in (0, 1]")
    pts = y[None, :] + t[:, None] * (z - y)[None, :]
    vals = np.asarray(interpolate(u, pts))
    if not np.all(np.isfinite(vals)):
        raise FieldError("interpolation failed near the boundary")
    ratios = t ** (-1.0 / alpha) * vals
    decade = t <= 10.0 * t.min()
    sur = float(np.max(ratios[decade]))
    uz = float(interpolate(u, z))
    return GrowthCheck(sur, uz, sur > uz, ratios)


@dataclass
class NormalCheck:
    passed: bool
    worst_index: int
    worst_value: float
    threshold: float
    derivatives: np.ndarray


def normal_derivatives(u: GridField) -> np.ndarray:
    """Outward normal derivatives at all boundary samples (vectorized
    version of :func:`concavity_lab.fields.normal_derivative`)."""
    mask = u.mask
    b = mask.boundary_points
    n = mask.boundary_normals
    H = mask.h
    p1 = b - H * n
    p2 = b - 2.0 * H * n
    if mask.domain is not None and not (np.all(mask.domain.contains(p1)) and np.all(mask.domain.contains(p2))):
        raise FieldError("insufficient stencil depth along the inward normal")
    v0, v1, v2 = (u.evaluate(p, order=2) for p in (b, p1, p2))
    return (3.0 * v0 - 4.0 * v1 + v2) / (2.0 * H)


def normal_sign_check(u: GridField, tau: float | None = None) -> NormalCheck:
    """True iff every boundary sample has outward derivative ``< −τ``
    (default ``τ = 10·h·M``)."""
    if len(u.mask.boundary_points) == 0:
        raise ValueError("no boundary samples available")
    if tau is None:
        tau = 10.0 * u.mask.h * field_stats(u).M
    d = normal_derivatives(u)
    k = int(np.argmax(d))
    return NormalCheck(bool(np.all(d < -tau)), k, float(d[k]), float(tau), d)


# -- harmonic-concavity property checks -----------------------------------------------------------

def _random_queries(rng, n, box, s_range):
    y1 = np.stack([rng.uniform(box[0], box[1], n), rng.uniform(box[2], box[3], n)], 1)
    y3 = np.stack([rng.uniform(box[0], box[1], n), rng.uniform(box[2], box[3], n)], 1)
    s1 = rng.uniform(s_range[0], s_range[1], n)
    s3 = rng.uniform(s_range[0], s_range[1], n)
    lam = rng.uniform(0.0, 1.0, n)
    lam[:4] = [0.0, 1.0, 0.0, 1.0][: min(4, n)]
    y2 = lam[:, None] * y1 + (1.0 - lam[:, None]) * y3
    s2 = lam * s1 + (1.0 - lam) * s3
    return y1, y2, y3, s1, s2, s3, lam


def _triple_vals(g: Nonlinearity, q):
    y1, y2, y3, s1, s2, s3, _ = q
    return g(y1[:, 0], y1[:, 1], s1), g(y2[:, 0], y2[:, 1], s2), g(y3[:, 0], y3[:, 1], s3)


@dataclass
class PropertyResult:
    violation: float
    admissible: int
    samples: int
    extra: dict = field(default_factory=dict)


def hc_subadd_check(f: Nonlinearity, g: Nonlinearity, samples: int = 100_000, seed: int = 0,
                    box=(-1.0, 1.0, -1.0, 1.0), s_range=(-1.0, 1.0)) -> tuple[PropertyResult, PropertyResult]:
    """Max of ``HC_{f+g} − HC_f − HC_g`` and of ``HC_f − HC_g − HC_{f−g}``
    over random queries admissible for all functions involved (positive mix)."""
    rng = np.random.default_rng(seed)
    q = _random_queries(rng, samples, box, s_range)
    lam = q[-1]
    f1, f2, f3 = _triple_vals(f, q)
    g1, g2, g3 = _triple_vals(g, q)
    hf, cf = hc_values(f1, f2, f3, lam)
    hg, cg = hc_values(g1, g2, g3, lam)
    hs, cs = hc_values(f1 + g1, f2 + g2, f3 + g3, lam)
    hd, cd = hc_values(f1 - g1, f2 - g2, f3 - g3, lam)
    ok_sum = (cf == 1) & (cg == 1) & (cs == 1)
    ok_dif = (cf == 1) & (cg == 1) & (cd == 1)
    v1 = hs - hf - hg
    v2 = hf - hg - hd
    r1 = PropertyResult(float(np.max(v1[ok_sum])) if ok_sum.any() else -math.inf, int(ok_sum.sum()), samples)
    r2 = PropertyResult(float(np.max(v2[ok_dif])) if ok_dif.any() else -math.inf, int(ok_dif.sum()), samples)
    return r1, r2


def hc_minus_c(g: Nonlinearity, samples: int = 100_000, seed: int = 0, box=(-1.0, 1.0, -1.0, 1.0),
               s_range=(-1.0, 1.0)) -> PropertyResult:
    """Minimum of ``HC_g − C_g`` over admissible positive-mix queries."""
    rng = np.random.default_rng(seed)
    q = _random_queries(rng, samples, box, s_range)
    lam = q[-1]
    g1, g2, g3 = _triple_vals(g, q)
    hc, case = hc_values(g1, g2, g3, lam)
    c = g2 - lam * g1 - (1.0 - lam) * g3
    ok = case == 1
    return PropertyResult(float(np.min((hc - c)[ok])) if ok.any() else math.inf, int(ok.sum()), samples)


def ratio_convexity_check(g: Nonlinearity, c: float, C: float, m: float, delta: float, samples: int = 100_000,
                          seed: int = 0, box=(-1.0, 1.0, -1.0, 1.0)) -> PropertyResult:
    """Max excess of ``C_{s²/g}`` over ``C₁δ``, ``C₁ = 2m²C/c³``, on joint
    samples with ``s ∈ [−m, m]``.

    The assumed bounds ``2δ ≤ c < g ≤ C`` and the δ-concavity of ``g`` are
    spot-checked on the same samples; a violation raises ``ValueError``.
    """
    if not 2.0 * delta <= c:
        raise ValueError("need 2*delta <= c")
    rng = np.random.default_rng(seed)
    q = _random_queries(rng, samples, box, (-m, m))
    y1, y2, y3, s1, s2, s3, lam = q
    g1, g2, g3 = _triple_vals(g, q)
    allg = np.concatenate([g1, g2, g3])
    if not (np.all(allg > c) and np.all(allg <= C)):
        raise ValueError("asserted bounds c < g <= C violated at a probe")
    concav = float(np.max(-(g2 - lam * g1 - (1.0 - lam) * g3)))
    if concav > delta + 1e-12:
        raise ValueError(f"g is not {delta}-concave on the probes (defect {concav:.3e})")
    val = s2**2 / g2 - lam * s1**2 / g1 - (1.0 - lam) * s3**2 / g3
    C1 = 2.0 * m * m * C / c**3
    return PropertyResult(float(np.max(val - C1 * delta)), samples, samples,
                          {"C1": C1, "concavity_defect": concav})


def inverse_convexity_check(g: Nonlinearity, C: float, delta: float, samples: int = 100_000, seed: int = 0,
                            box=(-1.0, 1.0, -1.0, 1.0), s_range=(-1.0, 1.0)) -> PropertyResult:
    """Worst ``HC_g`` on admissible samples (``violation`` field holds
    ``min HC_g``; the claim is ``min HC_g >= −C²δ``).

    ``0 < g < C`` and the δ-convexity of ``1/g`` are spot-checked.
    """
    rng = np.random.default_rng(seed)
    q = _random_queries(rng, samples, box, s_range)
    lam = q[-1]
    g1, g2, g3 = _triple_vals(g, q)
    allg = np.concatenate([g1, g2, g3])
    if not (np.all(allg > 0) and np.all(allg < C)):
        raise ValueError("asserted bounds 0 < g < C violated at a probe")
    conv = float(np.max(1.0 / g2 - lam / g1 - (1.0 - lam) / g3))
    if conv > delta + 1e-12:
        raise ValueError(f"1/g is not {delta}-convex on the probes (defect {conv:.3e})")
    hc, case = hc_values(g1, g2, g3, lam)
    ok = case >= 0
    worst = float(np.min(hc[ok]))
    return PropertyResult(worst, int(ok.sum()), samples, {"bound": -C * C * delta, "margin": worst + C * C * delta,
                                                          "inverse_convexity_defect": conv})


def _combine_hc(v2, v1, v3, lam):
    hc, _ = hc_values(v1, v2, v3, lam)
    return hc


def hc_sup_field(g: GridField, opts: SearchOptions | None = None, func: Callable | None = None) -> DefectReport:
    """Supremum of ``HC`` of a nonnegative field over node triples
    (inadmissible triples skipped and counted).

    With ``func(x, y)`` the value at ``y2`` is computed exactly instead of
    interpolated, which removes the O(h²) interpolation bias.
    """
    opts = SearchOptions() if opts is None else opts
    evaluate = g.evaluate_index
    if func is not None:
        spec = g.mask.spec

        def evaluate(fi, fj):
            return func(spec.bbox[0] + spec.h * fi, spec.bbox[2] + spec.h * fj)

    return sweep_defect(g.mask, _field_node_values(g), evaluate, _combine_hc, opts, None)


@dataclass
class HCSup1D:
    value: float
    argmax: tuple[float, float, float]
    evaluations: int
    skipped: int


def hc_sup_1d(h: Callable, s_max: float, n_grid: int = 257, lambda_steps: int = 16, samples: int = 10_000,
              seed: int = 0, s_min: float = 0.0) -> HCSup1D:
    """Supremum of ``HC_h(s1, s3, λ)`` for a function of one variable over
    ``s1, s3 ∈ (s_min, s_max]``: a uniform grid times the λ grid, plus seeded
    random triples."""
    s = s_min + (s_max - s_min) * np.arange(1, n_grid + 1) / n_grid
    lam = np.arange(lambda_steps + 1) / lambda_steps
    S1, S3, L = np.meshgrid(s, s, lam, indexing="ij")
    S1, S3, L = S1.ravel(), S3.ravel(), L.ravel()
    rng = np.random.default_rng(seed)
    S1 = np.concatenate([S1, s_min + (s_max - s_min) * (1.0 - rng.uniform(0, 1, samples))])
    S3 = np.concatenate([S3, s_min + (s_max - s_min) * (1.0 - rng.uniform(0, 1, samples))])
    L = np.concatenate([L, rng.uniform(0, 1, samples)])
    S2 = L * S1 + (1.0 - L) * S3
    hc, case = hc_values(h(S1), h(S2), h(S3), L)
    ok = case >= 0
    vals = np.where(ok, hc, -np.inf)
    k = int(np.argmax(vals))
    return HCSup1D(float(vals[k]), (float(S1[k]), float(S3[k]), float(L[k])), len(vals), int((~ok).sum()))
