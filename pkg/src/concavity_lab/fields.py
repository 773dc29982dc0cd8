"""Scalar fields on masked grids.

A :class:`GridField` stores one value per grid node.  Nodes of the closed
domain carry the field itself; a thin band of exterior nodes carries an
extension so that cells cut by the boundary can still be interpolated.  For
solver output the extension is built by extrapolating through the Dirichlet
data on the curve (exact for quadratics).

Transformed fields (``u**alpha``, ``log u`` ...) remember their source and
evaluate off-grid points as ``T(interpolate(source))``.  The source is smooth
up to the boundary while ``T(u)`` typically is not, so this keeps boundary
cells accurate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import BOUNDARY, EXTERIOR, INTERIOR, DomainMask, GridSpec, _OFFSETS

NEG_INF_TOKEN = "NEG_INF"
LOG_FLOOR = 1e-12


class FieldError(ValueError):
    """Invalid field operation (validity domain, stencil depth, geometry)."""


@dataclass(frozen=True)
class Transform:
    """Pointwise map applied to a field.

    ``kind`` is ``power``, ``neg_power``, ``log``, ``neg_log`` or ``custom``.
    For ``custom`` supply ``f`` (and optionally ``df``, ``d2f``) plus the open
    validity interval ``valid``.  With ``kawcond=True`` a custom map is
    checked to be strictly decreasing on samples of its validity interval.
    """

    kind: str
    alpha: float = 1.0
    f: Callable | None = None
    df: Callable | None = None
    d2f: Callable | None = None
    valid: tuple[float, float] = (0.0, math.inf)
    kawcond: bool = False

    def __post_init__(self):
        if self.kind not in ("power", "neg_power", "log", "neg_log", "custom"):
            raise FieldError(f"unknown transform {self.kind!r}")
        if self.kind in ("power", "neg_power") and not self.alpha > 0:
            raise FieldError("power exponent must be positive")
        if self.kind == "custom":
            if self.f is None:
                raise FieldError("custom transform needs f")
            if self.kawcond:
                lo, hi = self.valid
                hi = min(hi, lo + 1e3)
                s = np.linspace(lo, hi, 2002)[1:-1]
                d = self.df(s) if self.df is not None else np.gradient(self.f(s), s)
                if np.any(d >= 0):
                    raise FieldError("custom transform violates f' < 0 on its sampled domain")

    @classmethod
    def power(cls, alpha):
        return cls("power", alpha=float(alpha))

    @classmethod
    def neg_power(cls, alpha):
        return cls("neg_power", alpha=float(alpha))

    @classmethod
    def log(cls):
        return cls("log")

    @classmethod
    def neg_log(cls):
        return cls("neg_log")

    @property
    def is_log(self) -> bool:
        return self.kind in ("log", "neg_log")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind in ("power", "neg_power"):
            out = np.maximum(s, 0.0) ** self.alpha
            return -out if self.kind == "neg_power" else out
        if self.is_log:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), -np.inf)
            return -out if self.kind == "neg_log" else out
        return self.f(s)

    def check(self, s: np.ndarray) -> np.ndarray:
        """Indices (into ``s``) of values outside the validity domain."""
        if self.kind in ("power", "neg_power", "log", "neg_log"):
            return np.nonzero(s < 0)[0]
        lo, hi = self.valid
        return np.nonzero((s <= lo) | (s >= hi))[0]


@dataclass
class GridField:
    """Values on every node of ``mask``'s grid (``NaN`` where undefined)."""

    mask: DomainMask
    values: np.ndarray
    extended: bool = False
    source: "GridField | None" = None
    transform: Transform | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.mask.shape:
            raise FieldError(f"field shape {self.values.shape} != mask shape {self.mask.shape}")
        if not self.extended:
            inner = self.values[self.mask.interior]
            if not np.all(np.isfinite(inner)):
                raise FieldError("non-finite value at an interior node")

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_function(cls, mask: DomainMask, f) -> "GridField":
        """Sample ``f(x, y)`` at every node, exterior nodes included."""
        X, Y = mask.coords
        return cls(mask, np.broadcast_to(np.asarray(f(X, Y), dtype=float), X.shape).copy())

    @classmethod
    def zeros(cls, mask: DomainMask) -> "GridField":
        return cls(mask, np.zeros(mask.shape))

    @classmethod
    def from_interior(cls, mask: DomainMask, vec, boundary_value=0.0) -> "GridField":
        """Field from unknowns at interior nodes plus Dirichlet data.

        Boundary nodes get the Dirichlet value, exterior band nodes an
        extrapolated extension.
        """
        vals = np.full(mask.shape, np.nan)
        vals[mask.interior] = np.asarray(vec, dtype=float)
        X, Y = mask.coords
        bnd = mask.cls == BOUNDARY
        vals[bnd] = _dirichlet(boundary_value, X[bnd], Y[bnd])
        return cls(mask, extend_dirichlet(mask, vals, boundary_value))

    # -- accessors --------------------------------------------------------
    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.mask.interior]

    @property
    def usable_values(self) -> np.ndarray:
        return self.values[self.mask.usable]

    def __neg__(self) -> "GridField":
        return self.scaled(-1.0)

    def scaled(self, c: float) -> "GridField":
        if self.source is not None:
            t = Transform("custom", f=lambda s, _t=self.transform: c * _t(s), valid=(-math.inf, math.inf))
            return GridField(self.mask, c * self.values, self.extended, self.source, t)
        return GridField(self.mask, c * self.values, self.extended)

    def shifted(self, c: float) -> "GridField":
        if self.source is not None:
            t = Transform("custom", f=lambda s, _t=self.transform: _t(s) + c, valid=(-math.inf, math.inf))
            return GridField(self.mask, self.values + c, self.extended, self.source, t)
        return GridField(self.mask, self.values + c, self.extended)

    def evaluate(self, p, order: int = 1) -> np.ndarray:
        """Off-grid values at points ``p`` of shape ``(..., 2)`` (no domain check)."""
        p = np.asarray(p, dtype=float)
        spec = self.mask.spec
        fi = (p[..., 0] - spec.bbox[0]) / spec.h
        fj = (p[..., 1] - spec.bbox[2]) / spec.h
        return self.evaluate_index(fi, fj, order)

    def evaluate_index(self, fi, fj, order: int = 1) -> np.ndarray:
        """Values at fractional grid indices ``(fi, fj)``."""
        if self.source is not None:
            return self.transform(self.source.evaluate_index(fi, fj, order))
        if order == 1:
            return bilinear_index(self.values, fi, fj)
        return biquadratic_index(self.values, fi, fj)


def _dirichlet(g, x, y):
    if callable(g):
        return np.asarray(g(x, y), dtype=float)
    return np.full(np.shape(x), float(g))


def bilinear_index(values: np.ndarray, fi, fj) -> np.ndarray:
    """Bilinear interpolation at fractional indices (row ``j``, column ``i``)."""
    ny, nx = values.shape
    fi = np.asarray(fi, dtype=float)
    fj = np.asarray(fj, dtype=float)
    i0 = np.clip(np.floor(fi).astype(np.int64), 0, nx - 2)
    j0 = np.clip(np.floor(fj).astype(np.int64), 0, ny - 2)
    tx = fi - i0
    ty = fj - j0
    v00 = values[j0, i0]
    v10 = values[j0, i0 + 1]
    v01 = values[j0 + 1, i0]
    v11 = values[j0 + 1, i0 + 1]
    out = (v00 * (1.0 - tx) + v10 * tx) * (1.0 - ty) + (v01 * (1.0 - tx) + v11 * tx) * ty
    bad = np.isnan(out)
    if bad.any():
        # undefined corner values with zero weight must not poison the result
        def t(w, v):
            return np.where(w == 0.0, 0.0, w * v)

        safe = (t(1.0 - tx, v00) + t(tx, v10)) * (1.0 - ty) + (t(1.0 - tx, v01) + t(tx, v11)) * ty
        safe = np.where(ty == 0.0, t(1.0 - tx, v00) + t(tx, v10), safe)
        safe = np.where(ty == 1.0, t(1.0 - tx, v01) + t(tx, v11), safe)
        out = np.where(bad, safe, out)
    return out


def biquadratic_index(values: np.ndarray, fi, fj) -> np.ndarray:
    """Tensor quadratic Lagrange interpolation on the 3x3 patch around the
    nearest node; exact for polynomials of degree two in each variable."""
    ny, nx = values.shape
    fi = np.asarray(fi, dtype=float)
    fj = np.asarray(fj, dtype=float)
    ic = np.clip(np.rint(fi).astype(np.int64), 1, nx - 2)
    jc = np.clip(np.rint(fj).astype(np.int64), 1, ny - 2)
    tx = fi - ic
    ty = fj - jc
    wx = [0.5 * tx * (tx - 1.0), (1.0 - tx) * (1.0 + tx), 0.5 * tx * (tx + 1.0)]
    wy = [0.5 * ty * (ty - 1.0), (1.0 - ty) * (1.0 + ty), 0.5 * ty * (ty + 1.0)]
    out = np.zeros(np.broadcast(fi, fj).shape)
    for b, dj in enumerate((-1, 0, 1)):
        row = np.zeros_like(out)
        for a, di in enumerate((-1, 0, 1)):
            row = row + wx[a] * values[jc + dj, ic + di]
        out = out + wy[b] * row
    return out


def extend_dirichlet(mask: DomainMask, values: np.ndarray, boundary_value=0.0, layers: int = 3) -> np.ndarray:
    """Fill a band of exterior nodes by extrapolation.

    First layer: quadratic through the interior node, its curve crossing
    (Dirichlet value) and the node or crossing on the other side.  Later
    layers: quadratic (else linear) extrapolation along grid lines from known
    nodes.  Estimates from several directions are averaged.
    """
    vals = values.copy()
    ny, nx = mask.shape
    h = mask.h
    X, Y = mask.coords
    known = mask.usable.copy()
    acc = np.zeros(mask.shape)
    cnt = np.zeros(mask.shape)
    js, is_ = np.nonzero(mask.interior)
    for j, i in zip(js, is_):
        for k, (di, dj) in enumerate(_OFFSETS):
            if mask.cls[j + dj, i + di] != EXTERIOR:
                continue
            a = mask.arms[j, i, k]
            q = (X[j, i] + a * di, Y[j, i] + a * dj)
            gq = float(_dirichlet(boundary_value, np.array(q[0]), np.array(q[1])))
            opp = k ^ 1
            oi, oj = _OFFSETS[opp]
            if mask.cls[j + oj, i + oi] == EXTERIOR:
                b = mask.arms[j, i, opp]
                qb = (X[j, i] + b * oi, Y[j, i] + b * oj)
                xs = (-b, 0.0, a)
                fs = (float(_dirichlet(boundary_value, np.array(qb[0]), np.array(qb[1]))), vals[j, i], gq)
            else:
                xs = (-h, 0.0, a)
                fs = (vals[j + oj, i + oi], vals[j, i], gq)
            acc[j + dj, i + di] += _lagrange3(xs, fs, h)
            cnt[j + dj, i + di] += 1
    first = cnt > 0
    vals[first] = acc[first] / cnt[first]
    known |= first
    for _ in range(layers - 1):
        acc[:] = 0.0
        cnt[:] = 0.0
        cand = ~known & _dilate(known)
        for j, i in zip(*np.nonzero(cand)):
            for di, dj in _OFFSETS:
                pts = []
                for step in (1, 2, 3):
                    jj, ii = j + step * dj, i + step * di
                    if not (0 <= jj < ny and 0 <= ii < nx) or not known[jj, ii]:
                        break
                    pts.append(vals[jj, ii])
                if len(pts) == 3:
                    acc[j, i] += 3.0 * pts[0] - 3.0 * pts[1] + pts[2]
                    cnt[j, i] += 1
                elif len(pts) == 2:
                    acc[j, i] += 2.0 * pts[0] - pts[1]
                    cnt[j, i] += 1
        new = cnt > 0
        if not new.any():
            break
        vals[new] = acc[new] / cnt[new]
        known |= new
    return vals


def _lagrange3(xs, fs, x):
    x0, x1, x2 = xs
    f0, f1, f2 = fs
    return (
        f0 * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
        + f1 * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
        + f2 * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
    )


def _dilate(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    out[1:, :] |= m[:-1, :]
    out[:-1, :] |= m[1:, :]
    out[:, 1:] |= m[:, :-1]
    out[:, :-1] |= m[:, 1:]
    out[1:, 1:] |= m[:-1, :-1]
    out[:-1, :-1] |= m[1:, 1:]
    out[1:, :-1] |= m[:-1, 1:]
    out[:-1, 1:] |= m[1:, :-1]
    return out


def apply_transform(u: GridField, t: Transform, log_floor: float = LOG_FLOOR) -> GridField:
    """Pointwise image ``t(u)`` on the closed domain.

    Values outside ``t``'s validity domain raise :class:`FieldError` naming
    the offending node.  Under ``log`` nodes with ``u < log_floor * max|u|``
    become ``-inf`` and the extended-value flag is set.
    """
    usable = u.mask.usable
    s = u.values[usable]
    bad = t.check(s)
    if len(bad):
        X, Y = u.mask.coords
        k = bad[0]
        raise FieldError(
            f"value {s[k]!r} at node ({X[usable][k]:.6g}, {Y[usable][k]:.6g}) outside validity of {t.kind}"
        )
    out = np.full(u.mask.shape, np.nan)
    extended = u.extended
    if t.is_log:
        m = float(np.max(np.abs(s))) if len(s) else 0.0
        floor = log_floor * m
        s = np.where(s < floor, 0.0, s)
        extended = extended or bool(np.any(s == 0.0))
    out[usable] = t(s)
    return GridField(u.mask, out, extended=extended or not np.all(np.isfinite(out[u.mask.interior])),
                     source=u, transform=t)


def interpolate(u: GridField, p, order: int = 1) -> float | np.ndarray:
    """Interpolated value of ``u`` at ``p`` in the closed domain.

    Bilinear (``order=1``) is exact on affine fields; ``order=2`` uses the
    3x3 quadratic patch.
    """
    p = np.asarray(p, dtype=float)
    dom = u.mask.domain
    if dom is not None:
        lv = dom.level(p)
        if np.any(lv < -1e3 * dom.tolerance - 1e-13):
            raise FieldError("interpolation point outside the closed domain")
    out = u.evaluate(p, order)
    return float(out) if out.ndim == 0 else out


def normal_derivative(u: GridField, sample, step: float | None = None) -> float:
    """Outward normal derivative at a boundary sample.

    ``sample`` is an index into ``u.mask.boundary_points`` or a pair
    ``(point, outward_normal)``.  Uses the one-sided second-order formula
    along the inward normal with quadratic-exact off-grid evaluation.
    """
    mask = u.mask
    if isinstance(sample, (int, np.integer)):
        b = mask.boundary_points[sample]
        n = mask.boundary_normals[sample]
    else:
        b, n = (np.asarray(a, dtype=float) for a in sample)
    H = mask.h if step is None else step
    pts = np.array([b, b - H * n, b - 2.0 * H * n])
    if mask.domain is not None and not np.all(mask.domain.contains(pts[1:])):
        raise FieldError("insufficient stencil depth along the inward normal")
    v = u.evaluate(pts, order=2)
    if not np.all(np.isfinite(v)):
        raise FieldError("non-finite value in normal-derivative stencil")
    return float((3.0 * v[0] - 4.0 * v[1] + v[2]) / (2.0 * H))


@dataclass(frozen=True)
class FieldStats:
    """Norm estimates: ``m`` = sup|u|, ``M`` = C^2 norm estimate."""

    m: float
    M: float
    gradient_bound: float
    hessian_bound: float
    spacing: float
    cutoff: float


def field_stats(u: GridField) -> FieldStats:
    """``m`` over closed-domain nodes; derivative bounds by central
    differences at interior nodes at least ``2h`` from the boundary."""
    mask = u.mask
    if mask.n_interior < 9:
        raise FieldError("field_stats needs at least 9 interior nodes")
    h = mask.h
    v = u.values
    m = float(np.max(np.abs(v[mask.usable])))
    deep = mask.interior.copy()
    for _ in range(2):
        deep &= _erode(deep)
    j, i = np.nonzero(deep)
    if len(j) == 0:
        return FieldStats(m, m, 0.0, 0.0, h, 2 * h)
    ux = (v[j, i + 1] - v[j, i - 1]) / (2 * h)
    uy = (v[j + 1, i] - v[j - 1, i]) / (2 * h)
    uxx = (v[j, i + 1] - 2 * v[j, i] + v[j, i - 1]) / h**2
    uyy = (v[j + 1, i] - 2 * v[j, i] + v[j - 1, i]) / h**2
    uxy = (v[j + 1, i + 1] - v[j + 1, i - 1] - v[j - 1, i + 1] + v[j - 1, i - 1]) / (4 * h**2)
    g = float(np.max(np.hypot(ux, uy)))
    # spectral norm of the symmetric 2x2 Hessian
    hs = float(np.max(0.5 * np.abs(uxx + uyy) + np.sqrt(0.25 * (uxx - uyy) ** 2 + uxy**2)))
    return FieldStats(m, max(m, g, hs), g, hs, h, 2 * h)


def _erode(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    out[1:, :] &= m[:-1, :]
    out[:-1, :] &= m[1:, :]
    out[:, 1:] &= m[:, :-1]
    out[:, :-1] &= m[:, 1:]
    out[0, :] = out[-1, :] = False
    out[:, 0] = out[:, -1] = False
    return out


# -- CSV ----------------------------------------------------------------------

_CLASS_NAMES = {INTERIOR: "interior", BOUNDARY: "boundary", EXTERIOR: "exterior"}
_CLASS_CODES = {v: k for k, v in _CLASS_NAMES.items()}


def write_field_csv(u: GridField, path) -> None:
    """Header ``nx,ny,xmin,xmax,ymin,ymax,h`` then row-major ``x,y,class,value``."""
    spec = u.mask.spec
    X, Y = u.mask.coords
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["nx", "ny", "xmin", "xmax", "ymin", "ymax", "h"])
        w.writerow([spec.nx, spec.ny, *map(repr, map(float, spec.bbox)), repr(spec.h)])
        w.writerow(["x", "y", "class", "value"])
        for x, y, c, val in zip(X.ravel(), Y.ravel(), u.mask.cls.ravel(), u.values.ravel()):
            if val == -np.inf:
                tok = NEG_INF_TOKEN
            elif np.isnan(val):
                tok = "NaN"
            else:
                tok = repr(float(val))
            w.writerow([repr(float(x)), repr(float(y)), _CLASS_NAMES[int(c)], tok])


def read_field_csv(path, domain=None) -> GridField:
    """Inverse of :func:`write_field_csv`.

    Without ``domain`` the mask is rebuilt from the stored classes and has no
    cut-cell data (enough for envelopes and defect sweeps).
    """
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        nx, ny, x0, x1, y0, y1, _h = next(r)
        spec = GridSpec(int(nx), int(ny), (float(x0), float(x1), float(y0), float(y1)))
        next(r)
        cls = np.empty(spec.nx * spec.ny, dtype=np.int8)
        vals = np.empty(spec.nx * spec.ny)
        for k, (_, _, c, tok) in enumerate(r):
            cls[k] = _CLASS_CODES[c]
            vals[k] = -np.inf if tok == NEG_INF_TOKEN else float(tok)
    cls = cls.reshape(spec.ny, spec.nx)
    vals = vals.reshape(spec.ny, spec.nx)
    if domain is not None:
        from .domain import build_mask

        mask = build_mask(domain, spec)
    else:
        mask = mask_from_classes(spec, cls)
    extended = bool(np.any(np.isinf(vals[cls == INTERIOR])))
    return GridField(mask, vals, extended=extended)


def mask_from_classes(spec: GridSpec, cls: np.ndarray) -> DomainMask:
    """Geometry-free mask (no domain, no arms) from a class array."""
    ny, nx = cls.shape
    index = np.full((ny, nx), -1, dtype=np.int64)
    interior = cls == INTERIOR
    index[interior] = np.arange(int(interior.sum()))
    empty2 = np.zeros((0, 2))
    empty = np.zeros(0, dtype=np.int64)
    return DomainMask(None, spec, cls.astype(np.int8), np.full((ny, nx, 4), np.nan), index,
                      empty2, empty2, empty, empty)
