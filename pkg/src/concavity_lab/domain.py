"""Convex planar domains and masked uniform grids.

A :class:`ConvexDomain` is described analytically (disk, ellipse or convex
polygon).  :func:`build_mask` lays a uniform grid over it and classifies every
node as interior, boundary (on the curve within tolerance) or exterior.  For
interior nodes next to the curve the distance to the boundary along each grid
axis is stored, which is what the Shortley-Weller stencil needs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

INTERIOR = 1
BOUNDARY = 0
EXTERIOR = -1

# axis directions in the order used for stencil arms: east, west, north, south
DIRECTIONS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
_OFFSETS = [(1, 0), (-1, 0), (0, 1), (0, -1)]  # (di, dj)


class DomainError(ValueError):
    """Raised for invalid domain or grid descriptions."""


@dataclass(frozen=True)
class ConvexDomain:
    """Analytic convex region of the plane.

    ``kind`` is one of ``"disk"``, ``"ellipse"`` or ``"polygon"``.  Disks and
    ellipses are strictly convex; polygons are not.  ``interior_ball`` is a
    user-asserted flag (true by default for smooth domains) since the interior
    ball condition is not checked analytically for polygons.
    """

    kind: str
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    semi_axes: tuple[float, float] = (1.0, 1.0)
    vertices: tuple[tuple[float, float], ...] = ()
    interior_ball: bool | None = None

    def __post_init__(self):
        if self.kind not in ("disk", "ellipse", "polygon"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if self.kind == "disk" and not self.radius > 0:
            raise DomainError("disk radius must be positive")
        if self.kind == "ellipse" and not min(self.semi_axes) > 0:
            raise DomainError("ellipse semi-axes must be positive")
        if self.kind == "polygon":
            _validate_polygon(np.asarray(self.vertices, dtype=float))
        if self.interior_ball is None:
            object.__setattr__(self, "interior_ball", self.kind != "polygon")

    # -- constructors -----------------------------------------------------
    @classmethod
    def disk(cls, radius=1.0, center=(0.0, 0.0)):
        return cls("disk", center=tuple(map(float, center)), radius=float(radius))

    @classmethod
    def ellipse(cls, a, b, center=(0.0, 0.0)):
        return cls("ellipse", center=tuple(map(float, center)), semi_axes=(float(a), float(b)))

    @classmethod
    def polygon(cls, vertices, interior_ball=False):
        verts = tuple((float(x), float(y)) for x, y in vertices)
        return cls("polygon", vertices=verts, interior_ball=interior_ball)

    @classmethod
    def rectangle(cls, x0, x1, y0, y1):
        return cls.polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    # -- basic geometry ---------------------------------------------------
    @property
    def strictly_convex(self) -> bool:
        return self.kind != "polygon"

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """Axis-aligned bounding box ``(xmin, xmax, ymin, ymax)``."""
        if self.kind == "polygon":
            v = np.asarray(self.vertices)
            return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()
        cx, cy = self.center
        a, b = (self.radius, self.radius) if self.kind == "disk" else self.semi_axes
        return cx - a, cx + a, cy - b, cy + b

    @property
    def diameter(self) -> float:
        if self.kind == "disk":
            return 2.0 * self.radius
        if self.kind == "ellipse":
            return 2.0 * max(self.semi_axes)
        v = np.asarray(self.vertices)
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    @property
    def tolerance(self) -> float:
        """On-boundary tie tolerance."""
        return 1e-12 * self.diameter

    def _edges(self):
        v = np.asarray(self.vertices)
        e = np.roll(v, -1, axis=0) - v
        normals = np.stack([e[:, 1], -e[:, 0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        offsets = (normals * v).sum(1)
        return v, normals, offsets

    def level(self, p) -> np.ndarray:
        """Signed distance-like level function, positive inside.

        Exact for disks and (inside) polygons; first-order accurate near the
        curve for ellipses.  Accepts points of shape ``(..., 2)``.
        """
        p = np.asarray(p, dtype=float)
        if self.kind == "disk":
            return self.radius - np.hypot(p[..., 0] - self.center[0], p[..., 1] - self.center[1])
        if self.kind == "ellipse":
            a, b = self.semi_axes
            dx = p[..., 0] - self.center[0]
            dy = p[..., 1] - self.center[1]
            F = 1.0 - (dx / a) ** 2 - (dy / b) ** 2
            grad = 2.0 * np.sqrt((dx / a**2) ** 2 + (dy / b**2) ** 2)
            with np.errstate(divide="ignore", invalid="ignore"):
                dist = np.where(grad > 0, F / np.where(grad > 0, grad, 1.0), min(a, b))
            return dist
        _, normals, offsets = self._edges()
        return (offsets - p @ normals.T).min(axis=-1)

    def classify(self, p) -> np.ndarray:
        lv = self.level(p)
        tol = self.tolerance
        return np.where(lv > tol, INTERIOR, np.where(lv >= -tol, BOUNDARY, EXTERIOR)).astype(np.int8)

    def contains(self, p) -> bool | np.ndarray:
        """True iff ``p`` lies in the open interior."""
        out = self.level(p) > self.tolerance
        return bool(out) if np.ndim(out) == 0 else out

    def outward_normal(self, q) -> np.ndarray:
        """Outward unit normal at a boundary point ``q``.

        Polygon vertices get the normalized average of the two adjacent edge
        normals.
        """
        q = np.asarray(q, dtype=float)
        if self.kind == "disk":
            n = q - np.asarray(self.center)
            nn = np.linalg.norm(n)
            return np.array([1.0, 0.0]) if nn == 0 else n / nn
        if self.kind == "ellipse":
            a, b = self.semi_axes
            d = q - np.asarray(self.center)
            n = np.array([d[0] / a**2, d[1] / b**2])
            nn = np.linalg.norm(n)
            return np.array([1.0, 0.0]) if nn == 0 else n / nn
        _, normals, offsets = self._edges()
        gap = np.abs(offsets - normals @ q)
        close = gap <= max(1e3 * self.tolerance, 1e-12)
        if close.sum() >= 2:
            n = normals[close].sum(0)
            return n / np.linalg.norm(n)
        return normals[int(np.argmin(gap))].copy()

    def ray_exit(self, p, direction) -> float:
        """Distance from an inside point ``p`` to the boundary along a unit direction."""
        p = np.asarray(p, dtype=float)
        d = np.asarray(direction, dtype=float)
        if self.kind in ("disk", "ellipse"):
            a, b = (self.radius, self.radius) if self.kind == "disk" else self.semi_axes
            q = (p - np.asarray(self.center)) / (a, b)
            e = d / (a, b)
            A = e @ e
            B = q @ e
            C = q @ q - 1.0
            disc = max(B * B - A * C, 0.0)
            return float((-B + math.sqrt(disc)) / A)
        _, normals, offsets = self._edges()
        nd = normals @ d
        gap = offsets - normals @ p
        mask = nd > 1e-15
        return float(np.min(gap[mask] / nd[mask]))

    def boundary_curve(self, n: int) -> np.ndarray:
        """``n`` boundary points, equally spaced in arc-length for polygons and
        in the angle parameter for disks and ellipses."""
        if self.kind in ("disk", "ellipse"):
            a, b = (self.radius, self.radius) if self.kind == "disk" else self.semi_axes
            t = 2.0 * np.pi * np.arange(n) / n
            return np.stack([self.center[0] + a * np.cos(t), self.center[1] + b * np.sin(t)], 1)
        v = np.asarray(self.vertices)
        w = np.roll(v, -1, axis=0)
        lengths = np.linalg.norm(w - v, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        s = cum[-1] * np.arange(n) / n
        k = np.searchsorted(cum, s, side="right") - 1
        frac = (s - cum[k]) / lengths[k]
        return v[k] + frac[:, None] * (w[k] - v[k])


def _validate_polygon(v: np.ndarray) -> None:
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise DomainError("polygon needs at least 3 vertices")
    e = np.roll(v, -1, axis=0) - v
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    if not np.all(cross > 0):
        raise DomainError("polygon vertices must be in CCW order with all interior angles < pi")


def _ellipse_closest_first_quadrant(e0, e1, y0, y1):
    """Closest ellipse point for y in the first quadrant, e0 >= e1 (Eberly)."""
    if y1 > 1e-14 * e1:
        if y0 > 1e-14 * e0:
            z0, z1 = y0 / e0, y1 / e1
            g = z0 * z0 + z1 * z1 - 1.0
            if g == 0:
                return y0, y1
            r0 = (e0 / e1) ** 2
            n0 = r0 * z0
            s0 = z1 - 1.0
            s1 = 0.0 if g < 0 else math.hypot(n0, z1) - 1.0
            s = s0
            for _ in range(200):
                s = 0.5 * (s0 + s1)
                if s == s0 or s == s1:
                    break
                gs = (n0 / (s + r0)) ** 2 + (z1 / (s + 1.0)) ** 2 - 1.0
                if gs > 0:
                    s0 = s
                elif gs < 0:
                    s1 = s
                else:
                    break
            x0 = r0 * y0 / (s + r0)
            if s + 1.0 < 0.5:
                # y1 / (s + 1) cancels near the major axis; x0 stays well conditioned
                return x0, e1 * math.sqrt(max(1.0 - (x0 / e0) ** 2, 0.0))
            return x0, y1 / (s + 1.0)
        return 0.0, e1
    numer0 = e0 * y0
    denom0 = e0 * e0 - e1 * e1
    if numer0 < denom0:
        xde0 = numer0 / denom0
        return e0 * xde0, e1 * math.sqrt(max(1.0 - xde0 * xde0, 0.0))
    return e0, 0.0


def boundary_projection(domain: ConvexDomain, p) -> tuple[np.ndarray, np.ndarray]:
    """Nearest boundary point to ``p`` and the outward unit normal there.

    The disk center projects ambiguously; it is mapped along ``(1, 0)``.
    """
    p = np.asarray(p, dtype=float)
    if domain.kind == "disk":
        c = np.asarray(domain.center)
        d = p - c
        nd = np.linalg.norm(d)
        n = np.array([1.0, 0.0]) if nd == 0 else d / nd
        return c + domain.radius * n, n
    if domain.kind == "ellipse":
        a, b = domain.semi_axes
        c = np.asarray(domain.center)
        d = p - c
        swap = b > a
        e0, e1 = (b, a) if swap else (a, b)
        y0, y1 = (abs(d[1]), abs(d[0])) if swap else (abs(d[0]), abs(d[1]))
        x0, x1 = _ellipse_closest_first_quadrant(e0, e1, y0, y1)
        if swap:
            x0, x1 = x1, x0
        q = c + np.array([math.copysign(x0, d[0]), math.copysign(x1, d[1])])
        return q, domain.outward_normal(q)
    v, normals, _ = domain._edges()
    w = np.roll(v, -1, axis=0)
    best, best_d = None, np.inf
    for k in range(len(v)):
        e = w[k] - v[k]
        t = np.clip((p - v[k]) @ e / (e @ e), 0.0, 1.0)
        q = v[k] + t * e
        dist = np.linalg.norm(p - q)
        if dist < best_d - 1e-15:
            best, best_d = q, dist
    return best, domain.outward_normal(best)


def contains(domain: ConvexDomain, p) -> bool | np.ndarray:
    return domain.contains(p)


def strict_convexity_check(domain: ConvexDomain, n_samples: int = 64) -> bool:
    """True iff every midpoint of two distinct sampled boundary points is interior."""
    if n_samples < 2:
        raise DomainError("n_samples must be >= 2")
    pts = domain.boundary_curve(n_samples)
    i, j = np.triu_indices(len(pts), k=1)
    mids = 0.5 * (pts[i] + pts[j])
    return bool(np.all(domain.contains(mids)))


@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid over the box ``bbox = (xmin, xmax, ymin, ymax)``."""

    nx: int
    ny: int
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise DomainError("grid needs nx, ny >= 3")
        xmin, xmax, ymin, ymax = self.bbox
        if not (xmax > xmin and ymax > ymin):
            raise DomainError("degenerate bounding box")
        hx = (xmax - xmin) / (self.nx - 1)
        hy = (ymax - ymin) / (self.ny - 1)
        if abs(hx - hy) > 1e-9 * max(hx, hy):
            raise DomainError(f"grid spacing must be equal in x and y (got {hx}, {hy})")

    @property
    def h(self) -> float:
        return (self.bbox[1] - self.bbox[0]) / (self.nx - 1)

    @property
    def x(self) -> np.ndarray:
        return self.bbox[0] + self.h * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.bbox[2] + self.h * np.arange(self.ny)

    @classmethod
    def covering(cls, domain: ConvexDomain, h: float, margin: int = 2) -> "GridSpec":
        """Grid of spacing ``h`` whose nodes include the domain's center
        (disk/ellipse) or the bounding-box corner (polygon), with ``margin``
        extra layers of nodes outside the domain."""
        xmin, xmax, ymin, ymax = domain.bounds
        if domain.kind == "polygon":
            ox, oy = xmin, ymin
        else:
            ox, oy = domain.center
        i0 = math.floor((xmin - ox) / h + 1e-9) - margin
        i1 = math.ceil((xmax - ox) / h - 1e-9) + margin
        j0 = math.floor((ymin - oy) / h + 1e-9) - margin
        j1 = math.ceil((ymax - oy) / h - 1e-9) + margin
        return cls(i1 - i0 + 1, j1 - j0 + 1, (ox + i0 * h, ox + i1 * h, oy + j0 * h, oy + j1 * h))


@dataclass
class DomainMask:
    """Node classification plus cut-cell data for one domain and grid.

    Arrays are indexed ``[j, i]`` (row ``j`` is the y index).  ``arms`` holds,
    for interior nodes, the distance to the next interior/boundary node or to
    the curve along east, west, north, south.  Boundary samples are the
    curve crossings of those arms.
    """

    domain: ConvexDomain
    spec: GridSpec
    cls: np.ndarray
    arms: np.ndarray
    index: np.ndarray
    boundary_points: np.ndarray
    boundary_normals: np.ndarray
    boundary_owner: np.ndarray
    boundary_dir: np.ndarray
    _coords: tuple = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def shape(self) -> tuple[int, int]:
        return self.cls.shape

    @property
    def n_interior(self) -> int:
        return int((self.cls == INTERIOR).sum())

    @property
    def interior(self) -> np.ndarray:
        return self.cls == INTERIOR

    @property
    def usable(self) -> np.ndarray:
        """Nodes in the closed domain (interior or boundary)."""
        return self.cls >= BOUNDARY

    @property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        if self._coords is None:
            self._coords = np.meshgrid(self.spec.x, self.spec.y)
        return self._coords

    def node_points(self, which=None) -> np.ndarray:
        X, Y = self.coords
        sel = self.usable if which is None else which
        return np.stack([X[sel], Y[sel]], axis=1)

    def to_csv(self, path) -> None:
        X, Y = self.coords
        names = {INTERIOR: "interior", BOUNDARY: "boundary", EXTERIOR: "exterior"}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "x", "y", "class"])
            for k, (x, y, c) in enumerate(zip(X.ravel(), Y.ravel(), self.cls.ravel())):
                w.writerow([k, repr(float(x)), repr(float(y)), names[int(c)]])


def build_mask(domain: ConvexDomain, spec: GridSpec) -> DomainMask:
    """Classify grid nodes and compute cut-cell arm lengths.

    Raises :class:`DomainError` if the box does not strictly contain the
    domain, if no node is interior, or if the interior nodes are not a single
    4-connected component.
    """
    xmin, xmax, ymin, ymax = domain.bounds
    bx0, bx1, by0, by1 = spec.bbox
    if not (bx0 < xmin and bx1 > xmax and by0 < ymin and by1 > ymax):
        raise DomainError("grid bounding box does not strictly contain the domain")
    h = spec.h
    X, Y = np.meshgrid(spec.x, spec.y)
    pts = np.stack([X, Y], axis=-1)
    cls = domain.classify(pts)
    interior = cls == INTERIOR
    if not interior.any():
        raise DomainError("grid too coarse: no interior node")
    _, ncomp = ndimage.label(interior)
    if ncomp != 1:
        raise DomainError(f"interior nodes form {ncomp} components; refine the grid")

    ny, nx = cls.shape
    arms = np.full((ny, nx, 4), np.nan)
    index = np.full((ny, nx), -1, dtype=np.int64)
    index[interior] = np.arange(int(interior.sum()))
    bpts, bnorm, bown, bdir = [], [], [], []
    js, is_ = np.nonzero(interior)
    for j, i in zip(js, is_):
        for k, (di, dj) in enumerate(_OFFSETS):
            c = cls[j + dj, i + di]
            if c == INTERIOR:
                arms[j, i, k] = h
                continue
            if c == BOUNDARY:
                arm = h
            else:
                arm = min(domain.ray_exit(pts[j, i], DIRECTIONS[k]), h)
                arm = max(arm, 1e-3 * domain.tolerance)
            arms[j, i, k] = arm
            q = pts[j, i] + arm * DIRECTIONS[k]
            bpts.append(q)
            bnorm.append(domain.outward_normal(q))
            bown.append(j * nx + i)
            bdir.append(k)
    return DomainMask(
        domain=domain,
        spec=spec,
        cls=cls,
        arms=arms,
        index=index,
        boundary_points=np.array(bpts).reshape(-1, 2),
        boundary_normals=np.array(bnorm).reshape(-1, 2),
        boundary_owner=np.array(bown, dtype=np.int64),
        boundary_dir=np.array(bdir, dtype=np.int64),
    )


# -- key-value configuration ------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def domain_from_config(section) -> ConvexDomain:
    """Build a domain from a mapping such as a ``configparser`` section.

    Keys: ``kind``; ``center``, ``radius`` (disk); ``center``, ``semi_axes``
    (ellipse); ``bounds`` as ``xmin, xmax, ymin, ymax`` (rectangle);
    ``vertices`` as ``x,y; x,y; ...`` (polygon); optional ``interior_ball``.
    """
    kind = section.get("kind", "disk").strip()
    center = tuple(_floats(section.get("center", "0,0")))
    if kind == "disk":
        return ConvexDomain.disk(float(section.get("radius", 1.0)), center)
    if kind == "ellipse":
        a, b = _floats(section.get("semi_axes", "1,1"))
        return ConvexDomain.ellipse(a, b, center)
    if kind == "rectangle":
        return ConvexDomain.rectangle(*_floats(section.get("bounds", "-1,1,-1,1")))
    if kind == "polygon":
        pairs = [p for p in section.get("vertices", "").split(";") if p.strip()]
        verts = [tuple(_floats(p)) for p in pairs]
        ball = str(section.get("interior_ball", "false")).lower() in ("1", "true", "yes")
        return ConvexDomain.polygon(verts, interior_ball=ball)
    raise DomainError(f"unknown domain kind {kind!r}")


def grid_from_config(section, domain: ConvexDomain) -> GridSpec:
    """Grid from ``h`` (plus optional ``margin``) or explicit ``nx``, ``ny``, ``bbox``."""
    if "h" in section:
        h = section.get("h")
        h = 1.0 / float(h[2:]) if str(h).startswith("1/") else float(h)
        return GridSpec.covering(domain, h, int(section.get("margin", 2)))
    bbox = tuple(_floats(section["bbox"]))
    return GridSpec(int(section["nx"]), int(section["ny"]), bbox)


def load_mask_csv(path) -> list[tuple[int, float, float, str]]:
    rows = []
    with open(Path(path), newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for k, x, y, c in r:
            rows.append((int(k), float(x), float(y), c))
    return rows
