"""Finite-difference solvers on masked grids.

Sign convention used throughout: the operator ``A`` approximates the
Laplacian itself (negative diagonal), and semilinear problems are written as

    Δu + B(x, u) = 0,   u = 0 on the boundary,

where ``B`` is the full nonlinear term.  ``solve_semilinear`` takes a
:class:`Nonlinearity` ``b`` and a sign so that ``B = +b`` or ``B = -b``.

========================================  ==========================================
problem                                   B(x, s)
========================================  ==========================================
torsion  Δu + 1 = 0                       1
first eigenfunction  Δu + λu = 0          λ s
power  Δu + u^γ − u^((1+γ)/2) g(u) = 0    s^γ − s^((1+γ)/2) g(s)
log  Δu + λu − u g(u) = 0                 λ s − s g(s)
source  Δu + f − u^((1+γ)/(1+2γ)) g = 0   f(x) − s^((1+γ)/(1+2γ)) g(x)
perturbed  Δv = b + εv                    −b(x, s) − ε s
========================================  ==========================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .domain import BOUNDARY, INTERIOR, DomainMask, _OFFSETS
from .fields import GridField, _dirichlet


class SolverError(RuntimeError):
    """Linear or nonlinear solve failed (non-convergence, validity, degeneracy)."""


@dataclass
class SparseOperator:
    """Shortley-Weller Laplacian over the interior unknowns of ``mask``.

    ``matrix`` acts on the interior vector; Dirichlet data enter through
    ``boundary_rows``/``boundary_coefs`` paired with ``boundary_points``:
    ``Δu ≈ matrix @ u + bc(g)``.
    """

    mask: DomainMask
    matrix: sp.csr_matrix
    boundary_rows: np.ndarray
    boundary_coefs: np.ndarray
    boundary_points: np.ndarray
    _lu: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def bc(self, g=0.0) -> np.ndarray:
        """Right-hand-side contribution of Dirichlet data ``g``."""
        if not callable(g) and g == 0.0:
            return np.zeros(self.n)
        vals = _dirichlet(g, self.boundary_points[:, 0], self.boundary_points[:, 1])
        return np.bincount(self.boundary_rows, self.boundary_coefs * vals, minlength=self.n)

    def apply(self, u, g=0.0) -> np.ndarray:
        return self.matrix @ u + self.bc(g)

    @property
    def is_symmetric(self) -> bool:
        d = self.matrix - self.matrix.T
        return d.nnz == 0 or float(abs(d).max()) <= 1e-12 * float(abs(self.matrix).max())

    def lu(self):
        if self._lu is None:
            self._lu = splu(self.matrix.tocsc())
        return self._lu


def assemble_laplacian(mask: DomainMask) -> SparseOperator:
    """Five-point Shortley-Weller operator with Dirichlet data folded out.

    Along an axis with arm lengths ``hp``, ``hm`` the second difference is
    ``2/(hp(hp+hm)) u+ + 2/(hm(hp+hm)) u- − 2/(hp hm) u0``.
    """
    if mask.n_interior == 0:
        raise SolverError("mask has no interior node")
    ny, nx = mask.shape
    js, is_ = np.nonzero(mask.interior)
    rows = mask.index[js, is_]
    arms = mask.arms[js, is_]  # (n, 4): E, W, N, S
    hE, hW, hN, hS = arms.T
    coefs = np.stack(
        [2.0 / (hE * (hE + hW)), 2.0 / (hW * (hE + hW)), 2.0 / (hN * (hN + hS)), 2.0 / (hS * (hN + hS))], axis=1
    )
    diag = -2.0 / (hE * hW) - 2.0 / (hN * hS)
    r_list, c_list, v_list = [rows], [rows], [diag]
    b_rows, b_coefs, b_pts = [], [], []
    X, Y = mask.coords
    for k, (di, dj) in enumerate(_OFFSETS):
        nj, ni = js + dj, is_ + di
        inner = mask.cls[nj, ni] == INTERIOR
        r_list.append(rows[inner])
        c_list.append(mask.index[nj[inner], ni[inner]])
        v_list.append(coefs[inner, k])
        cut = ~inner
        b_rows.append(rows[cut])
        b_coefs.append(coefs[cut, k])
        a = arms[cut, k]
        b_pts.append(np.stack([X[js[cut], is_[cut]] + a * di, Y[js[cut], is_[cut]] + a * dj], axis=1))
    n = mask.n_interior
    A = sp.csr_matrix((np.concatenate(v_list), (np.concatenate(r_list), np.concatenate(c_list))), shape=(n, n))
    return SparseOperator(mask, A, np.concatenate(b_rows), np.concatenate(b_coefs), np.concatenate(b_pts))


def pcg(A, b, tol: float = 1e-10, maxiter: int | None = None, x0=None) -> tuple[np.ndarray, int]:
    """Jacobi-preconditioned conjugate gradient for symmetric positive definite ``A``.

    Stops when ``‖r‖₂ ≤ tol·‖b‖₂``; raises :class:`SolverError` after ``maxiter``.
    """
    n = A.shape[0]
    maxiter = 20 * n if maxiter is None else maxiter
    dinv = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge in {maxiter} iterations")


def _rhs_vector(mask: DomainMask, rhs) -> np.ndarray:
    if isinstance(rhs, GridField):
        return rhs.values[mask.interior]
    if callable(rhs):
        X, Y = mask.coords
        return np.broadcast_to(np.asarray(rhs(X, Y), dtype=float), X.shape)[mask.interior].copy()
    return np.full(mask.n_interior, float(rhs))


def solve_poisson(mask: DomainMask, rhs, op: SparseOperator | None = None, method: str = "direct",
                  tol: float = 1e-10) -> GridField:
    """Solve ``Δu + rhs = 0`` with zero Dirichlet data.

    ``rhs`` may be a :class:`GridField`, a callable ``f(x, y)`` or a number.
    ``method`` is ``"direct"`` (sparse LU) or ``"cg"`` (own Jacobi-PCG on
    ``−A``; requires a symmetric operator).
    """
    op = assemble_laplacian(mask) if op is None else op
    f = _rhs_vector(mask, rhs)
    if not np.all(np.isfinite(f)):
        raise SolverError("rhs not finite on the interior")
    if method == "cg":
        u, _ = pcg(-op.matrix, f, tol=tol * 1e-2)
    else:
        u = op.lu().solve(-f)
    res = float(np.max(np.abs(op.matrix @ u + f))) if len(u) else 0.0
    scale = float(np.max(np.abs(f))) if len(f) else 0.0
    if res > max(tol * scale, 1e-300) and scale > 0:
        raise SolverError(f"Poisson residual {res:.3e} above tolerance")
    return GridField.from_interior(mask, u)


@dataclass
class Nonlinearity:
    """A term ``b(x, y, s)`` with its ``s``-derivative.

    ``b`` and ``ds`` take coordinate arrays ``x, y`` and values ``s`` and
    broadcast.  ``valid`` is the open interval of admissible ``s``.  For
    gradient-dependent terms ``bz(x, y, s, zx, zy)`` may be given (only used
    by the δ-estimates).  ``nonnegative`` records a caller's sign claim.
    """

    b: Callable
    ds: Callable | None = None
    valid: tuple[float, float] = (-math.inf, math.inf)
    bz: Callable | None = None
    nonnegative: bool | None = None
    name: str = ""

    @classmethod
    def of_s(cls, f, df=None, valid=(-math.inf, math.inf), name=""):
        """Term depending on ``s`` only."""
        d = None if df is None else (lambda x, y, s: df(s))
        return cls(lambda x, y, s: f(s), d, valid, name=name)

    @classmethod
    def constant(cls, c: float):
        return cls(lambda x, y, s: np.full(np.broadcast(x, y, s).shape, float(c)),
                   lambda x, y, s: np.zeros(np.broadcast(x, y, s).shape), name=f"const({c})")

    def __call__(self, x, y, s, zx=None, zy=None):
        if zx is not None and self.bz is not None:
            return np.asarray(self.bz(x, y, s, zx, zy), dtype=float)
        return np.asarray(self.b(x, y, s), dtype=float)

    def d_s(self, x, y, s) -> np.ndarray:
        if self.ds is not None:
            return np.broadcast_to(np.asarray(self.ds(x, y, s), dtype=float), np.broadcast(x, y, s).shape)
        s = np.asarray(s, dtype=float)
        e = 1e-6 * np.maximum(1.0, np.abs(s))
        return (self(x, y, s + e) - self(x, y, s - e)) / (2 * e)

    def in_range(self, s) -> np.ndarray:
        lo, hi = self.valid
        s = np.asarray(s)
        return (s > lo) & (s < hi)

    def plus_linear(self, eps: float) -> "Nonlinearity":
        """The term ``b + eps·s``."""
        return Nonlinearity(
            lambda x, y, s: self(x, y, s) + eps * np.asarray(s),
            lambda x, y, s: self.d_s(x, y, s) + eps,
            self.valid,
            name=f"{self.name}+{eps}s",
        )

    def check_derivative(self, probes: int = 100, seed: int = 0, box=(-1.0, 1.0, -1.0, 1.0),
                         s_range=None, rtol: float = 1e-6) -> float:
        """Max relative mismatch of ``ds`` against a central difference of ``b``."""
        rng = np.random.default_rng(seed)
        lo, hi = self.valid if s_range is None else s_range
        # unbounded sides are probed on [-10, 10]
        lo = max(lo, -10.0)
        hi = min(hi, 10.0)
        x = rng.uniform(box[0], box[1], probes)
        y = rng.uniform(box[2], box[3], probes)
        s = lo + (hi - lo) * rng.uniform(0.05, 0.95, probes)
        e = 1e-5 * np.maximum(1.0, np.abs(s))
        fd = (self(x, y, s + e) - self(x, y, s - e)) / (2 * e)
        an = self.d_s(x, y, s)
        return float(np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an))))


@dataclass
class SolveReport:
    iterations: int
    residual: float
    damping: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "damping": list(self.damping),
            "converged": self.converged,
            "message": self.message,
        }


def residual_vector(op: SparseOperator, u: np.ndarray, b: Nonlinearity, sign: int) -> np.ndarray:
    X, Y = op.mask.coords
    inter = op.mask.interior
    return op.matrix @ u + sign * b(X[inter], Y[inter], u)


def stencil_residual(u: GridField, b: Nonlinearity, sign: int = 1, boundary_value=0.0) -> float:
    """Sup-norm of ``Δ_h u + sign·b(x, u)`` evaluated directly from the
    stencil on grid arrays (independent of the assembled matrix)."""
    mask = u.mask
    X, Y = mask.coords
    js, is_ = np.nonzero(mask.interior)
    v0 = u.values[js, is_]
    arms = mask.arms[js, is_]
    nbr = []
    for k, (di, dj) in enumerate(_OFFSETS):
        nj, ni = js + dj, is_ + di
        inner = mask.cls[nj, ni] == INTERIOR
        a = arms[:, k]
        gq = _dirichlet(boundary_value, X[js, is_] + a * di, Y[js, is_] + a * dj)
        nbr.append(np.where(inner, u.values[nj, ni], gq))
    hE, hW, hN, hS = arms.T
    uxx = 2.0 * (hW * nbr[0] + hE * nbr[1] - (hE + hW) * v0) / (hE * hW * (hE + hW))
    uyy = 2.0 * (hS * nbr[2] + hN * nbr[3] - (hN + hS) * v0) / (hN * hS * (hN + hS))
    r = uxx + uyy + sign * b(X[js, is_], Y[js, is_], v0)
    return float(np.max(np.abs(r)))


def torsion_guess(mask: DomainMask, op: SparseOperator | None = None) -> GridField:
    """Torsion solution scaled to unit sup-norm."""
    u = solve_poisson(mask, 1.0, op)
    return u.scaled(1.0 / float(np.max(u.interior_values)))


def solve_semilinear(mask: DomainMask, b: Nonlinearity, sign: int = 1, init: GridField | None = None,
                     tol: float = 1e-10, maxiter: int = 100, positive: bool | None = None,
                     op: SparseOperator | None = None, collapse: float = 1e-6) -> tuple[GridField, SolveReport]:
    """Damped Newton for ``Δu + sign·b(x, u) = 0``, zero Dirichlet data.

    A step is halved (at most 30 times) until the iterate stays in ``b``'s
    validity range, stays positive when ``positive`` (default: when the
    validity range starts at ``s >= 0``), and reduces the residual sup-norm.
    Iterates that shrink below ``collapse`` times the initial sup-norm are
    rejected as the degenerate zero solution.
    """
    op = assemble_laplacian(mask) if op is None else op
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if positive is None:
        positive = b.valid[0] >= 0
    X, Y = mask.coords
    inter = mask.interior
    xi, yi = X[inter], Y[inter]
    u = (torsion_guess(mask, op) if init is None else init).interior_values.copy()
    if positive and np.any(u <= 0):
        raise SolverError("initial guess must be positive on the interior")
    if not np.all(b.in_range(u)):
        raise SolverError("initial guess outside the validity range")
    scale0 = float(np.max(np.abs(u)))
    F = op.matrix @ u + sign * b(xi, yi, u)
    res = float(np.max(np.abs(F)))
    report = SolveReport(0, res)
    for it in range(1, maxiter + 1):
        if res <= tol:
            break
        J = op.matrix + sp.diags(sign * b.d_s(xi, yi, u))
        try:
            du = splu(J.tocsc()).solve(-F)
        except RuntimeError as exc:
            raise SolverError(f"singular Newton system: {exc}") from exc
        t = 1.0
        for _ in range(31):
            un = u + t * du
            ok = np.all(np.isfinite(un)) and np.all(b.in_range(un))
            if ok and positive:
                ok = bool(np.all(un > 0))
            if ok:
                Fn = op.matrix @ un + sign * b(xi, yi, un)
                rn = float(np.max(np.abs(Fn)))
                if np.isfinite(rn) and rn < res:
                    break
            t *= 0.5
        else:
            report.iterations = it
            report.message = "damping exhausted"
            raise SolverError(f"Newton stagnation at iteration {it} (residual {res:.3e})")
        u, F, res = un, Fn, rn
        report.damping.append(t)
        report.iterations = it
        report.residual = res
        if scale0 > 0 and float(np.max(np.abs(u))) < collapse * scale0:
            raise SolverError("iterate collapsed to the zero solution (degenerate nonlinearity)")
    report.residual = res
    report.converged = res <= tol
    if not report.converged:
        report.message = "maximum iterations reached"
        raise SolverError(f"Newton did not converge in {maxiter} iterations (residual {res:.3e})")
    if positive and np.any(u <= 0):
        raise SolverError("solution not positive on the interior")
    report.message = "converged"
    return GridField.from_interior(mask, u), report


def solve_continuation(mask: DomainMask, family: Callable[[float], Nonlinearity], thetas, sign: int = 1,
                       tol: float = 1e-10, op: SparseOperator | None = None, **kw) -> tuple[GridField, SolveReport]:
    """Solve along ``family(θ)`` for increasing ``θ``, warm-starting each step."""
    op = assemble_laplacian(mask) if op is None else op
    u = None
    total = SolveReport(0, math.inf)
    for th in thetas:
        u, rep = solve_semilinear(mask, family(th), sign, u, tol, op=op, **kw)
        total.iterations += rep.iterations
        total.damping.extend(rep.damping)
        total.residual = rep.residual
    total.converged = True
    total.message = "converged"
    return u, total


def solve_eigen_first(mask: DomainMask, tol: float = 1e-12, maxiter: int = 500,
                      op: SparseOperator | None = None) -> tuple[float, GridField]:
    """First Dirichlet eigenpair by inverse iteration.

    Returns ``λ₁`` (the Rayleigh quotient of the converged vector) and the
    eigenfield normalized to unit sup-norm, positive inside.
    """
    if mask.n_interior < 9:
        raise SolverError("eigen solve needs at least 9 interior nodes")
    op = assemble_laplacian(mask) if op is None else op
    L = -op.matrix
    lu = op.lu()
    x = np.ones(op.n)
    lam_old = math.inf
    for _ in range(maxiter):
        y = -lu.solve(x)
        x = y / np.max(np.abs(y))
        lam = float(x @ (L @ x)) / float(x @ x)
        r = float(np.max(np.abs(L @ x - lam * x)))
        if abs(lam - lam_old) < tol * lam and r <= 1e-8 * lam:
            break
        lam_old = lam
    else:
        raise SolverError("inverse iteration did not converge")
    if x.sum() < 0:
        x = -x
    x /= np.max(x)
    if np.any(x <= 0):
        raise SolverError("eigenvector not positive on the interior")
    return lam, GridField.from_interior(mask, x)


def solve_perturbed(mask: DomainMask, b: Nonlinearity, eps: float, tol: float = 1e-10,
                    init: GridField | None = None, positive: bool = True,
                    op: SparseOperator | None = None) -> tuple[GridField, SolveReport]:
    """Solve ``Δv = b(x, v) + eps·v`` with zero Dirichlet data.

    Zero data on the whole domain stands in for data on a compactly
    contained subdomain.  ``eps = 0`` is allowed and gives the unperturbed
    problem.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return solve_semilinear(mask, b.plus_linear(eps), -1, init, tol, positive=positive, op=op)
