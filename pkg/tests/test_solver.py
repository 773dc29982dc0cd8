import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concavity_lab.domain import ConvexDomain, GridSpec, build_mask
from concavity_lab.fields import GridField
from concavity_lab.solver import (
    Nonlinearity,
    SolverError,
    assemble_laplacian,
    pcg,
    solve_continuation,
    solve_eigen_first,
    solve_perturbed,
    solve_poisson,
    solve_semilinear,
    stencil_residual,
)

from conftest import J01, RADIAL_GAMMA_HALF_CENTER, SQUARE_TORSION_CENTER, disk_mask

SQUARE = ConvexDomain.rectangle(0, 1, 0, 1)


def power_term(gamma):
    return Nonlinearity.of_s(lambda s: s**gamma, lambda s: gamma * s ** (gamma - 1), valid=(0.0, math.inf))


def center_value(u):
    X, Y = u.mask.coords
    k = np.argmin(X**2 + Y**2)
    return u.values.ravel()[k]


def test_full_interior_stencil(disk16):
    op = assemble_laplacian(disk16)
    h = disk16.h
    A = op.matrix.tocsr()
    j, i = np.argwhere(disk16.interior)[len(np.argwhere(disk16.interior)) // 2]
    r = disk16.index[j, i]
    row = A.getrow(r).toarray().ravel()
    assert abs(row[r] + 4 / h**2) < 1e-9
    nz = np.sort(row[np.nonzero(row)[0]])
    np.testing.assert_allclose(nz, [-4 / h**2, 1 / h**2, 1 / h**2, 1 / h**2, 1 / h**2], rtol=1e-12)
    assert abs(row.sum()) < 1e-9
    assert np.all(A.diagonal() < 0)


def test_single_node_system():
    d = ConvexDomain.disk(0.3)
    m = build_mask(d, GridSpec(3, 3, (-0.5, 0.5, -0.5, 0.5)))
    assert m.n_interior == 1
    op = assemble_laplacian(m)
    a = 0.3
    assert op.matrix.shape == (1, 1)
    assert abs(op.matrix[0, 0] - (-4 / a**2)) < 1e-9


def test_affine_in_kernel(disk32):
    op = assemble_laplacian(disk32)
    X, Y = disk32.coords

    def g(x, y):
        return 0.3 + 1.7 * x - 0.4 * y

    u = g(X, Y)[disk32.interior]
    assert np.max(np.abs(op.apply(u, g))) < 1e-10


def test_torsion_disk_center(disk32):
    u = solve_poisson(disk32, 1.0)
    assert abs(center_value(u) - 0.25) <= 2 * disk32.h**2
    assert stencil_residual(u, Nonlinearity.constant(1.0)) <= 1e-10
    z = solve_poisson(disk32, 0.0)
    assert np.all(z.interior_values == 0)


def test_square_torsion_against_series():
    m = build_mask(SQUARE, GridSpec.covering(SQUARE, 1 / 64))
    u = solve_poisson(m, 1.0)
    assert abs(np.max(u.interior_values) - SQUARE_TORSION_CENTER) < 1e-3


def test_square_torsion_second_order():
    errs = []
    hs = [1 / 32, 1 / 64, 1 / 128]
    for h in hs:
        m = build_mask(SQUARE, GridSpec.covering(SQUARE, h))
        u = solve_poisson(m, 1.0)
        errs.append(abs(np.max(u.interior_values) - SQUARE_TORSION_CENTER))
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 1.9, (errs, order)


def test_cg_matches_direct_on_square():
    m = build_mask(SQUARE, GridSpec.covering(SQUARE, 1 / 32))
    op = assemble_laplacian(m)
    assert op.is_symmetric
    a = solve_poisson(m, 1.0, op, method="direct")
    b = solve_poisson(m, 1.0, op, method="cg")
    assert np.max(np.abs(a.interior_values - b.interior_values)) < 1e-10


def test_pcg_nonconvergence_raises():
    m = build_mask(SQUARE, GridSpec.covering(SQUARE, 1 / 16))
    A = -assemble_laplacian(m).matrix
    with pytest.raises(SolverError):
        pcg(A, np.ones(A.shape[0]), tol=1e-14, maxiter=2)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_maximum_principle(seed):
    m = disk_mask(1 / 16)
    rng = np.random.default_rng(seed)
    f = GridField(m, np.where(m.interior, rng.uniform(0, 1, m.shape), 0.0))
    u = solve_poisson(m, f)
    assert np.all(u.interior_values >= 0)


def test_gamma_zero_matches_poisson(disk32, torsion32):
    u, rep = solve_semilinear(disk32, power_term(0.0))
    assert rep.converged and rep.residual <= 1e-10
    assert np.max(np.abs(u.interior_values - torsion32.interior_values)) < 1e-9


def test_power_half_against_radial_oracle():
    m = disk_mask(1 / 64)
    b = power_term(0.5)
    u, rep = solve_semilinear(m, b)
    assert rep.converged
    assert stencil_residual(u, b) <= 1e-9
    assert np.all(u.interior_values > 0)
    assert abs(center_value(u) - RADIAL_GAMMA_HALF_CENTER) < m.h**2


def test_degenerate_power_term_rejected(disk16):
    # g(s) = s^((gamma-1)/2) makes the whole term vanish; only u = 0 solves it
    gamma = 0.5
    b = Nonlinearity.of_s(lambda s: s**gamma - s ** ((1 + gamma) / 2) * s ** ((gamma - 1) / 2),
                          lambda s: 0.0 * s, valid=(0.0, math.inf))
    with pytest.raises(SolverError):
        solve_semilinear(disk16, b)


def test_continuation_in_gamma(disk32):
    u, rep = solve_continuation(disk32, lambda g: power_term(g), [0.0, 0.25, 0.5])
    v, _ = solve_semilinear(disk32, power_term(0.5))
    assert np.max(np.abs(u.interior_values - v.interior_values)) < 1e-9


def test_eigen_disk_and_square():
    m = disk_mask(1 / 64)
    lam, u = solve_eigen_first(m)
    assert abs(lam - J01**2) <= 0.01 * J01**2
    assert np.min(u.interior_values) > 0
    assert abs(np.max(u.interior_values) - 1) < 1e-15
    A = assemble_laplacian(m).matrix
    x = u.interior_values
    rq = -(x @ (A @ x)) / (x @ x)
    assert abs(rq - lam) <= 1e-8 * lam
    assert np.max(np.abs(A @ x + lam * x)) <= 1e-8 * lam
    ms = build_mask(SQUARE, GridSpec.covering(SQUARE, 1 / 32))
    lam_s, _ = solve_eigen_first(ms)
    assert abs(lam_s - 2 * math.pi**2) <= 0.01 * 2 * math.pi**2


def test_eigen_needs_nine_nodes():
    m = build_mask(ConvexDomain.disk(), GridSpec(3, 3, (-1.2, 1.2, -1.2, 1.2)))
    with pytest.raises(SolverError):
        solve_eigen_first(m)


def test_perturbed_limits(disk32, torsion32):
    minus_one = Nonlinearity.constant(-1.0)
    v, rep = solve_perturbed(disk32, minus_one, 0.0, positive=False)
    assert np.max(np.abs(v.interior_values - torsion32.interior_values)) < 1e-12
    dists = []
    for eps in (1e-1, 1e-2, 1e-3):
        v, _ = solve_perturbed(disk32, minus_one, eps, positive=False)
        dists.append(np.max(np.abs(v.interior_values - torsion32.interior_values)))
    assert dists[0] > dists[1] > dists[2]
    with pytest.raises(ValueError):
        solve_perturbed(disk32, minus_one, -1.0)


def test_perturbed_beyond_spectral_threshold(disk32):
    # Δv = -κv - 1 + εv has no positive solution once κ - ε exceeds λ₁
    lam1, _ = solve_eigen_first(disk32)
    kappa = lam1 + 2.0
    b = Nonlinearity.of_s(lambda s: -kappa * s - 1.0, lambda s: -kappa + 0 * s)
    with pytest.raises(SolverError):
        solve_perturbed(disk32, b, 0.5, positive=True)


def test_derivative_check():
    good = Nonlinearity.of_s(lambda s: np.sin(s), lambda s: np.cos(s))
    bad = Nonlinearity.of_s(lambda s: np.sin(s), lambda s: np.sin(s))
    assert good.check_derivative() <= 1e-6
    assert bad.check_derivative() > 1e-6
    fd = Nonlinearity.of_s(lambda s: s**3)
    np.testing.assert_allclose(fd.d_s(0.0, 0.0, np.array([1.0, 2.0])), [3.0, 12.0], rtol=1e-8)


def test_report_converged_implies_tolerance(disk16):
    _, rep = solve_semilinear(disk16, power_term(0.3), tol=1e-11)
    assert rep.converged and rep.residual <= 1e-11
    d = rep.to_dict()
    assert d["iterations"] == rep.iterations and d["converged"]


def test_deterministic(disk32):
    a, _ = solve_semilinear(disk32, power_term(0.5))
    b, _ = solve_semilinear(disk32, power_term(0.5))
    assert np.array_equal(a.values, b.values, equal_nan=True)
