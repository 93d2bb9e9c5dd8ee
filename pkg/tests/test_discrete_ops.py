import numpy as np
import pytest
import scipy.sparse as sp

from ddsplit import discrete_ops as ops
from ddsplit.errors import DegenerateCoefficient, SolverFailure
from ddsplit.mesh import Grid, build_grid


def _unit(n=1):
    return Grid(1, 0.0, float(n), n)


# --------------------------------------------------------------------------
# advection


def test_upwind_zero_flux():
    g = build_grid(2, 0.0, 1.0, 4)
    np.testing.assert_array_equal(ops.upwind_divergence(g, np.zeros((g.ncells, 2))), 0.0)


def test_upwind_constant_flux_telescopes():
    g = build_grid(1, 0.0, 1.0, 5)
    div = ops.upwind_divergence(g, np.ones((5, 1)))
    np.testing.assert_allclose(div[1:], 0.0, atol=1e-12)
    # inflow boundary contributes nothing, so the first cell only loses mass
    assert div[0] == pytest.approx(1.0 / g.h)
    _, _, out, fb = ops.upwind_faces(g, np.ones((5, 1)))
    np.testing.assert_array_equal(out, g.bnd_sign > 0)
    assert ops.flux_sum(g, np.ones((5, 1))).sum() == pytest.approx(fb[g.bnd_sign > 0].sum())


def test_upwind_hand_stencil():
    g = _unit(3)
    div = ops.upwind_divergence(g, np.array([[0.0], [1.0], [0.0]]))
    np.testing.assert_allclose(div, [0.0, 1.0, -1.0])


def test_upwind_negative_direction_mirrors():
    g = _unit(3)
    div = ops.upwind_divergence(g, np.array([[0.0], [-1.0], [0.0]]))
    np.testing.assert_allclose(div, [-1.0, 1.0, 0.0])


def test_inflow_boundary_carries_nothing():
    g = _unit(2)
    # flux points right: the left boundary face is inflow
    _, _, out, fb = ops.upwind_faces(g, np.ones((2, 1)))
    left = g.bnd_sign < 0
    assert not out[left].any()
    assert np.all(fb[left] == 0.0)


def test_advection_jacobian_matches_fd():
    g = build_grid(2, 0.0, 1.0, 4)
    rng = np.random.default_rng(0)
    u = rng.uniform(0.2, 0.8, g.ncells)
    d = np.array([0.0, 1.0])
    F = lambda v: np.outer(v**2, d)
    J = ops.advection_jacobian(g, F(u), np.outer(2 * u, d))
    v = rng.standard_normal(g.ncells)
    eps = 1e-7
    fd = (ops.flux_sum(g, F(u + eps * v)) - ops.flux_sum(g, F(u - eps * v))) / (2 * eps)
    np.testing.assert_allclose(J @ v, fd, rtol=1e-6, atol=1e-8)


def test_flux_sum_conserves_in_interior():
    g = build_grid(2, 0.0, 1.0, 6)
    rng = np.random.default_rng(1)
    F = rng.standard_normal((g.ncells, 2))
    _, fi, _, fb = ops.upwind_faces(g, F)
    # interior faces cancel in the total; only boundary outflow remains
    assert ops.flux_sum(g, F).sum() == pytest.approx(fb.sum(), abs=1e-12)


# --------------------------------------------------------------------------
# w-system


def _zeros(n):
    return [np.zeros(n) for _ in range(4)]


def test_w_system_single_cell_hand_assembly():
    g = _unit(1)
    one = np.ones(1)
    s_prev, b_prev, B_prev, u_old = _zeros(1)
    sysm = ops.assemble_w_system(g, one, one, np.array([0.7]), b_prev, B_prev, u_old, np.zeros(1), np.zeros(1), 1.0)
    assert sysm.matrix.toarray()[0, 0] == pytest.approx(5.0)
    assert sysm.rhs[0] == 0.0
    assert ops.solve(sysm)[0] == 0.0


def test_w_system_zero_data_zero_solution():
    g = build_grid(2, 0.0, 1.0, 5)
    N = g.ncells
    r = np.random.default_rng(2)
    Lb, LB = r.uniform(0.1, 1, N), r.uniform(0.1, 1, N)
    z = np.zeros(N)
    sysm = ops.assemble_w_system(g, Lb, LB, z, z, z, z, z, z, 0.1)
    np.testing.assert_array_equal(ops.solve(sysm), 0.0)


def test_w_system_fixed_point_returns_B_prev():
    g = build_grid(1, 0.0, 1.0, 10)
    N = g.ncells
    rng = np.random.default_rng(4)
    B_prev = rng.uniform(0, 1, N)
    b_prev = rng.uniform(0, 1, N)
    # choose the source so that b_prev, B_prev solve the time step exactly
    tau = 0.3
    u_old = rng.uniform(0, 1, N)
    f = ((b_prev - u_old) / tau * g.volume + g.laplacian @ B_prev) / g.volume
    Lb, LB = rng.uniform(0.1, 1, N), rng.uniform(0.1, 1, N)
    adv = np.zeros(N)
    for inc in (False, True):
        sysm = ops.assemble_w_system(g, Lb, LB, b_prev, b_prev, B_prev, u_old, adv, f, tau, increment=inc)
        w = ops.solve(sysm)
        np.testing.assert_allclose(w + (B_prev if inc else 0.0), B_prev, atol=1e-12)


def test_w_system_symmetric_pd():
    g = build_grid(2, 0.0, 1.0, 4)
    N = g.ncells
    rng = np.random.default_rng(5)
    z = np.zeros(N)
    sysm = ops.assemble_w_system(g, rng.uniform(0.1, 1, N), rng.uniform(0.1, 1, N), z, z, z, z, z, z, 0.1)
    A = sysm.matrix
    assert sysm.symmetric_pd
    assert abs(A - A.T).max() <= 1e-14
    assert np.all(A.diagonal() > 0)
    assert A.shape == (N, N)
    assert np.all(np.diff(A.indptr) > 0)


def test_w_system_rejects_zero_LB():
    g = _unit(2)
    z = np.zeros(2)
    with pytest.raises(DegenerateCoefficient):
        ops.assemble_w_system(g, np.ones(2), np.array([1.0, 0.0]), z, z, z, z, z, z, 1.0)


# --------------------------------------------------------------------------
# s-system


def test_s_system_zero_residual():
    g = build_grid(1, 0.0, 1.0, 6)
    sysm = ops.assemble_s_system(g, np.ones(6), np.full(6, 0.5), np.zeros(6), 0.1)
    np.testing.assert_array_equal(ops.solve(sysm), 0.0)


def test_s_system_single_cell_lb_only():
    g = _unit(1)
    sysm = ops.assemble_s_system(g, np.ones(1), np.zeros(1), np.array([0.25]), 1.0)
    assert sysm.matrix.toarray()[0, 0] == pytest.approx(1.0)
    assert ops.solve(sysm)[0] == pytest.approx(-0.25)


def test_s_system_single_cell_LB_only():
    g = _unit(1)
    sysm = ops.assemble_s_system(g, np.zeros(1), np.ones(1), np.array([1.0]), 1.0)
    assert sysm.matrix.toarray()[0, 0] == pytest.approx(4.0)


def test_s_system_singular_rejected():
    g = _unit(2)
    with pytest.raises(SolverFailure):
        ops.assemble_s_system(g, np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.ones(2), 1.0)


def test_s_system_with_jacobian():
    g = _unit(2)
    J = sp.csr_matrix(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    sysm = ops.assemble_s_system(g, np.ones(2), np.ones(2), np.zeros(2), 1.0, J)
    A0 = ops.assemble_s_system(g, np.ones(2), np.ones(2), np.zeros(2), 1.0).matrix
    np.testing.assert_allclose((sysm.matrix - A0).toarray(), J.toarray())


# --------------------------------------------------------------------------
# solve


def test_solve_identity():
    r = np.array([1.0, -2.0, 3.5])
    x = ops.solve(ops.SparseSystem(sp.identity(3, format="csr"), r))
    np.testing.assert_array_equal(x, r)


def test_solve_manufactured_poisson():
    g = _unit(3)
    A = g.laplacian
    np.testing.assert_allclose(A.toarray()[1], [-1, 2, -1])
    w = np.array([0.3, -1.2, 2.0])
    x = ops.solve(ops.SparseSystem(A.tocsr(), A @ w, True))
    np.testing.assert_allclose(x, w, rtol=1e-12)


def test_cg_and_direct_agree():
    rng = np.random.default_rng(11)
    Q = rng.standard_normal((100, 100))
    A = sp.csr_matrix(Q @ Q.T + 100 * np.eye(100))
    b = rng.standard_normal(100)
    sysm = ops.SparseSystem(A, b, symmetric_pd=True)
    x1, x2 = ops.solve(sysm, "direct"), ops.solve(sysm, "cg")
    np.testing.assert_allclose(x1, x2, atol=1e-10)
    for x in (x1, x2):
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-12


def test_cg_requires_spd_flag():
    sysm = ops.SparseSystem(sp.identity(2, format="csr"), np.ones(2), symmetric_pd=False)
    with pytest.raises(ValueError):
        ops.solve(sysm, "cg")


def test_solve_singular_raises():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverFailure):
        ops.solve(ops.SparseSystem(A, np.array([1.0, 0.0])))


def test_solve_non_finite_raises():
    with pytest.raises(SolverFailure):
        ops.solve(ops.SparseSystem(sp.identity(2, format="csr"), np.array([np.nan, 1.0])))


def test_solve_deterministic():
    g = build_grid(2, 0.0, 1.0, 8)
    b = np.random.default_rng(9).standard_normal(g.ncells)
    sysm = ops.SparseSystem(g.laplacian.tocsr(), b, True)
    assert ops.solve(sysm).tobytes() == ops.solve(sysm).tobytes()


def test_export_matrix_market(tmp_path):
    import scipy.io

    g = _unit(3)
    sysm = ops.SparseSystem(g.laplacian.tocsr(), np.ones(3), True)
    sysm.export_mm(tmp_path / "a.mtx")
    B = scipy.io.mmread(str(tmp_path / "a.mtx"))
    np.testing.assert_allclose(B.toarray(), g.laplacian.toarray())
