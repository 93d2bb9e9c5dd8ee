"""Linear systems of one linearization iteration and their solution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateCoefficient, SolverFailure
from .mesh import Grid

SOLVER_RTOL = 1e-12
# accepted normwise backward error when rounding makes SOLVER_RTOL unreachable
BACKWARD_TOL = 1e-14


@dataclass
class SparseSystem:
    """Square sparse system ``matrix @ x = rhs``."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric_pd: bool = False

    def export_mm(self, path) -> None:
        """Write the matrix in Matrix Market format (debugging aid)."""
        scipy.io.mmwrite(str(path), self.matrix)


# --------------------------------------------------------------------------
# advection


def upwind_faces(grid: Grid, F_cell: np.ndarray):
    """Donor-cell face data for a per-cell flux field.

    Args:
        grid: the grid.
        F_cell: flux vectors, shape (ncells, dim).

    Returns:
        ``(up, flux_int, out_mask, flux_bnd)``: upwind cell and flux
        (left to right) of each interior face; outflow mask and outward flux
        of each boundary face.
    """
    F = np.asarray(F_cell, dtype=float).reshape(grid.ncells, grid.dim)
    L, R, ax = grid.int_left, grid.int_right, grid.int_axis
    fl, fr = F[L, ax], F[R, ax]
    up = np.where(0.5 * (fl + fr) >= 0.0, L, R)
    flux_int = F[up, ax] * grid.area
    fn = F[grid.bnd_cell, grid.bnd_axis] * grid.bnd_sign
    out_mask = fn > 0.0
    flux_bnd = np.where(out_mask, fn, 0.0) * grid.area
    return up, flux_int, out_mask, flux_bnd


def face_fluxes(grid: Grid, F_cell: np.ndarray):
    """Upwinded face fluxes ``(interior, boundary)``."""
    _, fi, _, fb = upwind_faces(grid, F_cell)
    return fi, fb


def flux_sum(grid: Grid, F_cell: np.ndarray) -> np.ndarray:
    """Net outward upwind flux of each cell (not divided by ``|K|``)."""
    _, fi, _, fb = upwind_faces(grid, F_cell)
    N = grid.ncells
    out = np.bincount(grid.int_left, fi, N) - np.bincount(grid.int_right, fi, N)
    return out + np.bincount(grid.bnd_cell, fb, N)


def upwind_divergence(grid: Grid, F_cell: np.ndarray) -> np.ndarray:
    """Per-cell discrete divergence of the upwinded flux."""
    return flux_sum(grid, F_cell) / grid.volume


def advection_jacobian(grid: Grid, F_cell: np.ndarray, dF_cell: np.ndarray) -> sp.csr_matrix:
    """Derivative of :func:`flux_sum` with respect to cell values of u.

    The upwind direction is held fixed (it is static for gravity-driven flow).
    """
    up, _, out_mask, _ = upwind_faces(grid, F_cell)
    dF = np.asarray(dF_cell, dtype=float).reshape(grid.ncells, grid.dim)
    d_int = dF[up, grid.int_axis] * grid.area
    bc = grid.bnd_cell[out_mask]
    d_bnd = dF[bc, grid.bnd_axis[out_mask]] * grid.bnd_sign[out_mask] * grid.area
    rows = np.concatenate([grid.int_left, grid.int_right, bc])
    cols = np.concatenate([up, up, bc])
    vals = np.concatenate([d_int, -d_int, d_bnd])
    N = grid.ncells
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


# --------------------------------------------------------------------------
# assembly


def assemble_w_system(
    grid: Grid,
    Lb,
    LB,
    s_prev,
    b_prev,
    B_prev,
    u_old,
    adv_div,
    f_src,
    tau: float,
    increment: bool = False,
) -> SparseSystem:
    """System for w after eliminating s from the linearized step.

    ``(|K|/tau)(Lb/LB) w + A w = (|K|/tau)[(Lb/LB) B_prev - (b_prev - u_old)]
    + |K| f_src - |K| adv_div``.  With ``increment`` the unknown is
    ``z = w - B_prev`` and the right-hand side is minus the step residual,
    which avoids cancellation when ``Lb/LB`` is large.

    Raises:
        DegenerateCoefficient: if any ``LB <= 0``.
    """
    Lb, LB = np.asarray(Lb, float), np.asarray(LB, float)
    if np.any(~(LB > 0.0)):
        raise DegenerateCoefficient("w-system needs L_B > 0 in every cell")
    vol = grid.volume
    ratio = Lb / LB
    A = grid.laplacian
    mat = (sp.diags(vol / tau * ratio) + A).tocsr()
    B_prev = np.asarray(B_prev, float)
    if increment:
        rhs = -(vol / tau * (b_prev - u_old) + A @ B_prev + vol * adv_div - vol * f_src)
    else:
        rhs = vol / tau * (ratio * B_prev - (b_prev - u_old)) + vol * f_src - vol * adv_div
    return SparseSystem(mat, np.asarray(rhs, float), symmetric_pd=True)


def assemble_s_system(grid: Grid, Lb, LB, residual, tau: float, newton_adv_jacobian=None) -> SparseSystem:
    """Increment system ``(|K| Lb/tau) ds + A (LB ds) [+ J (Lb ds)] = -residual``.

    Args:
        newton_adv_jacobian: optional matrix from :func:`advection_jacobian`.

    Raises:
        SolverFailure: if ``Lb = LB = 0`` in some cell (singular row).
    """
    Lb, LB = np.asarray(Lb, float), np.asarray(LB, float)
    if np.any((Lb <= 0.0) & (LB <= 0.0)):
        raise SolverFailure("singular increment system: L_b = L_B = 0 in some cell")
    mat = sp.diags(grid.volume * Lb / tau) + grid.laplacian @ sp.diags(LB)
    if newton_adv_jacobian is not None:
        mat = mat + newton_adv_jacobian @ sp.diags(Lb)
    return SparseSystem(sp.csr_matrix(mat), -np.asarray(residual, float), symmetric_pd=False)


# --------------------------------------------------------------------------
# solve


def backward_error(A, x, b) -> float:
    """Normwise backward error ``|b - Ax|_inf / (|A|_inf |x|_inf + |b|_inf)``."""
    r = np.max(np.abs(b - A @ x))
    an = float(np.max(np.abs(A).sum(axis=1)))
    return float(r / (an * np.max(np.abs(x)) + np.max(np.abs(b))))


def _rel_res(A, x, b):
    return float(np.linalg.norm(A @ x - b) / np.linalg.norm(b))


def solve(sysm: SparseSystem, method: str = "direct", rtol: float = SOLVER_RTOL) -> np.ndarray:
    """Solve to relative residual ``rtol``.

    When rounding alone keeps the residual above ``rtol`` (ill-conditioned
    systems with a small right-hand side), a normwise backward error of at
    most ``BACKWARD_TOL`` is accepted instead.

    Args:
        method: ``"direct"`` (sparse LU with iterative refinement) or
            ``"cg"`` (Jacobi-preconditioned CG, symmetric positive definite only).

    Raises:
        SolverFailure: on breakdown or when the residual target is missed.
    """
    A, b = sysm.matrix, sysm.rhs
    if not np.all(np.isfinite(b)) or not np.all(np.isfinite(A.data)):
        raise SolverFailure("non-finite entries in the linear system")
    if not np.any(b):
        return np.zeros_like(b)
    if method == "cg":
        if not sysm.symmetric_pd:
            raise ValueError("CG needs a symmetric positive definite system")
        d = A.diagonal()
        M = sp.diags(1.0 / d)
        x, info = spla.cg(A, b, rtol=rtol * 0.5, atol=0.0, maxiter=20 * A.shape[0], M=M)
        res = _rel_res(A, x, b)
        if info != 0 or (res > rtol and not backward_error(A, x, b) <= BACKWARD_TOL):
            raise SolverFailure(f"CG stopped with relative residual {res:.3e}", res)
        return x
    if method != "direct":
        raise ValueError(f"unknown solver method {method!r}")
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise SolverFailure(f"factorization failed: {exc}") from exc
    x = lu.solve(b)
    res = _rel_res(A, x, b) if np.all(np.isfinite(x)) else np.inf
    for _ in range(3):
        if res <= rtol or not np.isfinite(res):
            break
        x = x + lu.solve(b - A @ x)
        res = _rel_res(A, x, b)
    if not res <= rtol and not backward_error(A, x, b) <= BACKWARD_TOL:
        raise SolverFailure(f"direct solve reached relative residual {res:.3e}", res)
    return x
