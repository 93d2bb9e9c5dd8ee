"""A posteriori linearization estimators and adaptive selection of M.

For iterate i, with ``a_w = w - B(s)`` and
``a_u = u - b(s) + tau (f(b(s)) - f(b(s_prev)))`` (the second term only for
lagged reactions), the next linearization error satisfies

    max(0, (eta_+ - eta_-)/2) <= E_lin <= (eta_+ + eta_-)/2,
    eta_pm**2 = || sqrt(Lb/LB) a_w  pm  sqrt(LB/Lb) a_u ||**2 + tau |dF|_{-1}**2,

where ``|dF|_{-1}**2 = sum_f (flux_f(F(b(s))) - flux_f(F(b(s_prev))))**2 / T_f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import discrete_ops as ops
from .errors import DegenerateCoefficient
from .mesh import Grid
from .nonlinearity import NonlinearModel
from .schemes import IterationState, linearization_factors

M_CANDIDATES = tuple(10.0**j for j in range(-10, -1))


@dataclass(frozen=True, eq=False)
class EstimatorInputs:
    """Iterate i (``*_cur``) and the s of iterate i-1, on one grid.

    Args:
        f_diff: reaction difference ``f(b(s_cur)) - f(b(s_prev))``; zero when
            the reaction is frozen or absent.
    """

    s_cur: np.ndarray
    u_cur: np.ndarray
    w_cur: np.ndarray
    s_prev: np.ndarray | None
    tau: float
    grid: Grid
    f_diff: np.ndarray | None = None


def estimator_inputs(state: IterationState, model: NonlinearModel, grid: Grid, tau: float, reaction_mode: str = "lagged") -> EstimatorInputs:
    """Collect estimator data from an iteration state."""
    f_diff = None
    if reaction_mode == "lagged" and state.s_prev is not None and model.adv.reaction != "none":
        f_diff = model.reaction(model.b(state.s)) - model.reaction(model.b(state.s_prev))
    return EstimatorInputs(state.s, state.u, state.w, state.s_prev, tau, grid, f_diff)


def flux_difference_sq(grid: Grid, model: NonlinearModel, s_cur, s_prev) -> float:
    """``sum_f (flux_f(cur) - flux_f(prev))**2 / T_f`` over all faces."""
    if not model.has_advection or s_prev is None:
        return 0.0
    fi1, fb1 = ops.face_fluxes(grid, model.flux(model.b(s_cur), grid.dim))
    fi0, fb0 = ops.face_fluxes(grid, model.flux(model.b(s_prev), grid.dim))
    di, db = fi1 - fi0, fb1 - fb0
    return float(np.dot(di, di)) / grid.t_int + float(np.dot(db, db)) / grid.t_bnd


def eta_pm(inp: EstimatorInputs, model: NonlinearModel, candidate_M: float, epsilon: float, grid: Grid | None = None, rule: str = "m"):
    """Estimators ``(eta_plus, eta_minus)`` for a candidate M.

    Args:
        rule: factor rule for the candidate ``Lb``, ``LB`` (``"m"``, ``"l"``
            or ``"newton"``).

    Raises:
        DegenerateCoefficient: if a candidate factor is not positive.
    """
    grid = grid if grid is not None else inp.grid
    Lb, LB = linearization_factors(rule, inp.s_cur, model, inp.tau, epsilon, candidate_M)
    if np.any(~(Lb > 0.0)) or np.any(~(LB > 0.0)):
        raise DegenerateCoefficient("estimator needs positive L_b and L_B")
    a_w = inp.w_cur - np.asarray(model.B(inp.s_cur), float)
    a_u = inp.u_cur - np.asarray(model.b(inp.s_cur), float)
    if inp.f_diff is not None:
        a_u = a_u + inp.tau * inp.f_diff
    q = np.sqrt(Lb / LB)
    P = q * a_w + a_u / q
    Q = q * a_w - a_u / q
    adv = inp.tau * flux_difference_sq(grid, model, inp.s_cur, inp.s_prev)
    vol = grid.volume
    return math.sqrt(vol * float(np.dot(P, P)) + adv), math.sqrt(vol * float(np.dot(Q, Q)) + adv)


def eta_lin(eta_plus: float, eta_minus: float):
    """``(upper, lower)`` bounds of the linearization error."""
    return 0.5 * (eta_plus + eta_minus), max(0.0, 0.5 * (eta_plus - eta_minus))


def select_M(inp: EstimatorInputs, elin_current: float, model: NonlinearModel, epsilon: float, grid: Grid | None = None) -> float:
    """Smallest candidate ``M = 10**j``, ``j = -10..-2``, whose upper bound
    does not exceed the current error; ``1e-2`` if none does."""
    for M in M_CANDIDATES:
        up, _ = eta_lin(*eta_pm(inp, model, M, epsilon, grid))
        if up <= elin_current:
            return M
    return M_CANDIDATES[-1]


# --------------------------------------------------------------------------
# convergence diagnostics


def divided_difference(f, df, t, v):
    """``(f(t) - f(v)) / (t - v)``, and ``f'(t)`` where ``t == v``."""
    t, v = np.asarray(t, float), np.asarray(v, float)
    same = t == v
    d = np.where(same, 1.0, t - v)
    return np.where(same, df(t), (np.asarray(f(t)) - np.asarray(f(v))) / d)


def g_coefficients(model: NonlinearModel, s_iter, s_ref, Lb, LB, tau: float, LF_est: float):
    """Coefficient fields ``(G1, G2, G3)`` of the contraction argument.

    ``G1 = b[.]LB + Lb B[.]``, ``G2 = 2 LB Lb - G1``,
    ``G3 = G1 - (2 - tau LF) b[.] B[.]`` with divided differences between
    ``s_iter`` and ``s_ref``.
    """
    bq = divided_difference(model.b, model.db, s_iter, s_ref)
    Bq = divided_difference(model.B, model.dB, s_iter, s_ref)
    G1 = bq * LB + Lb * Bq
    G2 = 2.0 * LB * Lb - G1
    G3 = G1 - (2.0 - tau * LF_est) * bq * Bq
    return G1, G2, G3


def estimate_bprime_lipschitz(model: NonlinearModel, s_lo: float, s_hi: float, n: int = 4001) -> float:
    """Sampled Lipschitz constant of B' on ``[s_lo, s_hi]``."""
    s = np.linspace(s_lo, s_hi, n)
    d = np.asarray(model.dB(s), float)
    return float(np.max(np.abs(np.diff(d)) / np.diff(s)))


def estimate_bound(s_iter, s_ref, tau: float) -> float:
    """``max |s_iter - s_ref| / tau``."""
    return float(np.max(np.abs(np.asarray(s_iter) - np.asarray(s_ref)))) / tau


def estimate_lf(model: NonlinearModel, u_lo: float = 0.0, u_hi: float = 1.0, n: int = 2001) -> float:
    """Sampled Lipschitz constant of the reaction and advective flux in u."""
    u = np.linspace(u_lo, u_hi, n)
    lf = float(np.max(np.abs(model.dreaction(u))))
    if model.has_advection:
        F = model.flux(np.clip(u, 0.0, 1.0), len(model.adv.direction))
        lf = max(lf, float(np.max(np.linalg.norm(np.diff(F, axis=0), axis=1) / np.diff(u))))
    return lf


def sandwich_check(
    model: NonlinearModel,
    s_iter,
    s_ref,
    LB,
    M: float,
    tau: float,
    lipschitz_Bprime_est: float,
    bound_est: float,
    tol: float = 1e-12,
) -> bool:
    """Check ``(M - M0) tau <= LB - B[s_iter, s_ref] <= 2 M tau`` cell-wise.

    ``M0 = bound_est * lipschitz_Bprime_est``.  The lower bound is only
    required to hold up to ``tol`` (it may be negative when ``M0 > M``).
    """
    M0 = bound_est * lipschitz_Bprime_est
    d = np.asarray(LB, float) - divided_difference(model.B, model.dB, s_iter, s_ref)
    return bool(np.all(d >= (M - M0) * tau - tol) and np.all(d <= 2.0 * M * tau + tol))
