"""Linearization factors, single iterations and full time steps.

One time step solves, for the unknown s,

    (|K|/tau)(b(s) - u_old) + A B(s) + div_h F(b(s)) |K| = |K| f(b(s))

by iterating linear problems with coefficient fields ``Lb``, ``LB``:
Newton (``b'``, ``B'``), the L-scheme (constant ``1 + eps``) or the
M-scheme ``min(max(rho' + M tau, 2 M tau), 1 + eps)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import discrete_ops as ops
from .errors import ConfigError
from .mesh import Grid, h1_seminorm_sq
from .nonlinearity import NonlinearModel

SCHEME_KINDS = ("newton", "l", "m", "madaptive")
REACTION_MODES = ("lagged", "frozen")


@dataclass(frozen=True)
class SchemeSpec:
    """Linearization scheme and its stopping controls.

    Args:
        kind: ``"newton"``, ``"l"``, ``"m"`` or ``"madaptive"``.
        M: stabilization parameter of the fixed M-scheme.
        epsilon: the small positive constant in ``1 + epsilon``.
        eps_stop: tolerance on the linearization error E_lin.
        max_iters: iteration cap per time step.
        divergence_threshold: E_fix above this (or non-finite) means divergence.
        newton_linearize_advection: Newton also linearizes the advective flux.
        reaction_mode: ``"lagged"`` evaluates f at the previous iterate,
            ``"frozen"`` at the previous time level.
        solver: linear solver method passed to :func:`discrete_ops.solve`.
    """

    kind: str = "m"
    M: float = 0.01
    epsilon: float = 1e-6
    eps_stop: float = 1e-6
    max_iters: int = 10_000
    divergence_threshold: float = 1e10
    newton_linearize_advection: bool = True
    reaction_mode: str = "lagged"
    solver: str = "direct"

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ConfigError(f"unknown scheme {self.kind!r}")
        if self.kind == "m" and not self.M > 0:
            raise ConfigError("M-scheme needs M > 0")
        if not self.epsilon > 0 or not self.eps_stop > 0:
            raise ConfigError("epsilon and eps_stop must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError("max_iters must be a positive integer")
        if not self.divergence_threshold > 1:
            raise ConfigError("divergence_threshold must exceed 1")
        if self.reaction_mode not in REACTION_MODES:
            raise ConfigError(f"unknown reaction mode {self.reaction_mode!r}")
        if self.solver not in ("direct", "cg"):
            raise ConfigError(f"unknown solver {self.solver!r}")


@dataclass
class IterationState:
    """Iterate i (``s, u, w``) and iterate i-1 (``*_prev``)."""

    s: np.ndarray
    u: np.ndarray
    w: np.ndarray
    s_prev: np.ndarray | None = None
    u_prev: np.ndarray | None = None
    w_prev: np.ndarray | None = None
    s_prev2: np.ndarray | None = None
    iter: int = 0


@dataclass
class StepReport:
    """Outcome of one time step."""

    iterations: int = 0
    converged: bool = False
    diverged: bool = False
    elin_history: list = field(default_factory=list)
    efix_history: list = field(default_factory=list)
    M_history: list = field(default_factory=list)
    eta_upper: list = field(default_factory=list)
    eta_lower: list = field(default_factory=list)
    alpha: float = math.nan
    order_p: float = math.nan
    norm_equivalence_ok: bool = True
    iterates: list = field(default_factory=list)


def linearization_factors(kind: str, s, model: NonlinearModel, tau: float, epsilon: float, M: float = 0.0):
    """Coefficient fields ``(Lb, LB)`` at the iterate ``s``.

    Args:
        kind: ``"newton"``, ``"l"``, ``"m"`` or ``"madaptive"`` (same rule as ``"m"``).
        s: iterate values.
        M: stabilization parameter (M-type schemes only).
    """
    s = np.asarray(s, dtype=float)
    if kind == "l":
        c = np.full(s.shape, 1.0 + epsilon)
        return c, c.copy()
    db, dB = np.asarray(model.db(s), float), np.asarray(model.dB(s), float)
    if kind == "newton":
        return db, dB
    if kind in ("m", "madaptive"):
        mt = M * tau
        top = 1.0 + epsilon
        return np.minimum(np.maximum(db + mt, 2.0 * mt), top), np.minimum(np.maximum(dB + mt, 2.0 * mt), top)
    raise ValueError(f"unknown scheme {kind!r}")


def _zeros_like(x, f):
    return np.zeros_like(x) if f is None else np.asarray(f, float)


def time_step_residual(s, u_old, model: NonlinearModel, grid: Grid, tau: float, f_src=None, f_at=None):
    """Cell residual of the nonlinear time step at ``s``.

    ``(|K|/tau)(b(s) - u_old) + A B(s) + fluxsum F(b(s)) - |K| (f_src + f(u_f))``
    with ``u_f = b(s)`` unless ``f_at`` is given.
    """
    s = np.asarray(s, float)
    b = np.asarray(model.b(s), float)
    B = np.asarray(model.B(s), float)
    fu = model.reaction(b if f_at is None else f_at)
    src = _zeros_like(s, f_src) + fu
    r = grid.volume / tau * (b - u_old) + grid.laplacian @ B - grid.volume * src
    if model.has_advection:
        r = r + ops.flux_sum(grid, model.flux(b, grid.dim))
    return r


def iterate_once(
    state: IterationState,
    u_old,
    scheme: SchemeSpec,
    M_current: float,
    model: NonlinearModel,
    grid: Grid,
    tau: float,
    f_src=None,
):
    """One linearization iteration from iterate i-1 held in ``state``.

    Returns:
        ``(new_state, Lb, LB)`` with the coefficient fields that were used.
    """
    s = state.s
    Lb, LB = linearization_factors(scheme.kind, s, model, tau, scheme.epsilon, M_current)
    b_prev = np.asarray(model.b(s), float)
    B_prev = np.asarray(model.B(s), float)
    f_at = u_old if scheme.reaction_mode == "frozen" else b_prev
    src = _zeros_like(s, f_src) + model.reaction(f_at)
    F = model.flux(b_prev, grid.dim) if model.has_advection else None
    if scheme.kind != "newton" and np.all(LB > 0.0):
        adv_div = ops.upwind_divergence(grid, F) if F is not None else np.zeros_like(s)
        sysm = ops.assemble_w_system(grid, Lb, LB, s, b_prev, B_prev, u_old, adv_div, src, tau, increment=True)
        z = ops.solve(sysm, scheme.solver)
        s_new = s + z / LB
        w_new = B_prev + z
        u_new = b_prev + Lb * (s_new - s)
    else:
        res = time_step_residual(s, u_old, model, grid, tau, f_src, f_at=f_at)
        J = None
        if F is not None and scheme.kind == "newton" and scheme.newton_linearize_advection:
            J = ops.advection_jacobian(grid, F, model.dflux(b_prev, grid.dim))
        sysm = ops.assemble_s_system(grid, Lb, LB, res, tau, J)
        ds = ops.solve(sysm, "direct")
        s_new = s + ds
        u_new = b_prev + Lb * ds
        w_new = B_prev + LB * ds
    new = IterationState(s_new, u_new, w_new, s, state.u, state.w, state.s_prev, state.iter + 1)
    return new, Lb, LB


def compute_elin(state: IterationState, Lb, LB, grid: Grid, tau: float) -> float:
    """``(sum |K| Lb LB ds**2 + tau |grad dw|**2)**0.5`` between iterates i and i-1."""
    ds = state.s - state.s_prev
    dw = state.w - state.w_prev
    e2 = grid.volume * float(np.sum(np.asarray(Lb, float) * np.asarray(LB, float) * ds * ds)) + tau * h1_seminorm_sq(grid, dw, dirichlet_zero=True)
    return math.sqrt(max(e2, 0.0))


def compute_efix(state: IterationState, grid: Grid, tau: float) -> float:
    """:func:`compute_elin` with ``Lb LB`` replaced by 1."""
    one = np.ones_like(state.s)
    return compute_elin(state, one, one, grid, tau)


def contraction_metrics(efix_history):
    """Contraction rate and order from a history of E_fix values.

    Returns:
        ``(alpha, p)``: alpha is the mean of the last (up to) three ratios
        ``E^i / E^{i-1}``; p is ``log(r_last) / log(r_prev)``.  Both are NaN
        with fewer than two ratios.
    """
    e = np.asarray(efix_history, dtype=float)
    if e.size < 3:
        return math.nan, math.nan
    with np.errstate(divide="ignore", invalid="ignore"):
        r = e[1:] / e[:-1]
        alpha = float(np.mean(r[-3:]))
        p = float(np.log(r[-1]) / np.log(r[-2]))
    return alpha, p


def step(
    s_old,
    u_old,
    scheme: SchemeSpec,
    model: NonlinearModel,
    grid: Grid,
    tau: float,
    w_old=None,
    f_src=None,
    keep_iterates: bool = False,
    hook=None,
):
    """Advance one implicit Euler step.

    The initial iterate is the previous time level ``(s_old, u_old, w_old)``
    (``w_old`` defaults to ``B(s_old)``).  The returned ``u`` is the last
    linear iterate, which conserves mass exactly.

    Args:
        hook: optional callable ``hook(i, state, Lb, LB, elin)`` per iteration.

    Returns:
        ``(s, u, w, StepReport)``.
    """
    from .adaptive import estimator_inputs, eta_lin, eta_pm, select_M

    s_old = np.asarray(s_old, float)
    u_old = np.asarray(u_old, float)
    w0 = np.asarray(model.B(s_old), float) if w_old is None else np.asarray(w_old, float)
    state = IterationState(s_old.copy(), u_old.copy(), w0.copy())
    rep = StepReport()
    M_cur = 1.0 if scheme.kind == "madaptive" else scheme.M
    m_type = scheme.kind in ("m", "madaptive")
    est_ok = scheme.kind != "newton"
    for i in range(1, scheme.max_iters + 1):
        up = lo = math.nan
        if est_ok and i >= 2:
            inp = estimator_inputs(state, model, grid, tau, scheme.reaction_mode)
            rule = "l" if scheme.kind == "l" else "m"
            up, lo = eta_lin(*eta_pm(inp, model, M_cur, scheme.epsilon, rule=rule))
        new, Lb, LB = iterate_once(state, u_old, scheme, M_cur, model, grid, tau, f_src)
        elin = compute_elin(new, Lb, LB, grid, tau)
        efix = compute_efix(new, grid, tau)
        rep.elin_history.append(elin)
        rep.efix_history.append(efix)
        rep.M_history.append(M_cur if m_type else math.nan)
        rep.eta_upper.append(up)
        rep.eta_lower.append(lo)
        rep.iterations = i
        sq = math.sqrt(max(float(np.min(Lb * LB)), 0.0))
        tol = 1e-12 * max(efix, 1e-300)
        if elin > (1.0 + scheme.epsilon) * efix + tol or (sq > 0 and efix > elin / min(1.0, sq) + tol):
            rep.norm_equivalence_ok = False
        if keep_iterates:
            rep.iterates.append((new.s.copy(), new.u.copy(), new.w.copy()))
        if hook is not None:
            hook(i, new, Lb, LB, elin)
        if not (math.isfinite(efix) and math.isfinite(elin)) or efix > scheme.divergence_threshold:
            rep.diverged = True
            break
        state = new
        if elin <= scheme.eps_stop:
            rep.converged = True
            break
        if scheme.kind == "madaptive" and i > 1:
            inp = estimator_inputs(state, model, grid, tau, scheme.reaction_mode)
            M_cur = select_M(inp, elin, model, scheme.epsilon)
    rep.alpha, rep.order_p = contraction_metrics(rep.efix_history)
    return state.s, state.u, state.w, rep
