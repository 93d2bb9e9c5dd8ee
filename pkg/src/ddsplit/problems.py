"""Test problems, Barenblatt data and the implicit Euler time loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError, InversionFailure, NotApplicable
from .mesh import Grid, grid_for_h
from .nonlinearity import AdvectionSpec, NonlinearModel, PhiSpec, decompose
from .schemes import SchemeSpec, step

PROBLEM_KINDS = ("pme", "toy", "biofilm", "richards")


def barenblatt(x, t: float, m: float, d: int, gamma: float):
    """Barenblatt profile of the porous medium equation ``u_t = Delta u**m``.

    ``(1+t)**(-nu) * max(gamma - nu (m-1) |x|**2 / (2 d m (1+t)**(2 nu/d)), 0)**(1/(m-1))``
    with ``nu = 1 / (m - 1 + 2/d)``.

    Args:
        x: points, shape (..., d), or scalars when ``d == 1``.
        t: time, ``t >= 0``.
    """
    if not m > 1 or t < 0:
        raise ValueError("need m > 1 and t >= 0")
    x = np.asarray(x, dtype=float)
    r2 = x * x if (d == 1 and (x.ndim == 0 or x.shape[-1] != 1)) else np.sum(x * x, axis=-1)
    nu = 1.0 / (m - 1.0 + 2.0 / d)
    core = gamma - nu * (m - 1.0) * r2 / (2.0 * d * m * (1.0 + t) ** (2.0 * nu / d))
    return (1.0 + t) ** (-nu) * np.maximum(core, 0.0) ** (1.0 / (m - 1.0))


@dataclass(frozen=True)
class ProblemSpec:
    """One of the four test problems.

    Args:
        kind: ``"pme"``, ``"toy"``, ``"biofilm"`` or ``"richards"``.
        dim: 1 or 2.
        gamma: Barenblatt amplitude of the initial data.
        clamp_to: upper clamp of the initial data (default: the saturation
            limit of Phi).
        T_final: final time.
        m: Barenblatt exponent (and Phi exponent for pme/biofilm).
        lam: van Genuchten parameter (richards).
        C: reaction coefficient (``C u`` for toy/richards, ``C u (1-u)`` biofilm).
        gravity_on: advective gravity flux for richards.
    """

    kind: str = "pme"
    dim: int = 1
    gamma: float = 1.0
    clamp_to: float | None = None
    T_final: float = 1.0
    m: float = 6.0
    lam: float = 0.8
    C: float = 0.5
    gravity_on: bool = True

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem {self.kind!r}")
        if self.dim not in (1, 2):
            raise ConfigError("dim must be 1 or 2")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if not self.T_final > 0:
            raise ConfigError("T_final must be positive")
        if self.clamp_to is None:
            object.__setattr__(self, "clamp_to", self.phi_spec.omega)
        if self.clamp_to > self.phi_spec.omega:
            raise ConfigError("clamp_to exceeds the saturation limit")

    @property
    def phi_spec(self) -> PhiSpec:
        return PhiSpec(self.kind, m=self.m, lam=self.lam)

    @property
    def model(self) -> NonlinearModel:
        return _model(self.kind, self.dim, self.m, self.lam, self.C, self.gravity_on)


@lru_cache(maxsize=64)
def _model(kind, dim, m, lam, C, gravity_on) -> NonlinearModel:
    phi = PhiSpec(kind, m=m, lam=lam)
    direction = tuple([0.0] * (dim - 1) + [1.0])
    if kind == "toy":
        adv = AdvectionSpec(direction=direction, reaction="linear", c=C)
    elif kind == "biofilm":
        adv = AdvectionSpec(direction=direction, reaction="fisher", c=C)
    elif kind == "richards":
        adv = AdvectionSpec("gravity" if gravity_on else "none", direction, lam, "linear", C)
    else:
        adv = AdvectionSpec(direction=direction)
    return NonlinearModel(phi, decompose(phi), adv)


def default_problem(kind: str, dim: int = 1, **overrides) -> ProblemSpec:
    """Problem with its default parameters (T_final 1 in 1D, 0.1 in 2D)."""
    base = {
        "pme": dict(gamma=1.0),
        "toy": dict(gamma=1.5, clamp_to=1.0),
        "biofilm": dict(gamma=0.5),
        "richards": dict(gamma=0.5),
    }[kind]
    args = dict(kind=kind, dim=dim, T_final=1.0 if dim == 1 else 0.1, **base)
    args.update(overrides)
    return ProblemSpec(**args)


@dataclass(frozen=True)
class RunConfig:
    """Discretization and scheme of a run.

    Args:
        tau: time step; ``T_final / tau`` must be an integer (within 1e-12).
        h: mesh width; must divide ``hi - lo``.
        scheme: linearization scheme.
        lo, hi: domain bounds per axis.
        store_history: keep u after every step (needed by verify_barenblatt).
    """

    tau: float
    h: float
    scheme: SchemeSpec = SchemeSpec()
    lo: float = -10.0
    hi: float = 10.0
    store_history: bool = True

    def __post_init__(self):
        if not self.tau > 0 or not self.h > 0:
            raise ConfigError("tau and h must be positive")

    def n_steps(self, T_final: float) -> int:
        n = int(round(T_final / self.tau))
        if n < 1 or abs(n * self.tau - T_final) > 1e-12 * max(1.0, T_final):
            raise ConfigError(f"T_final={T_final!r} is not an integer multiple of tau={self.tau!r}")
        return n

    def grid(self, dim: int) -> Grid:
        return grid_for_h(dim, self.lo, self.hi, self.h)


@dataclass
class RunReport:
    """Aggregated outcome of a run."""

    problem: ProblemSpec
    config: RunConfig
    grid: Grid
    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    mass_history: list = field(default_factory=list)
    error_vs_exact: list | None = None
    u_history: list = field(default_factory=list)
    s: np.ndarray | None = None
    u: np.ndarray | None = None
    w: np.ndarray | None = None
    diverged: bool = False

    @property
    def avg_iterations(self) -> float:
        if not self.steps:
            return math.nan
        return float(np.mean([r.iterations for r in self.steps]))

    @property
    def converged(self) -> bool:
        return bool(self.steps) and all(r.converged for r in self.steps) and not self.diverged


def initial_state(problem: ProblemSpec, grid: Grid):
    """Clamped Barenblatt data at t = 0 and its minimal preimage ``s0``.

    Raises:
        InversionFailure: if the data exceed the range of b.
    """
    model = problem.model
    u0 = np.clip(barenblatt(grid.centers, 0.0, problem.m, grid.dim, problem.gamma), 0.0, problem.clamp_to)
    if np.any(u0 > model.decomp.omega):
        raise InversionFailure("initial data exceed the saturation limit")
    s0 = np.asarray(model.decomp.b_inverse(u0), float)
    if not np.all(np.isfinite(s0)):
        raise InversionFailure("initial data outside the range of b")
    return s0, u0


def _l1_l2(grid, diff):
    return grid.volume * float(np.sum(np.abs(diff))), math.sqrt(grid.volume * float(np.dot(diff, diff)))


def run(problem: ProblemSpec, config: RunConfig, on_step=None) -> RunReport:
    """Integrate ``problem`` to ``T_final`` with implicit Euler steps.

    Args:
        on_step: optional callable ``on_step(n, t, s, u, w, report)`` after
            every step (snapshot sinks).

    Returns:
        A :class:`RunReport`; on divergence the run stops at the failing step.
    """
    grid = config.grid(problem.dim)
    N = config.n_steps(problem.T_final)
    model = problem.model
    s, u = initial_state(problem, grid)
    w = np.asarray(model.B(s), float)
    rep = RunReport(problem, config, grid, s=s, u=u, w=w)
    rep.times.append(0.0)
    rep.mass_history.append(grid.volume * float(np.sum(u)))
    pme = problem.kind == "pme"
    if pme:
        rep.error_vs_exact = [_l1_l2(grid, u - barenblatt(grid.centers, 0.0, problem.m, grid.dim, problem.gamma))]
    if config.store_history:
        rep.u_history.append(u.copy())
    for n in range(1, N + 1):
        s, u, w, srep = step(s, u, config.scheme, model, grid, config.tau, w_old=w)
        rep.steps.append(srep)
        t = n * config.tau
        rep.times.append(t)
        rep.s, rep.u, rep.w = s, u, w
        rep.mass_history.append(grid.volume * float(np.sum(u)))
        if pme:
            ex = barenblatt(grid.centers, t, problem.m, grid.dim, problem.gamma)
            rep.error_vs_exact.append(_l1_l2(grid, u - ex))
        if config.store_history:
            rep.u_history.append(u.copy())
        if on_step is not None:
            on_step(n, t, s, u, w, srep)
        if srep.diverged:
            rep.diverged = True
            break
    return rep


def verify_barenblatt(report: RunReport, problem: ProblemSpec | None = None, grid: Grid | None = None):
    """L1/L2 differences to the Barenblatt solution at every stored step.

    Raises:
        NotApplicable: for problems other than the plain porous medium case.
    """
    problem = problem or report.problem
    grid = grid or report.grid
    if problem.kind != "pme":
        raise NotApplicable("Barenblatt verification needs the porous medium problem")
    if not report.u_history:
        raise ValueError("run was made without store_history")
    out = []
    for t, u in zip(report.times, report.u_history):
        out.append(_l1_l2(grid, u - barenblatt(grid.centers, t, problem.m, grid.dim, problem.gamma)))
    return out


def relative_l1_error(report: RunReport) -> float:
    """Relative L1 error of the final state against the Barenblatt solution."""
    p, g = report.problem, report.grid
    ex = barenblatt(g.centers, report.times[-1], p.m, g.dim, p.gamma)
    return float(np.sum(np.abs(report.u - ex)) / np.sum(np.abs(ex)))


def plateau_width(report_u, grid: Grid, level: float = 1.0 - 1e-9) -> float:
    """Measure of the set ``u >= level`` (saturated plateau)."""
    return grid.volume * float(np.count_nonzero(np.asarray(report_u) >= level))


def with_scheme(config: RunConfig, **kw) -> RunConfig:
    """Copy of ``config`` with scheme fields replaced."""
    return replace(config, scheme=replace(config.scheme, **kw))
