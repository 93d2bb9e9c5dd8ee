"""Diffusion nonlinearities Phi and their splitting u = b(s), w = B(s).

Four nonlinearities are supported: the porous medium law ``u**m``, a
multivalued toy law with a plateau at u = 1, the biofilm law
``(u/(1-u))**m`` and the Kirchhoff transform of the van Genuchten
Richards closure (tabulated).  ``decompose`` returns Lipschitz functions
``b`` and ``B`` with ``0 <= b', B' <= 1``, ``b' + B' >= 1`` and
``B = Phi(b)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad
from scipy.optimize import brentq

from .errors import DomainError, InversionFailure, NoCrossing, ResolutionError

PHI_KINDS = ("pme", "toy", "biofilm", "richards")
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PhiSpec:
    """Description of a diffusion nonlinearity.

    Args:
        kind: one of ``"pme"``, ``"toy"``, ``"biofilm"``, ``"richards"``.
        m: exponent for the porous medium and biofilm laws.
        lam: van Genuchten parameter in (0, 1) for ``"richards"``.
        table_p_min: lower pressure bound of the Kirchhoff table.
        table_samples: number of pressure samples of the Kirchhoff table.
    """

    kind: str
    m: float = 6.0
    lam: float = 0.8
    table_p_min: float = -1.0e4
    table_samples: int = 100_000

    def __post_init__(self):
        if self.kind not in PHI_KINDS:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind in ("pme", "biofilm") and not self.m > 1:
            raise ValueError("exponent m must be > 1")
        if self.kind == "richards" and not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")

    @property
    def omega(self) -> float:
        """Saturation limit of u."""
        return math.inf if self.kind == "pme" else 1.0

    @property
    def multivalued(self) -> bool:
        """True when Phi has a finite limit at u = omega (vertical branch)."""
        return self.kind in ("toy", "richards")


# --------------------------------------------------------------------------
# van Genuchten closure


def _check_lam(lam):
    if not 0.0 < lam < 1.0:
        raise DomainError("lambda must lie in (0, 1)")


def van_genuchten_S(lam: float, p):
    """Saturation ``S(p) = (1 + (1-p)**(1/(1-lam)))**(-lam)``.

    Args:
        lam: van Genuchten parameter in (0, 1).
        p: pressure, scalar or array, must satisfy ``p <= 1``.

    Returns:
        Saturation in (0, 1], same shape as ``p``.
    """
    _check_lam(lam)
    p = np.asarray(p, dtype=float)
    if np.any(p > 1.0) or np.any(np.isnan(p)):
        raise DomainError("van Genuchten saturation needs p <= 1")
    return _S(lam, p)


def _S(lam, p):
    x = (1.0 - p) ** (1.0 / (1.0 - lam))
    return (1.0 + x) ** (-lam)


def _dS(lam, p):
    q = 1.0 - p
    x = q ** (1.0 / (1.0 - lam))
    return lam * (1.0 + x) ** (-lam - 1.0) / (1.0 - lam) * q ** (lam / (1.0 - lam))


def _S_inv(lam, u):
    # p = 1 - (u**(-1/lam) - 1)**(1 - lam)
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        y = np.maximum(u ** (-1.0 / lam) - 1.0, 0.0)
    return 1.0 - y ** (1.0 - lam)


def van_genuchten_kappa(lam: float, s):
    """Relative permeability ``sqrt(s) * (1 - (1 - s**(1/lam))**lam)**2``.

    Args:
        lam: van Genuchten parameter in (0, 1).
        s: saturation in [0, 1], scalar or array.
    """
    _check_lam(lam)
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0) or np.any(s > 1.0) or np.any(np.isnan(s)):
        raise DomainError("kappa needs 0 <= s <= 1")
    return _kappa(lam, s)


def _kappa(lam, s):
    g = 1.0 - (1.0 - s ** (1.0 / lam)) ** lam
    return np.sqrt(s) * g * g


def _dkappa(lam, s):
    # valid on (0, 1); callers clamp s away from the end points
    r = s ** (1.0 / lam)
    g = 1.0 - (1.0 - r) ** lam
    dg = (1.0 - r) ** (lam - 1.0) * s ** (1.0 / lam - 1.0)
    return g * g / (2.0 * np.sqrt(s)) + 2.0 * np.sqrt(s) * g * dg


# --------------------------------------------------------------------------
# Kirchhoff table


@dataclass(frozen=True, eq=False)
class KirchhoffTable:
    """Tabulated Kirchhoff transform ``Phi(S(p)) = int kappa(S(q)) dq``.

    Rows are pressure samples; the columns ``s``, ``b``, ``B`` give the
    tabulated splitting at the same nodes, so ``B = Phi(b)`` holds exactly
    for the piecewise-linear interpolants.
    """

    lam: float
    p_grid: np.ndarray
    u_vals: np.ndarray
    phi_vals: np.ndarray
    s_grid: np.ndarray
    b_vals: np.ndarray
    B_vals: np.ndarray
    p_star: float
    u_star: float
    phi_star: float

    @property
    def phi_max(self) -> float:
        return float(self.phi_vals[-1])

    def phi(self, u):
        """Interpolated Phi(u) for u in [0, 1]."""
        return np.interp(u, self.u_vals, self.phi_vals, left=0.0)

    def to_csv(self, path) -> None:
        """Write the table with columns p, u, phi, s, b, B."""
        cols = (self.p_grid, self.u_vals, self.phi_vals, self.s_grid, self.b_vals, self.B_vals)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"# lam={self.lam!r}", f"p_star={self.p_star!r}"])
            wr.writerow(["p", "u", "phi", "s", "b", "B"])
            for row in zip(*cols):
                wr.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "KirchhoffTable":
        """Read a table written by :meth:`to_csv`."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        lam = float(rows[0][0].split("=", 1)[1])
        p_star = float(rows[0][1].split("=", 1)[1])
        data = np.array([[float(v) for v in r] for r in rows[2:]])
        p, u, phi, s, b, B = data.T
        k = int(np.searchsorted(p, p_star))
        return cls(lam, p, u, phi, s, b, B, p_star, float(u[k]), float(phi[k]))


def _richards_dphi_du(lam, p):
    return _kappa(lam, _S(lam, p)) / _dS(lam, p)


def _richards_pstar(lam, p_min):
    # root of dPhi/du - 1 in the pressure variable
    lo, hi = p_min, 1.0 - 1e-12
    g = lambda p: float(_richards_dphi_du(lam, p)) - 1.0
    if not (g(lo) < 0.0 < g(hi)):
        raise NoCrossing("dPhi/du - 1 does not change sign for the Richards closure")
    return brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def _phi_quad(lam, p_min, u):
    """Reference Phi(u) by adaptive quadrature (used for validation)."""
    if u <= 0.0:
        return 0.0
    p = float(_S_inv(lam, min(u, 1.0)))
    f = lambda q: float(_kappa(lam, _S(lam, q)))
    # split at a few points so quad resolves the boundary layer near p = 1
    pts = [x for x in (-100.0, -10.0, -1.0, 0.0, 0.9, 0.99) if p_min < x < p]
    edges = [p_min, *pts, p]
    return sum(quad(f, a, c, limit=200, epsabs=1e-13, epsrel=1e-12)[0] for a, c in zip(edges, edges[1:]))


@lru_cache(maxsize=8)
def build_kirchhoff_table(lam: float = 0.8, p_min: float = -1.0e4, n_samples: int = 100_000) -> KirchhoffTable:
    """Tabulate the Kirchhoff transform of the van Genuchten closure.

    Pressure samples are geometric in ``1 - p`` down to ``1e-3`` plus the
    end point ``p = 1``; the switch pressure ``p*`` (where dPhi/du = 1) is
    inserted as a node.  Phi is integrated by the composite trapezoid rule
    starting from ``Phi(S(p_min)) = 0``.

    Args:
        lam: van Genuchten parameter in (0, 1).
        p_min: lower pressure bound, must be < 1.
        n_samples: number of pressure samples, at least 1e4.

    Raises:
        ResolutionError: if the tabulated ``B - Phi(b)`` residual, checked
            against quadrature at 100 random points, exceeds 1e-3.
    """
    _check_lam(lam)
    if not p_min < 1.0:
        raise ValueError("p_min must be < 1")
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    p_star = _richards_pstar(lam, p_min)
    q = np.geomspace(1.0 - p_min, 1e-3, n_samples - 2)
    p = np.concatenate([1.0 - q, [p_star, 1.0]])
    p[0] = p_min
    p = np.unique(p)
    u = _S(lam, p)
    u[-1] = 1.0
    keep = np.concatenate([[True], np.diff(u) > 0.0])
    # drop interior nodes that do not increase u; never drop p*
    while not keep.all():
        p, u = p[keep], u[keep]
        keep = np.concatenate([[True], np.diff(u) > 0.0])
    if p_star not in p:  # pragma: no cover - p* lies in a resolved region
        raise ResolutionError("switch pressure lost while thinning the table")
    phi = np.concatenate([[0.0], cumulative_trapezoid(_kappa(lam, u), p)])
    k = int(np.searchsorted(p, p_star))
    u_star, phi_star = float(u[k]), float(phi[k])
    s = np.where(p <= p_star, u, u_star + phi - phi_star)
    table = KirchhoffTable(lam, p, u, phi, s, u.copy(), phi.copy(), float(p_star), u_star, phi_star)

    dec = TabulatedDecomposition(table)
    rng = np.random.default_rng(12345)
    ss = rng.uniform(0.0, float(s[-1]), 100)
    worst = max(abs(float(dec.B(x)) - _phi_quad(lam, p_min, float(dec.b(x)))) for x in ss)
    if worst > 1e-3:
        raise ResolutionError(f"tabulated B - Phi(b) residual {worst:.3e} exceeds 1e-3")
    return table


# --------------------------------------------------------------------------
# Phi per kind: (phi, dphi, phi_inverse), vectorised and unchecked


def _pme_funcs(m):
    phi = lambda u: u**m
    dphi = lambda u: m * u ** (m - 1.0)
    inv = lambda y: y ** (1.0 / m)
    return phi, dphi, inv


def _toy_funcs():
    def phi(u):
        return 1.0 - np.sqrt(np.maximum(1.0 - u * u, 0.0))

    def dphi(u):
        with np.errstate(divide="ignore"):
            return np.where(u < 1.0, u / np.sqrt(np.maximum(1.0 - u * u, 0.0)), np.inf)

    def inv(y):
        y = np.minimum(y, 1.0)
        return np.sqrt(1.0 - (1.0 - y) ** 2)

    return phi, dphi, inv


def _biofilm_funcs(m):
    def phi(u):
        with np.errstate(divide="ignore"):
            return np.where(u < 1.0, (u / (1.0 - u)) ** m, np.inf)

    def dphi(u):
        with np.errstate(divide="ignore"):
            return np.where(u < 1.0, m * (u / (1.0 - u)) ** (m - 1.0) / (1.0 - u) ** 2, np.inf)

    def inv(y):
        r = y ** (1.0 / m)
        with np.errstate(invalid="ignore"):
            return np.where(np.isinf(r), 1.0, r / (1.0 + r))

    return phi, dphi, inv


def _closed_funcs(spec: PhiSpec):
    if spec.kind == "pme":
        return _pme_funcs(spec.m)
    if spec.kind == "toy":
        return _toy_funcs()
    if spec.kind == "biofilm":
        return _biofilm_funcs(spec.m)
    raise ValueError("no closed form for the Richards closure")


def _richards_dphi_of_u(lam, u):
    u = np.clip(u, 1e-300, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(u < 1.0, _richards_dphi_du(lam, _S_inv(lam, u)), np.inf)


def phi_eval(spec: PhiSpec, u):
    """Evaluate Phi(u).

    Args:
        spec: the nonlinearity.
        u: scalar or array with ``0 <= u < omega``; ``u = 1`` is accepted for
            the multivalued laws and returns the minimal selection.

    Raises:
        DomainError: for arguments outside the domain.
    """
    arr = np.asarray(u, dtype=float)
    top_ok = spec.multivalued
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > spec.omega) or (
        not top_ok and np.any(arr >= spec.omega)
    ):
        raise DomainError(f"u outside the domain of Phi ({spec.kind})")
    if spec.kind == "richards":
        t = build_kirchhoff_table(spec.lam, spec.table_p_min, spec.table_samples)
        out = t.phi(arr)
    else:
        out = _closed_funcs(spec)[0](arr)
    return float(out) if np.ndim(u) == 0 else out


def phi_prime(spec: PhiSpec, u):
    """Analytic Phi'(u) (infinite at the saturation point of bounded laws)."""
    arr = np.asarray(u, dtype=float)
    if spec.kind == "richards":
        out = _richards_dphi_of_u(spec.lam, arr)
    else:
        out = _closed_funcs(spec)[1](arr)
    return float(out) if np.ndim(u) == 0 else out


def find_ustar(spec: PhiSpec) -> float:
    """Point u* in (0, omega) with Phi'(u*) = 1 (bracketed root of Phi' - 1).

    Raises:
        NoCrossing: if Phi' - 1 does not change sign on the sampled range.
    """
    if spec.kind == "richards":
        return build_kirchhoff_table(spec.lam, spec.table_p_min, spec.table_samples).u_star
    dphi = _closed_funcs(spec)[1]
    g = lambda u: float(dphi(np.float64(u))) - 1.0
    lo = 0.0
    if spec.omega < math.inf:
        hi = spec.omega
    else:
        hi = 1.0
        while g(hi) <= 0.0 and hi < 1e6:
            hi *= 2.0
    if not (g(lo) < 0.0 < g(hi)):
        raise NoCrossing(f"Phi' - 1 has no sign change for {spec.kind}")
    return brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


# --------------------------------------------------------------------------
# Decompositions


class Decomposition:
    """Splitting u = b(s), w = B(s) of a nonlinearity.

    All evaluators accept scalars or arrays and return ``float`` for scalar
    input.  ``s_sat`` is the point beyond which b is constant (``inf`` when
    Phi is unbounded).
    """

    mode: str = "closed"
    u_star: float
    s_sat: float

    def _b(self, s):  # pragma: no cover - abstract
        raise NotImplementedError

    def _B(self, s):  # pragma: no cover - abstract
        raise NotImplementedError

    def _db(self, s):  # pragma: no cover - abstract
        raise NotImplementedError

    def _dB(self, s):  # pragma: no cover - abstract
        raise NotImplementedError

    def _binv(self, u):  # pragma: no cover - abstract
        raise NotImplementedError

    @staticmethod
    def _wrap(fn, x):
        arr = np.asarray(x, dtype=float)
        out = fn(arr)
        return float(out) if np.ndim(x) == 0 else out

    def b(self, s):
        return self._wrap(self._b, s)

    def B(self, s):
        return self._wrap(self._B, s)

    def db(self, s):
        return self._wrap(self._db, s)

    def dB(self, s):
        return self._wrap(self._dB, s)

    def b_inverse(self, u):
        """Minimal preimage of u under b (``b(b_inverse(u)) = u``).

        Raises:
            InversionFailure: if u lies outside the range of b.
        """
        arr = np.asarray(u, dtype=float)
        if np.any(np.isnan(arr)) or np.any(arr > self.omega):
            raise InversionFailure("u exceeds the range of b")
        return self._wrap(self._binv, u)


class ClosedFormDecomposition(Decomposition):
    """Generic splitting built from Phi, Phi' and Phi^{-1}."""

    mode = "closed"

    def __init__(self, spec: PhiSpec, u_star: float | None = None):
        self.spec = spec
        self.omega = spec.omega
        self._phi, self._dphi, self._inv = _closed_funcs(spec)
        self.u_star = find_ustar(spec) if u_star is None else u_star
        self.phi_star = float(self._phi(np.float64(self.u_star)))
        phi_top = float(self._phi(np.float64(self.omega))) if self.omega < math.inf else math.inf
        self.s_sat = self.u_star + phi_top - self.phi_star

    def _b(self, s):
        y = self.phi_star + np.maximum(s - self.u_star, 0.0)
        with np.errstate(over="ignore", invalid="ignore"):
            upper = self._inv(y)
        if np.any(np.isnan(upper)):
            raise InversionFailure("Phi^{-1} could not be evaluated")
        return np.where(s <= self.u_star, s, upper)

    def _B(self, s):
        sc = np.clip(s, 0.0, self.u_star)
        return np.where(s < 0.0, 0.0, np.where(s <= self.u_star, self._phi(sc), self.phi_star + s - self.u_star))

    def _db(self, s):
        bb = self._b(np.maximum(s, self.u_star))
        with np.errstate(divide="ignore", over="ignore"):
            upper = np.where(bb < self.omega, 1.0 / self._dphi(np.minimum(bb, 1e300)), 0.0)
        return np.where(s <= self.u_star, 1.0, upper)

    def _dB(self, s):
        sc = np.clip(s, 0.0, self.u_star)
        return np.where(s < 0.0, 0.0, np.where(s <= self.u_star, self._dphi(sc), 1.0))

    def _binv(self, u):
        uc = np.clip(u, self.u_star, self.omega)
        with np.errstate(divide="ignore", over="ignore"):
            upper = self.u_star + self._phi(uc) - self.phi_star
        return np.where(u <= self.u_star, u, upper)


class ToyDecomposition(Decomposition):
    """Explicit splitting of ``Phi(u) = 1 - sqrt(1 - u**2)`` with a plateau at 1.

    b(s) = sqrt(1 - (sqrt2 - s)**2) on [1/sqrt2, sqrt2] and 1 beyond;
    B(s) = 1 - sqrt(1 - s**2) on [0, 1/sqrt2] and s + 1 - sqrt2 beyond.
    """

    mode = "closed"

    def __init__(self):
        self.spec = PhiSpec("toy")
        self.omega = 1.0
        self.u_star = 1.0 / SQRT2
        self.s_sat = SQRT2

    def _b(self, s):
        mid = np.sqrt(np.maximum(1.0 - (SQRT2 - np.clip(s, self.u_star, SQRT2)) ** 2, 0.0))
        return np.where(s <= self.u_star, s, np.where(s < SQRT2, mid, 1.0))

    def _B(self, s):
        sc = np.clip(s, 0.0, self.u_star)
        return np.where(s < 0.0, 0.0, np.where(s <= self.u_star, 1.0 - np.sqrt(1.0 - sc * sc), s + 1.0 - SQRT2))

    def _db(self, s):
        sc = np.clip(s, self.u_star, SQRT2)
        mid = (SQRT2 - sc) / np.sqrt(np.maximum(1.0 - (SQRT2 - sc) ** 2, 1e-300))
        return np.where(s <= self.u_star, 1.0, np.where(s < SQRT2, mid, 0.0))

    def _dB(self, s):
        sc = np.clip(s, 0.0, self.u_star)
        return np.where(s < 0.0, 0.0, np.where(s <= self.u_star, sc / np.sqrt(1.0 - sc * sc), 1.0))

    def _binv(self, u):
        uc = np.clip(u, self.u_star, 1.0)
        upper = SQRT2 - np.sqrt(np.maximum(1.0 - uc * uc, 0.0))
        return np.where(u <= self.u_star, u, upper)


class TabulatedDecomposition(Decomposition):
    """Piecewise-linear splitting on the nodes of a :class:`KirchhoffTable`.

    Derivatives are the segment slopes (right-continuous at nodes), clipped
    to [0, 1] to absorb rounding.
    """

    mode = "tabulated"

    def __init__(self, table: KirchhoffTable):
        self.table = table
        self.omega = 1.0
        self.u_star = table.u_star
        self.s_sat = float(table.s_grid[-1])
        ds = np.diff(table.s_grid)
        self._sb = np.clip(np.diff(table.b_vals) / ds, 0.0, 1.0)
        self._sB = np.clip(np.diff(table.B_vals) / ds, 0.0, 1.0)

    def _segment(self, s):
        return np.searchsorted(self.table.s_grid, s, side="right") - 1

    def _b(self, s):
        t = self.table
        inner = np.interp(s, t.s_grid, t.b_vals)
        return np.where(s < t.s_grid[0], s, np.where(s >= self.s_sat, 1.0, inner))

    def _B(self, s):
        t = self.table
        inner = np.interp(s, t.s_grid, t.B_vals)
        top = t.B_vals[-1] + (s - self.s_sat)
        return np.where(s < t.s_grid[0], 0.0, np.where(s >= self.s_sat, top, inner))

    def _slope(self, s, slopes, low, high):
        k = self._segment(s)
        kk = np.clip(k, 0, len(slopes) - 1)
        return np.where(k < 0, low, np.where(k >= len(slopes), high, slopes[kk]))

    def _db(self, s):
        return self._slope(s, self._sb, 1.0, 0.0)

    def _dB(self, s):
        return np.where(s < 0.0, 0.0, self._slope(s, self._sB, 0.0, 1.0))

    def _binv(self, u):
        t = self.table
        upper = t.u_star + t.phi(np.clip(u, t.u_star, 1.0)) - t.phi_star
        return np.where(u <= t.u_star, u, upper)


@lru_cache(maxsize=32)
def decompose(spec: PhiSpec) -> Decomposition:
    """Build the splitting for ``spec`` (cached: same spec, same object).

    Raises:
        NoCrossing: if u* cannot be located.
        InversionFailure: if Phi^{-1} cannot be evaluated.
    """
    if spec.kind == "toy":
        return ToyDecomposition()
    if spec.kind == "richards":
        return TabulatedDecomposition(build_kirchhoff_table(spec.lam, spec.table_p_min, spec.table_samples))
    return ClosedFormDecomposition(spec)


def b_inverse(decomp: Decomposition, u):
    """Minimal preimage of u under ``decomp.b``."""
    return decomp.b_inverse(u)


# --------------------------------------------------------------------------
# Advection and reaction


@dataclass(frozen=True)
class AdvectionSpec:
    """Advective flux F(u) and reaction f(u).

    Args:
        kind: ``"none"`` or ``"gravity"`` (``F(u) = kappa(u) * direction``).
        direction: unit vector, one entry per space dimension.
        lam: van Genuchten parameter of kappa.
        reaction: ``"none"``, ``"linear"`` (``c*u``) or ``"fisher"`` (``c*u*(1-u)``).
        c: reaction coefficient.
    """

    kind: str = "none"
    direction: tuple = (1.0,)
    lam: float = 0.8
    reaction: str = "none"
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gravity"):
            raise ValueError(f"unknown advection kind {self.kind!r}")
        if self.reaction not in ("none", "linear", "fisher"):
            raise ValueError(f"unknown reaction kind {self.reaction!r}")
        if abs(math.hypot(*self.direction) - 1.0) > 1e-12:
            raise ValueError("advection direction must be a unit vector")


def advection_F(adv: AdvectionSpec, u, decomp: Decomposition | None = None):
    """Advective flux vector(s) F(u).

    Args:
        adv: advection description.
        u: scalar in [0, 1] or array of shape (n,).
        decomp: unused; accepted for interface symmetry.

    Returns:
        Array of shape ``(len(direction),)`` for scalar u, else ``(n, dim)``.
    """
    arr = np.asarray(u, dtype=float)
    g = np.asarray(adv.direction, dtype=float)
    if adv.kind == "none":
        return np.zeros(arr.shape + g.shape)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("advection needs u in [0, 1]")
    return _kappa(adv.lam, arr)[..., None] * g


@dataclass(frozen=True, eq=False)
class NonlinearModel:
    """Decomposition plus advection and reaction: everything a step needs."""

    phi: PhiSpec
    decomp: Decomposition
    adv: AdvectionSpec = AdvectionSpec()

    @classmethod
    def from_spec(cls, phi: PhiSpec, adv: AdvectionSpec | None = None) -> "NonlinearModel":
        return cls(phi, decompose(phi), adv or AdvectionSpec())

    @property
    def has_advection(self) -> bool:
        return self.adv.kind != "none"

    def b(self, s):
        return self.decomp.b(s)

    def B(self, s):
        return self.decomp.B(s)

    def db(self, s):
        return self.decomp.db(s)

    def dB(self, s):
        return self.decomp.dB(s)

    def _direction(self, dim):
        g = np.asarray(self.adv.direction, dtype=float)
        if g.size != dim:
            raise ValueError(f"advection direction has {g.size} entries, grid has dim {dim}")
        return g

    def flux(self, u, dim: int):
        """Per-cell advective flux, shape (n, dim); u is clamped to [0, 1]."""
        u = np.asarray(u, dtype=float)
        if not self.has_advection:
            return np.zeros((u.size, dim))
        g = self._direction(dim)
        return _kappa(self.adv.lam, np.clip(u, 0.0, 1.0))[:, None] * g

    def dflux(self, u, dim: int):
        """Derivative of :meth:`flux` with respect to u, shape (n, dim)."""
        u = np.asarray(u, dtype=float)
        if not self.has_advection:
            return np.zeros((u.size, dim))
        g = self._direction(dim)
        uc = np.clip(u, 1e-14, 1.0 - 1e-12)
        return _dkappa(self.adv.lam, uc)[:, None] * g

    def reaction(self, u):
        """Reaction source f(u)."""
        u = np.asarray(u, dtype=float)
        if self.adv.reaction == "linear":
            return self.adv.c * u
        if self.adv.reaction == "fisher":
            return self.adv.c * u * (1.0 - u)
        return np.zeros_like(u)

    def dreaction(self, u):
        """Derivative f'(u) of the reaction source."""
        u = np.asarray(u, dtype=float)
        if self.adv.reaction == "linear":
            return np.full_like(u, self.adv.c)
        if self.adv.reaction == "fisher":
            return self.adv.c * (1.0 - 2.0 * u)
        return np.zeros_like(u)
