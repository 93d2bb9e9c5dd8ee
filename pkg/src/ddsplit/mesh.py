"""Uniform cell-centred grids in 1D/2D with two-point flux connectivity.

Cells are indexed row-major, ``k = i + n*j`` for axis-0 index ``i`` and
axis-1 index ``j``.  Dirichlet data enter through boundary faces whose
transmissibility uses the half-cell distance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError


class Grid:
    """Uniform grid on ``[lo, hi]**dim``.

    Attributes:
        dim: 1 or 2.
        lo, hi: domain bounds (same on every axis).
        n: cells per axis.
        h: cell width.
        volume: cell measure ``h**dim``.
        area: face measure ``h**(dim-1)``.
        t_int: interior transmissibility ``h**(dim-2)``.
        t_bnd: boundary transmissibility ``2*h**(dim-2)``.
        int_left, int_right, int_axis: interior faces (left has the lower index
            along ``int_axis``).
        bnd_cell, bnd_axis, bnd_sign: boundary faces with outward normal
            ``bnd_sign * e_axis``.
    """

    def __init__(self, dim: int, lo: float, hi: float, n: int):
        if dim not in (1, 2):
            raise ConfigError("dim must be 1 or 2")
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ConfigError("need finite bounds with lo < hi")
        if int(n) != n or n < 1:
            raise ConfigError("n must be a positive integer")
        self.dim, self.lo, self.hi, self.n = int(dim), float(lo), float(hi), int(n)
        self.h = (self.hi - self.lo) / self.n
        self.volume = self.h**self.dim
        self.area = self.h ** (self.dim - 1)
        self.t_int = self.h ** (self.dim - 2)
        self.t_bnd = 2.0 * self.h ** (self.dim - 2)
        self._build_faces()

    @property
    def ncells(self) -> int:
        return self.n**self.dim

    def _build_faces(self):
        n = self.n
        if self.dim == 1:
            k = np.arange(n)
            self.int_left, self.int_right = k[:-1], k[1:]
            self.int_axis = np.zeros(n - 1, dtype=int)
            self.bnd_cell = np.array([0, n - 1])
            self.bnd_axis = np.zeros(2, dtype=int)
            self.bnd_sign = np.array([-1.0, 1.0])
            return
        idx = np.arange(n * n).reshape(n, n)  # idx[j, i] = i + n*j
        l0, r0 = idx[:, :-1].ravel(), idx[:, 1:].ravel()
        l1, r1 = idx[:-1, :].ravel(), idx[1:, :].ravel()
        self.int_left = np.concatenate([l0, l1])
        self.int_right = np.concatenate([r0, r1])
        self.int_axis = np.concatenate([np.zeros(l0.size, int), np.ones(l1.size, int)])
        cells = [idx[:, 0], idx[:, -1], idx[0, :], idx[-1, :]]
        self.bnd_cell = np.concatenate(cells)
        self.bnd_axis = np.repeat([0, 0, 1, 1], n)
        self.bnd_sign = np.repeat([-1.0, 1.0, -1.0, 1.0], n)

    @property
    def n_interior_faces(self) -> int:
        return int(self.int_left.size)

    @property
    def n_boundary_faces(self) -> int:
        return int(self.bnd_cell.size)

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centres, shape (ncells, dim)."""
        x = self.lo + self.h * (np.arange(self.n) + 0.5)
        if self.dim == 1:
            return x[:, None]
        X, Y = np.meshgrid(x, x, indexing="xy")  # X[j, i] = x_i
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """TPFA matrix of ``-div grad`` with homogeneous Dirichlet data.

        ``(A v)_K = sum_f T_f (v_K - v_L) + sum_boundary T_b v_K``.
        """
        N = self.ncells
        L, R = self.int_left, self.int_right
        t = np.full(L.size, self.t_int)
        rows = np.concatenate([L, R, L, R, self.bnd_cell])
        cols = np.concatenate([L, R, R, L, self.bnd_cell])
        vals = np.concatenate([t, t, -t, -t, np.full(self.bnd_cell.size, self.t_bnd)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))

    def field(self, values) -> "Field":
        return Field(np.asarray(values, dtype=float), self)


def build_grid(dim: int = 1, lo: float = -10.0, hi: float = 10.0, n: int = 200) -> Grid:
    """Build a uniform grid with at least two cells per axis.

    Raises:
        ConfigError: on invalid bounds or ``n < 2``.
    """
    if int(n) != n or n < 2:
        raise ConfigError("need n >= 2 cells per axis")
    return Grid(dim, lo, hi, n)


def grid_for_h(dim: int, lo: float, hi: float, h: float) -> Grid:
    """Grid whose width ``(hi-lo)/h`` must be an integer (within 1e-9)."""
    if not h > 0:
        raise ConfigError("h must be positive")
    n = int(round((hi - lo) / h))
    if n < 2 or abs((hi - lo) / n - h) > 1e-9 * h:
        raise ConfigError(f"h={h!r} does not divide the domain length {hi - lo!r}")
    return build_grid(dim, lo, hi, n)


@dataclass(frozen=True, eq=False)
class Field:
    """Cell values attached to a grid."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.values.shape != (self.grid.ncells,):
            raise ValueError("field length must equal the cell count")


def _split(f, v):
    if isinstance(f, Field):
        return f.grid, f.values
    return f, np.asarray(v, dtype=float)


def l2_norm(f, values=None) -> float:
    """``(sum_K |K| f_K**2)**0.5``; accepts a Field or ``(grid, values)``."""
    g, v = _split(f, values)
    return float(np.sqrt(g.volume * np.dot(v, v)))


def h1_seminorm_sq(f, values=None, dirichlet_zero: bool = True) -> float:
    """Discrete ``|grad f|**2``: ``sum_f T_f (f_K - f_L)**2``.

    With ``dirichlet_zero`` the boundary faces add ``T_b f_K**2``.
    """
    g, v = _split(f, values)
    d = v[g.int_left] - v[g.int_right]
    out = g.t_int * float(np.dot(d, d))
    if dirichlet_zero:
        vb = v[g.bnd_cell]
        out += g.t_bnd * float(np.dot(vb, vb))
    return out


def write_field_csv(path, grid: Grid, columns: dict) -> None:
    """Write cell centres and named columns with round-trip float precision."""
    names = ["x", "y"][: grid.dim] + list(columns)
    data = [grid.centers[:, a] for a in range(grid.dim)] + [np.asarray(c, float) for c in columns.values()]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(names)
        for row in zip(*data):
            wr.writerow([repr(float(v)) for v in row])


def read_field_csv(path) -> dict:
    """Read a CSV written by :func:`write_field_csv` into column arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    arr = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(head))
    return {name: arr[:, k] for k, name in enumerate(head)}
