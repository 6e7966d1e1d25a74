"""Structured grids, quadrature and finite-difference operators.

Scalar fields are numpy arrays of shape ``grid.shape``; vector fields have
shape ``(grid.dim, *grid.shape)``. Axis 0 of a scalar field is x. Every
operator takes the grid explicitly instead of wrapping arrays in classes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, GridError

PERIODIC = "periodic"
DIRICHLET = "dirichlet"
_BCS = (PERIODIC, DIRICHLET)

MIN_CELLS = 4


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on ``[0, L_x] (x [0, L_y])``.

    Parameters
    ----------
    shape : cells per axis, one or two entries.
    lengths : domain extent per axis (default unit length).
    bc : ``"periodic"`` or ``"dirichlet"``, either one string for all axes
        or one per axis. Two-dimensional grids must be periodic.
    """

    shape: tuple
    lengths: tuple = None
    bc: tuple = PERIODIC

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if len(shape) not in (1, 2):
            raise GridError(f"only 1D and 2D grids are supported, got shape {shape}")
        if min(shape) < MIN_CELLS:
            raise GridError(f"need at least {MIN_CELLS} cells per axis, got {shape}")
        lengths = self.lengths
        if lengths is None:
            lengths = (1.0,) * len(shape)
        lengths = tuple(float(x) for x in np.atleast_1d(lengths))
        if len(lengths) != len(shape) or min(lengths) <= 0:
            raise GridError(f"bad domain extents {lengths} for shape {shape}")
        bc = self.bc
        if isinstance(bc, str):
            bc = (bc,) * len(shape)
        bc = tuple(str(b).lower() for b in bc)
        if len(bc) != len(shape) or any(b not in _BCS for b in bc):
            raise GridError(f"bad boundary kinds {bc}")
        if len(shape) == 2 and bc != (PERIODIC, PERIODIC):
            raise GridError("2D grids must be periodic on both axes")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "bc", bc)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def h_min(self) -> float:
        return min(self.h)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def periodic(self) -> bool:
        return all(b == PERIODIC for b in self.bc)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.h[axis]
        return (np.arange(self.shape[axis]) + 0.5) * h

    def coords(self) -> tuple:
        """Cell-centre coordinate arrays, each of shape ``self.shape``."""
        return tuple(np.meshgrid(*[self.axis_centers(a) for a in range(self.dim)], indexing="ij"))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def zeros_vector(self) -> np.ndarray:
        return np.zeros((self.dim,) + self.shape)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(tuple(n * factor for n in self.shape), self.lengths, self.bc)


@dataclass(frozen=True)
class FluidParams:
    """Physical constants of the two-phase system.

    ``eps`` is the Mach number and ``c0`` the common pressure of the
    incompressible limit, which fixes the limit phase densities
    ``rho_plus_limit = c0**(1/gamma_plus)`` and likewise for the minus phase.
    """

    gamma_plus: float = 4.0
    gamma_minus: float = 2.0
    mu: float = 1e-2
    lam: float = 0.0
    eps: float = 0.1
    c0: float = 2.0
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.gamma_plus < 2 or self.gamma_minus < 2:
            raise DomainError(f"adiabatic exponents must be >= 2, got {self.gamma_plus}, {self.gamma_minus}")
        if self.mu <= 0:
            raise DomainError(f"shear viscosity must be positive, got {self.mu}")
        if self.lam + 2 * self.mu <= 0:
            raise DomainError(f"need lam + 2 mu > 0, got lam={self.lam}, mu={self.mu}")
        if self.eps <= 0:
            raise DomainError(f"Mach number must be positive, got {self.eps}")
        if self.c0 <= 0:
            raise DomainError(f"limit pressure constant must be positive, got {self.c0}")

    @property
    def rho_plus_limit(self) -> float:
        return self.c0 ** (1.0 / self.gamma_plus)

    @property
    def rho_minus_limit(self) -> float:
        return self.c0 ** (1.0 / self.gamma_minus)

    @property
    def gamma_ratio(self) -> float:
        return self.gamma_plus / self.gamma_minus

    def with_eps(self, eps: float) -> "FluidParams":
        return FluidParams(self.gamma_plus, self.gamma_minus, self.mu, self.lam, eps, self.c0)

    def check_limit_hypotheses(self):
        """The incompressible limit needs distinct exponents and distinct limit densities."""
        if self.gamma_plus == self.gamma_minus:
            raise DomainError("the limit system requires gamma_plus != gamma_minus")
        if self.rho_plus_limit == self.rho_minus_limit:
            raise DomainError("limit phase densities coincide (c0 == 1); volume fraction is not recoverable from rho")


def check_finite(f: np.ndarray, name: str = "field") -> np.ndarray:
    if not np.all(np.isfinite(f)):
        raise DomainError(f"{name} contains non-finite entries")
    return f


def _check_shape(grid: Grid, f: np.ndarray, vector: bool = False):
    expected = ((grid.dim,) if vector else ()) + grid.shape
    if np.shape(f) != expected:
        raise GridError(f"field of shape {np.shape(f)} does not live on grid {grid.shape}")


# ---------------------------------------------------------------- quadrature

def integrate(grid: Grid, f: np.ndarray) -> float:
    """Midpoint rule: sum of cell values times cell volume."""
    _check_shape(grid, f)
    return float(np.sum(f) * grid.cell_volume)


def norm_l1(grid: Grid, f: np.ndarray) -> float:
    return integrate(grid, np.abs(f))


def norm_l2_sq(grid: Grid, f: np.ndarray) -> float:
    return integrate(grid, np.square(f))


def norm_l2(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(norm_l2_sq(grid, f)))


def vector_norm_l2_sq(grid: Grid, u: np.ndarray) -> float:
    _check_shape(grid, u, vector=True)
    return float(np.sum(np.square(u)) * grid.cell_volume)


# ------------------------------------------------------- difference operators

def _roll(f, shift, axis):
    return np.roll(f, shift, axis=axis)


def _central_diff(grid: Grid, f: np.ndarray, axis: int) -> np.ndarray:
    """Second-order central first derivative of a scalar field along ``axis``."""
    h = grid.h[axis]
    if grid.bc[axis] == PERIODIC:
        return (_roll(f, -1, axis) - _roll(f, 1, axis)) / (2 * h)
    out = np.empty_like(f, dtype=float)
    f = np.moveaxis(f, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    # one-sided second-order closure at the walls
    o[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    o[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return out


def gradient(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Cell-centred central-difference gradient, shape ``(dim, *shape)``."""
    _check_shape(grid, f)
    return np.stack([_central_diff(grid, f, a) for a in range(grid.dim)])


def divergence(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Cell-centred central-difference divergence of a vector field."""
    _check_shape(grid, u, vector=True)
    return sum(_central_diff(grid, u[a], a) for a in range(grid.dim))


def _require_periodic(grid: Grid):
    if not grid.periodic:
        raise GridError("operator is defined on periodic grids only")


def face_gradient(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Forward differences, i.e. the gradient at faces ``i + 1/2`` (periodic)."""
    _require_periodic(grid)
    _check_shape(grid, f)
    return np.stack([(_roll(f, -1, a) - f) / grid.h[a] for a in range(grid.dim)])


def face_divergence(grid: Grid, q: np.ndarray) -> np.ndarray:
    """Backward differences of face-centred components ``q[a]`` at ``i + 1/2``."""
    _require_periodic(grid)
    _check_shape(grid, q, vector=True)
    return sum((q[a] - _roll(q[a], 1, a)) / grid.h[a] for a in range(grid.dim))


def laplacian(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Compact (3-point per axis, 5-point in 2D) Laplacian.

    On Dirichlet axes the value outside the wall is the odd reflection of
    the first interior cell, which is the stencil for a quantity that
    vanishes on the boundary (the no-slip velocity).
    """
    out = np.zeros_like(f, dtype=float)
    for a in range(grid.dim):
        h2 = grid.h[a] ** 2
        if grid.bc[a] == PERIODIC:
            out += (_roll(f, -1, a) - 2 * f + _roll(f, 1, a)) / h2
        else:
            g = _pad_axis(f, a, 1, odd=True)
            out += (_take(g, a, slice(2, None)) - 2 * f + _take(g, a, slice(None, -2))) / h2
    return out


def _take(f, axis, s):
    idx = [slice(None)] * f.ndim
    idx[axis] = s
    return f[tuple(idx)]


def _pad_axis(f, axis, width, odd=False, periodic=False):
    pad = [(0, 0)] * f.ndim
    pad[axis] = (width, width)
    if periodic:
        return np.pad(f, pad, mode="wrap")
    g = np.pad(f, pad, mode="symmetric")
    if odd:
        g = np.array(g, copy=True)
        lo = [slice(None)] * f.ndim
        hi = [slice(None)] * f.ndim
        lo[axis] = slice(0, width)
        hi[axis] = slice(g.shape[axis] - width, None)
        g[tuple(lo)] *= -1
        g[tuple(hi)] *= -1
    return g


def grad_div(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Discrete ``grad(div u)`` as the composition of the central operators.

    It vanishes exactly on fields that are discretely divergence free, and
    ``<u, grad_div(u)> = -||div u||^2`` on periodic grids.
    """
    return gradient(grid, divergence(grid, u))


def viscous_operator(grid: Grid, u: np.ndarray, mu: float, lam: float) -> np.ndarray:
    """``mu * lap(u) + (mu + lam) * grad(div u)`` with no-slip ghosts on walls."""
    _check_shape(grid, u, vector=True)
    lap = np.stack([laplacian(grid, u[k]) for k in range(grid.dim)])
    if mu + lam == 0.0:
        return mu * lap
    return mu * lap + (mu + lam) * grad_div(grid, u)


def velocity_gradient_sq(grid: Grid, u: np.ndarray) -> float:
    """``||grad u||^2_{L^2}`` from forward (face) differences, walls included."""
    total = 0.0
    for k in range(grid.dim):
        for a in range(grid.dim):
            h = grid.h[a]
            if grid.bc[a] == PERIODIC:
                d = (_roll(u[k], -1, a) - u[k]) / h
            else:
                g = _pad_axis(u[k], a, 1, odd=True)
                d = np.diff(g, axis=a) / h
            total += float(np.sum(d * d))
    return total * grid.cell_volume


# ------------------------------------------------------------------ snapshots

def write_snapshot(path, grid: Grid, columns: Mapping[str, np.ndarray], time: float | None = None):
    """Plain-text columnar dump: one row per cell, ``x [y] value...``.

    Vector fields are split into ``name_x`` / ``name_y`` columns. A comment
    line with the time is written first when ``time`` is given.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = grid.coords()
    names = ["x", "y"][: grid.dim]
    data = [c.ravel() for c in coords]
    for name, arr in columns.items():
        arr = np.asarray(arr, dtype=float)
        if arr.shape == grid.shape:
            names.append(name)
            data.append(arr.ravel())
        elif arr.shape == (grid.dim,) + grid.shape:
            for k, suffix in zip(range(grid.dim), "xy"):
                names.append(f"{name}_{suffix}")
                data.append(arr[k].ravel())
        else:
            raise GridError(f"column {name!r} has shape {arr.shape}, grid is {grid.shape}")
    table = np.column_stack(data)
    header = " ".join(names)
    if time is not None:
        header = f"t = {time:.17g}\n" + header
    np.savetxt(path, table, header=header, comments="# ", fmt="%.17g")
    return path


def read_snapshot(path) -> tuple:
    """Inverse of :func:`write_snapshot`; returns ``(time, {column: 1-D array})``."""
    time = None
    names = None
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            s = line[1:].strip()
            if s.startswith("t ="):
                time = float(s.split("=", 1)[1])
            else:
                names = s.split()
    table = np.loadtxt(path, comments="#", ndmin=2)
    return time, {n: table[:, i] for i, n in enumerate(names)}


def columns_to_field(grid: Grid, values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=float).reshape(grid.shape)


def sample_scalar(grid: Grid, fn) -> np.ndarray:
    return np.asarray(fn(*grid.coords()), dtype=float)


def sample_vector(grid: Grid, fns: Sequence) -> np.ndarray:
    xs = grid.coords()
    return np.stack([np.broadcast_to(np.asarray(fn(*xs), dtype=float), grid.shape) for fn in fns])
