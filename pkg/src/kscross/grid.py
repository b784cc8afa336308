"""Cell-centred structured grids with an active-cell mask.

A field is a 1-D float array with one entry per *active* cell, in the
C order of the full ``cells_per_axis`` array.  All discrete operators act
through the list of interior faces (pairs of face-adjacent active cells),
which makes the no-flux boundary condition automatic: faces between an
active cell and an inactive or out-of-box neighbour simply do not exist.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .expr import Expression


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or not 1 <= len(self.lower) <= 3:
            raise GridError("box bounds need 1 to 3 matching coordinates")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise GridError(f"degenerate box {self.lower} .. {self.upper}")

    @property
    def dim(self) -> int:
        return len(self.lower)


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not 1 <= len(self.center) <= 3:
            raise GridError("ball centre needs 1 to 3 coordinates")
        if not self.radius > 0:
            raise GridError(f"ball radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.center)


RegionSpec = Union[Box, Ball]


@dataclass(frozen=True, eq=False)
class Grid:
    origin: np.ndarray          # lower corner of the bounding box
    spacing: np.ndarray         # h per axis
    cells_per_axis: tuple[int, ...]
    mask: np.ndarray = field(repr=False)
    region: RegionSpec | None = None

    @property
    def dim(self) -> int:
        return len(self.cells_per_axis)

    @property
    def extent(self) -> np.ndarray:
        return self.spacing * np.array(self.cells_per_axis)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def active_index(self) -> np.ndarray:
        """Flat (C-order) indices of active cells."""
        return np.flatnonzero(self.mask.ravel())

    @property
    def n_active(self) -> int:
        return int(self.active_index.size)

    @property
    def volume(self) -> float:
        return self.n_active * self.cell_volume

    @cached_property
    def multi_index(self) -> np.ndarray:
        """(n_active, dim) integer cell indices."""
        return np.stack(np.unravel_index(self.active_index, self.cells_per_axis), axis=1)

    @cached_property
    def centers(self) -> np.ndarray:
        """(n_active, dim) cell-centre coordinates."""
        return self.origin + (self.multi_index + 0.5) * self.spacing

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.cells_per_axis[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.spacing[axis]

    @cached_property
    def faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interior faces as (left, right, axis) arrays of active-cell positions.

        ``right`` is the neighbour of ``left`` in the +axis direction.
        """
        lookup = np.full(self.mask.size, -1, dtype=np.int64)
        lookup[self.active_index] = np.arange(self.n_active)
        lookup = lookup.reshape(self.cells_per_axis)
        lefts, rights, axes = [], [], []
        for a in range(self.dim):
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            lo[a] = slice(0, -1)
            hi[a] = slice(1, None)
            left = lookup[tuple(lo)].ravel()
            right = lookup[tuple(hi)].ravel()
            keep = (left >= 0) & (right >= 0)
            lefts.append(left[keep])
            rights.append(right[keep])
            axes.append(np.full(int(keep.sum()), a, dtype=np.int64))
        return np.concatenate(lefts), np.concatenate(rights), np.concatenate(axes)

    @property
    def n_faces(self) -> int:
        return int(self.faces[0].size)

    @cached_property
    def face_inv_h(self) -> np.ndarray:
        return 1.0 / self.spacing[self.faces[2]]

    @cached_property
    def gradient_matrix(self) -> sp.csr_matrix:
        """Face-difference operator ``(G f)_face = (f_R - f_L) / h_axis``."""
        left, right, _ = self.faces
        nf = left.size
        rows = np.concatenate([np.arange(nf), np.arange(nf)])
        cols = np.concatenate([right, left])
        vals = np.concatenate([self.face_inv_h, -self.face_inv_h])
        return sp.csr_matrix((vals, (rows, cols)), shape=(nf, self.n_active))

    @cached_property
    def divergence_matrix(self) -> sp.csr_matrix:
        """Maps face fluxes to cell divergences; equals ``-G^T``."""
        return (-self.gradient_matrix.T).tocsr()

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        """No-flux Laplacian ``-G^T G`` (symmetric negative semidefinite)."""
        return (self.divergence_matrix @ self.gradient_matrix).tocsr()

    @cached_property
    def helmholtz_matrix(self) -> sp.csr_matrix:
        """``I - lap``, the SPD operator of the elliptic problem."""
        return (sp.identity(self.n_active, format="csr") - self.laplacian_matrix).tocsr()

    # -- fields ------------------------------------------------------------

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_active)

    def constant(self, value: float) -> np.ndarray:
        return np.full(self.n_active, float(value))

    def to_array(self, f: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Scatter an active-cell field into the full box array."""
        out = np.full(self.mask.size, fill, dtype=float)
        out[self.active_index] = f
        return out.reshape(self.cells_per_axis)

    def coordinate_env(self) -> dict[str, np.ndarray]:
        names = ("x", "y", "z")
        env = {name: np.zeros(self.n_active) for name in names}
        for a in range(self.dim):
            env[names[a]] = self.centers[:, a]
        return env

    def evaluate(self, expression: str | Expression, **extra) -> np.ndarray:
        """Evaluate an expression at every active cell centre.

        Axes beyond the grid dimension read as 0, so a 2-D formula can be
        used on a 1-D grid along ``y = 0``.
        """
        expr = expression if isinstance(expression, Expression) else Expression(expression)
        values = expr(**self.coordinate_env(), **extra)
        return np.broadcast_to(values, (self.n_active,)).astype(float, copy=True)

    def check_field(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.n_active,):
            raise GridError(f"field has shape {f.shape}, grid has {self.n_active} active cells")
        return f


def build_grid(region: RegionSpec, resolution: int | Sequence[int]) -> Grid:
    """Cover ``region`` with uniform cells; for balls, keep cells whose centres lie inside."""
    dim = region.dim
    if np.isscalar(resolution):
        resolution = (int(resolution),) * dim
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != dim:
        raise GridError(f"resolution needs {dim} entries, got {len(resolution)}")
    if min(resolution) < 4:
        raise GridError(f"resolution must be at least 4 per axis, got {resolution}")

    if isinstance(region, Box):
        lower = np.array(region.lower, dtype=float)
        upper = np.array(region.upper, dtype=float)
    else:
        center = np.array(region.center, dtype=float)
        lower, upper = center - region.radius, center + region.radius
    spacing = (upper - lower) / np.array(resolution)

    if isinstance(region, Box):
        mask = np.ones(resolution, dtype=bool)
    else:
        axes = [lower[a] + (np.arange(resolution[a]) + 0.5) * spacing[a] for a in range(dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        r2 = sum((mesh[a] - center[a]) ** 2 for a in range(dim))
        mask = r2 < region.radius**2

    if not mask.any():
        raise GridError("region contains no active cells")
    _, n_components = ndimage.label(mask)
    if n_components != 1:
        raise GridError(f"active region splits into {n_components} face-connected pieces")
    return Grid(lower, spacing, resolution, mask, region)


# -- quadrature and norms ----------------------------------------------------

def integrate(grid: Grid, f: np.ndarray) -> float:
    return float(np.sum(f) * grid.cell_volume)


def lp_norm(grid: Grid, f: np.ndarray, p: float = 2.0) -> float:
    f = np.abs(np.asarray(f, dtype=float))
    if np.isinf(p):
        return float(f.max()) if f.size else 0.0
    if p < 1:
        raise GridError(f"lp_norm needs p >= 1, got {p}")
    return float((np.sum(f**p) * grid.cell_volume) ** (1.0 / p))


def face_gradient(grid: Grid, f: np.ndarray) -> np.ndarray:
    return grid.gradient_matrix @ f


def gradient_sq_integral(grid: Grid, f: np.ndarray) -> float:
    """Discrete ``||grad f||_2^2``: sum over interior faces of ((f_R-f_L)/h)^2 h^d."""
    g = face_gradient(grid, f)
    return float(np.dot(g, g) * grid.cell_volume)


def h1_norm(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(lp_norm(grid, f, 2) ** 2 + gradient_sq_integral(grid, f)))


def diffusive_flux_divergence(grid: Grid, phi: np.ndarray) -> np.ndarray:
    """No-flux discrete Laplacian of ``phi`` in conservative face-flux form."""
    return grid.laplacian_matrix @ phi


def upwind_face_values(grid: Grid, rho: np.ndarray, face_grad_c: np.ndarray) -> np.ndarray:
    """rho on each face taken from the cell the drift ``grad c`` points away from."""
    left, right, _ = grid.faces
    return np.where(face_grad_c >= 0, rho[left], rho[right])


def central_face_values(grid: Grid, rho: np.ndarray) -> np.ndarray:
    left, right, _ = grid.faces
    return 0.5 * (rho[left] + rho[right])


def advective_divergence(
    grid: Grid, rho: np.ndarray, c: np.ndarray, scheme: str = "upwind"
) -> np.ndarray:
    """Discrete ``div(rho grad c)`` with face flux ``rho_face (c_R - c_L)/h``."""
    g = face_gradient(grid, c)
    if scheme == "upwind":
        rho_face = upwind_face_values(grid, rho, g)
    elif scheme == "central":
        rho_face = central_face_values(grid, rho)
    else:
        raise GridError(f"unknown drift scheme {scheme!r}")
    return grid.divergence_matrix @ (rho_face * g)
