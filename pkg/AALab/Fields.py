"""Cell-centered fields on a box, Neumann ghost cells and discrete operators.

Every field is stored as a ghost-padded ``float64`` array with one ghost
layer per face. Ghost cells mirror the adjacent interior cell, which is the
homogeneous Neumann condition for a cell-centered finite-volume scheme: the
difference across every boundary face is zero, so no flux leaves the box.

All operators are vectorised numpy expressions over the padded arrays; the
functionals use midpoint (cell) or face quadrature weighted by the cell
volume.
"""

from __future__ import annotations

import logging
import math
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import Field, computed_field
from scipy.special import xlogy

from AALab.AALabBaseModels import ArrayModel, FrozenModel
from AALab.AALabEnums import FluxScheme
from AALab.ConfigModels import DomainSpec
from AALab.Constants import FISHER_DENSITY_FLOOR
from AALab.Errors import AALabError

logger = logging.getLogger(__name__)

Number = Union[float, np.ndarray]


class Grid(FrozenModel):
    """Cartesian discretization of the box [0, L1] x ... x [0, Ld]."""
    dims: int = Field(description="Spatial dimension (1, 2 or 3)", examples=[1, 2])
    cells: List[int] = Field(description="Cells per axis", examples=[[64], [32, 32]])
    lengths: List[float] = Field(description="Box extent per axis", examples=[[1.0], [1.0, 1.0]])

    @classmethod
    def from_domain(cls, domain: DomainSpec) -> "Grid":
        return cls(dims=domain.dims, cells=list(domain.cells), lengths=list(domain.lengths))

    @computed_field
    @property
    def spacing(self) -> List[float]:
        return [length / count for length, count in zip(self.lengths, self.cells)]

    @computed_field
    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.cells)

    @property
    def padded_shape(self) -> Tuple[int, ...]:
        return tuple(count + 2 for count in self.cells)

    @property
    def total_cells(self) -> int:
        return math.prod(self.cells)

    @property
    def measure(self) -> float:
        return math.prod(self.lengths)


class ScalarField:
    """Cell averages of one scalar on a grid plus a one-cell ghost layer.

    Attributes:
        grid: The grid the field lives on.
        data: Ghost-padded values, shape ``grid.padded_shape``.
    """

    def __init__(self, grid: Grid, values: Optional[np.ndarray] = None) -> None:
        self.grid = grid
        self.data = np.zeros(grid.padded_shape, dtype=np.float64)
        if values is not None:
            self.interior[...] = values

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        field = cls(grid)
        field.data[...] = value
        return field

    @property
    def interior(self) -> np.ndarray:
        return self.data[(slice(1, -1),) * self.grid.dims]

    def copy(self) -> "ScalarField":
        field = ScalarField(self.grid)
        field.data[...] = self.data
        return field

    def __repr__(self) -> str:
        return f"ScalarField(cells={self.grid.cells}, min={self.interior.min():.6g}, max={self.interior.max():.6g})"


class FieldState(ArrayModel):
    """The triple (u, v, w) at time t on one shared grid."""
    u: ScalarField
    v: ScalarField
    w: ScalarField
    t: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def fields(self) -> Tuple[ScalarField, ScalarField, ScalarField]:
        return self.u, self.v, self.w

    def fill_ghosts(self) -> "FieldState":
        for field in self.fields():
            fill_ghosts(field)
        return self

    def copy(self) -> "FieldState":
        return FieldState(u=self.u.copy(), v=self.v.copy(), w=self.w.copy(), t=self.t)

    def min_value(self) -> float:
        return float(min(field.interior.min() for field in self.fields()))

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(field.interior).all()) for field in self.fields())

    @classmethod
    def homogeneous(cls, grid: Grid, u: float, v: float, w: float, t: float = 0.0) -> "FieldState":
        return cls(u=ScalarField.constant(grid, u), v=ScalarField.constant(grid, v),
                   w=ScalarField.constant(grid, w), t=t)


def _axis_index(ndim: int, axis: int, index: Union[int, slice], others: slice = slice(None)) -> tuple:
    idx = [others] * ndim
    idx[axis] = index
    return tuple(idx)


def _shifted(data: np.ndarray, axis: int, offset: int) -> np.ndarray:
    """Interior block shifted by ``offset`` cells along ``axis``."""
    n = data.shape[axis]
    return data[_axis_index(data.ndim, axis, slice(1 + offset, n - 1 + offset), slice(1, -1))]


def _face_slab(data: np.ndarray, axis: int) -> np.ndarray:
    # interior in the other axes, full (ghosts included) along ``axis``
    return data[_axis_index(data.ndim, axis, slice(None), slice(1, -1))]


def _broadcast_along(weights: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = weights.size
    return weights.reshape(shape)


def fill_ghosts(f: ScalarField) -> ScalarField:
    """Mirror every ghost cell from its interior neighbour (homogeneous Neumann).

    Axes are filled in turn over the full padded extent, so edge and corner
    ghosts end up mirrored along every axis as well.
    """
    data = f.data
    for axis in range(data.ndim):
        data[_axis_index(data.ndim, axis, 0)] = data[_axis_index(data.ndim, axis, 1)]
        data[_axis_index(data.ndim, axis, -1)] = data[_axis_index(data.ndim, axis, -2)]
    return f


def cell_centers(grid: Grid) -> List[np.ndarray]:
    """Cell-center coordinates per axis, broadcast to the interior shape (``ij`` indexing)."""
    axes = [(np.arange(count) + 0.5) * h for count, h in zip(grid.cells, grid.spacing)]
    return list(np.meshgrid(*axes, indexing="ij"))


def laplacian(f: ScalarField) -> ScalarField:
    """Second-order 3/5/7-point Laplacian of a ghost-filled field."""
    data = f.data
    center = f.interior
    result = np.zeros_like(center)
    for axis, h in enumerate(f.grid.spacing):
        result += (_shifted(data, axis, 1) - 2.0 * center + _shifted(data, axis, -1)) / (h * h)
    return ScalarField(f.grid, result)


def face_gradients(f: ScalarField, axis: int) -> np.ndarray:
    """Normal differences on every face normal to ``axis``, boundary faces included.

    The result has ``cells[axis] + 1`` entries along ``axis``; with filled
    ghosts the two boundary entries are zero.
    """
    return np.diff(_face_slab(f.data, axis), axis=axis) / f.grid.spacing[axis]


def f_eps(s: Number, eps: float, dim_n: int) -> Number:
    """Flux regularization factor F_eps(s) = (1 + eps*s)^-(N+1), in (0, 1].

    Examples:
        >>> f_eps(1.0, 1.0, 3)
        0.0625
    """
    if eps == 0:
        return np.ones_like(s) if isinstance(s, np.ndarray) else 1.0
    factor = np.power(1.0 + eps * np.asarray(s, dtype=np.float64), -(dim_n + 1.0))
    return factor if isinstance(s, np.ndarray) else float(factor)


def face_density(density: ScalarField, axis: int, scheme: FluxScheme,
                 gradient: Optional[np.ndarray] = None) -> np.ndarray:
    """Density reconstructed on the faces normal to ``axis``.

    ``central`` averages the two adjacent cells. ``upwind`` takes the donor
    cell: the left cell where the face velocity (sign of ``gradient``) is
    positive, the right cell otherwise.
    """
    slab = _face_slab(density.data, axis)
    n = slab.shape[axis]
    left = slab[_axis_index(slab.ndim, axis, slice(0, n - 1))]
    right = slab[_axis_index(slab.ndim, axis, slice(1, n))]
    if scheme == FluxScheme.upwind:
        if gradient is None:
            raise AALabError("upwind face density needs the face gradient")
        return np.where(gradient > 0, left, right)
    return 0.5 * (left + right)


def chemotactic_face_fluxes(density: ScalarField, w: ScalarField, chi: float, eps: float, dim_n: int,
                            scheme: FluxScheme = FluxScheme.central) -> List[np.ndarray]:
    """Face fluxes chi * rho_f * F_eps(rho_f) * dw/dn, one array per axis."""
    fluxes = []
    for axis in range(density.grid.dims):
        gradient = face_gradients(w, axis)
        rho_face = face_density(density, axis, scheme, gradient)
        fluxes.append(chi * rho_face * f_eps(rho_face, eps, dim_n) * gradient)
    return fluxes


def chemotactic_divergence(density: ScalarField, w: ScalarField, chi: float, eps: float, dim_n: int,
                           scheme: FluxScheme = FluxScheme.central) -> ScalarField:
    """Discrete -chi * div(rho * F_eps(rho) * grad w).

    The face flux is ``chi * rho_f * F_eps(rho_f) * dw/dn``; its divergence
    telescopes, so the cell sum of the result is zero up to round-off.

    Args:
        density: Ghost-filled density rho.
        w: Ghost-filled signal.
        chi: Chemotactic sensitivity.
        eps: Regularization parameter (0 = unregularized).
        dim_n: Analytic dimension N in F_eps.
        scheme: Face density reconstruction.

    Returns:
        ScalarField: The chemotactic term (interior only, ghosts zero).
    """
    result = np.zeros(density.grid.shape, dtype=np.float64)
    fluxes = chemotactic_face_fluxes(density, w, chi, eps, dim_n, scheme)
    for axis, (flux, h) in enumerate(zip(fluxes, density.grid.spacing)):
        n = flux.shape[axis]
        upper = flux[_axis_index(flux.ndim, axis, slice(1, n))]
        lower = flux[_axis_index(flux.ndim, axis, slice(0, n - 1))]
        result -= (upper - lower) / h
    return ScalarField(density.grid, result)


def integral(f: ScalarField) -> float:
    """Midpoint quadrature of the interior values."""
    return float(f.interior.sum() * f.grid.cell_volume)


def lp_norm(f: ScalarField, p: float) -> float:
    """Cell-volume weighted L^p norm; ``p = math.inf`` gives max |f|."""
    values = np.abs(f.interior)
    if math.isinf(p):
        return float(values.max())
    if p < 1:
        raise AALabError(f"lp_norm needs p >= 1 (got {p})")
    if p == 1:
        return float(values.sum() * f.grid.cell_volume)
    return float((np.power(values, p).sum() * f.grid.cell_volume) ** (1.0 / p))


def _boundary_lumped_weights(count: int) -> np.ndarray:
    # faces 0..count; each boundary half-cell is lumped onto the nearest interior face
    weights = np.ones(count + 1)
    weights[0] = weights[-1] = 0.0
    weights[1] += 0.5
    weights[-2] += 0.5
    return weights


def _lumped_face_sum(values_per_axis: List[np.ndarray], grid: Grid) -> float:
    total = 0.0
    for axis, values in enumerate(values_per_axis):
        weights = _broadcast_along(_boundary_lumped_weights(grid.cells[axis]), grid.dims, axis)
        total += float((values * weights).sum())
    return total * grid.cell_volume


def grad_sq_integral(f: ScalarField) -> float:
    """Face quadrature of the Dirichlet energy, exact for linear profiles."""
    return _lumped_face_sum([face_gradients(f, axis) ** 2 for axis in range(f.grid.dims)], f.grid)


def face_inner_product(a: ScalarField, b: ScalarField) -> float:
    """Discrete Dirichlet form sum over faces of (da/h)(db/h) * cell volume.

    Satisfies ``sum(a * laplacian(b)) * vol == -face_inner_product(a, b)``
    for ghost-filled fields.
    """
    total = 0.0
    for axis in range(a.grid.dims):
        total += float((face_gradients(a, axis) * face_gradients(b, axis)).sum())
    return total * a.grid.cell_volume


def flux_pairing(fluxes: List[np.ndarray], test: ScalarField) -> float:
    """Sum over faces of flux * d(test)/dn * cell volume (weak form of -div flux against test)."""
    total = 0.0
    for axis, flux in enumerate(fluxes):
        total += float((flux * face_gradients(test, axis)).sum())
    return total * test.grid.cell_volume


def lap_sq_integral(f: ScalarField) -> float:
    """Integral of |laplacian(f)|^2 using the solver's stencil."""
    return float((laplacian(f).interior ** 2).sum() * f.grid.cell_volume)


def entropy_and_fisher(f: ScalarField) -> Tuple[float, float]:
    """Entropy integral of f ln f and Fisher information of |grad f|^2 / f.

    Uses 0 ln 0 = 0. The Fisher term divides by the face harmonic mean of f;
    faces where that mean falls below the density floor contribute nothing.
    """
    values = np.maximum(f.interior, 0.0)
    entropy = float(xlogy(values, values).sum() * f.grid.cell_volume)

    clipped = ScalarField(f.grid)
    clipped.data[...] = np.maximum(f.data, 0.0)
    terms = []
    for axis in range(f.grid.dims):
        slab = _face_slab(clipped.data, axis)
        n = slab.shape[axis]
        left = slab[_axis_index(slab.ndim, axis, slice(0, n - 1))]
        right = slab[_axis_index(slab.ndim, axis, slice(1, n))]
        total = left + right
        harmonic = np.divide(2.0 * left * right, total, out=np.zeros_like(total), where=total > 0)
        gradient = face_gradients(clipped, axis)
        mask = harmonic >= FISHER_DENSITY_FLOOR
        terms.append(np.divide(gradient ** 2, harmonic, out=np.zeros_like(harmonic), where=mask))
    fisher = _lumped_face_sum(terms, f.grid)
    return entropy, fisher
