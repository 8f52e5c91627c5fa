"""Grids, fields, and the discrete integrals every solver shares.

A field lives on age nodes ``a_k = k * da`` (``k = 0 .. n_a``) times a
cell-centered uniform spatial grid on a rectangular box in 1 or 2
dimensions.  Integrals use the trapezoid rule in age and the midpoint
rule in space, so a field array has shape ``(n_a + 1, *n_x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, InvalidFieldError

_ALIGN_RTOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform space-age-time grid on ``(0, T) x (0, a_max) x box``.

    Parameters
    ----------
    T : float
        Final time.
    a_max : float
        Maximum age; the age interval is ``(0, a_max)``.
    n_t, n_a : int
        Number of time and age steps (both at least 2).
    extent : tuple of float
        Side length of the spatial box per dimension (1 or 2 entries).
    n_x : tuple of int
        Number of spatial cells per dimension.
    """

    T: float
    a_max: float
    n_t: int
    n_a: int
    extent: tuple[float, ...]
    n_x: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "extent", tuple(float(e) for e in np.atleast_1d(self.extent)))
        object.__setattr__(self, "n_x", tuple(int(n) for n in np.atleast_1d(self.n_x)))
        if self.dim not in (1, 2):
            raise ConfigurationError(f"spatial dimension must be 1 or 2, got {self.dim}")
        if len(self.n_x) != self.dim:
            raise ConfigurationError("extent and n_x must have the same length")
        if not (self.T > 0 and self.a_max > 0):
            raise ConfigurationError("T and a_max must be positive")
        if self.n_t < 2 or self.n_a < 2:
            raise ConfigurationError("n_t and n_a must be at least 2")
        if any(e <= 0 for e in self.extent) or any(n < 1 for n in self.n_x):
            raise ConfigurationError("extent must be positive and n_x at least 1")

    @property
    def dim(self) -> int:
        return len(self.extent)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def da(self) -> float:
        return self.a_max / self.n_a

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extent, self.n_x))

    @property
    def aligned(self) -> bool:
        """True when the time step equals the age step (characteristic mode)."""
        return abs(self.dt - self.da) <= _ALIGN_RTOL * self.dt

    @property
    def field_shape(self) -> tuple[int, ...]:
        return (self.n_a + 1, *self.n_x)

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @cached_property
    def ages(self) -> np.ndarray:
        return np.linspace(0.0, self.a_max, self.n_a + 1)

    @cached_property
    def age_weights(self) -> np.ndarray:
        """Trapezoid weights over the age nodes."""
        w = np.full(self.n_a + 1, self.da)
        w[0] = w[-1] = 0.5 * self.da
        return w

    @cached_property
    def cell_centers(self) -> tuple[np.ndarray, ...]:
        return tuple(
            (np.arange(n) + 0.5) * d for n, d in zip(self.n_x, self.dx)
        )

    @cached_property
    def age_mesh(self) -> np.ndarray:
        """Age nodes broadcast to the field shape."""
        shape = (self.n_a + 1,) + (1,) * self.dim
        return self.ages.reshape(shape)

    @cached_property
    def space_meshes(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinates per dimension, broadcastable to fields."""
        out = []
        for axis, c in enumerate(self.cell_centers):
            shape = [1] * (1 + self.dim)
            shape[1 + axis] = len(c)
            out.append(c.reshape(shape))
        return tuple(out)

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @cached_property
    def box_volume(self) -> float:
        return float(np.prod(self.extent))

    def coarsen_time(self, factor: int) -> "Grid":
        """Grid with n_t (and n_a in aligned mode) divided by ``factor``."""
        if factor == 1:
            return self
        if self.n_t % factor:
            raise ConfigurationError(f"factor {factor} does not divide n_t={self.n_t}")
        n_a = self.n_a
        if self.aligned:
            if self.n_a % factor:
                raise ConfigurationError(f"factor {factor} does not divide n_a={self.n_a}")
            n_a = self.n_a // factor
        return Grid(self.T, self.a_max, self.n_t // factor, n_a, self.extent, self.n_x)


class Field:
    """Immutable scalar function sampled on the age-space grid.

    ``values`` has shape ``grid.field_shape`` and every entry must be
    finite.  Arithmetic returns new fields; the underlying array is
    read-only so fields can be shared across ensemble workers.
    """

    __slots__ = ("values", "grid")

    def __init__(self, values, grid: Grid, copy: bool = True):
        arr = np.array(values, dtype=float, copy=copy)
        if arr.shape != grid.field_shape:
            raise InvalidFieldError(
                f"field shape {arr.shape} does not match grid {grid.field_shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidFieldError("field contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "grid", grid)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(np.zeros(grid.field_shape), grid, copy=False)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(np.full(grid.field_shape, float(value)), grid, copy=False)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        """Sample ``fn(a, *x)`` on age nodes and cell centers."""
        vals = np.broadcast_to(
            fn(grid.age_mesh, *grid.space_meshes), grid.field_shape
        )
        return cls(vals, grid)

    def with_values(self, values) -> "Field":
        return Field(values, self.grid)

    def __add__(self, other: "Field") -> "Field":
        self._check_same_grid(other)
        return Field(self.values + other.values, self.grid, copy=False)

    def __sub__(self, other: "Field") -> "Field":
        self._check_same_grid(other)
        return Field(self.values - other.values, self.grid, copy=False)

    def __mul__(self, scalar) -> "Field":
        return Field(self.values * float(scalar), self.grid, copy=False)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(-self.values, self.grid, copy=False)

    def _check_same_grid(self, other: "Field"):
        if other.grid is not self.grid and other.grid != self.grid:
            raise ConfigurationError("fields live on different grids")


@dataclass(frozen=True)
class SubDomain:
    """Axis-aligned sub-box of the spatial domain, given in coordinates."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in np.atleast_1d(self.lo)))
        object.__setattr__(self, "hi", tuple(float(v) for v in np.atleast_1d(self.hi)))

    def cell_slices(self, grid: Grid) -> tuple[slice, ...]:
        """Slices of cells covered by the box; edges must sit on cell faces."""
        if len(self.lo) != grid.dim or len(self.hi) != grid.dim:
            raise ConfigurationError("sub-domain dimension does not match the grid")
        slices = []
        for lo, hi, d, n in zip(self.lo, self.hi, grid.dx, grid.n_x):
            ilo, ihi = lo / d, hi / d
            if abs(ilo - round(ilo)) > 1e-9 or abs(ihi - round(ihi)) > 1e-9:
                raise ConfigurationError(
                    f"sub-domain edge ({lo}, {hi}) is not aligned to the grid"
                )
            ilo, ihi = int(round(ilo)), int(round(ihi))
            if not (0 <= ilo < ihi <= n):
                raise ConfigurationError(f"sub-domain ({lo}, {hi}) is outside the box")
            slices.append(slice(ilo, ihi))
        return tuple(slices)

    def volume(self) -> float:
        return float(np.prod([h - l for l, h in zip(self.lo, self.hi)]))


def _as_values(f, grid: Grid | None) -> tuple[np.ndarray, Grid]:
    if isinstance(f, Field):
        return f.values, f.grid
    if grid is None:
        raise ConfigurationError("a grid is required when passing a bare array")
    arr = np.asarray(f, dtype=float)
    if arr.shape != grid.field_shape:
        raise InvalidFieldError(
            f"array shape {arr.shape} does not match grid {grid.field_shape}"
        )
    return arr, grid


def l2_norm(f, grid: Grid | None = None) -> float:
    """Discrete L2 norm over age and space.

    Trapezoid in age, midpoint in space:
    ``sqrt(sum f^2 * w_age * dx^d)``.  Zero iff the field vanishes.
    """
    vals, grid = _as_values(f, grid)
    if not np.all(np.isfinite(vals)):
        raise InvalidFieldError("field contains non-finite entries")
    w = grid.age_weights.reshape((-1,) + (1,) * grid.dim)
    return float(np.sqrt(np.sum(vals * vals * w) * grid.cell_volume))


def weighted_population(f, weight, region: SubDomain | None = None,
                        grid: Grid | None = None) -> float:
    """Weighted total population ``int weight * f`` over age and a sub-box.

    ``weight`` is either an array on the grid or a callable ``(a, *x)``.
    ``region=None`` integrates over the whole box.
    """
    vals, grid = _as_values(f, grid)
    if callable(weight):
        w = np.broadcast_to(weight(grid.age_mesh, *grid.space_meshes), grid.field_shape)
    else:
        w = np.broadcast_to(np.asarray(weight, dtype=float), grid.field_shape)
    age_w = grid.age_weights.reshape((-1,) + (1,) * grid.dim)
    integrand = w * vals * age_w
    if region is not None:
        sl = (slice(None),) + region.cell_slices(grid)
        integrand = integrand[sl]
    return float(np.sum(integrand) * grid.cell_volume)


@dataclass(frozen=True)
class Face:
    """One face of the spatial box: ``axis`` plus low (0) or high (1) side."""

    axis: int
    side: int

    def coordinate(self, grid: Grid) -> float:
        return 0.0 if self.side == 0 else grid.extent[self.axis]

    def normal_sign(self) -> float:
        """Sign of the outward normal component along ``axis``."""
        return -1.0 if self.side == 0 else 1.0


def boundary_faces(grid: Grid) -> tuple[Face, ...]:
    return tuple(Face(axis, side) for axis in range(grid.dim) for side in (0, 1))


def face_shape(grid: Grid, face: Face) -> tuple[int, ...]:
    """Shape of data living on the age nodes of one boundary face."""
    other = tuple(n for ax, n in enumerate(grid.n_x) if ax != face.axis)
    return (grid.n_a + 1, *other)


def face_meshes(grid: Grid, face: Face) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    """Age mesh and coordinate arrays on a face, broadcastable to its shape."""
    shape = face_shape(grid, face)
    ndim = len(shape)
    ages = grid.ages.reshape((-1,) + (1,) * (ndim - 1))
    coords: list[np.ndarray] = []
    pos = 1
    for ax in range(grid.dim):
        if ax == face.axis:
            coords.append(np.asarray(face.coordinate(grid)))
        else:
            sh = [1] * ndim
            sh[pos] = grid.n_x[ax]
            coords.append(grid.cell_centers[ax].reshape(sh))
            pos += 1
    return ages, tuple(coords)


def face_measure(grid: Grid, face: Face) -> float:
    """Surface measure of one face cell (counting measure for d = 1)."""
    if grid.dim == 1:
        return 1.0
    other = [d for ax, d in enumerate(grid.dx) if ax != face.axis]
    return float(np.prod(other))


def boundary_norm_sq(face_data: dict, grid: Grid) -> float:
    """Squared L2 norm over age and the whole boundary of per-face data."""
    total = 0.0
    w = grid.age_weights
    for face in boundary_faces(grid):
        vals = np.asarray(face_data[face], dtype=float)
        wv = w.reshape((-1,) + (1,) * (vals.ndim - 1))
        total += float(np.sum(vals * vals * wv) * face_measure(grid, face))
    return total


def forward_differences(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """One-sided spatial difference quotients per dimension (face values)."""
    out = []
    for axis, d in enumerate(grid.dx):
        ax = 1 + axis
        out.append(np.diff(values, axis=ax) / d)
    return out

def gradient_energy(f, grid: Grid | None = None) -> float:
    """Squared L2 norm of the forward-difference spatial gradient."""
    vals, grid = _as_values(f, grid)
    age_w = grid.age_weights.reshape((-1,) + (1,) * grid.dim)
    total = 0.0
    for diff in forward_differences(vals, grid):
        total += float(np.sum(diff * diff * age_w) * grid.cell_volume)
    return total
