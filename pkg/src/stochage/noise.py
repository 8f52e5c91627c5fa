"""Brownian paths and the Gaussian noise field they drive.

The noise field is a finite sum ``W(t, a, x) = sum_j mu_j(a, x) beta_j(t)``
of smooth spatial-age amplitudes times independent scalar Brownian
motions.  Amplitudes carry analytic first and second space derivatives
and a first age derivative, because the rescaled equation needs the
derivative fields of W and finite-differencing a sampled noise field
would pollute convergence studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import Field, Grid, boundary_faces, face_meshes


@dataclass(frozen=True)
class Amplitude:
    """One noise mode: value plus analytic derivatives.

    ``fn``, ``d_age``, ``lap`` are callables ``(a, *x)``; ``grad`` holds
    one callable per spatial dimension.  ``neumann_compatible`` declares
    that the normal derivative vanishes on the boundary of the box.
    """

    fn: object
    d_age: object
    grad: tuple
    lap: object
    neumann_compatible: bool
    label: str = ""


def constant_amplitude(c: float, dim: int) -> Amplitude:
    zero = lambda a, *x: np.zeros(np.broadcast_shapes(np.shape(a), *map(np.shape, x)))
    return Amplitude(
        fn=lambda a, *x: np.full(np.broadcast_shapes(np.shape(a), *map(np.shape, x)), float(c)),
        d_age=zero, grad=(zero,) * dim, lap=zero,
        neumann_compatible=True, label=f"constant({c})")


def age_polynomial_amplitude(coeffs, dim: int) -> Amplitude:
    """Polynomial in age, constant in space: ``sum_k coeffs[k] * a**k``."""
    coeffs = tuple(float(c) for c in coeffs)
    deriv = tuple(k * c for k, c in enumerate(coeffs))[1:] or (0.0,)

    def _poly(cs):
        def ev(a, *x):
            a = np.asarray(a, dtype=float)
            out = np.polynomial.polynomial.polyval(a, cs)
            shape = np.broadcast_shapes(np.shape(a), *map(np.shape, x))
            return np.broadcast_to(out, shape).copy()
        return ev

    zero = lambda a, *x: np.zeros(np.broadcast_shapes(np.shape(a), *map(np.shape, x)))
    return Amplitude(
        fn=_poly(coeffs), d_age=_poly(deriv), grad=(zero,) * dim, lap=zero,
        neumann_compatible=True, label=f"age_poly{coeffs}")


def _trig_mode(c: float, modes, extent, kind: str, age_coeffs=None) -> Amplitude:
    """Product of an optional age polynomial and one trig factor per dimension.

    ``cos`` modes have vanishing normal derivative on the box boundary;
    ``sin`` modes do not and are only meant for derivative tests.
    """
    modes = tuple(int(k) for k in np.atleast_1d(modes))
    extent = tuple(float(e) for e in np.atleast_1d(extent))
    if len(modes) != len(extent):
        raise ConfigurationError("one mode number per spatial dimension required")
    dim = len(modes)
    freqs = tuple(k * np.pi / e for k, e in zip(modes, extent))
    if age_coeffs is None:
        age_coeffs = (1.0,)
    age_coeffs = tuple(float(v) for v in age_coeffs)
    age_deriv = tuple(k * v for k, v in enumerate(age_coeffs))[1:] or (0.0,)

    base, dbase = (np.cos, lambda w, z: -w * np.sin(z)) if kind == "cos" else \
                  (np.sin, lambda w, z: w * np.cos(z))

    def poly(cs, a):
        return np.polynomial.polynomial.polyval(np.asarray(a, dtype=float), cs)

    def trig_prod(x, skip=None):
        out = 1.0
        for i, (w, xi) in enumerate(zip(freqs, x)):
            if i == skip:
                continue
            out = out * base(w * np.asarray(xi, dtype=float))
        return out

    def fn(a, *x):
        return c * poly(age_coeffs, a) * trig_prod(x)

    def d_age(a, *x):
        return c * poly(age_deriv, a) * trig_prod(x)

    def make_grad(i):
        def g(a, *x):
            w = freqs[i]
            return c * poly(age_coeffs, a) * dbase(w, w * np.asarray(x[i], dtype=float)) \
                * trig_prod(x, skip=i)
        return g

    def lap(a, *x):
        # each trig factor is an eigenfunction of its own second derivative
        return fn(a, *x) * (-sum(w * w for w in freqs))

    return Amplitude(
        fn=fn, d_age=d_age, grad=tuple(make_grad(i) for i in range(dim)), lap=lap,
        neumann_compatible=(kind == "cos"),
        label=f"{kind}_mode(c={c}, k={modes}, age={age_coeffs})")


def cosine_amplitude(c: float, modes, extent, age_coeffs=None) -> Amplitude:
    return _trig_mode(c, modes, extent, "cos", age_coeffs)


def sine_amplitude(c: float, modes, extent, age_coeffs=None) -> Amplitude:
    return _trig_mode(c, modes, extent, "sin", age_coeffs)


@dataclass(frozen=True)
class NoiseSpec:
    """Finite family of amplitude functions defining the noise field."""

    amplitudes: tuple[Amplitude, ...]

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", tuple(self.amplitudes))

    @property
    def n_modes(self) -> int:
        return len(self.amplitudes)

    @property
    def neumann_compatible(self) -> bool:
        return all(a.neumann_compatible for a in self.amplitudes)

    def check_neumann(self, grid: Grid, tol: float = 1e-12) -> float:
        """Largest sampled |normal derivative| over all boundary faces.

        Raises when an amplitude declared compatible exceeds ``tol``.
        """
        worst = 0.0
        for amp in self.amplitudes:
            for face in boundary_faces(grid):
                ages, coords = face_meshes(grid, face)
                g = np.asarray(amp.grad[face.axis](ages, *coords), dtype=float)
                mag = float(np.max(np.abs(g))) if g.size else 0.0
                if amp.neumann_compatible and mag > tol:
                    raise ConfigurationError(
                        f"amplitude {amp.label} declared boundary-compatible but "
                        f"has normal derivative {mag:.3g} on a face")
                worst = max(worst, mag)
        return worst


class AmplitudeGrids:
    """Amplitude values and derivatives sampled once per grid.

    Shapes: ``values``, ``d_age``, ``laplacians`` are ``(N, *field_shape)``;
    ``gradients[axis]`` likewise; ``face_values[face]`` is ``(N, *face_shape)``.
    """

    def __init__(self, spec: NoiseSpec, grid: Grid):
        self.spec = spec
        self.grid = grid
        n = spec.n_modes
        shape = (n,) + grid.field_shape
        self.values = np.zeros(shape)
        self.d_age = np.zeros(shape)
        self.laplacians = np.zeros(shape)
        self.gradients = [np.zeros(shape) for _ in range(grid.dim)]
        am, xm = grid.age_mesh, grid.space_meshes
        for j, amp in enumerate(spec.amplitudes):
            self.values[j] = np.broadcast_to(amp.fn(am, *xm), grid.field_shape)
            self.d_age[j] = np.broadcast_to(amp.d_age(am, *xm), grid.field_shape)
            self.laplacians[j] = np.broadcast_to(amp.lap(am, *xm), grid.field_shape)
            for axis in range(grid.dim):
                self.gradients[axis][j] = np.broadcast_to(
                    amp.grad[axis](am, *xm), grid.field_shape)
        self.face_values = {}
        for face in boundary_faces(grid):
            ages, coords = face_meshes(grid, face)
            fshape = (n, grid.n_a + 1) + tuple(
                m for ax, m in enumerate(grid.n_x) if ax != face.axis)
            vals = np.zeros(fshape)
            for j, amp in enumerate(spec.amplitudes):
                vals[j] = np.broadcast_to(amp.fn(ages, *coords), fshape[1:])
            self.face_values[face] = vals


@dataclass(frozen=True)
class BrownianBundle:
    """Independent Brownian increment sequences on a shared time grid.

    ``betas`` stores the path values at the time nodes (starting at 0) and
    is the authority for refinement consistency: coarsening subsamples it,
    so path values at shared nodes match the fine bundle bit for bit.
    ``increments`` under coarsening are exact block sums; the two views
    agree up to summation roundoff.
    """

    increments: np.ndarray
    betas: np.ndarray
    seed: int
    dt: float
    level: int = 0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        bet = np.asarray(self.betas, dtype=float)
        inc.setflags(write=False)
        bet.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "betas", bet)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_t(self) -> int:
        return self.increments.shape[1]

    @property
    def horizon(self) -> float:
        return self.dt * self.n_t


def sample_bundle(seed: int, n_paths: int, n_t: int, T: float) -> BrownianBundle:
    """Sample i.i.d. Gaussian increments, one reproducible stream per path.

    Path ``j`` draws from ``SeedSequence(seed, spawn_key=(j,))``, so any
    subset of paths can be regenerated independently of worker scheduling.
    """
    if n_t < 2:
        raise ConfigurationError("a bundle needs at least 2 time steps")
    if n_paths < 1:
        raise ConfigurationError("a bundle needs at least one path")
    dt = float(T) / n_t
    increments = np.empty((n_paths, n_t))
    for j in range(n_paths):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))
        increments[j] = rng.normal(0.0, np.sqrt(dt), n_t)
    betas = np.zeros((n_paths, n_t + 1))
    np.cumsum(increments, axis=1, out=betas[:, 1:])
    return BrownianBundle(increments, betas, int(seed), dt, level=0)


def coarsen(bundle: BrownianBundle, factor: int) -> BrownianBundle:
    """Merge increments in blocks of ``factor`` (a power of two).

    Node values on the shared coarse grid are taken verbatim from the
    fine bundle.
    """
    factor = int(factor)
    if factor < 1 or factor & (factor - 1):
        raise ConfigurationError(f"coarsening factor must be a power of two, got {factor}")
    if factor == 1:
        return bundle
    if bundle.n_t % factor:
        raise ConfigurationError(
            f"factor {factor} does not divide n_t={bundle.n_t}")
    inc = bundle.increments.reshape(bundle.n_paths, -1, factor).sum(axis=2)
    betas = bundle.betas[:, ::factor]
    return BrownianBundle(inc, betas, bundle.seed, bundle.dt * factor,
                          level=bundle.level + int(np.log2(factor)))


@dataclass(frozen=True)
class NoiseField:
    """Noise field and its derivative fields at one time node."""

    value: np.ndarray
    d_age: np.ndarray
    gradient: tuple[np.ndarray, ...]
    laplacian: np.ndarray


def evaluate_noise(spec: NoiseSpec, bundle: BrownianBundle, t_index: int,
                   grid: Grid, grids: AmplitudeGrids | None = None) -> NoiseField:
    """Assemble W and its derivatives at time node ``t_index``.

    All fields are linear in the path values, evaluated with the bundle's
    node values so coarsened bundles reproduce the fine fields exactly on
    shared nodes.
    """
    if not (0 <= t_index <= bundle.n_t):
        raise ConfigurationError(f"time index {t_index} outside the bundle grid")
    if grids is None:
        grids = AmplitudeGrids(spec, grid)
    b = bundle.betas[:, t_index]
    value = np.tensordot(b, grids.values, axes=1)
    d_age = np.tensordot(b, grids.d_age, axes=1)
    lap = np.tensordot(b, grids.laplacians, axes=1)
    grad = tuple(np.tensordot(b, g, axes=1) for g in grids.gradients)
    return NoiseField(value, d_age, grad, lap)


def ito_correction(spec: NoiseSpec, grid: Grid,
                   grids: AmplitudeGrids | None = None) -> Field:
    """Drift released by rescaling: half the sum of squared amplitudes."""
    if grids is None:
        grids = AmplitudeGrids(spec, grid)
    return Field(0.5 * np.sum(grids.values ** 2, axis=0), grid, copy=False)
