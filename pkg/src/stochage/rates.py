"""Vital rate functions and their declared bounds.

Rates are supplied as small parameterized families rather than arbitrary
code.  Every family knows its own sup bound and a Lipschitz constant in
the population argument ``r``, so the declared metadata in
:class:`VitalRates` can be filled in automatically and spot-checked by
:func:`validate_rates`.

A rate is called as ``rate(t, a, x, r)`` where ``a`` and the entries of
``x`` are broadcastable arrays (age nodes against cell centers, or the
coordinates of boundary faces) and ``r`` is a scalar.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidFieldError
from .grid import Field, Grid


@dataclass(frozen=True)
class ConstantRate:
    value: float

    @property
    def sup(self) -> float:
        return abs(self.value)

    def lipschitz(self, R: float) -> float:
        return 0.0

    def __call__(self, t, a, x, r):
        shape = np.broadcast_shapes(np.shape(a), *(np.shape(c) for c in x))
        return np.full(shape, float(self.value))


@dataclass(frozen=True)
class LogisticRate:
    """``base + amp / (1 + exp(-slope * (r - center)))``: bounded, smooth in r."""

    base: float
    amp: float
    slope: float
    center: float = 0.0

    @property
    def sup(self) -> float:
        return abs(self.base) + abs(self.amp)

    def lipschitz(self, R: float) -> float:
        return abs(self.amp) * abs(self.slope) / 4.0

    def __call__(self, t, a, x, r):
        z = self.slope * (float(r) - self.center)
        # clip keeps exp() in range; the logistic saturates well before 500
        val = self.base + self.amp / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))
        shape = np.broadcast_shapes(np.shape(a), *(np.shape(c) for c in x))
        return np.full(shape, val)


@dataclass(frozen=True)
class AgeProfileRate:
    """Rate depending on age only, linearly interpolated from a table."""

    age_points: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.age_points) != len(self.values) or len(self.values) < 2:
            raise ConfigurationError("age table needs matching points and values")

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def lipschitz(self, R: float) -> float:
        return 0.0

    def __call__(self, t, a, x, r):
        vals = np.interp(np.asarray(a, dtype=float), self.age_points, self.values)
        shape = np.broadcast_shapes(np.shape(a), *(np.shape(c) for c in x))
        return np.broadcast_to(vals, shape).copy()


@dataclass(frozen=True)
class AgeWindowRate:
    """Constant on an age window ``[lo, hi]``, zero outside (fertile band)."""

    lo: float
    hi: float
    value: float

    @property
    def sup(self) -> float:
        return abs(self.value)

    def lipschitz(self, R: float) -> float:
        return 0.0

    def __call__(self, t, a, x, r):
        a = np.asarray(a, dtype=float)
        vals = np.where((a >= self.lo) & (a <= self.hi), float(self.value), 0.0)
        shape = np.broadcast_shapes(np.shape(a), *(np.shape(c) for c in x))
        return np.broadcast_to(vals, shape).copy()


@dataclass(frozen=True)
class ProductRate:
    """Product of an age/space profile and an r-dependent factor."""

    profile: object
    r_factor: object

    @property
    def sup(self) -> float:
        return self.profile.sup * self.r_factor.sup

    def lipschitz(self, R: float) -> float:
        return self.profile.sup * self.r_factor.lipschitz(R)

    def __call__(self, t, a, x, r):
        return self.profile(t, a, x, r) * self.r_factor(t, a, x, r)


@dataclass(frozen=True)
class CustomRate:
    """Escape hatch for tests: explicit callable with declared metadata."""

    fn: object
    sup: float
    lipschitz_fn: object = None

    def lipschitz(self, R: float) -> float:
        if self.lipschitz_fn is None:
            return 0.0
        return float(self.lipschitz_fn(R))

    def __call__(self, t, a, x, r):
        out = np.asarray(self.fn(t, a, x, r), dtype=float)
        shape = np.broadcast_shapes(np.shape(a), *(np.shape(c) for c in x))
        return np.broadcast_to(out, shape).copy()


def zero_rate() -> ConstantRate:
    return ConstantRate(0.0)


@dataclass(frozen=True)
class VitalRates:
    """Mortality, fertility, weighting, and boundary data with metadata.

    ``mu_s``   additional mortality, called as ``mu_s(t, a, x, r)``
    ``m0``     fertility, ``m0(t, a, x, r)`` (the t argument is ignored
               by the built-in families but kept for symmetry)
    ``gamma``  weight of the nonlocal population functional, r ignored
    ``alpha0`` Robin boundary coefficient (nonnegative)
    ``k0``     Robin boundary inhomogeneity (may change sign)
    """

    mu_s: object = field(default_factory=zero_rate)
    m0: object = field(default_factory=zero_rate)
    gamma: object = field(default_factory=zero_rate)
    alpha0: object = field(default_factory=zero_rate)
    k0: object = field(default_factory=zero_rate)

    @property
    def mu_inf(self) -> float:
        return self.mu_s.sup

    @property
    def m0_inf(self) -> float:
        return self.m0.sup

    @property
    def gamma_inf(self) -> float:
        return self.gamma.sup

    def lipschitz_mu_s(self, R: float) -> float:
        return self.mu_s.lipschitz(R)

    def lipschitz_m0(self, R: float) -> float:
        return self.m0.lipschitz(R)


@dataclass(frozen=True)
class InitialData:
    """Initial population density with its nonnegativity flag recorded."""

    p0: Field
    nonnegative: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "nonnegative", bool(np.min(self.p0.values) >= 0.0))


@dataclass
class RateViolation:
    rate: str
    kind: str
    location: tuple
    detail: str


@dataclass
class RateValidationReport:
    n_samples: int
    violations: list[RateViolation]

    @property
    def passed(self) -> bool:
        return not self.violations


def validate_rates(rates: VitalRates, grid: Grid, sample_budget: int = 512,
                   r_max: float = 10.0, seed: int = 0) -> RateValidationReport:
    """Sample the rate functions and report bound or Lipschitz violations.

    Report-only: never raises.  Samples a lattice of (t, a, x) points and
    pairs of r values with |r| <= r_max, checking

    * ``0 <= mu_s <= mu_inf`` and ``0 <= m0 <= m0_inf``
    * ``gamma >= 0`` and ``alpha0 >= 0``
    * the declared local Lipschitz constants against finite slopes.
    """
    rng = np.random.default_rng(seed)
    violations: list[RateViolation] = []
    n_pts = max(4, int(np.sqrt(sample_budget)))
    ts = rng.uniform(0.0, grid.T, n_pts)
    aws = rng.uniform(0.0, grid.a_max, n_pts)
    xs = tuple(rng.uniform(0.0, e, n_pts) for e in grid.extent)
    rs = rng.uniform(-r_max, r_max, n_pts)
    tol = 1e-9

    def check_bounds(name, rate, lo, hi):
        for i in range(n_pts):
            vals = rate(ts[i], aws, xs, rs[i])
            if np.min(vals) < lo - tol or np.max(vals) > hi + tol:
                j = int(np.argmax(np.abs(vals - np.clip(vals, lo, hi))))
                violations.append(RateViolation(
                    name, "bound", (float(ts[i]), float(aws[j]), float(rs[i])),
                    f"value {vals.flat[j]:.6g} outside [{lo:.6g}, {hi:.6g}]"))

    check_bounds("mu_s", rates.mu_s, 0.0, rates.mu_inf)
    check_bounds("m0", rates.m0, 0.0, rates.m0_inf)
    check_bounds("gamma", rates.gamma, 0.0, rates.gamma_inf)
    check_bounds("alpha0", rates.alpha0, 0.0, rates.alpha0.sup)

    def check_lipschitz(name, rate, lip):
        for _ in range(n_pts):
            R = rng.uniform(0.1, r_max)
            r1, r2 = rng.uniform(-R, R, 2)
            if abs(r1 - r2) < 1e-12:
                continue
            t, aa = rng.uniform(0, grid.T), rng.uniform(0, grid.a_max, 3)
            xx = tuple(rng.uniform(0, e, 3) for e in grid.extent)
            v1, v2 = rate(t, aa, xx, r1), rate(t, aa, xx, r2)
            slope = np.max(np.abs(v1 - v2)) / abs(r1 - r2)
            if slope > lip(R) * (1 + 1e-6) + tol:
                violations.append(RateViolation(
                    name, "lipschitz", (float(r1), float(r2), float(R)),
                    f"slope {slope:.6g} exceeds declared {lip(R):.6g}"))

    check_lipschitz("mu_s", rates.mu_s, rates.lipschitz_mu_s)
    check_lipschitz("m0", rates.m0, rates.lipschitz_m0)

    return RateValidationReport(n_samples=n_pts * n_pts, violations=violations)


def evaluate_on_grid(rate, grid: Grid, t: float, r: float) -> np.ndarray:
    """Rate values on the full age-space grid at one (t, r)."""
    out = rate(t, grid.age_mesh, grid.space_meshes, r)
    return np.broadcast_to(np.asarray(out, dtype=float), grid.field_shape)


def evaluate_gamma(rates: VitalRates, grid: Grid) -> np.ndarray:
    return evaluate_on_grid(rates.gamma, grid, 0.0, 0.0)


def initial_field(grid: Grid, fn) -> InitialData:
    """Build initial data by sampling ``fn(a, *x)``."""
    f = Field.from_function(grid, lambda a, *x: fn(a, *x))
    if not np.all(np.isfinite(f.values)):
        raise InvalidFieldError("initial data contains non-finite entries")
    return InitialData(f)
