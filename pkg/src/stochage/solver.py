"""Operator-splitting solver for the pathwise transport-diffusion-renewal system.

Each time step advances the rescaled state through three substeps:

1. age transport along the characteristic ``dt = da`` with a pointwise
   exponential reaction factor,
2. the nonlocal renewal (birth) row at age zero,
3. an implicit backward-Euler diffusion solve per age level with Robin
   boundary closure (tridiagonal in 1d, alternating direction sweeps in 2d).

The nonlinearity enters only through the scalar population functional,
which couples the new time level to itself; a fixed-point loop freezes it
per iterate, guarded by a radial clipping of the argument that keeps the
rates globally Lipschitz.

Every substep maps nonnegative data to nonnegative data (the diffusion
matrix is an M-matrix and the custom tridiagonal solve never subtracts
positives), so nonnegative initial data with zero boundary inflow stays
nonnegative exactly, not just up to rounding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, NonconvergenceError
from .grid import (Face, Field, Grid, boundary_faces, boundary_norm_sq,
                   gradient_energy, l2_norm, weighted_population)
from .model import PopulationModel
from .noise import BrownianBundle
from .rates import evaluate_gamma
from .rescale import RescaledCoefficients, build_coefficients

logger = logging.getLogger(__name__)


def tridiagonal_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
                      rhs: np.ndarray) -> np.ndarray:
    """Thomas algorithm over a batch of independent systems (last axis).

    ``lower[..., 0]`` and ``upper[..., -1]`` are ignored.  For systems with
    positive diagonal, nonpositive off-diagonals, and nonnegative right
    side, every arithmetic operation combines nonnegative quantities, so
    the solution is nonnegative exactly in floating point.  That property
    is why this is hand-rolled instead of calling a pivoting solver.
    """
    n = rhs.shape[-1]
    cp = np.zeros_like(rhs)
    dp = np.zeros_like(rhs)
    cp[..., 0] = upper[..., 0] / diag[..., 0]
    dp[..., 0] = rhs[..., 0] / diag[..., 0]
    for i in range(1, n):
        denom = diag[..., i] - lower[..., i] * cp[..., i - 1]
        if i < n - 1:
            cp[..., i] = upper[..., i] / denom
        dp[..., i] = (rhs[..., i] - lower[..., i] * dp[..., i - 1]) / denom
    x = np.empty_like(rhs)
    x[..., n - 1] = dp[..., n - 1]
    for i in range(n - 2, -1, -1):
        x[..., i] = dp[..., i] - cp[..., i] * x[..., i + 1]
    return x


def transport_reaction_substep(values: np.ndarray, g1, mu_s: np.ndarray,
                               g2, grid: Grid, dt: float) -> tuple[np.ndarray, float]:
    """Age the population one step and apply the zeroth-order decay.

    On an aligned grid (``dt == da``) the shift is exact: row ``k`` receives
    row ``k - 1`` times ``exp(-(g1 + mu_s) dt)`` evaluated at the departure
    row.  Off alignment a first-order age upwind is used instead (requires
    ``dt <= da``).  The age-zero row is zeroed and left for the renewal
    operation.  ``g1`` may be ``None`` (no rescaling terms) and ``g2`` may
    be ``None`` or all-zero to skip the spatial advection.

    Returns the new values and the advection CFL number actually used
    (0 when there is no advection; nonnegativity needs CFL <= 1).
    """
    rate = mu_s if g1 is None else g1 + mu_s
    decay = np.exp(-rate * dt)
    out = np.zeros_like(values)
    if grid.aligned:
        out[1:] = values[:-1] * decay[:-1]
    else:
        c = dt / grid.da
        if c > 1.0 + 1e-12:
            raise ConfigurationError(
                f"unaligned transport needs dt <= da, got dt/da = {c:.3g}")
        out[1:] = ((1.0 - c) * values[1:] + c * values[:-1]) * decay[1:]
    cfl = 0.0
    if g2 is not None and any(np.any(comp) for comp in g2):
        for axis, comp in enumerate(g2):
            c = comp * (dt / grid.dx[axis])
            cp = np.maximum(c, 0.0)
            cm = np.maximum(-c, 0.0)
            cfl = max(cfl, float(np.max(cp + cm)))
            ax = 1 + axis
            lo = np.concatenate([np.take(out, [0], axis=ax),
                                 np.take(out, range(out.shape[ax] - 1), axis=ax)], axis=ax)
            hi = np.concatenate([np.take(out, range(1, out.shape[ax]), axis=ax),
                                 np.take(out, [out.shape[ax] - 1], axis=ax)], axis=ax)
            out = out * (1.0 - cp - cm) + cp * lo + cm * hi
    return out, cfl


def renewal_row(values: np.ndarray, m_values: np.ndarray, grid: Grid) -> np.ndarray:
    """Birth row: age-trapezoid of ``m * values`` per spatial cell.

    Inside a time step the transported field arrives with a zeroed
    age-zero row, so the row being produced does not feed itself; the
    omitted trapezoid weight there is ``da / 2``, first order like the
    splitting.
    """
    w = grid.age_weights.reshape((-1,) + (1,) * grid.dim)
    return (w * m_values * values).sum(axis=0)


def _sweep(vals: np.ndarray, axis: int, alpha_lo, alpha_hi, k_lo, k_hi,
           dx: float, dt: float) -> np.ndarray:
    """One implicit diffusion sweep along a spatial axis with Robin faces.

    Ghost closure ``ghost = interior - dx (alpha v + k)`` keeps the matrix
    an M-matrix for ``alpha >= 0``.
    """
    arr = np.moveaxis(vals, axis, -1)
    a_lo = np.broadcast_to(alpha_lo, arr.shape[:-1])
    a_hi = np.broadcast_to(alpha_hi, arr.shape[:-1])
    q_lo = np.broadcast_to(k_lo, arr.shape[:-1])
    q_hi = np.broadcast_to(k_hi, arr.shape[:-1])
    n = arr.shape[-1]
    r = dt / dx ** 2
    diag = np.ones(arr.shape)
    if n > 1:
        diag += 2.0 * r
        diag[..., 0] -= r
        diag[..., -1] -= r
    diag[..., 0] += dt * a_lo / dx
    diag[..., -1] += dt * a_hi / dx
    lower = np.full(arr.shape, -r)
    upper = np.full(arr.shape, -r)
    lower[..., 0] = 0.0
    upper[..., -1] = 0.0
    rhs = arr.copy()
    rhs[..., 0] -= dt * q_lo / dx
    rhs[..., -1] -= dt * q_hi / dx
    out = tridiagonal_solve(lower, diag, upper, rhs)
    return np.moveaxis(out, -1, axis)


def diffusion_substep(values: np.ndarray, alpha: dict, k: dict, grid: Grid,
                      dt: float) -> np.ndarray:
    """Backward-Euler diffusion with Robin flux on every boundary face.

    The leading axis of ``values`` is a batch of age levels; ``alpha`` and
    ``k`` map each :class:`Face` to data with the same batch length.  In
    two dimensions the x and y sweeps are applied in sequence (first-order
    direction splitting); each sweep is unconditionally positivity
    preserving when ``k <= 0`` contributions are absent.
    """
    out = values
    for axis in range(grid.dim):
        lo = Face(axis, 0)
        hi = Face(axis, 1)
        out = _sweep(out, 1 + axis, alpha[lo], alpha[hi], k[lo], k[hi],
                     grid.dx[axis], dt)
    return out


@dataclass
class TruncationGuard:
    """Radial clipping of the rate argument at a norm radius.

    Keeps the population functional's argument inside the ball where the
    locally Lipschitz rates are under control.  ``threshold`` records the
    radius derived from the a priori energy bound when it was computed
    automatically; activations beyond it indicate the bound or the grid
    is off.
    """

    radius: float
    threshold: int | None = None
    activations: int = 0


def truncate_argument(values: np.ndarray, grid: Grid,
                      guard: TruncationGuard | None) -> np.ndarray:
    """Return ``values`` or its radial rescaling onto the guard ball.

    Identity when the norm is within the radius; otherwise scales to
    norm exactly ``radius`` and counts the activation.  Continuous at the
    boundary: both branches agree when the norm equals the radius.
    """
    if guard is None:
        return values
    norm = l2_norm(values, grid)
    if norm <= guard.radius:
        return values
    guard.activations += 1
    if guard.threshold is not None and guard.radius >= guard.threshold:
        logger.warning(
            "truncation activated at norm %.3g despite radius %.3g >= "
            "threshold %d; the energy bound or the grid is too coarse",
            norm, guard.radius, guard.threshold)
    return values * (guard.radius / norm)


@dataclass
class SolverConfig:
    """Knobs for both solvers (the direct one ignores the fixed-point part)."""

    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    include_diffusion: bool = True
    truncation_radius: float | None = None  # None derives it from the energy bound
    snapshot_stride: int = 1                # 0 keeps only first and last
    c0: float = 1.0                         # calibration constants of the
    c1: float = 1.0                         # energy bound (see estimates)


@dataclass
class SolveReport:
    """Trajectory plus per-step diagnostics of one pathwise solve."""

    solver: str
    variable: str                  # "y" (rescaled state) or "p" (density)
    grid: Grid
    times: np.ndarray
    stride: int
    snapshot_indices: np.ndarray
    snapshots: np.ndarray
    final: np.ndarray
    l2_series: np.ndarray
    gradient_energy_series: np.ndarray
    exit_trace_series: np.ndarray
    births_series: np.ndarray
    u_series: np.ndarray
    k_norm_sq_series: np.ndarray
    picard_iterations: np.ndarray
    contraction_ratios: np.ndarray
    guard: TruncationGuard | None
    cfl_max: float
    noise_factor_warnings: int = 0
    status: str = "converged"
    apriori_margin: np.ndarray | None = None

    @property
    def trajectory(self) -> np.ndarray:
        """Full state history; only available when stored at stride 1."""
        if self.stride != 1:
            raise InsufficientDataError(
                f"trajectory stored with stride {self.stride}; rerun with "
                f"snapshot_stride=1")
        return self.snapshots

    def field_at(self, t_index: int) -> np.ndarray:
        pos = np.searchsorted(self.snapshot_indices, t_index)
        if pos >= len(self.snapshot_indices) or self.snapshot_indices[pos] != t_index:
            raise InsufficientDataError(f"time index {t_index} was not stored")
        return self.snapshots[pos]

    @property
    def final_field(self) -> Field:
        return Field(self.final, self.grid)


def _snapshot_indices(n_t: int, stride: int) -> np.ndarray:
    if stride <= 0:
        return np.array([0, n_t])
    idx = list(range(0, n_t + 1, stride))
    if idx[-1] != n_t:
        idx.append(n_t)
    return np.array(idx)


def _auto_guard(model: PopulationModel, coeffs: RescaledCoefficients,
                config: SolverConfig) -> TruncationGuard:
    from . import estimates  # deferred: estimates has no solver dependency

    consts = estimates.constants_for_run(model, coeffs=coeffs,
                                         c0=config.c0, c1=config.c1)
    return TruncationGuard(radius=float(consts.n0), threshold=consts.n0)


@dataclass
class StepResult:
    state: np.ndarray
    iterations: int
    contraction_ratio: float
    cfl: float
    u_value: float


def picard_step_solve(y: np.ndarray, t_index: int,
                      coeffs: RescaledCoefficients, gamma_vals: np.ndarray,
                      region, guard: TruncationGuard | None,
                      config: SolverConfig) -> StepResult:
    """Advance one time step by fixed-point iteration on the frozen rates.

    Each iterate clips the candidate new-time state onto the guard ball,
    freezes the population functional and through it the mortality and
    fertility fields, then solves the linear substeps (transport, renewal,
    diffusion) from the old state.  Iteration stops when successive
    candidates differ by less than ``picard_tol`` relative to the current
    one; with an infinite tolerance the first iterate is returned, and a
    model whose rates ignore the functional converges on iteration one.
    """
    grid = coeffs.grid
    g1 = coeffs.g1(t_index)
    g2 = coeffs.g2(t_index)
    alpha = coeffs.alpha_faces(t_index)
    k = coeffs.k_faces(t_index)
    exp_w = coeffs.exp_w(t_index)

    zeta = y
    prev_diff = None
    ratio = np.nan
    cfl_max = 0.0
    for it in range(config.picard_max_iter + 1):
        z_used = truncate_argument(zeta, grid, guard)
        u_val = weighted_population(exp_w * z_used, gamma_vals, region, grid)
        mu_s = coeffs.mu_s_values(t_index, u_val)
        m = coeffs.m_values(t_index, u_val)
        v, cfl = transport_reaction_substep(y, g1, mu_s, g2, grid, grid.dt)
        v[0] = renewal_row(v, m, grid)
        if config.include_diffusion:
            v[1:] = diffusion_substep(
                v[1:], {f: a[1:] for f, a in alpha.items()},
                {f: q[1:] for f, q in k.items()}, grid, grid.dt)
        cfl_max = max(cfl_max, cfl)
        diff = l2_norm(v - zeta, grid)
        if prev_diff is not None and prev_diff > 0:
            ratio = diff / prev_diff
        prev_diff = diff
        if diff <= config.picard_tol * max(1.0, l2_norm(zeta, grid)):
            u_final = weighted_population(exp_w * v, gamma_vals, region, grid)
            return StepResult(state=v, iterations=it, contraction_ratio=ratio,
                              cfl=cfl_max, u_value=u_final)
        zeta = v
    raise NonconvergenceError(t_index - 1, config.picard_max_iter,
                              ratio if np.isfinite(ratio) else np.inf)


def solve_rescaled(model: PopulationModel, bundle: BrownianBundle,
                   config: SolverConfig | None = None) -> SolveReport:
    """March the pathwise system over the full time grid.

    Substep order within a step is transport, renewal, diffusion; the
    fixed point over the frozen population functional wraps all three.
    The initial state is the initial density itself (the transform is the
    identity at time zero).
    """
    config = config or SolverConfig()
    grid = model.grid
    coeffs = build_coefficients(model, bundle)
    gamma_vals = evaluate_gamma(model.rates, grid)
    guard = (TruncationGuard(radius=config.truncation_radius)
             if config.truncation_radius is not None
             else _auto_guard(model, coeffs, config))

    y = model.initial.p0.values.copy()
    n_t = grid.n_t
    indices = _snapshot_indices(n_t, config.snapshot_stride)
    snapshots = np.empty((len(indices),) + grid.field_shape)
    series = {name: np.zeros(n_t + 1) for name in
              ("l2", "grad", "exit", "births", "u", "k_sq")}
    picard_counts = np.zeros(n_t, dtype=int)
    ratios = np.full(n_t, np.nan)
    cfl_max = 0.0

    def record(i: int, state: np.ndarray, u_val: float):
        series["l2"][i] = l2_norm(state, grid)
        series["grad"][i] = gradient_energy(state, grid)
        series["exit"][i] = float(np.sum(state[-1] ** 2)) * grid.cell_volume
        series["births"][i] = float(np.sum(state[0])) * grid.cell_volume
        series["u"][i] = u_val
        series["k_sq"][i] = _boundary_k_sq(coeffs, i)
        pos = np.searchsorted(indices, i)
        if pos < len(indices) and indices[pos] == i:
            snapshots[pos] = state

    u0 = weighted_population(coeffs.exp_w(0) * y, gamma_vals, model.region, grid)
    record(0, y, u0)

    for n in range(n_t):
        step = picard_step_solve(y, n + 1, coeffs, gamma_vals, model.region,
                                 guard, config)
        y = step.state
        picard_counts[n] = step.iterations
        ratios[n] = step.contraction_ratio
        cfl_max = max(cfl_max, step.cfl)
        record(n + 1, y, step.u_value)

    return SolveReport(
        solver="rescaled", variable="y", grid=grid, times=grid.times,
        stride=config.snapshot_stride, snapshot_indices=indices,
        snapshots=snapshots, final=y,
        l2_series=series["l2"], gradient_energy_series=series["grad"],
        exit_trace_series=series["exit"], births_series=series["births"],
        u_series=series["u"], k_norm_sq_series=series["k_sq"],
        picard_iterations=picard_counts, contraction_ratios=ratios,
        guard=guard, cfl_max=cfl_max,
        status="converged")


def _boundary_k_sq(coeffs: RescaledCoefficients, t_index: int) -> float:
    grid = coeffs.grid
    return boundary_norm_sq(
        {f: coeffs.k_face(f, t_index) for f in boundary_faces(grid)}, grid)
