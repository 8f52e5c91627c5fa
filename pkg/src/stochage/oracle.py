"""Direct Euler-Maruyama integrator for the original noisy system.

This is the cross-validation route: it consumes the Brownian increments
directly instead of exponentiating the noise field, advancing the
density by the same transport/renewal/diffusion substeps as the
pathwise solver and then applying the explicit multiplicative factor
``1 + sum_j mu_j(a, x) dbeta_j``.  Keeping the noise linear (no
exponential) makes agreement with the rescaled route genuine evidence
rather than a shared formula.

The population functional is evaluated at the previous level (fully
explicit, no fixed-point loop); its bias is first order and vanishes in
convergence studies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import (Grid, boundary_faces, boundary_norm_sq, face_meshes,
                   gradient_energy, l2_norm, weighted_population)
from .model import PopulationModel
from .noise import AmplitudeGrids, BrownianBundle
from .rates import evaluate_gamma, evaluate_on_grid
from .solver import (SolveReport, SolverConfig, _snapshot_indices,
                     diffusion_substep, renewal_row, transport_reaction_substep)

logger = logging.getLogger(__name__)


@dataclass
class _DirectContext:
    """Pre-sampled amplitude values and boundary meshes for one run."""

    model: PopulationModel
    grid: Grid
    amp_values: np.ndarray          # (N, *field_shape)
    gamma: np.ndarray
    face_mesh: dict

    @classmethod
    def build(cls, model: PopulationModel) -> "_DirectContext":
        grid = model.grid
        grids = AmplitudeGrids(model.noise, grid)
        return cls(model=model, grid=grid, amp_values=grids.values,
                   gamma=evaluate_gamma(model.rates, grid),
                   face_mesh={f: face_meshes(grid, f) for f in boundary_faces(grid)})

    def boundary(self, rate, t: float) -> dict:
        out = {}
        for f, (ages, coords) in self.face_mesh.items():
            vals = rate(t, ages, coords, 0.0)
            shape = (self.grid.n_a + 1,) + tuple(
                n for ax, n in enumerate(self.grid.n_x) if ax != f.axis)
            out[f] = np.broadcast_to(np.asarray(vals, dtype=float), shape)
        return out


def em_step(p: np.ndarray, increments: np.ndarray, ctx: _DirectContext,
            t_new: float, u_prev: float, dt: float,
            include_diffusion: bool = True, alpha: dict | None = None,
            k0: dict | None = None) -> tuple[np.ndarray, float, bool]:
    """One explicit step: deterministic substeps, then the noise factor.

    ``u_prev`` is the population functional of the incoming state.
    ``alpha`` and ``k0`` may carry precomputed boundary data for ``t_new``.
    Returns the new state, the advection CFL (always 0 here), and a flag
    set when ``|sum_j mu_j dbeta_j|`` exceeds 1 somewhere, which risks a
    sign flip in the explicit factor and means the step is too large for
    the sampled noise.
    """
    model, grid = ctx.model, ctx.grid
    mu_s = evaluate_on_grid(model.rates.mu_s, grid, t_new, u_prev)
    v, cfl = transport_reaction_substep(p, None, mu_s, None, grid, dt)
    m0 = evaluate_on_grid(model.rates.m0, grid, t_new, u_prev)
    v[0] = renewal_row(v, m0, grid)
    if include_diffusion:
        if alpha is None:
            alpha = ctx.boundary(model.rates.alpha0, t_new)
        if k0 is None:
            k0 = ctx.boundary(model.rates.k0, t_new)
        v[1:] = diffusion_substep(
            v[1:], {f: a[1:] for f, a in alpha.items()},
            {f: q[1:] for f, q in k0.items()}, grid, dt)
    shock = np.tensordot(increments, ctx.amp_values, axes=1)
    overshoot = bool(np.max(np.abs(shock)) > 1.0) if shock.size else False
    v *= 1.0 + shock
    return v, cfl, overshoot


def solve_direct(model: PopulationModel, bundle: BrownianBundle,
                 config: SolverConfig | None = None) -> SolveReport:
    """Full Euler-Maruyama time loop over the bundle's grid.

    Produces the same report layout as the rescaled solver (the state
    variable is the density itself) so the two routes are directly
    comparable.
    """
    config = config or SolverConfig()
    grid = model.grid
    if bundle.n_t != grid.n_t or abs(bundle.dt - grid.dt) > 1e-12 * grid.dt:
        raise ConfigurationError(
            f"bundle grid (n_t={bundle.n_t}) does not match the model grid "
            f"(n_t={grid.n_t})")
    if bundle.n_paths != model.noise.n_modes:
        raise ConfigurationError("bundle paths do not match the noise modes")
    ctx = _DirectContext.build(model)
    n_t = grid.n_t
    p = model.initial.p0.values.copy()
    indices = _snapshot_indices(n_t, config.snapshot_stride)
    snapshots = np.empty((len(indices),) + grid.field_shape)
    series = {name: np.zeros(n_t + 1) for name in
              ("l2", "grad", "exit", "births", "u", "k_sq")}
    warnings = 0

    def record(i: int, state: np.ndarray, u_val: float, k0_faces: dict):
        series["l2"][i] = l2_norm(state, grid)
        series["grad"][i] = gradient_energy(state, grid)
        series["exit"][i] = float(np.sum(state[-1] ** 2)) * grid.cell_volume
        series["births"][i] = float(np.sum(state[0])) * grid.cell_volume
        series["u"][i] = u_val
        series["k_sq"][i] = boundary_norm_sq(k0_faces, grid)
        pos = np.searchsorted(indices, i)
        if pos < len(indices) and indices[pos] == i:
            snapshots[pos] = state

    u_prev = weighted_population(p, ctx.gamma, model.region, grid)
    record(0, p, u_prev, ctx.boundary(model.rates.k0, 0.0))
    for n in range(n_t):
        t_new = grid.times[n + 1]
        alpha = ctx.boundary(model.rates.alpha0, t_new)
        k0 = ctx.boundary(model.rates.k0, t_new)
        p, _, overshoot = em_step(p, bundle.increments[:, n], ctx, t_new,
                                  u_prev, grid.dt, config.include_diffusion,
                                  alpha=alpha, k0=k0)
        if overshoot:
            warnings += 1
        u_prev = weighted_population(p, ctx.gamma, model.region, grid)
        record(n + 1, p, u_prev, k0)
    if warnings:
        logger.warning(
            "explicit noise factor exceeded 1 in magnitude on %d of %d steps; "
            "the time step is too large for the sampled noise", warnings, n_t)

    return SolveReport(
        solver="direct", variable="p", grid=grid, times=grid.times,
        stride=config.snapshot_stride, snapshot_indices=indices,
        snapshots=snapshots, final=p,
        l2_series=series["l2"], gradient_energy_series=series["grad"],
        exit_trace_series=series["exit"], births_series=series["births"],
        u_series=series["u"], k_norm_sq_series=series["k_sq"],
        picard_iterations=np.zeros(n_t, dtype=int),
        contraction_ratios=np.full(n_t, np.nan),
        guard=None, cfl_max=0.0, noise_factor_warnings=warnings,
        status="converged")
