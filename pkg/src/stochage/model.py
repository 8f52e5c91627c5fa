"""Problem definition shared by both solvers."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .grid import Grid, SubDomain
from .noise import NoiseSpec
from .rates import InitialData, VitalRates


@dataclass(frozen=True)
class PopulationModel:
    """Grid, vital rates, noise modes, initial data, and the weighting region.

    ``region`` is the sub-box over which the nonlocal population
    functional integrates; ``None`` means the whole habitat.
    """

    grid: Grid
    rates: VitalRates
    noise: NoiseSpec
    initial: InitialData
    region: SubDomain | None = None

    def __post_init__(self):
        if self.initial.p0.grid != self.grid:
            raise ConfigurationError("initial data lives on a different grid")
        if self.region is not None:
            self.region.cell_slices(self.grid)

    @property
    def region_volume(self) -> float:
        if self.region is None:
            return self.grid.box_volume
        return self.region.volume()
