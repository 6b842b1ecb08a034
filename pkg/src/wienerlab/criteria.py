"""Pass thresholds shared by every check, kept in one place so they can be
tightened as affordable resolutions grow."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Tuple


@dataclass(frozen=True)
class Criteria:
    # regression checks (decay and Hoelder fits)
    min_correlation: float = 0.9
    min_scales: int = 3
    # cells per half-edge below which an oscillation measurement is not trusted
    min_cells_per_radius: float = 4.0
    # fitted constants may drift by less than this factor under refinement
    stability_factor: float = 2.0
    # backward vs centred cylinder oscillation
    backward_tolerance: float = 0.10
    # halving dt may change reported oscillations by less than this
    dt_tolerance: float = 0.05
    # spread allowed across the L1 Harnack window sweep
    window_spread: float = 0.5
    # extinction: sup u below this fraction of sup u_o
    extinction_threshold: float = 1e-6
    # dimensionless extinction time invariance under u_o -> c u_o
    extinction_scaling_tolerance: float = 0.05
    # constants in intrinsic cylinders
    c_default: float = 0.1
    c_sweep: Tuple[float, ...] = (0.05, 0.1, 0.2)
    # comparison principle and conservation checks
    comparison_tolerance: float = 1e-8

    def as_dict(self):
        return asdict(self)


DEFAULT = Criteria()
