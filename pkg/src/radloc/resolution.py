"""Delay, Doppler and angular resolution limits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ArrayGeometry, GridConfig
from .geometry import SPEED_OF_LIGHT, GeoParams, wrap_angle


@dataclass(frozen=True)
class ResolutionReport:
    delay_res: float
    doppler_res: float
    angular_res: tuple[float, float]  # (azimuth, elevation), inf if the array is 1-D/absent
    wavelength: float
    propagation_speed: float = SPEED_OF_LIGHT

    @property
    def distance_res(self) -> float:
        return self.propagation_speed * self.delay_res

    @property
    def velocity_res(self) -> float:
        """Radial velocity resolution under the one-way Doppler convention."""
        return self.wavelength * self.doppler_res


def _half_wavelength_count(array: ArrayGeometry, axis: int) -> int:
    """Equivalent number of lambda/2-spaced elements along an axis."""
    vals = np.unique(np.round(array.element_positions[:, axis], 12))
    if vals.size < 2:
        return 1
    return int(round(np.ptp(vals) / 0.5)) + 1


def resolution_limits(grid: GridConfig, array: ArrayGeometry | None = None,
                      propagation_speed: float = SPEED_OF_LIGHT) -> ResolutionReport:
    """Boresight resolution: 1/W, 1/(K Ts) and 2/N per angular axis.

    ``propagation_speed`` only affects the conversion of the delay
    resolution to a distance.
    """
    az_res = el_res = float("inf")
    if array is not None:
        n_az = _half_wavelength_count(array, 1)
        n_el = _half_wavelength_count(array, 2)
        if n_az > 1:
            az_res = 2.0 / n_az
        if n_el > 1:
            el_res = 2.0 / n_el
    return ResolutionReport(
        delay_res=1.0 / grid.bandwidth,
        doppler_res=1.0 / grid.integration_time,
        angular_res=(az_res, el_res),
        wavelength=grid.wavelength,
        propagation_speed=propagation_speed,
    )


def angular_resolution_at(n_elements: int, azimuth: float) -> float:
    """Approximate off-boresight resolution 2/(N cos az); grows toward end-fire."""
    return 2.0 / (n_elements * max(abs(np.cos(azimuth)), 1e-12))


def resolvable(p1: GeoParams, p2: GeoParams, report: ResolutionReport,
               angle: str = "aoa") -> set[str]:
    """Domains in which the two paths are separated by more than the limit.

    ``report`` describes one array, so only one side is compared in angle:
    ``"aoa"`` (receive array) or ``"aod"`` (transmit array).
    """
    if angle not in ("aoa", "aod"):
        raise ValueError("angle must be 'aoa' or 'aod'")
    out = set()
    if abs(p1.delay - p2.delay) > report.delay_res:
        out.add("delay")
    if abs(p1.doppler - p2.doppler) > report.doppler_res:
        out.add("doppler")
    az_res, el_res = report.angular_res
    a, b = getattr(p1, angle), getattr(p2, angle)
    if abs(wrap_angle(a[0] - b[0])) > az_res or abs(a[1] - b[1]) > el_res:
        out.add("angle")
    return out
