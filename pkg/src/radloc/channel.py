"""Array responses and geometric MIMO-OFDM channel synthesis.

A path contributes ``alpha * a_rx(aoa) a_tx(aod)^T * exp(-j2pi n df tau)
* exp(j2pi k Ts nu)`` to the channel at subcarrier ``n`` and symbol ``k``.
Note the plain transpose on the transmit response. One steering vector is
used for the whole band (narrowband array model).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import SPEED_OF_LIGHT, GeoParams, direction_vector, wavelength

TAGS = ("los", "nlos", "object", "clutter")


def isotropic(angle) -> float:
    return 1.0


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Element positions in carrier wavelengths, shape (M, 3)."""

    element_positions: np.ndarray
    element_pattern: Callable = isotropic

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.element_positions, dtype=float))
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 1:
            raise ValueError("element_positions must have shape (M, 3) with M >= 1")
        object.__setattr__(self, "element_positions", p)

    @classmethod
    def single(cls) -> "ArrayGeometry":
        return cls(np.zeros((1, 3)))

    @classmethod
    def ula(cls, n: int, spacing: float = 0.5, axis: str = "y") -> "ArrayGeometry":
        p = np.zeros((n, 3))
        p[:, "xyz".index(axis)] = spacing * np.arange(n)
        return cls(p)

    @classmethod
    def upa(cls, n_y: int, n_z: int, spacing: float = 0.5) -> "ArrayGeometry":
        """Planar array in the local y-z plane, broadside along +x."""
        yy, zz = np.meshgrid(np.arange(n_y), np.arange(n_z), indexing="ij")
        p = np.zeros((n_y * n_z, 3))
        p[:, 1] = spacing * yy.ravel()
        p[:, 2] = spacing * zz.ravel()
        return cls(p)

    @property
    def n_elements(self) -> int:
        return self.element_positions.shape[0]

    def extent_axes(self) -> tuple[str, ...]:
        """Axes along which the elements are spread."""
        span = np.ptp(self.element_positions, axis=0)
        return tuple(a for a, s in zip("xyz", span) if s > 1e-12)

    def senses(self) -> tuple[bool, bool]:
        """Whether the array response varies with (azimuth, elevation)."""
        axes = self.extent_axes()
        return ("y" in axes or "x" in axes), ("z" in axes or "x" in axes)

    def uniform_axes(self) -> dict[str, tuple[int, float]]:
        """Map axis -> (count, spacing) if elements form a full uniform grid.

        Raises ValueError when the layout lacks uniform-sampling structure.
        """
        p = self.element_positions
        out = {}
        total = 1
        for i, axis in enumerate("xyz"):
            vals = np.unique(np.round(p[:, i], 12))
            if vals.size == 1:
                continue
            steps = np.diff(vals)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise ValueError(f"non-uniform element spacing along {axis}")
            out[axis] = (vals.size, float(steps[0]))
            total *= vals.size
        if total != self.n_elements:
            raise ValueError("elements do not form a full uniform grid")
        return out


@dataclass(frozen=True)
class PathParams:
    gain: complex
    geo: GeoParams
    tag: str = "los"

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown tag {self.tag!r}")


@dataclass(frozen=True)
class GridConfig:
    n_subcarriers: int
    subcarrier_spacing: float
    n_symbols: int = 1
    symbol_duration: float | None = None
    carrier: float = 28e9

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_symbols < 1:
            raise ValueError("N and K must be >= 1")
        if not self.subcarrier_spacing > 0:
            raise ValueError("subcarrier spacing must be positive")
        if self.symbol_duration is None:
            object.__setattr__(self, "symbol_duration", 1.0 / self.subcarrier_spacing)
        if not self.symbol_duration > 0:
            raise ValueError("symbol duration must be positive")

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing

    @property
    def wavelength(self) -> float:
        return wavelength(self.carrier)

    @property
    def integration_time(self) -> float:
        return self.n_symbols * self.symbol_duration


def steering_vector(array: ArrayGeometry, angle) -> np.ndarray:
    az, el = angle
    k = direction_vector(az, el)
    return np.exp(2j * np.pi * (array.element_positions @ k))


def steering_derivatives(array: ArrayGeometry, angle) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the steering vector w.r.t. azimuth and elevation."""
    az, el = angle
    a = steering_vector(array, angle)
    dk_daz = np.array([-np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), 0.0])
    dk_del = np.array([-np.sin(el) * np.cos(az), -np.sin(el) * np.sin(az), np.cos(el)])
    p = array.element_positions
    return 2j * np.pi * (p @ dk_daz) * a, 2j * np.pi * (p @ dk_del) * a


def delay_response(grid: GridConfig, delay: float) -> np.ndarray:
    n = np.arange(grid.n_subcarriers)
    return np.exp(-2j * np.pi * n * grid.subcarrier_spacing * delay)


def doppler_response(grid: GridConfig, doppler: float) -> np.ndarray:
    k = np.arange(grid.n_symbols)
    return np.exp(2j * np.pi * k * grid.symbol_duration * doppler)


def path_response(geo: GeoParams, grid: GridConfig, rx_array: ArrayGeometry,
                  tx_array: ArrayGeometry) -> np.ndarray:
    """Unit-gain response of one path, shape (N, K, N_rx, N_tx)."""
    return np.einsum(
        "n,k,r,t->nkrt",
        delay_response(grid, geo.delay),
        doppler_response(grid, geo.doppler),
        steering_vector(rx_array, geo.aoa),
        steering_vector(tx_array, geo.aod),
    )


def path_response_derivatives(geo: GeoParams, grid: GridConfig, rx_array: ArrayGeometry,
                              tx_array: ArrayGeometry) -> dict[str, np.ndarray]:
    """Analytic derivatives of :func:`path_response` per geometric parameter."""
    ad = delay_response(grid, geo.delay)
    aD = doppler_response(grid, geo.doppler)
    ar = steering_vector(rx_array, geo.aoa)
    at = steering_vector(tx_array, geo.aod)
    n = np.arange(grid.n_subcarriers)
    k = np.arange(grid.n_symbols)
    d_ad = -2j * np.pi * n * grid.subcarrier_spacing * ad
    d_aD = 2j * np.pi * k * grid.symbol_duration * aD
    dr_az, dr_el = steering_derivatives(rx_array, geo.aoa)
    dt_az, dt_el = steering_derivatives(tx_array, geo.aod)

    def kron4(a, b, c, d):
        return np.einsum("n,k,r,t->nkrt", a, b, c, d)

    return {
        "aoa_az": kron4(ad, aD, dr_az, at),
        "aoa_el": kron4(ad, aD, dr_el, at),
        "aod_az": kron4(ad, aD, ar, dt_az),
        "aod_el": kron4(ad, aD, ar, dt_el),
        "delay": kron4(d_ad, aD, ar, at),
        "doppler": kron4(ad, d_aD, ar, at),
    }


def channel_tensor(paths: Iterable[PathParams], grid: GridConfig, rx_array: ArrayGeometry,
                   tx_array: ArrayGeometry) -> np.ndarray:
    """All H_{n,k} stacked, shape (N, K, N_rx, N_tx)."""
    shape = (grid.n_subcarriers, grid.n_symbols, rx_array.n_elements, tx_array.n_elements)
    H = np.zeros(shape, dtype=complex)
    for p in paths:
        H += p.gain * path_response(p.geo, grid, rx_array, tx_array)
    return H


def channel_matrix(paths: Iterable[PathParams], grid: GridConfig, rx_array: ArrayGeometry,
                   tx_array: ArrayGeometry, n: int, k: int) -> np.ndarray:
    if not (0 <= n < grid.n_subcarriers and 0 <= k < grid.n_symbols):
        raise IndexError(f"(n, k) = ({n}, {k}) outside the {grid.n_subcarriers}x"
                         f"{grid.n_symbols} grid")
    H = np.zeros((rx_array.n_elements, tx_array.n_elements), dtype=complex)
    f = grid.subcarrier_spacing
    for p in paths:
        H += (
            p.gain
            * np.outer(steering_vector(rx_array, p.geo.aoa), steering_vector(tx_array, p.geo.aod))
            * np.exp(-2j * np.pi * n * f * p.geo.delay)
            * np.exp(2j * np.pi * k * grid.symbol_duration * p.geo.doppler)
        )
    return H


def los_gain(distance: float, carrier: float, g_tx: float = 1.0, g_rx: float = 1.0) -> float:
    """Free-space |alpha|^2 of a LoS path."""
    if not distance > 0:
        raise ValueError("distance must be positive")
    lam = wavelength(carrier)
    return lam**2 * g_rx * g_tx / ((4 * np.pi) ** 2 * distance**2)


def radar_gain(distance: float, carrier: float, rcs: float, g_tx: float = 1.0,
               g_rx: float = 1.0) -> float:
    """Two-way monostatic |alpha|^2 for an object at ``distance`` from the sensor."""
    if not distance > 0:
        raise ValueError("range must be positive")
    if not rcs > 0:
        raise ValueError("rcs must be positive")
    lam = wavelength(carrier)
    return lam**2 * rcs * g_rx * g_tx / ((4 * np.pi) ** 3 * distance**4)


def split_channel(paths: Sequence[PathParams], mode: str = "localization"):
    """Partition paths into (LoS, NLoS) or (object, clutter) by tag."""
    if mode == "localization":
        first = [p for p in paths if p.tag == "los"]
        rest = [p for p in paths if p.tag != "los"]
    elif mode == "sensing":
        first = [p for p in paths if p.tag == "object"]
        rest = [p for p in paths if p.tag != "object"]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return first, rest


def make_clutter(seed, count: int, power: float, grid: GridConfig) -> list[PathParams]:
    """Static clutter paths with total expected power ``power``.

    Delays are uniform on [0, 1/df), azimuths on (-pi, pi], elevations on
    [-pi/2, pi/2], gains circular complex Gaussian.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    delays = rng.uniform(0.0, 1.0 / grid.subcarrier_spacing, count)
    az = rng.uniform(-np.pi, np.pi, (count, 2))
    el = rng.uniform(-np.pi / 2, np.pi / 2, (count, 2))
    scale = np.sqrt(power / count / 2)
    gains = scale * (rng.standard_normal(count) + 1j * rng.standard_normal(count))
    return [
        PathParams(complex(gains[i]),
                   GeoParams(aoa=(float(az[i, 0]), float(el[i, 0])),
                             aod=(float(az[i, 1]), float(el[i, 1])),
                             delay=float(delays[i]), doppler=0.0),
                   "clutter")
        for i in range(count)
    ]


def path_length(delay: float) -> float:
    return SPEED_OF_LIGHT * delay
