"""Node states and the state -> geometric channel parameter mappings.

Angle convention (right-handed, local node frame): boresight is the +x axis,
azimuth is measured from +x toward +y and elevation from the x-y plane toward
+z. A unit direction ``u`` maps to ``az = atan2(u_y, u_x)``,
``el = asin(u_z)``. The AoD points from the transmitter toward the path's
next interaction point; the AoA points from the receiver back toward where
the wave came from. Both are expressed in the respective node's frame, i.e.
the global direction rotated by the node orientation transpose.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

SPEED_OF_LIGHT = 299_792_458.0

#: Order of the geometric parameters in vector form.
PARAM_NAMES = ("aoa_az", "aoa_el", "aod_az", "aod_el", "delay", "doppler")

LOS_STATE_NAMES = ("x", "y", "z", "B", "o1", "o2", "o3", "vx", "vy", "vz")
MONOSTATIC_STATE_NAMES = ("x", "y", "z", "vx", "vy", "vz")
BISTATIC_STATE_NAMES = ("x", "y", "z", "B", "vx", "vy", "vz")


class GeometryError(ValueError):
    """Raised for degenerate geometry such as coincident nodes."""


def wavelength(carrier: float) -> float:
    return SPEED_OF_LIGHT / carrier


def wrap_angle(angle):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2 * np.pi) - np.pi
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2 * np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True, eq=False)
class Rotation:
    """Orientation of a node frame, stored as a 3x3 rotation matrix.

    The columns of ``matrix`` are the local axes expressed in the global
    frame, so ``matrix.T @ d`` maps a global direction into the local frame.
    """

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        if not np.allclose(m.T @ m, np.eye(3), atol=1e-9) or not np.isclose(
            np.linalg.det(m), 1.0, atol=1e-9
        ):
            raise ValueError("matrix is not a proper rotation")
        # re-orthonormalize so the invariants hold to machine precision
        u, _, vt = np.linalg.svd(m)
        m = u @ vt
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def from_quaternion(cls, q) -> "Rotation":
        """Quaternion in scalar-last order ``(x, y, z, w)``."""
        q = np.asarray(q, dtype=float)
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ValueError("zero quaternion")
        return cls(_ScipyRotation.from_quat(q / norm).as_matrix())

    @classmethod
    def from_rotvec(cls, rotvec) -> "Rotation":
        return cls(_ScipyRotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix())

    @classmethod
    def from_euler(cls, yaw: float, pitch: float = 0.0, roll: float = 0.0) -> "Rotation":
        """Intrinsic z-y'-x'' (yaw, pitch, roll) angles in radians."""
        return cls(_ScipyRotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix())

    @property
    def quaternion(self) -> np.ndarray:
        q = _ScipyRotation.from_matrix(self.matrix).as_quat()
        return q / np.linalg.norm(q)

    def perturbed(self, delta) -> "Rotation":
        """Apply a local (body-frame) rotation-vector increment."""
        return Rotation(self.matrix @ _ScipyRotation.from_rotvec(delta).as_matrix())

    def to_local(self, direction) -> np.ndarray:
        return self.matrix.T @ np.asarray(direction, dtype=float)


@dataclass(frozen=True, eq=False)
class AnchorState:
    id: int
    position: np.ndarray
    orientation: Rotation = field(default_factory=Rotation.identity)

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))


@dataclass(frozen=True, eq=False)
class UEState:
    position: np.ndarray
    clock_bias: float = 0.0
    orientation: Rotation = field(default_factory=Rotation.identity)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "velocity", _vec3(self.velocity))
        object.__setattr__(self, "clock_bias", float(self.clock_bias))

    def replace(self, **changes) -> "UEState":
        kw = dict(
            position=self.position,
            clock_bias=self.clock_bias,
            orientation=self.orientation,
            velocity=self.velocity,
        )
        kw.update(changes)
        return UEState(**kw)


@dataclass(frozen=True, eq=False)
class ObjectState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rcs: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "velocity", _vec3(self.velocity))
        if not self.rcs > 0:
            raise ValueError("rcs must be positive")

    def replace(self, **changes) -> "ObjectState":
        kw = dict(position=self.position, velocity=self.velocity, rcs=self.rcs)
        kw.update(changes)
        return ObjectState(**kw)


@dataclass(frozen=True)
class GeoParams:
    """Geometric parameters of one path; angles as (azimuth, elevation)."""

    aoa: tuple[float, float] = (0.0, 0.0)
    aod: tuple[float, float] = (0.0, 0.0)
    delay: float = 0.0
    doppler: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.array([*self.aoa, *self.aod, self.delay, self.doppler], dtype=float)

    @classmethod
    def from_vector(cls, v) -> "GeoParams":
        v = [float(x) for x in v]
        return cls(
            aoa=(wrap_angle(v[0]), v[1]),
            aod=(wrap_angle(v[2]), v[3]),
            delay=v[4],
            doppler=v[5],
        )

    def get(self, name: str) -> float:
        return float(self.as_vector()[PARAM_NAMES.index(name)])

    def replace(self, **values) -> "GeoParams":
        v = self.as_vector()
        for name, value in values.items():
            v[PARAM_NAMES.index(name)] = value
        return GeoParams.from_vector(v)


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


def direction_angles(u) -> tuple[float, float]:
    """(azimuth, elevation) of a direction given in a local frame."""
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    az = wrap_angle(np.arctan2(u[1], u[0]))
    el = float(np.arcsin(np.clip(u[2], -1.0, 1.0)))
    return az, el


def direction_vector(az: float, el: float) -> np.ndarray:
    """Unit vector for (azimuth, elevation); inverse of :func:`direction_angles`."""
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def _unit(a, b) -> tuple[np.ndarray, float]:
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    dist = float(np.linalg.norm(d))
    if dist < 1e-12:
        raise GeometryError("coincident positions")
    return d / dist, dist


def los_params(anchor: AnchorState, ue: UEState, link: str = "downlink",
               carrier: float = 28e9) -> GeoParams:
    """LoS parameters between an anchor and the UE.

    In downlink the anchor transmits: the AoD lives in the anchor frame and
    the AoA in the UE frame. Uplink swaps the roles.
    """
    u_to_ue, dist = _unit(anchor.position, ue.position)
    anchor_dir = direction_angles(anchor.orientation.to_local(u_to_ue))
    ue_dir = direction_angles(ue.orientation.to_local(-u_to_ue))
    delay = dist / SPEED_OF_LIGHT + ue.clock_bias
    # one-way Doppler, positive when the UE closes on the anchor
    doppler = float(ue.velocity @ (-u_to_ue)) / wavelength(carrier)
    if link == "downlink":
        return GeoParams(aoa=ue_dir, aod=anchor_dir, delay=delay, doppler=doppler)
    if link == "uplink":
        return GeoParams(aoa=anchor_dir, aod=ue_dir, delay=delay, doppler=doppler)
    raise ValueError(f"unknown link {link!r}")


def monostatic_params(sensor: AnchorState, obj: ObjectState, carrier: float) -> GeoParams:
    u_to_obj, dist = _unit(sensor.position, obj.position)
    direction = direction_angles(sensor.orientation.to_local(u_to_obj))
    doppler = 2.0 * float(obj.velocity @ (-u_to_obj)) / wavelength(carrier)
    return GeoParams(aoa=direction, aod=direction, delay=2.0 * dist / SPEED_OF_LIGHT,
                     doppler=doppler)


def bistatic_params(tx: AnchorState, rx: AnchorState, obj: ObjectState,
                    clock_bias: float = 0.0, carrier: float = 28e9) -> GeoParams:
    """Bistatic object parameters. The CFO is taken as zero."""
    u_tx_obj, d_tx = _unit(tx.position, obj.position)
    u_rx_obj, d_rx = _unit(rx.position, obj.position)
    aod = direction_angles(tx.orientation.to_local(u_tx_obj))
    aoa = direction_angles(rx.orientation.to_local(u_rx_obj))
    delay = (d_tx + d_rx) / SPEED_OF_LIGHT + clock_bias
    doppler = float(obj.velocity @ (-u_tx_obj - u_rx_obj)) / wavelength(carrier)
    return GeoParams(aoa=aoa, aod=aod, delay=delay, doppler=doppler)


@dataclass(frozen=True)
class StateJacobian:
    """d(GeoParams)/d(state), with rows in ``PARAM_NAMES`` order."""

    matrix: np.ndarray
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    analytic: tuple[str, ...]
    numeric: tuple[str, ...]
    singular: bool = False

    def select(self, rows=None, cols=None) -> np.ndarray:
        ri = [self.rows.index(r) for r in (rows or self.rows)]
        ci = [self.cols.index(c) for c in (cols or self.cols)]
        return self.matrix[np.ix_(ri, ci)]


def _los_apply(ue: UEState, name: str, h: float) -> UEState:
    if name in "xyz":
        p = ue.position.copy()
        p["xyz".index(name)] += h
        return ue.replace(position=p)
    if name == "B":
        return ue.replace(clock_bias=ue.clock_bias + h)
    if name.startswith("o"):
        d = np.zeros(3)
        d[int(name[1]) - 1] = h
        return ue.replace(orientation=ue.orientation.perturbed(d))
    v = ue.velocity.copy()
    v["xyz".index(name[1])] += h
    return ue.replace(velocity=v)


def _obj_apply(obj: ObjectState, name: str, h: float) -> ObjectState:
    if name in "xyz":
        p = obj.position.copy()
        p["xyz".index(name)] += h
        return obj.replace(position=p)
    v = obj.velocity.copy()
    v["xyz".index(name[1])] += h
    return obj.replace(velocity=v)


def _state_value(state, name: str) -> float:
    if name in "xyz":
        return float(state.position["xyz".index(name)])
    if name == "B":
        return float(getattr(state, "clock_bias", 0.0))
    if name.startswith("o"):
        return 0.0
    return float(state.velocity["xyz".index(name[1])])


def state_jacobian(mapping: str, state, carrier: float, *, anchor: AnchorState | None = None,
                   tx: AnchorState | None = None, rx: AnchorState | None = None,
                   link: str = "downlink", clock_bias: float = 0.0,
                   rel_step: float = 1e-6, abs_step: float = 1e-6) -> StateJacobian:
    """Jacobian of the geometric parameters with respect to the state.

    ``mapping`` is ``"los"`` (state: UEState, needs ``anchor``),
    ``"monostatic"`` (state: ObjectState, ``anchor`` is the sensor) or
    ``"bistatic"`` (state: ObjectState, needs ``tx``/``rx``; the clock bias
    column refers to ``clock_bias``).

    The delay row is analytic; angle and Doppler rows use central
    differences with step ``max(rel_step * |s_j|, abs_step)``. Position
    steps are further floored at ``6e-6`` times the shortest node distance
    (about eps^(1/3) of the geometric scale), which keeps round-off small
    for weak entries such as the Doppler gradient. Orientation columns are
    local rotation-vector increments.
    """
    if mapping == "los":
        cols = LOS_STATE_NAMES

        def fwd(name, h):
            return los_params(anchor, _los_apply(state, name, h), link, carrier).as_vector()

        base_pos, ref_pos, factor = state.position, anchor.position, 1.0
    elif mapping == "monostatic":
        cols = MONOSTATIC_STATE_NAMES

        def fwd(name, h):
            return monostatic_params(anchor, _obj_apply(state, name, h), carrier).as_vector()

        base_pos, ref_pos, factor = state.position, anchor.position, 2.0
    elif mapping == "bistatic":
        cols = BISTATIC_STATE_NAMES

        def fwd(name, h):
            if name == "B":
                return bistatic_params(tx, rx, state, clock_bias + h, carrier).as_vector()
            return bistatic_params(tx, rx, _obj_apply(state, name, h), clock_bias,
                                   carrier).as_vector()

        base_pos, ref_pos, factor = state.position, None, 1.0
    else:
        raise ValueError(f"unknown mapping {mapping!r}")
    refs = [ref_pos] if ref_pos is not None else [tx.position, rx.position]
    length = min(float(np.linalg.norm(base_pos - r)) for r in refs)

    jac = np.zeros((len(PARAM_NAMES), len(cols)))
    try:
        center = fwd(cols[0], 0.0)
    except GeometryError:
        warnings.warn("degenerate geometry: Jacobian undefined", RuntimeWarning, stacklevel=2)
        return StateJacobian(np.full_like(jac, np.nan), PARAM_NAMES, tuple(cols),
                             (), (), singular=True)

    # delay row, analytic
    if mapping == "bistatic":
        u1, _ = _unit(tx.position, base_pos)
        u2, _ = _unit(rx.position, base_pos)
        grad = (u1 + u2) / SPEED_OF_LIGHT
    else:
        u, _ = _unit(ref_pos, base_pos)
        grad = factor * u / SPEED_OF_LIGHT
    d_row = PARAM_NAMES.index("delay")
    for j, name in enumerate(cols):
        if name in "xyz":
            jac[d_row, j] = grad["xyz".index(name)]
        elif name == "B":
            jac[d_row, j] = 1.0

    other_rows = [i for i, n in enumerate(PARAM_NAMES) if n != "delay"]
    angle_rows = [PARAM_NAMES.index("aoa_az"), PARAM_NAMES.index("aod_az")]
    for j, name in enumerate(cols):
        h = max(rel_step * abs(_state_value(state, name)), abs_step)
        if name in "xyz":
            h = max(h, 6e-6 * length)
        diff = fwd(name, h) - fwd(name, -h)
        for i in angle_rows:
            diff[i] = wrap_angle(diff[i])
        jac[other_rows, j] = diff[other_rows] / (2 * h)

    elevations = center[[PARAM_NAMES.index("aoa_el"), PARAM_NAMES.index("aod_el")]]
    singular = bool(np.any(np.abs(np.cos(elevations)) < 1e-6) or not np.all(np.isfinite(jac)))
    if singular:
        warnings.warn("near-degenerate geometry: azimuth ill-defined at the pole",
                      RuntimeWarning, stacklevel=2)
    numeric = tuple(n for n in PARAM_NAMES if n != "delay")
    return StateJacobian(jac, PARAM_NAMES, tuple(cols), ("delay",), numeric, singular)


def numeric_jacobian(fn: Callable[[np.ndarray], np.ndarray], x0, steps) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    x0 = np.asarray(x0, dtype=float)
    f0 = np.asarray(fn(x0))
    out = np.zeros(f0.shape + (x0.size,), dtype=f0.dtype)
    for j in range(x0.size):
        e = np.zeros_like(x0)
        e[j] = steps[j]
        out[..., j] = (np.asarray(fn(x0 + e)) - np.asarray(fn(x0 - e))) / (2 * steps[j])
    return out
