import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radloc.geometry import (LOS_STATE_NAMES, MONOSTATIC_STATE_NAMES, PARAM_NAMES,
                             SPEED_OF_LIGHT as C, AnchorState, GeometryError, ObjectState,
                             Rotation, UEState, bistatic_params, los_params, monostatic_params,
                             state_jacobian, wavelength, wrap_angle)

coord = st.floats(-80, 80, allow_nan=False)
angle = st.floats(-np.pi, np.pi, allow_nan=False)
point = st.tuples(coord, coord, st.floats(-20, 20, allow_nan=False)).map(np.array)
rotvec = st.tuples(angle, angle, angle).map(lambda v: 0.9 * np.array(v) / np.pi)


def _far(a, b, d=1.0):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) > d


# -- Rotation ---------------------------------------------------------------

@given(rotvec)
def test_rotation_invariants(rv):
    R = Rotation.from_rotvec(rv).matrix
    assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-12
    assert abs(np.linalg.det(R) - 1.0) <= 1e-12


@given(rotvec)
def test_quaternion_round_trip(rv):
    r = Rotation.from_rotvec(rv)
    q = r.quaternion
    assert abs(q @ q - 1.0) <= 1e-12
    q2 = Rotation.from_quaternion(q).quaternion
    assert min(np.max(np.abs(q2 - q)), np.max(np.abs(q2 + q))) <= 1e-12


def test_rotation_rejects_reflection():
    with pytest.raises(ValueError):
        Rotation(np.diag([1.0, 1.0, -1.0]))


# -- los_params -------------------------------------------------------------

def test_los_delay_pythagoras():
    g = los_params(AnchorState(0, [0, 0, 0]), UEState([3, 4, 0]))
    assert g.delay == pytest.approx(5 / C, rel=1e-15)
    assert g.delay == pytest.approx(16.678e-9, rel=1e-4)


def test_los_boresight_aod_zero():
    g = los_params(AnchorState(0, [0, 0, 0]), UEState([10, 0, 0]))
    assert g.aod == (0.0, 0.0)


def test_los_doppler_one_way():
    ue = UEState([10, 0, 0], velocity=[-5, 0, 0])
    g = los_params(AnchorState(0, [0, 0, 0]), ue, carrier=30e9)
    assert g.doppler == pytest.approx(5 / wavelength(30e9), rel=1e-14)
    assert g.doppler == pytest.approx(500.0, rel=1e-3)


def test_los_clock_bias_adds():
    a, ue = AnchorState(0, [1, 2, 3]), UEState([10, -4, 2])
    d0 = los_params(a, ue).delay
    assert los_params(a, ue.replace(clock_bias=1e-6)).delay == pytest.approx(d0 + 1e-6, abs=1e-21)


def test_los_coincident_raises():
    with pytest.raises(GeometryError):
        los_params(AnchorState(0, [1, 1, 1]), UEState([1, 1, 1]))


@given(point, point, rotvec, rotvec)
def test_downlink_aod_equals_uplink_aoa(pa, pu, ra, ru):
    if not _far(pa, pu):
        return
    a = AnchorState(0, pa, Rotation.from_rotvec(ra))
    ue = UEState(pu, orientation=Rotation.from_rotvec(ru))
    dl, ul = los_params(a, ue, "downlink"), los_params(a, ue, "uplink")
    assert np.allclose(dl.aod, ul.aoa, atol=1e-12)
    assert np.allclose(dl.aoa, ul.aod, atol=1e-12)


@given(point, point, rotvec, rotvec)
def test_ue_rotation_changes_only_dl_aoa(pa, pu, r1, r2):
    if not _far(pa, pu) or np.allclose(r1, r2):
        return
    a = AnchorState(0, pa)
    ue1 = UEState(pu, orientation=Rotation.from_rotvec(r1), velocity=[1.0, -2.0, 0.5])
    ue2 = ue1.replace(orientation=Rotation.from_rotvec(r2))
    g1, g2 = los_params(a, ue1), los_params(a, ue2)
    assert np.allclose(g1.aod, g2.aod, atol=1e-12)
    assert g1.delay == g2.delay and g1.doppler == g2.doppler


def test_ue_rotation_moves_dl_aoa():
    a = AnchorState(0, [0, 0, 0])
    ue = UEState([10, 5, 1])
    turned = ue.replace(orientation=Rotation.from_euler(0.3))
    d = np.subtract(los_params(a, turned).aoa, los_params(a, ue).aoa)
    assert abs(wrap_angle(d[0]) + 0.3) < 1e-12


# -- monostatic / bistatic --------------------------------------------------

def test_monostatic_examples():
    s = AnchorState(0, [0, 0, 0])
    g = monostatic_params(s, ObjectState([75, 0, 0]), 28e9)
    assert g.delay == pytest.approx(150 / C, rel=1e-15)
    assert g.delay == pytest.approx(500.35e-9, rel=1e-5)
    assert g.aoa == g.aod
    g = monostatic_params(s, ObjectState([10, 0, 0], velocity=[-5, 0, 0]), 30e9)
    assert g.doppler == pytest.approx(2 * 5 / wavelength(30e9), rel=1e-14)
    assert g.doppler == pytest.approx(1000.0, rel=1e-3)
    assert monostatic_params(s, ObjectState([3, 4, 5]), 30e9).doppler == 0.0


@given(point, point, rotvec, st.tuples(coord, coord, coord).map(np.array))
def test_monostatic_rigid_translation(ps, po, rv, shift):
    if not _far(ps, po):
        return
    rot = Rotation.from_rotvec(rv)
    obj = ObjectState(po, velocity=[3.0, -1.0, 2.0])
    g1 = monostatic_params(AnchorState(0, ps, rot), obj, 28e9)
    g2 = monostatic_params(AnchorState(0, ps + shift, rot), obj.replace(position=po + shift), 28e9)
    assert np.allclose(g1.as_vector(), g2.as_vector(), rtol=1e-9, atol=1e-12)


def test_bistatic_examples():
    tx, rx = AnchorState(0, [0, 0, 0]), AnchorState(1, [100, 0, 0])
    obj = ObjectState([50, 0, 0])
    assert bistatic_params(tx, rx, obj).delay == pytest.approx(100 / C, rel=1e-15)
    assert bistatic_params(tx, rx, obj, 1e-6).delay == pytest.approx(100 / C + 1e-6, rel=1e-15)
    rx2 = AnchorState(1, [0, 40, 0])
    g = bistatic_params(tx, rx2, ObjectState([30, 0, 0]))
    assert g.delay == pytest.approx(80 / C, rel=1e-15)


def test_bistatic_coincident_raises():
    with pytest.raises(GeometryError):
        bistatic_params(AnchorState(0, [0, 0, 0]), AnchorState(1, [5, 0, 0]),
                        ObjectState([5, 0, 0]))


# -- Jacobians --------------------------------------------------------------

def _fd_los(anchor, ue, name, h, carrier, link="downlink"):
    def at(step):
        if name in "xyz":
            p = ue.position.copy()
            p["xyz".index(name)] += step
            u = ue.replace(position=p)
        elif name == "B":
            u = ue.replace(clock_bias=ue.clock_bias + step)
        elif name.startswith("o"):
            d = np.zeros(3)
            d[int(name[1]) - 1] = step
            u = ue.replace(orientation=ue.orientation.perturbed(d))
        else:
            v = ue.velocity.copy()
            v["xyz".index(name[1])] += step
            u = ue.replace(velocity=v)
        return los_params(anchor, u, link, carrier).as_vector()
    diff = at(h) - at(-h)
    for i in (0, 2):
        diff[i] = wrap_angle(diff[i])
    return diff / (2 * h)


def test_jacobian_bias_and_delay_gradient():
    a, ue = AnchorState(0, [1, 2, 3]), UEState([20, -5, 4], 1e-7)
    jac = state_jacobian("los", ue, 28e9, anchor=a)
    assert jac.select(["delay"], ["B"])[0, 0] == 1.0
    d = ue.position - a.position
    expected = d / (C * np.linalg.norm(d))
    assert np.allclose(jac.select(["delay"], ["x", "y", "z"])[0], expected, rtol=1e-12)
    fd = np.array([_fd_los(a, ue, n, 1e-3, 28e9)[4] for n in "xyz"])
    assert np.allclose(fd, expected, rtol=1e-6)
    assert jac.analytic == ("delay",) and "aoa_az" in jac.numeric


def test_monostatic_delay_gradient():
    s, obj = AnchorState(0, [0, 0, 0]), ObjectState([12, -7, 3])
    jac = state_jacobian("monostatic", obj, 28e9, anchor=s)
    expected = 2 * obj.position / (C * np.linalg.norm(obj.position))
    assert np.allclose(jac.select(["delay"], ["x", "y", "z"])[0], expected, rtol=1e-12)
    h = 1e-3
    fd = [(monostatic_params(s, obj.replace(position=obj.position + h * e), 28e9).delay
           - monostatic_params(s, obj.replace(position=obj.position - h * e), 28e9).delay) / (2 * h)
          for e in np.eye(3)]
    assert np.allclose(fd, expected, rtol=1e-6)
    assert jac.cols == MONOSTATIC_STATE_NAMES


@given(point, point, rotvec, rotvec, st.tuples(coord, coord, coord).map(lambda v: np.array(v) / 8))
def test_jacobian_columns_match_finite_differences(pa, pu, ra, ru, vel):
    if not _far(pa, pu, 5.0):
        return
    a = AnchorState(0, pa, Rotation.from_rotvec(ra))
    ue = UEState(pu, 3e-8, Rotation.from_rotvec(ru), vel)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        try:
            jac = state_jacobian("los", ue, 28e9, anchor=a)
        except RuntimeWarning:
            return  # near a pole of the angle parametrization
    g = los_params(a, ue)
    if min(np.cos(g.aoa[1]), np.cos(g.aod[1])) < 0.05:
        return
    fd = np.column_stack([_fd_los(a, ue, name, {"B": 1e-12, "o1": 1e-5, "o2": 1e-5, "o3": 1e-5}.get(name, 1e-3), 28e9)
                          for name in LOS_STATE_NAMES])
    # entries that vanish analytically come out of differencing as round-off,
    # so each row gets an absolute floor well below its own magnitude
    floor = 1e-9 * np.max(np.abs(fd), axis=1, keepdims=True)
    err = np.abs(jac.matrix - fd)
    assert np.all(err <= 1e-5 * np.abs(fd) + floor), np.argwhere(err > 1e-5 * np.abs(fd) + floor)


def test_jacobian_degenerate_geometry_is_flagged():
    a, ue = AnchorState(0, [0, 0, 0]), UEState([0, 0, 10])
    with pytest.warns(RuntimeWarning):
        jac = state_jacobian("los", ue, 28e9, anchor=a)
    assert jac.singular
    with pytest.warns(RuntimeWarning):
        jac = state_jacobian("los", UEState([0, 0, 0]), 28e9, anchor=a)
    assert jac.singular and np.all(np.isnan(jac.matrix))


def test_wrap_angle_range():
    x = wrap_angle(np.array([np.pi, -np.pi, 3 * np.pi, 0.5]))
    assert np.allclose(x, [np.pi, np.pi, np.pi, 0.5])
