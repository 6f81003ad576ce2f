import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radloc.channel import (ArrayGeometry, GridConfig, PathParams, channel_matrix,
                            channel_tensor, los_gain, make_clutter, radar_gain, split_channel,
                            steering_vector)
from radloc.geometry import (SPEED_OF_LIGHT as C, AnchorState, GeoParams, UEState, los_params,
                             wavelength)

angle = st.floats(-np.pi, np.pi, allow_nan=False)
elev = st.floats(-np.pi / 2, np.pi / 2, allow_nan=False)


def _path(gain, delay=0.0, doppler=0.0, aoa=(0.0, 0.0), aod=(0.0, 0.0), tag="los"):
    return PathParams(gain, GeoParams(aoa, aod, delay, doppler), tag)


# -- steering vectors -------------------------------------------------------

def test_steering_boresight_all_ones():
    # element displacements along y and z; boresight wave-vector is +x
    for arr in (ArrayGeometry.ula(8), ArrayGeometry.upa(4, 3)):
        assert np.allclose(steering_vector(arr, (0.0, 0.0)), 1.0, atol=0)


def test_steering_half_wavelength_endfire():
    # phases (0, pi)
    a = steering_vector(ArrayGeometry.ula(2), (np.pi / 2, 0.0))
    assert np.allclose(a, [1.0, -1.0], atol=1e-12)


@given(angle, elev)
def test_steering_norm(az, el):
    a = steering_vector(ArrayGeometry.ula(8), (az, el))
    assert np.sum(np.abs(a) ** 2) == pytest.approx(8.0, rel=1e-12)
    assert np.allclose(np.abs(a), 1.0)


# -- channel synthesis ------------------------------------------------------

def test_single_path_no_phase():
    g = GridConfig(16, 120e3, 4, 1e-5)
    s = ArrayGeometry.single()
    H = channel_tensor([_path(0.3 - 0.2j)], g, s, s)
    assert np.all(H == 0.3 - 0.2j)
    assert channel_matrix([_path(0.3 - 0.2j)], g, s, s, 15, 3)[0, 0] == 0.3 - 0.2j


def test_delay_ramp_phase():
    N, df = 32, 120e3
    g = GridConfig(N, df)
    s = ArrayGeometry.single()
    H = channel_tensor([_path(1.0, delay=1.0 / (N * df))], g, s, s)[:, 0, 0, 0]
    expected = -2 * np.pi * (N - 1) / N
    assert np.angle(H[-1]) == pytest.approx(np.angle(np.exp(1j * expected)), abs=1e-12)
    assert np.allclose(np.unwrap(np.angle(H)), -2 * np.pi * np.arange(N) / N, atol=1e-12)


def test_aliasing_identity():
    g = GridConfig(24, 120e3)
    s = ArrayGeometry.single()
    t = 123e-9
    two = channel_tensor([_path(0.5, delay=t), _path(0.5, delay=t + 1 / 120e3)], g, s, s)
    one = channel_tensor([_path(1.0, delay=t)], g, s, s)
    assert np.allclose(two, one, atol=1e-12)


def test_channel_matrix_index_check():
    g = GridConfig(4, 120e3, 2)
    s = ArrayGeometry.single()
    with pytest.raises(IndexError):
        channel_matrix([], g, s, s, 4, 0)
    with pytest.raises(IndexError):
        channel_matrix([], g, s, s, 0, -1)


def test_tx_steering_is_transposed_not_conjugated():
    g = GridConfig(1, 120e3)
    rx, tx = ArrayGeometry.ula(3), ArrayGeometry.ula(4)
    p = _path(1.0, aoa=(0.4, 0.1), aod=(-0.7, 0.2))
    H = channel_matrix([p], g, rx, tx, 0, 0)
    expected = np.outer(steering_vector(rx, (0.4, 0.1)), steering_vector(tx, (-0.7, 0.2)))
    assert np.allclose(H, expected, atol=1e-14)


def _direct_sum(paths, g, rx, tx):
    """Independent loop-based evaluation of the channel at every (n, k)."""
    out = np.zeros((g.n_subcarriers, g.n_symbols, rx.n_elements, tx.n_elements), complex)
    for n in range(g.n_subcarriers):
        for k in range(g.n_symbols):
            for p in paths:
                for r in range(rx.n_elements):
                    for t in range(tx.n_elements):
                        kr = np.array([np.cos(p.geo.aoa[1]) * np.cos(p.geo.aoa[0]),
                                       np.cos(p.geo.aoa[1]) * np.sin(p.geo.aoa[0]),
                                       np.sin(p.geo.aoa[1])])
                        kt = np.array([np.cos(p.geo.aod[1]) * np.cos(p.geo.aod[0]),
                                       np.cos(p.geo.aod[1]) * np.sin(p.geo.aod[0]),
                                       np.sin(p.geo.aod[1])])
                        ph = (2 * np.pi * (rx.element_positions[r] @ kr
                                           + tx.element_positions[t] @ kt)
                              - 2 * np.pi * n * g.subcarrier_spacing * p.geo.delay
                              + 2 * np.pi * k * g.symbol_duration * p.geo.doppler)
                        out[n, k, r, t] += p.gain * np.exp(1j * ph)
    return out


def test_geometry_paths_match_direct_sum():
    g = GridConfig(6, 120e3, 3, 1e-5, 28e9)
    rx, tx = ArrayGeometry.ula(3), ArrayGeometry.upa(2, 2)
    ue = UEState([30, 12, -3], 2e-8, velocity=[4, -1, 0])
    paths = []
    for i, pos in enumerate([[0, 0, 5], [60, -20, 8]]):
        a = AnchorState(i, pos)
        d = np.linalg.norm(ue.position - a.position)
        paths.append(PathParams(np.sqrt(los_gain(d, g.carrier)) * np.exp(0.3j * i),
                                los_params(a, ue, "downlink", g.carrier), "los"))
    H = channel_tensor(paths, g, rx, tx)
    ref = _direct_sum(paths, g, rx, tx)
    assert np.max(np.abs(H - ref)) <= 1e-12 * np.max(np.abs(ref))
    for n in range(g.n_subcarriers):
        for k in range(g.n_symbols):
            assert np.allclose(channel_matrix(paths, g, rx, tx, n, k), ref[n, k],
                               rtol=0, atol=1e-12 * np.max(np.abs(ref)))


@given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_linear_in_gains(c):
    g = GridConfig(8, 120e3, 2)
    s = ArrayGeometry.ula(2)
    paths = [_path(1 + 1j, 1e-7, 30.0, (0.2, 0)), _path(-0.5, 3e-7, -10.0, (-0.4, 0))]
    scaled = [PathParams(c * p.gain, p.geo, p.tag) for p in paths]
    assert np.allclose(channel_tensor(scaled, g, s, s), c * channel_tensor(paths, g, s, s),
                       atol=1e-12)


@given(st.floats(0, 1e-5), st.floats(-5e3, 5e3))
def test_magnitude_invariant_to_delay_and_doppler(tau, nu):
    g = GridConfig(8, 120e3, 4, 1e-5)
    s = ArrayGeometry.single()
    H = channel_tensor([_path(0.7j, tau, nu)], g, s, s)
    assert np.allclose(np.abs(H), 0.7, atol=1e-12)


# -- gain laws ----------------------------------------------------------------

def test_los_gain_examples():
    lam = wavelength(30e9)
    assert los_gain(1.0, 30e9) == pytest.approx(lam**2 / (4 * np.pi) ** 2, rel=1e-15)
    assert 10 * np.log10(los_gain(1.0, 30e9)) == pytest.approx(-62.0, abs=0.05)
    assert los_gain(2.0, 30e9) == pytest.approx(los_gain(1.0, 30e9) / 4, rel=1e-14)
    assert los_gain(5.0, 120e9) == pytest.approx(los_gain(5.0, 30e9) / 16, rel=1e-14)
    with pytest.raises(ValueError):
        los_gain(0.0, 30e9)


def test_radar_gain_examples():
    lam = wavelength(30e9)
    assert radar_gain(20, 30e9, 100.0) / radar_gain(20, 30e9, 1.0) == pytest.approx(100, rel=1e-14)
    assert radar_gain(20, 30e9, 1.0) / radar_gain(40, 30e9, 1.0) == pytest.approx(16, rel=1e-14)
    v = radar_gain(10, 30e9, 1.0)
    assert v == pytest.approx(lam**2 / ((4 * np.pi) ** 3 * 1e4), rel=1e-14)
    assert 10 * np.log10(v) == pytest.approx(-113.0, abs=0.05)
    with pytest.raises(ValueError):
        radar_gain(0.0, 30e9, 1.0)


# -- partition and clutter ----------------------------------------------------

def test_split_channel():
    g = GridConfig(8, 120e3, 2)
    s = ArrayGeometry.single()
    los_only = [_path(1.0, 1e-7), _path(0.5, 2e-7)]
    assert split_channel(los_only)[1] == []
    mixed = los_only + [_path(0.2j, 5e-7, tag="nlos")]
    a, b = split_channel(mixed)
    total = channel_tensor(mixed, g, s, s)
    assert np.max(np.abs(channel_tensor(a, g, s, s) + channel_tensor(b, g, s, s) - total)) <= 1e-12
    objs = [_path(1.0, 1e-7 * i, tag="object") for i in range(5)]
    clutter = make_clutter(3, 2, 0.1, g)
    obj_part, clutter_part = split_channel(objs + clutter, "sensing")
    assert len(obj_part) == 5 and len(clutter_part) == 2


def test_clutter_examples():
    g = GridConfig(16, 120e3)
    assert make_clutter(0, 0, 1.0, g) == []
    a, b = make_clutter(42, 6, 2.0, g), make_clutter(42, 6, 2.0, g)
    assert all(p.gain == q.gain and p.geo == q.geo for p, q in zip(a, b))
    assert all(p.tag == "clutter" and 0 <= p.geo.delay < 1 / 120e3 for p in a)
    totals = [sum(abs(p.gain) ** 2 for p in make_clutter(s, 5, 2.0, g)) for s in range(10_000)]
    assert np.mean(totals) == pytest.approx(2.0, rel=0.05)


def test_grid_invariants():
    g = GridConfig(256, 120e3, 2, 1e-5, 28e9)
    assert g.bandwidth == pytest.approx(256 * 120e3)
    assert g.wavelength == pytest.approx(C / 28e9)
    for bad in (dict(n_subcarriers=0, subcarrier_spacing=1.0),
                dict(n_subcarriers=1, subcarrier_spacing=0.0),
                dict(n_subcarriers=1, subcarrier_spacing=1.0, n_symbols=0)):
        with pytest.raises(ValueError):
            GridConfig(**bad)
