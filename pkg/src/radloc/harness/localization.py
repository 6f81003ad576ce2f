"""Localization scenarios: bound maps and two-stage Monte-Carlo runs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..bounds import Scene, StateBounds, peb_oeb_veb
from ..channel import ArrayGeometry, GridConfig, PathParams
from ..estimation import Dictionary, ls_channel_estimate, ml_refine, omp
from ..geometry import GeometryError, UEState, los_params
from ..positioning import NotIdentifiableError, estimate_state, los_measurement
from ..signal import TxRxConfig, observe
from .config import ConfigError, ScenarioConfig


def make_array(spec: str) -> ArrayGeometry:
    if spec == "single":
        return ArrayGeometry.single()
    kind, size = spec.split()
    if kind == "ula":
        return ArrayGeometry.ula(int(size))
    ny, nz = (int(v) for v in size.split("x"))
    return ArrayGeometry.upa(ny, nz)


def localization_grid(cfg: ScenarioConfig) -> GridConfig:
    g = cfg.values["grid"]
    return GridConfig(g["n_subcarriers"], g["subcarrier_spacing"], g["n_symbols"],
                      g["symbol_duration"], g["carrier"])


def build_scene(cfg: ScenarioConfig, ue_position=None) -> Scene:
    if cfg.kind != "localization":
        raise ConfigError("needs [scenario] type = localization")
    sc = cfg.values["scene"]
    pos = sc["ue"] if ue_position is None else np.asarray(ue_position, dtype=float)
    ue = UEState(pos, sc["clock_bias"])
    gains = None
    if cfg.values["snr"]["mode"] == "integrated":
        gains = {a.id: 1.0 for a in cfg.anchors}
    return Scene(cfg.anchors, ue, sc["link"], make_array(sc["anchor_array"]),
                 make_array(sc["ue_array"]), tuple(sc["estimate"]), gains)


def build_txrx(cfg: ScenarioConfig, grid: GridConfig, scene: Scene) -> TxRxConfig:
    """Pilots and noise level per the [snr] section.

    ``link_budget``: free-space gains with the given noise PSD.
    ``integrated``: unit gains and ``N0 = P / (df * SNR)``.
    """
    s = cfg.values["snr"]
    rx, tx = scene.arrays()
    if s["mode"] == "link_budget":
        n0 = s["noise_psd"]
    elif s["mode"] == "integrated":
        n0 = s["tx_power"] / (grid.subcarrier_spacing * s["integrated"])
    else:
        raise ConfigError("localization needs [snr] mode = link_budget or integrated")
    return TxRxConfig.default(grid, tx.n_elements, rx.n_elements, tx_power=s["tx_power"],
                              noise_psd=n0)


def bound_at(cfg: ScenarioConfig, ue_position=None) -> StateBounds:
    grid = localization_grid(cfg)
    scene = build_scene(cfg, ue_position)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            return peb_oeb_veb(scene, grid, build_txrx(cfg, grid, scene))
        except GeometryError:
            nan = np.full((len(scene.estimate),) * 2, np.nan)
            return StateBounds(float("inf"), None, None, False, float("inf"), nan,
                               scene.estimate)


BOUND_MAP_COLUMNS = ["x [m]", "y [m]", "z [m]", "peb [m]", "oeb [rad]",
                     "clock_bias_bound [s]", "identifiable [bool]", "condition [-]"]


@dataclass
class BoundMap:
    columns: list[str]
    rows: list[list]
    xs: np.ndarray
    ys: np.ndarray

    def peb(self) -> np.ndarray:
        """PEB raster indexed [ix, iy]."""
        v = np.array([r[3] for r in self.rows], dtype=float)
        return v.reshape(len(self.xs), len(self.ys))


def run_bound_map(cfg: ScenarioConfig) -> BoundMap:
    """PEB/OEB over a rectangular raster at height ``z``; rows in x-major order."""
    m = cfg.values["map"]
    if m["x_range"] is None:
        raise ConfigError("bound map needs a [map] section")
    step = m["step"]
    xs = _axis(m["x_range"], step)
    ys = _axis(m["y_range"], step)
    rows = []
    for x in xs:
        for y in ys:
            b = bound_at(cfg, [x, y, m["z"]])
            rows.append([x, y, m["z"], b.peb, np.nan if b.oeb is None else b.oeb,
                         np.nan if b.clock_bias_bound is None else b.clock_bias_bound,
                         int(b.identifiable), b.condition_number])
    return BoundMap(BOUND_MAP_COLUMNS, rows, xs, ys)


def _axis(rng, step) -> np.ndarray:
    lo, hi = rng
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def simulation_columns(estimate) -> list[str]:
    units = {"x": "m", "y": "m", "z": "m", "B": "s", "o1": "rad", "o2": "rad", "o3": "rad",
             "vx": "m/s", "vy": "m/s", "vz": "m/s"}
    cols = ["trial [-]"]
    cols += [f"{n}_hat [{units[n]}]" for n in estimate]
    cols += [f"var_{n} [{units[n]}^2]" for n in estimate]
    cols += ["position_error [m]", "cost [-]", "iterations [count]", "converged [bool]",
             "singular [bool]", "detections [count]", "failed [bool]"]
    return cols


def _state_value(ue: UEState, name: str) -> float:
    if name in ("x", "y", "z"):
        return float(ue.position["xyz".index(name)])
    if name == "B":
        return ue.clock_bias
    if name.startswith("o"):
        return 0.0
    return float(ue.velocity["xyz".index(name[1])])


def simulate(cfg: ScenarioConfig, trials: int | None = None):
    """Two-stage positioning over seeded trials; returns (columns, rows).

    Each anchor observes its LoS path; detections come from refined OMP, the
    smallest-delay detection is taken as LoS, and the state follows from
    weighted least squares. Trials without a usable measurement set are
    reported with ``failed = 1`` rather than dropped.
    """
    grid = localization_grid(cfg)
    scene = build_scene(cfg)
    txrx = build_txrx(cfg, grid, scene)
    rx, tx = scene.arrays()
    est_cfg = cfg.values["estimator"]
    sc = cfg.values["scene"]
    bounds = None
    if sc["bounds_min"] is not None and sc["bounds_max"] is not None:
        bounds = (sc["bounds_min"], sc["bounds_max"])
    dictionary = Dictionary.build(grid, rx, tx, oversampling=est_cfg["oversampling"])
    master = cfg.values["run"]["seed"]
    n = trials if trials is not None else cfg.values["run"]["trials"]
    estimate = scene.estimate
    columns = simulation_columns(estimate)
    rows = []
    for t in range(n):
        ss = np.random.SeedSequence([int(master), 0, int(t)])
        measurements = []
        n_det = 0
        for anchor, child in zip(scene.anchors, ss.spawn(len(scene.anchors))):
            geo = los_params(anchor, scene.ue, scene.link, grid.carrier)
            path = PathParams(scene.gain(anchor, grid.carrier), geo, "los")
            obs = observe([path], grid, txrx, rx, tx, seed=child)
            est = ls_channel_estimate(obs, txrx, grid, rx, tx)
            det = omp(est, dictionary, gamma=est_cfg["gamma"], max_paths=est_cfg["max_paths"],
                      p_fa=est_cfg["p_fa"], min_separation=est_cfg["min_separation"],
                      refine_rounds=est_cfg["refine_rounds"])
            if det:
                det = ml_refine(est, det).paths
            n_det += len(det)
            m = los_measurement(anchor, det)
            if m is not None:
                measurements.append(m)
        nan_row = [np.nan] * (2 * len(estimate) + 2) + [0, 0, 0, n_det, 1]
        if not measurements:
            rows.append([t] + nan_row)
            continue
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                s = estimate_state(measurements, estimate, scene.ue, bounds, scene.link,
                                   grid.carrier)
        except NotIdentifiableError:
            rows.append([t] + nan_row)
            continue
        err = float(np.linalg.norm(s.s_hat.position - scene.ue.position))
        rows.append([t] + [_state_value(s.s_hat, nm) for nm in estimate]
                    + list(np.diag(s.covariance)) + [err, s.cost, s.iterations,
                                                      int(s.converged), int(s.singular),
                                                      n_det, 0])
    return columns, rows
