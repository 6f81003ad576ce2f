"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 non-identifiable scenario,
1 I/O or other runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ..geometry import SPEED_OF_LIGHT
from ..resolution import resolution_limits
from .casestudy import CalibrationError, calibrate_snr, run_case_study, sweep_grid
from .config import ConfigError, ScenarioConfig, default_config, load_config
from .io import OutputError, emit_csv, emit_metadata, emit_plot_data, format_value, sidecar
from .localization import BOUND_MAP_COLUMNS, bound_at, build_scene, localization_grid, \
    make_array, run_bound_map, simulate

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_NOT_IDENTIFIABLE = 0, 1, 2, 3

log = logging.getLogger("radloc")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radloc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    specs = {
        "bound": "position/orientation error bounds at the UE or over a [map] raster",
        "simulate": "two-stage positioning Monte Carlo for a localization scene",
        "sweep": "bandwidth sweep: bounds, resolution and RMSE of the first object",
        "resolve": "delay/Doppler/angle resolution per configured bandwidth",
        "calibrate": "solve the integrated SNR for the reference single-path bound",
    }
    for name, help_ in specs.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="scenario file; defaults to the built-in case study")
        s.add_argument("--seed", type=_u64, help="master seed (overrides [run] seed)")
        s.add_argument("--out", help="output CSV path")
        s.add_argument("--trials", type=_positive, help="trials per point (overrides [run])")
    return p


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    if args.trials is not None:
        cfg.set("run", "trials", args.trials)
    return cfg


def _write(columns, rows, out):
    if out:
        emit_csv(columns, rows, out)
        log.info("wrote %s", out)
    else:
        print(",".join(columns))
        for r in rows:
            print(",".join(format_value(v) for v in r))


def cmd_sweep(cfg, args) -> int:
    result = run_case_study(cfg)
    _write(result.columns, result.rows, args.out)
    if args.out:
        n = cfg.values["case_study"]["paths"]
        x = result.column("bandwidth [MHz]")
        curves = {name: (x, result.column(col)) for name, col in result.curves(n).items()}
        emit_plot_data(curves, sidecar(args.out, "plot.csv"))
        emit_metadata(result.metadata, sidecar(args.out, "meta.json"))
    return EXIT_OK


def cmd_calibrate(cfg, args) -> int:
    cal = calibrate_snr(cfg)
    cols = ["snr [-]", "snr [dB]", "target_crb [m]", "achieved_crb [m]",
            "reference_bandwidth [MHz]", "closed_form_snr [-]", "closed_form_mismatch [-]"]
    row = [cal.snr, cal.snr_db, cal.target_crb, cal.achieved_crb,
           cal.reference_bandwidth / 1e6, cal.closed_form_snr, cal.relative_mismatch]
    _write(cols, [row], args.out)
    return EXIT_OK


def cmd_resolve(cfg, args) -> int:
    cols = ["bandwidth [MHz]", "delay_res [s]", "distance_res [m]", "doppler_res [Hz]",
            "velocity_res [m/s]", "azimuth_res [rad]", "elevation_res [rad]"]
    rows = []
    if cfg.kind == "case_study":
        grids = [sweep_grid(cfg, bw) for bw in cfg.values["grid"]["bandwidths"]]
        array = None
        speed = cfg.values["case_study"]["propagation_speed"]
    else:
        grids = [localization_grid(cfg)]
        array = make_array(cfg.values["scene"]["anchor_array"])
        speed = SPEED_OF_LIGHT
    for g in grids:
        r = resolution_limits(g, array, speed)
        rows.append([g.bandwidth / 1e6, r.delay_res, r.distance_res, r.doppler_res,
                     r.velocity_res, *r.angular_res])
    _write(cols, rows, args.out)
    return EXIT_OK


def cmd_bound(cfg, args) -> int:
    if cfg.values["map"]["x_range"] is not None:
        bmap = run_bound_map(cfg)
        _write(bmap.columns, bmap.rows, args.out)
        if not any(r[6] for r in bmap.rows):
            log.error("no identifiable cell in the map")
            return EXIT_NOT_IDENTIFIABLE
        return EXIT_OK
    b = bound_at(cfg)
    ue = build_scene(cfg).ue
    row = [*ue.position, b.peb, np.nan if b.oeb is None else b.oeb,
           np.nan if b.clock_bias_bound is None else b.clock_bias_bound,
           int(b.identifiable), b.condition_number]
    _write(BOUND_MAP_COLUMNS, [row], args.out)
    if not b.identifiable:
        log.error("scenario is not identifiable (condition number %.3g)", b.condition_number)
        return EXIT_NOT_IDENTIFIABLE
    return EXIT_OK


def cmd_simulate(cfg, args) -> int:
    b = bound_at(cfg)
    if not b.identifiable:
        log.error("scenario is not identifiable (condition number %.3g)", b.condition_number)
        return EXIT_NOT_IDENTIFIABLE
    cols, rows = simulate(cfg)
    _write(cols, rows, args.out)
    return EXIT_OK


COMMANDS = {"sweep": cmd_sweep, "calibrate": cmd_calibrate, "resolve": cmd_resolve,
            "bound": cmd_bound, "simulate": cmd_simulate}
NEEDS = {"sweep": "case_study", "calibrate": "case_study", "bound": "localization",
         "simulate": "localization"}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = _load(args)
        need = NEEDS.get(args.command)
        if need and cfg.kind != need:
            raise ConfigError(f"'{args.command}' needs [scenario] type = {need}")
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except CalibrationError as exc:
        log.error("calibration failed: %s", exc)
        return EXIT_FAILURE
    except OutputError as exc:
        log.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
