"""Command-line front end: flat-text configuration, experiment dispatch,
deterministic CSV artifacts plus a run manifest.

Config format: one ``section.key = value`` per line, ``#`` comments allowed.
Unknown keys are hard errors.  Precedence: --set flag > config file > default.
"""
from __future__ import annotations

import argparse
import math
import os
import sys as _sys
import time
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (allan_deviation, allan_to_csv, estimate_frequency,
                       fft_spectrum, fit_exp_envelope, spectrum_to_csv,
                       welch_psd, write_summary, EstimationError)
from .experiments import (ExperimentError, find_zfs, long_run_stability,
                          sweep_gain, sweep_phase, sweep_to_csv, track_frequency)
from .feedback import BandPassSpec, FeedbackChain, PhaseShifterSpec
from .model import (CouplingParams, FieldConfig, SpeciesParams, SystemParams,
                    threshold_gain, vec3, DEFAULT_GAMMA_RB, DEFAULT_GAMMA_XE,
                    DEFAULT_T_RB, DEFAULT_T_XE, DEFAULT_M0_RB, DEFAULT_M0_XE,
                    DEFAULT_B0Z)
from .sim import SimConfig, TimeSeries, run

OUT_DIR_ENV = "SPINOSC_OUT_DIR"

SUBCOMMANDS = ("simulate", "sweep-gain", "sweep-phase", "find-zfs",
               "stability", "analyze")


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_opt_float(s: str) -> Optional[float]:
    return None if s.lower() == "none" else float(s)


def _parse_opt_int(s: str) -> Optional[int]:
    return None if s.lower() == "none" else int(s)


def _parse_dt(s: str):
    return "auto" if s.lower() == "auto" else float(s)


# key -> (parser, default)
CONFIG_SCHEMA = {
    "rb.gamma": (float, DEFAULT_GAMMA_RB),
    "rb.t1": (float, DEFAULT_T_RB),
    "rb.t2": (float, DEFAULT_T_RB),
    "rb.m0": (float, DEFAULT_M0_RB),
    "xe.gamma": (float, DEFAULT_GAMMA_XE),
    "xe.t1": (float, DEFAULT_T_XE),
    "xe.t2": (float, DEFAULT_T_XE),
    "xe.m0": (float, DEFAULT_M0_XE),
    "coupling.kappa": (float, 500.0),
    "coupling.q": (float, 5.0),
    "field.b0x": (float, 0.0),
    "field.b0y": (float, 0.0),
    "field.b0z": (float, DEFAULT_B0Z),
    "feedback.f_center": (float, 35.0),
    "feedback.q_factor": (float, 10.0),
    "feedback.theta": (float, 90.0),
    "feedback.mode": (str, "quadrature"),
    "feedback.f_ref": (float, 35.0),
    "feedback.gain": (float, 0.0),
    "feedback.saturation": (_parse_opt_float, None),
    "feedback.noise_std": (float, 0.0),
    "sim.dt": (_parse_dt, "auto"),
    "sim.fs_loop": (float, 1000.0),
    "sim.duration": (float, 60.0),
    "sim.mode": (str, "adiabatic"),
    "sim.loop_mode": (str, "open"),
    "sim.tip_xe": (float, 10.0),
    "sim.tip_rb": (float, 0.0),
    "sim.decimation": (int, 1),
    "sim.seed": (_parse_opt_int, None),
    "sim.record_xe": (_parse_bool, True),
    "sim.theta_drift": (float, 0.0),
}


def read_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``section.key = value`` lines into raw values; unknown keys and
    malformed lines are hard errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser, _default = CONFIG_SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: invalid value for {key}: {e}") from None
    return values


def resolve_config(values: dict):
    """Raw values (+ defaults for missing keys) -> (SystemParams, FeedbackChain, SimConfig)."""
    v = {k: default for k, (_p, default) in CONFIG_SCHEMA.items()}
    v.update(values)

    def build(section, ctor, **kwargs):
        try:
            return ctor(**kwargs)
        except (ValueError, TypeError) as e:
            fieldname = str(e).split()[0]
            raise ConfigError(f"{section}.{fieldname}: {e}") from None

    rb = build("rb", SpeciesParams, gamma=v["rb.gamma"], t1=v["rb.t1"],
               t2=v["rb.t2"], m0=v["rb.m0"])
    xe = build("xe", SpeciesParams, gamma=v["xe.gamma"], t1=v["xe.t1"],
               t2=v["xe.t2"], m0=v["xe.m0"])
    coupling = build("coupling", CouplingParams, kappa=v["coupling.kappa"],
                     q=v["coupling.q"])
    fields = build("field", FieldConfig,
                   b0=vec3(v["field.b0x"], v["field.b0y"], v["field.b0z"]))
    system = SystemParams(rb=rb, xe=xe, coupling=coupling, fields=fields)

    dt = v["sim.dt"]
    if dt == "auto":
        dt = 2e-6 if v["sim.mode"] == "full" else 1e-4
    v["sim.dt"] = dt  # snapshot the resolved value
    simcfg = build("sim", SimConfig, dt=dt, fs_loop=v["sim.fs_loop"],
                   duration=v["sim.duration"], mode=v["sim.mode"],
                   loop_mode=v["sim.loop_mode"], initial_tip_xe=v["sim.tip_xe"],
                   initial_tip_rb=v["sim.tip_rb"],
                   record_decimation=v["sim.decimation"],
                   noise_seed=v["sim.seed"], record_xe=v["sim.record_xe"],
                   theta_drift=v["sim.theta_drift"])

    bp = build("feedback", BandPassSpec, f_center=v["feedback.f_center"],
               q_factor=v["feedback.q_factor"], fs=v["sim.fs_loop"])
    shifter = build("feedback", PhaseShifterSpec, theta=v["feedback.theta"],
                    mode=v["feedback.mode"], f_ref=v["feedback.f_ref"])
    chain = build("feedback", FeedbackChain, bandpass=bp, shifter=shifter,
                  gain=v["feedback.gain"], saturation=v["feedback.saturation"],
                  noise_std=v["feedback.noise_std"])
    return system, chain, simcfg, v


def parse_config(path) -> tuple:
    """Load a config file; returns (SystemParams, FeedbackChain, SimConfig)."""
    with open(path) as fh:
        raw = read_config_text(fh.read(), source=str(path))
    system, chain, simcfg, _ = resolve_config(raw)
    return system, chain, simcfg


def serialize_config(values: dict) -> str:
    """Write the full resolved key set back in config format."""
    lines = []
    for key in CONFIG_SCHEMA:
        val = values[key]
        if val is None:
            out = "none"
        elif isinstance(val, bool):
            out = "true" if val else "false"
        elif isinstance(val, float):
            out = f"{val:.9g}"
        else:
            out = str(val)
        lines.append(f"{key} = {out}")
    return "\n".join(lines) + "\n"


def _write_manifest(out_dir, subcommand, values, outputs, seed, t_wall):
    pairs = {
        "tool": "spinosc",
        "version": __version__,
        "subcommand": subcommand,
        "seed": "none" if seed is None else seed,
        "wall_clock_s": t_wall,
    }
    for i, p in enumerate(outputs):
        pairs[f"output.{i}"] = os.path.basename(p)
    for key in CONFIG_SCHEMA:
        val = values[key]
        if isinstance(val, float):
            pairs[f"config.{key}"] = f"{val:.9g}"
        else:
            pairs[f"config.{key}"] = "none" if val is None else val
    path = os.path.join(out_dir, "manifest.txt")
    write_summary(pairs, path)
    return path


def _analyze_series(ts: TimeSeries, channel: str, out_dir: str, prefix: str = ""):
    """Run the analysis suite on one channel; returns (summary dict, csv paths)."""
    outputs = []
    summary = {"channel": channel, "n_samples": len(ts), "fs_hz": ts.fs}
    spec = fft_spectrum(ts, channel, window="rect")
    p = os.path.join(out_dir, f"{prefix}spectrum.csv")
    spectrum_to_csv(spec, p)
    outputs.append(p)
    summary.update(peak_freq_hz=spec.peak_freq, fwhm_hz=spec.fwhm, snr=spec.snr)
    try:
        est = estimate_frequency(ts, channel)
        summary.update(fit_freq_hz=est.frequency, fit_freq_sigma_hz=est.sigma,
                       fit_amplitude=est.amplitude)
    except EstimationError as e:
        summary["fit_freq_error"] = str(e)
    env = fit_exp_envelope(ts, channel)
    summary.update(envelope_amplitude=env.amplitude,
                   envelope_decay_time_s=env.decay_time,
                   envelope_growing=env.growing)
    seg = min(len(ts), 4096)
    psd = welch_psd(ts, channel, segment_length=seg, overlap=0.5)
    p = os.path.join(out_dir, f"{prefix}psd.csv")
    with open(p, "w") as fh:
        fh.write("freq_hz,psd\n")
        for f, v in zip(psd.freqs, psd.psd):
            fh.write(f"{f:.9g},{v:.9g}\n")
    outputs.append(p)
    return summary, outputs


def dispatch(subcommand: str, values: dict, out_dir: str, args) -> int:
    """Run one subcommand; writes artifacts into out_dir; returns exit code."""
    os.makedirs(out_dir, exist_ok=True)
    system, chain, simcfg, values = resolve_config(dict(values))
    t0 = time.time()
    outputs = []

    if subcommand == "simulate":
        ts = run(system, chain if simcfg.loop_mode == "closed" else None, simcfg)
        p = os.path.join(out_dir, "timeseries.csv")
        ts.to_csv(p)
        outputs.append(p)
        channel = "mx_rb" if np.any(ts.channel("mx_rb")) else (
            "mx_xe" if simcfg.record_xe else "mx_rb")
        summary, extra = _analyze_series(ts, channel, out_dir)
        outputs.extend(extra)
        p = os.path.join(out_dir, "summary.txt")
        write_summary(summary, p)
        outputs.append(p)

    elif subcommand == "sweep-gain":
        gth = threshold_gain(system)
        g_lo = args.g_min if args.g_min is not None else gth / 8.0
        g_hi = args.g_max if args.g_max is not None else gth * 8.0
        gs = np.geomspace(g_lo, g_hi, args.n_points)
        res = sweep_gain(system, args.theta, gs, duration=args.run_duration,
                         chain_template=chain)
        p = os.path.join(out_dir, "sweep_gain.csv")
        sweep_to_csv(res, p)
        outputs.append(p)
        p = os.path.join(out_dir, "summary.txt")
        write_summary({"empirical_threshold_gain": res.threshold,
                       "formula_threshold_gain": gth,
                       "ratio": res.threshold / gth}, p)
        outputs.append(p)

    elif subcommand == "sweep-phase":
        gain = args.gain if args.gain is not None else 2.0 * threshold_gain(system)
        ths = np.arange(args.theta_min, args.theta_max + 1e-9, args.theta_step)
        res = sweep_phase(system, gain, ths, duration=args.run_duration,
                          chain_template=chain)
        p = os.path.join(out_dir, "sweep_phase.csv")
        sweep_to_csv(res, p)
        outputs.append(p)
        p = os.path.join(out_dir, "summary.txt")
        write_summary({"gain": gain, "window_low_deg": res.window[0],
                       "window_high_deg": res.window[1],
                       "asymmetry_deg": res.asymmetry}, p)
        outputs.append(p)

    elif subcommand == "find-zfs":
        gain = args.gain if args.gain is not None else 2.0 * threshold_gain(system)
        res = find_zfs(system, gain, chain_template=chain)
        p = os.path.join(out_dir, "summary.txt")
        write_summary({"gain": gain, "theta_zfs_deg": res.theta_zfs,
                       "nu_open_hz": res.nu_open,
                       "slope_hz_per_deg": res.slope}, p)
        outputs.append(p)

    elif subcommand == "stability":
        gain = args.gain if args.gain is not None else chain.gain
        if gain <= 0:
            raise ExperimentError("stability requires feedback.gain > 0 (or --gain)")
        chain = FeedbackChain(bandpass=chain.bandpass, shifter=chain.shifter,
                              gain=gain, saturation=chain.saturation,
                              noise_std=chain.noise_std)
        cfg = SimConfig(dt=simcfg.dt if simcfg.dt != "auto" else 1e-4,
                        fs_loop=simcfg.fs_loop, duration=args.duration,
                        mode="adiabatic", loop_mode="closed",
                        initial_tip_xe=simcfg.initial_tip_xe,
                        noise_seed=simcfg.noise_seed, record_xe=False,
                        theta_drift=simcfg.theta_drift)
        res = long_run_stability(system, chain, args.duration, cfg=cfg)
        p = os.path.join(out_dir, "allan.csv")
        allan_to_csv(res, p)
        outputs.append(p)
        p = os.path.join(out_dir, "summary.txt")
        write_summary({"duration_s": args.duration,
                       "adev_min": float(np.min(res.adev)),
                       "tau_at_min_s": float(res.taus[int(np.argmin(res.adev))])}, p)
        outputs.append(p)

    elif subcommand == "analyze":
        ts = TimeSeries.from_csv(args.input)
        channel = args.channel
        if channel is None:
            channel = sorted(ts.channels)[0]
        summary, extra = _analyze_series(ts, channel, out_dir)
        outputs.extend(extra)
        try:
            freqs = track_frequency(ts, channel, window=args.freq_window)
            p = os.path.join(out_dir, "allan.csv")
            allan_to_csv(allan_deviation(freqs), p)
            outputs.append(p)
        except (ValueError, EstimationError):
            pass  # record too short for a frequency series
        p = os.path.join(out_dir, "summary.txt")
        write_summary(summary, p)
        outputs.append(p)

    else:
        raise ConfigError(f"unknown subcommand {subcommand!r}")

    outputs.append(_write_manifest(out_dir, subcommand, values, outputs,
                                   values["sim.seed"], time.time() - t0))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="spinosc",
        description="Closed-loop spin oscillator simulator and analysis toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="config file (flat key = value)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (default ${OUT_DIR_ENV} or ./spinosc_out)")
        p.add_argument("--seed", type=int, default=None, help="noise seed")
        p.add_argument("--mode", choices=("full", "adiabatic"), default=None,
                       help="integration mode override")

    p = sub.add_parser("simulate", help="run one time series")
    common(p)

    p = sub.add_parser("sweep-gain", help="gain sweep + threshold bisection")
    common(p)
    p.add_argument("--theta", type=float, default=90.0)
    p.add_argument("--g-min", type=float, default=None)
    p.add_argument("--g-max", type=float, default=None)
    p.add_argument("--n-points", type=int, default=7)
    p.add_argument("--run-duration", type=float, default=150.0)

    p = sub.add_parser("sweep-phase", help="phase sweep + sustaining window")
    common(p)
    p.add_argument("--gain", type=float, default=None)
    p.add_argument("--theta-min", type=float, default=30.0)
    p.add_argument("--theta-max", type=float, default=150.0)
    p.add_argument("--theta-step", type=float, default=5.0)
    p.add_argument("--run-duration", type=float, default=150.0)

    p = sub.add_parser("find-zfs", help="zero-frequency-shift phase search")
    common(p)
    p.add_argument("--gain", type=float, default=None)

    p = sub.add_parser("stability", help="long closed-loop run + Allan deviation")
    common(p)
    p.add_argument("--gain", type=float, default=None)
    p.add_argument("--duration", type=float, default=1000.0)

    p = sub.add_parser("analyze", help="analysis suite on an external CSV")
    common(p)
    p.add_argument("--input", required=True, help="time-series CSV (t,<channel>,...)")
    p.add_argument("--channel", default=None)
    p.add_argument("--freq-window", type=float, default=1.0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = {}
        if args.config:
            with open(args.config) as fh:
                values = read_config_text(fh.read(), source=args.config)
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
            values.update(read_config_text(item, source="--set"))
        if args.seed is not None:
            values["sim.seed"] = args.seed
        if args.mode is not None:
            values["sim.mode"] = args.mode
        out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) or "spinosc_out"
        return dispatch(args.subcommand, values, out_dir, args)
    except FileNotFoundError as e:
        print(f"spinosc: file not found: {e.filename}", file=_sys.stderr)
        return 1
    except (ConfigError, ValueError, ExperimentError, EstimationError,
            RuntimeError) as e:
        print(f"spinosc: {e}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
