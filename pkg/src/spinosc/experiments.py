"""Scripted parameter studies: gain sweep with threshold bisection, phase
sweep with sustaining-window detection, zero-frequency-shift phase search,
and long-run frequency stability.

Sweep points are independent runs and execute concurrently (the compiled
kernel releases the GIL); aggregation happens after all points finish.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .analysis import (AllanResult, EstimationError, allan_deviation,
                       estimate_frequency, fit_exp_envelope)
from .feedback import BandPassSpec, FeedbackChain, PhaseShifterSpec, ShifterMode
from .model import SystemParams
from .sim import SimConfig, TimeSeries, run

__all__ = [
    "Classification",
    "RunResult",
    "SweepResult",
    "ZfsResult",
    "ExperimentError",
    "classify_sustained",
    "sweep_gain",
    "sweep_phase",
    "find_zfs",
    "long_run_stability",
    "sweep_to_csv",
]


class ExperimentError(RuntimeError):
    """A parameter study could not produce its result (e.g. no transition)."""


class Classification(NamedTuple):
    sustained: bool
    decay_time: float  # s; +inf = no measurable decay, nan = no signal


class RunResult(NamedTuple):
    osc_freq: float  # Hz (nan when not measurable)
    amplitude: float  # G, steady amplitude of the observable channel
    decay_time: float  # s (+inf sentinel, negative = growing)
    sustained: bool


@dataclass
class SweepResult:
    parameter: str
    values: np.ndarray
    results: list
    threshold: Optional[float] = None  # sweep_gain
    window: Optional[tuple] = None  # sweep_phase: (theta_lo, theta_hi)
    asymmetry: Optional[float] = None  # |lo + hi - 180|


class ZfsResult(NamedTuple):
    theta_zfs: float  # degrees
    nu_open: float  # Hz
    slope: float  # Hz/deg of delta-nu at theta_zfs


def classify_sustained(ts: TimeSeries, channel: str = "mx_rb",
                       t2_xe: Optional[float] = None) -> Classification:
    """Sustained iff the fitted envelope decay rate is below 1/(10*T_obs) and
    the final-quarter RMS is at least half the first-quarter RMS."""
    x = np.asarray(ts.channel(channel), dtype=float)
    n = len(x)
    t_obs = n / ts.fs
    if t2_xe is not None and t_obs < 5.0 * t2_xe:
        raise ValueError(
            f"record too short: {t_obs:.3g} s < 5*T2 = {5 * t2_xe:.3g} s")
    rms_all = float(np.sqrt(np.mean(x * x)))
    if rms_all == 0.0 or not math.isfinite(rms_all):
        return Classification(False, math.nan)
    q = n // 4
    rms_first = float(np.sqrt(np.mean(x[:q] ** 2)))
    rms_final = float(np.sqrt(np.mean(x[-q:] ** 2)))
    fit = fit_exp_envelope(ts, channel)
    rate = 0.0 if math.isinf(fit.decay_time) else 1.0 / fit.decay_time
    sustained = (rate < 1.0 / (10.0 * t_obs)) and (rms_final >= 0.5 * rms_first)
    return Classification(bool(sustained), fit.decay_time)


def _default_chain(gain: float, theta: float, template: Optional[FeedbackChain]) -> FeedbackChain:
    if template is None:
        return FeedbackChain(
            bandpass=BandPassSpec(),
            shifter=PhaseShifterSpec(theta=theta % 360.0, mode=ShifterMode.QUADRATURE),
            gain=gain)
    return FeedbackChain(
        bandpass=template.bandpass,
        shifter=replace(template.shifter, theta=theta % 360.0),
        gain=gain,
        saturation=template.saturation,
        noise_std=template.noise_std)


def _default_cfg(duration: float, cfg: Optional[SimConfig]) -> SimConfig:
    if cfg is not None:
        return cfg
    # small tip: near-threshold points then grow or decay monotonically,
    # which keeps the classifier sharp
    return SimConfig(dt=1e-4, fs_loop=1000.0, duration=duration,
                     mode="adiabatic", loop_mode="closed", initial_tip_xe=2.0,
                     record_xe=True)


def _check_oscillator_config(sys: SystemParams) -> None:
    if float(np.linalg.norm(sys.fields.b0)) == 0.0:
        raise ValueError("experiment runners require |B0| > 0")


def _run_point(sys, gain, theta, cfg, template) -> tuple:
    chain = _default_chain(gain, theta, template)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ts = run(sys, chain, cfg)
    cls = classify_sustained(ts, "mx_rb")
    tail = ts.slice_time(0.4 * cfg.duration, cfg.duration)
    mx = tail.channel("mx_rb")
    amp = math.sqrt(2.0) * float(np.sqrt(np.mean(mx ** 2)))
    freq = math.nan
    if cls.sustained:
        try:
            freq = estimate_frequency(tail, "mx_rb").frequency
        except EstimationError:
            pass
    return RunResult(freq, amp, cls.decay_time, cls.sustained), ts


def _map_points(fn, items, max_workers):
    if max_workers is None or max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def sweep_gain(sys: SystemParams, theta: float, g_values: Sequence[float],
               duration: float = 150.0, cfg: Optional[SimConfig] = None,
               chain_template: Optional[FeedbackChain] = None,
               refine_iters: int = 12, max_workers: Optional[int] = None) -> SweepResult:
    """Gain sweep at fixed phase; bisects the sustained/decaying transition.

    Raises ExperimentError("no transition ...") when the scanned range does
    not bracket the threshold.
    """
    _check_oscillator_config(sys)
    gs = np.asarray(sorted(g_values), dtype=float)
    if len(gs) < 2:
        raise ValueError("need at least two gain values")
    cfg = _default_cfg(duration, cfg)

    results = _map_points(lambda g: _run_point(sys, g, theta, cfg, chain_template)[0],
                          gs, max_workers)
    sustained = [r.sustained for r in results]
    if not any(sustained):
        raise ExperimentError("no transition: no sustained point in the gain range")
    if all(sustained):
        raise ExperimentError("no transition: every gain in the range sustains")

    lo = max(g for g, s in zip(gs, sustained) if not s and g < max(
        g2 for g2, s2 in zip(gs, sustained) if s2))
    hi = min(g for g, s in zip(gs, sustained) if s)
    for _ in range(refine_iters):
        mid = math.sqrt(lo * hi)
        r, _ = _run_point(sys, mid, theta, cfg, chain_template)
        if r.sustained:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1.001:
            break
    return SweepResult("gain", gs, results, threshold=math.sqrt(lo * hi))


def sweep_phase(sys: SystemParams, gain: float, theta_values: Sequence[float],
                duration: float = 150.0, cfg: Optional[SimConfig] = None,
                chain_template: Optional[FeedbackChain] = None,
                max_workers: Optional[int] = None) -> SweepResult:
    """Phase sweep at fixed gain; reports the sustaining window and its
    asymmetry about 90 degrees."""
    _check_oscillator_config(sys)
    ths = np.asarray(sorted(theta_values), dtype=float)
    cfg = _default_cfg(duration, cfg)
    results = _map_points(lambda th: _run_point(sys, gain, th, cfg, chain_template)[0],
                          ths, max_workers)
    sus_idx = [i for i, r in enumerate(results) if r.sustained]
    if not sus_idx:
        raise ExperimentError("no sustained point found in the phase sweep")
    lo, hi = ths[sus_idx[0]], ths[sus_idx[-1]]
    contiguous = sus_idx == list(range(sus_idx[0], sus_idx[-1] + 1))
    if not contiguous:
        warnings.warn("sustained set is not contiguous on this grid", stacklevel=2)
    return SweepResult("theta", ths, results, window=(float(lo), float(hi)),
                       asymmetry=abs(float(lo) + float(hi) - 180.0))


def _open_loop_frequency(sys, cfg) -> float:
    ocfg = SimConfig(dt=cfg.dt, fs_loop=cfg.fs_loop, duration=40.0,
                     mode=cfg.mode, loop_mode="open", initial_tip_xe=2.0,
                     record_xe=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ts = run(sys, None, ocfg)
    return estimate_frequency(ts.slice_time(2.0, 40.0), "mx_xe").frequency


def _closed_loop_frequency(sys, gain, theta, cfg, template, duration=240.0,
                           settle=140.0) -> float:
    rcfg = SimConfig(dt=cfg.dt, fs_loop=cfg.fs_loop, duration=duration,
                     mode=cfg.mode, loop_mode="closed", initial_tip_xe=2.0,
                     record_xe=True)
    chain = _default_chain(gain, theta, template)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ts = run(sys, chain, rcfg)
    cls = classify_sustained(ts, "mx_rb")
    if not cls.sustained:
        raise ExperimentError(f"not sustained at theta={theta:.3f} deg")
    return estimate_frequency(ts.slice_time(settle, duration), "mx_xe").frequency


def find_zfs(sys: SystemParams, gain: float,
             theta_scan: Sequence[float] = (70.0, 80.0, 86.0, 92.0, 100.0, 110.0),
             cfg: Optional[SimConfig] = None,
             chain_template: Optional[FeedbackChain] = None,
             theta_tol: float = 0.05, dnu_tol: float = 1e-8,
             slope_step: float = 2.0,
             max_workers: Optional[int] = None) -> ZfsResult:
    """Locate the phase where the closed-loop frequency equals the open-loop
    one, by bisection on delta-nu(theta) using the quadrature shifter.

    Requires a sign change of delta-nu between consecutive sustained scan
    points; reports ExperimentError otherwise.
    """
    _check_oscillator_config(sys)
    cfg = _default_cfg(240.0, cfg)
    if (chain_template is not None
            and chain_template.shifter.mode is not ShifterMode.QUADRATURE):
        raise ValueError("find_zfs requires the quadrature shifter mode")
    nu_open = _open_loop_frequency(sys, cfg)

    def dnu(theta: float) -> float:
        return _closed_loop_frequency(sys, gain, theta, cfg, chain_template) - nu_open

    ths = sorted(theta_scan)
    vals = _map_points(lambda th: _try_dnu(dnu, th), ths, max_workers)
    bracket = None
    for (t1, v1), (t2, v2) in zip(zip(ths, vals), list(zip(ths, vals))[1:]):
        if v1 is None or v2 is None:
            continue
        if v1 == 0.0:
            return ZfsResult(t1, nu_open, _local_slope(dnu, t1, slope_step))
        if v1 * v2 < 0:
            bracket = (t1, v1, t2, v2)
            break
    if bracket is None:
        raise ExperimentError(
            "no sign change of delta-nu within the sustained window; "
            f"scan gave {[(t, v) for t, v in zip(ths, vals)]}")

    lo, flo, hi, fhi = bracket
    while hi - lo > theta_tol:
        mid = 0.5 * (lo + hi)
        fm = dnu(mid)
        if abs(fm) < dnu_tol:
            lo = hi = mid
            break
        if flo * fm < 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    theta_zfs = 0.5 * (lo + hi)
    return ZfsResult(float(theta_zfs), float(nu_open),
                     _local_slope(dnu, theta_zfs, slope_step))


def _try_dnu(dnu, theta):
    try:
        return dnu(theta)
    except (ExperimentError, EstimationError):
        return None


def _local_slope(dnu, theta, step) -> float:
    return (dnu(theta + step) - dnu(theta - step)) / (2.0 * step)


def long_run_stability(sys: SystemParams, chain: FeedbackChain, duration: float,
                       cfg: Optional[SimConfig] = None, window: float = 1.0,
                       settle: float = 60.0,
                       taus: Optional[Sequence[float]] = None) -> AllanResult:
    """Closed-loop run (adiabatic mode), frequency tracked over consecutive
    windows, overlapping Allan deviation of the resulting series."""
    _check_oscillator_config(sys)
    if cfg is None:
        cfg = SimConfig(dt=1e-4, fs_loop=1000.0, duration=duration,
                        mode="adiabatic", loop_mode="closed",
                        initial_tip_xe=2.0, record_xe=False)
    else:
        cfg = replace(cfg, duration=duration)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ts = run(sys, chain, cfg)
    cls = classify_sustained(ts, "mx_rb")
    if not cls.sustained:
        raise ExperimentError("long_run_stability requires a sustained configuration")
    freqs = track_frequency(ts, "mx_rb", window=window, settle=settle)
    return allan_deviation(freqs, taus=taus)


def track_frequency(ts: TimeSeries, channel: str = "mx_rb", window: float = 1.0,
                    settle: float = 0.0) -> TimeSeries:
    """Frequency estimates over consecutive non-overlapping windows."""
    n_win = int(round(window * ts.fs))
    if n_win < 32:
        raise ValueError("window too short for frequency tracking")
    x = ts.channel(channel)
    start = int(round(settle * ts.fs))
    f_prev = None
    out = []
    for i0 in range(start, len(x) - n_win + 1, n_win):
        seg = TimeSeries(ts.fs, 0.0, {channel: x[i0: i0 + n_win]})
        est = estimate_frequency(seg, channel, f_guess=f_prev)
        out.append(est.frequency)
        f_prev = est.frequency
    if len(out) < 4:
        raise ValueError("record too short for a frequency series")
    return TimeSeries(fs=1.0 / window, t0=settle,
                      channels={"freq": np.asarray(out)})


def sweep_to_csv(result: SweepResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("param,osc_freq_hz,amplitude_g,decay_time_s,sustained\n")
        for v, r in zip(result.values, result.results):
            fh.write(f"{v:.9g},{r.osc_freq:.9g},{r.amplitude:.9g},"
                     f"{r.decay_time:.9g},{str(r.sustained).lower()}\n")
