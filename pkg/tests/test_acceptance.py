"""Acceptance gate: one test per criterion, each at its stated tolerance,
printing one PASS/FAIL line (run with ``pytest -s`` or ``-rA`` to see them).

Criterion 6 is expected to fail at the literal gain value it states: the
closed-loop threshold of this model cannot reach G ~ 1000 for any parameter
set consistent with the other criteria (the drive competes against the
contact-coupling backreaction; see notes in the repository root README and
the sustained-oscillation demonstrations at reachable gain in
test_experiments.py, where the same physics passes).
"""
import math
import time
import warnings

import numpy as np
import pytest

from spinosc import default_system, threshold_gain
from spinosc.analysis import (allan_deviation, estimate_frequency,
                              fft_spectrum, field_resolution, fit_exp_envelope)
from spinosc.experiments import ExperimentError, classify_sustained, find_zfs, sweep_phase
from spinosc.model import (CouplingParams, FieldConfig, SpeciesParams,
                           SpinState, SystemParams, vec3)
from spinosc.sim import SimConfig, TimeSeries, rk4_step, run

from _util import make_tone, quad_chain

SYS = default_system()
GF = threshold_gain(SYS)


def report(num, name, ok, detail):
    print(f"\n[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


def test_criterion_01_larmor_consistency():
    t0 = time.time()
    cfg = SimConfig(dt=2e-6, duration=20.0, mode="full", loop_mode="open",
                    initial_tip_xe=10.0)
    ts = run(SYS, None, cfg)
    est = estimate_frequency(ts, "mx_rb", f_guess=35.3)
    wall = time.time() - t0
    ok = abs(est.frequency - 35.34) <= 0.05 and wall < 60.0
    report(1, "Larmor consistency",
           ok, f"open-loop f = {est.frequency:.5f} Hz (target 35.34 +- 0.05), "
               f"wall {wall:.1f} s")


def test_criterion_02_open_loop_decay():
    cfg = SimConfig(duration=60.0, mode="adiabatic", loop_mode="open",
                    initial_tip_xe=10.0)
    ts = run(SYS, None, cfg)
    fit = fit_exp_envelope(ts, "mx_rb")
    ok = abs(fit.decay_time - 10.0) <= 0.1
    report(2, "open-loop decay",
           ok, f"fitted decay = {fit.decay_time:.4f} s (target 10 +- 1%)")


def test_criterion_03_threshold_bisection():
    t0 = time.time()
    cfg = SimConfig(duration=150.0, mode="adiabatic", loop_mode="closed",
                    initial_tip_xe=2.0)

    def sustained_at(g):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ts = run(SYS, quad_chain(gain=g, theta=90.0), cfg)
        return classify_sustained(ts, "mx_rb").sustained

    lo, hi = 0.5 * GF, 2.5 * GF
    runs = 2
    assert not sustained_at(lo) and sustained_at(hi)
    while runs < 12:
        mid = math.sqrt(lo * hi)
        if sustained_at(mid):
            hi = mid
        else:
            lo = mid
        runs += 1
    emp = math.sqrt(lo * hi)
    wall = time.time() - t0
    ok = 0.5 * GF <= emp <= 2.0 * GF and runs <= 12 and wall < 300.0
    report(3, "threshold vs formula",
           ok, f"empirical G = {emp:.0f} vs formula {GF:.0f} "
               f"(ratio {emp / GF:.3f}, allowed [0.5, 2]); {runs} runs of 150 s, "
               f"wall {wall:.0f} s")


def test_criterion_04_self_sustaining():
    cfg = SimConfig(duration=300.0, mode="adiabatic", loop_mode="closed",
                    initial_tip_xe=10.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ts = run(SYS, quad_chain(gain=2.0 * GF, theta=90.0), cfg)
    mx = ts.channel("mx_rb")
    n = len(mx)
    rms2 = float(np.sqrt(np.mean(mx[n // 4: n // 2] ** 2)))
    rms4 = float(np.sqrt(np.mean(mx[3 * n // 4:] ** 2)))
    ok = abs(rms4 / rms2 - 1.0) < 0.01
    report(4, "self-sustaining oscillation",
           ok, f"final/second quarter RMS = {rms4 / rms2:.5f} at G = 2*G_th "
               f"(target within 1%)")


def test_criterion_05_phase_window():
    ths = np.arange(10.0, 171.0, 5.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s2 = sweep_phase(SYS, 2.0 * GF, ths, duration=150.0)
        s4 = sweep_phase(SYS, 4.0 * GF, ths, duration=150.0)
    idx = [i for i, r in enumerate(s2.results) if r.sustained]
    contiguous = idx == list(range(idx[0], idx[-1] + 1))
    sus2 = {t for t, r in zip(s2.values, s2.results) if r.sustained}
    sus4 = {t for t, r in zip(s4.values, s4.results) if r.sustained}
    nested = sus2 <= sus4
    ok = contiguous and s2.asymmetry <= 10.0 and nested
    report(5, "phase window",
           ok, f"window(2G) = {s2.window} deg, asymmetry {s2.asymmetry:.1f} deg "
               f"(<= 10), contiguous = {contiguous}, window(4G) contains it = {nested}")


def test_criterion_06_zfs_at_gain_1000():
    # literal criterion: G = 1000 and 2G = 2000
    detail = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            z1 = find_zfs(SYS, 1000.0)
            z2 = find_zfs(SYS, 2000.0)
        ok = (80.0 <= z1.theta_zfs < 90.0 and z2.theta_zfs < z1.theta_zfs
              and 0.2e-4 <= abs(z1.slope) <= 5e-4)
        detail = (f"theta_zfs(1000) = {z1.theta_zfs:.2f} deg, "
                  f"theta_zfs(2000) = {z2.theta_zfs:.2f} deg, "
                  f"slope {z1.slope:.2e} Hz/deg")
    except ExperimentError as e:
        ok = False
        detail = (f"unattainable at G = 1000: {e}; the loop threshold floor at "
                  f"defaults is {GF:.0f}-scale (see decisions ledger); the ZFS "
                  f"machinery passes at reachable gain in test_experiments.py")
    report(6, "ZFS at G = 1000", ok, detail)


def test_criterion_07_linewidth_machinery():
    sa = fft_spectrum(make_tone(35.0, 500.0, 400.0, decay_time=10.0), "x")
    lorentz_ok = abs(sa.fwhm - 1.0 / (math.pi * 10.0)) <= 0.05 / (math.pi * 10.0)

    sb = fft_spectrum(make_tone(35.0, 100.0, 2000.0), "x")
    fourier_limit = 0.886 / 2000.0
    undamped_ok = sb.fwhm <= 2.0 * fourier_limit

    sc = fft_spectrum(make_tone(35.0, 100.0, 3000.0, decay_time=1.5), "x")
    sd = fft_spectrum(make_tone(35.0, 100.0, 3000.0, decay_time=112.5), "x")
    ratio = sc.fwhm / sd.fwhm
    ratio_ok = abs(ratio - 75.0) <= 7.5

    ok = lorentz_ok and undamped_ok and ratio_ok
    report(7, "linewidth machinery",
           ok, f"Lorentzian fwhm = {sa.fwhm * 1e3:.2f} mHz (target 31.83 +- 5%), "
               f"undamped fwhm = {sb.fwhm * 1e3:.3f} mHz (<= {2e3 * fourier_limit:.3f}), "
               f"narrowing ratio = {ratio:.1f} (target 75 +- 10%)")


def test_criterion_08_field_conversion():
    res = field_resolution(13.1e-9, 1178.0)
    ok = abs(res.tesla - 1.11e-15) <= 0.01e-15
    report(8, "field conversion",
           ok, f"13.1 nHz / (11.78 MHz/T) = {res.tesla * 1e15:.4f} fT "
               f"(target 1.11 +- 0.01 fT)")


def test_criterion_09_allan_machinery():
    rng = np.random.default_rng(99)
    sigma = 2e-6
    ts = TimeSeries(fs=1.0, channels={"freq": sigma * rng.standard_normal(2 ** 17)})
    res = allan_deviation(ts)
    sel = res.taus <= 128.0
    slope = float(np.polyfit(np.log(res.taus[sel]), np.log(res.adev[sel]), 1)[0])
    const = allan_deviation(TimeSeries(fs=1.0, channels={"freq": np.full(4096, 35.34)}))
    ok = abs(slope + 0.5) <= 0.1 and np.all(const.adev == 0.0)
    report(9, "Allan machinery",
           ok, f"white-FM slope = {slope:.3f} (target -0.5 +- 0.1) over tau 1..128 s; "
               f"constant series adev max = {float(np.max(const.adev)):.1e}")


def test_criterion_10_numerics():
    # RK4 order on pure precession
    inf = math.inf
    psys = SystemParams(
        rb=SpeciesParams(gamma=7e5, t1=inf, t2=inf, m0=0.0),
        xe=SpeciesParams(gamma=1178.0, t1=inf, t2=inf, m0=1.0),
        coupling=CouplingParams(kappa=0.0, q=5.0),
        fields=FieldConfig(b0=vec3(0, 0, 0.030)))
    f = 1178.0 * 0.030
    period = 1.0 / f

    def one_period_error(n):
        st = SpinState(vec3(0, 0, 0), vec3(1.0, 0, 0))
        for _ in range(n):
            st = rk4_step(st, psys, 0.0, period / n)
        return float(np.linalg.norm(st.m_xe - np.array([1.0, 0, 0])))

    ratio = one_period_error(20) / one_period_error(40)
    order_ok = 13.0 <= ratio <= 19.0

    # norm conservation per step, relaxation and drive off
    base = default_system()
    nsys = SystemParams(
        rb=SpeciesParams(gamma=7e5, t1=inf, t2=inf, m0=base.rb.m0),
        xe=SpeciesParams(gamma=1178.0, t1=inf, t2=inf, m0=base.xe.m0),
        coupling=base.coupling, fields=base.fields)
    st = SpinState(base.rb.m0 * np.array([0.5, 0.2, 0.6]),
                   base.xe.m0 * np.array([0.5, -0.2, 0.7]))
    worst = 0.0
    for _ in range(40):
        n_rb, n_xe = np.linalg.norm(st.m_rb), np.linalg.norm(st.m_xe)
        st = rk4_step(st, nsys, 0.0, 1e-6)
        worst = max(worst,
                    abs(np.linalg.norm(st.m_rb) - n_rb) / n_rb,
                    abs(np.linalg.norm(st.m_xe) - n_xe) / n_xe)
    norm_ok = worst <= 1e-10

    # adiabatic vs full closed-loop frequency
    freqs = {}
    for mode, dt in (("adiabatic", 1e-4), ("full", 2e-6)):
        cfg = SimConfig(dt=dt, duration=30.0, mode=mode, loop_mode="closed",
                        initial_tip_xe=10.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ts = run(SYS, quad_chain(gain=2.0 * GF, theta=90.0), cfg)
        freqs[mode] = estimate_frequency(ts.slice_time(15, 30), "mx_xe").frequency
    rel = abs(freqs["full"] - freqs["adiabatic"]) / freqs["adiabatic"]
    mode_ok = rel < 1e-3

    ok = order_ok and norm_ok and mode_ok
    report(10, "numerics",
           ok, f"RK4 dt-halving error ratio = {ratio:.1f} (target 16 +- 3), "
               f"per-step |M| drift = {worst:.1e} (<= 1e-10), "
               f"adiabatic-vs-full rel freq diff = {rel:.2e} (< 1e-3)")
