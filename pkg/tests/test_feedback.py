import cmath
import math

import numpy as np
import pytest

from spinosc import BandPassSpec, FeedbackChain, PhaseShifterSpec
from spinosc.feedback import (allpass_response, bandpass_response,
                              design_bandpass, quadrature_allpass_coeff)

from _util import quad_chain, run_stream, steady_tone_response

FS = 1000.0
SPEC = BandPassSpec(f_center=35.0, q_factor=10.0, fs=FS)


def analog_prototype_mag(f, f0=35.0, q=10.0):
    return (f * f0 / q) / math.hypot(f0 ** 2 - f ** 2, f * f0 / q)


class TestBandpassDesign:
    def test_unity_gain_at_center(self):
        c = design_bandpass(SPEC)
        assert abs(bandpass_response(c, 35.0, FS)) == pytest.approx(1.0, abs=1e-3)

    def test_half_power_band_edges(self):
        # passing band ~35 +- 1.75 Hz
        c = design_bandpass(SPEC)
        for f in (33.25, 36.75):
            assert abs(bandpass_response(c, f, FS)) == pytest.approx(0.707, abs=0.02)

    def test_out_of_band_rejection_at_10hz(self):
        # analog prototype gives ~0.031 at 10 Hz; allow digital-design margin
        c = design_bandpass(SPEC)
        assert abs(bandpass_response(c, 10.0, FS)) < 0.11
        assert analog_prototype_mag(10.0) == pytest.approx(0.031, abs=0.005)

    def test_center_above_nyquist_rejected(self):
        with pytest.raises(ValueError):
            BandPassSpec(f_center=600.0, q_factor=10.0, fs=FS)

    def test_poles_inside_unit_circle_randomized(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            fs = rng.uniform(200.0, 5000.0)
            f0 = rng.uniform(1.0, 0.45 * fs)
            q = rng.uniform(0.5, 50.0)
            c = design_bandpass(BandPassSpec(f_center=f0, q_factor=q, fs=fs))
            roots = np.roots([1.0, c.a1, c.a2])
            assert np.all(np.abs(roots) < 1.0)


class TestStepBandpass:
    def test_zero_in_zero_out(self):
        chain = FeedbackChain(bandpass=SPEC, gain=1.0)
        assert all(chain.step_bandpass(0.0) == 0.0 for _ in range(100))

    def test_impulse_response_transform_matches_design(self):
        # oracle: DTFT of the measured impulse response
        chain = FeedbackChain(bandpass=SPEC, gain=1.0)
        n = 16384
        h = np.array([chain.step_bandpass(1.0 if i == 0 else 0.0)
                      for i in range(n)])
        k = np.arange(n)
        for f in (5.0, 20.0, 33.25, 35.0, 36.75, 60.0, 200.0):
            dtft = np.sum(h * np.exp(-2j * np.pi * f * k / FS))
            ref = bandpass_response(chain.coeffs, f, FS)
            assert abs(dtft - ref) <= 1e-6

    def test_steady_tone_unity_amplitude_at_center(self):
        gain, _ = steady_tone_response(
            lambda: quad_chain(gain=1.0, theta=0.0), 35.0, FS)
        assert gain == pytest.approx(1.0, abs=0.01)


class TestPhaseShift:
    def test_theta_zero_is_identity_ideal_delay(self):
        chain = FeedbackChain(
            bandpass=SPEC,
            shifter=PhaseShifterSpec(theta=0.0, mode="ideal_delay", f_ref=35.0),
            gain=1.0)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(200)
        assert all(chain.phase_shift(float(v)) == v for v in x)

    def test_quarter_period_delay_arithmetic(self):
        # theta/(360*f_ref) = 90/(360*35) = 7.1429 ms
        chain = FeedbackChain(
            bandpass=SPEC,
            shifter=PhaseShifterSpec(theta=90.0, mode="ideal_delay", f_ref=35.0),
            gain=1.0)
        assert chain.delay_seconds == pytest.approx(1.0 / (4 * 35.0), rel=1e-9)
        assert chain.delay_samples == round(FS * 90.0 / (360.0 * 35.0))

    @pytest.mark.parametrize("mode,f_ref", [("quadrature", 35.0),
                                            ("ideal_delay", 25.0)])
    def test_half_period_inverts(self, mode, f_ref):
        # 25 Hz quantizes the 180 deg delay to exactly 20 samples at 1 kHz
        chain = FeedbackChain(
            bandpass=SPEC,
            shifter=PhaseShifterSpec(theta=180.0, mode=mode, f_ref=f_ref),
            gain=1.0)
        t = np.arange(6000) / FS
        x = np.sin(2 * np.pi * f_ref * t)
        y = np.array([chain.phase_shift(float(v)) for v in x])
        assert np.max(np.abs(y[1000:] + x[1000:])) <= 0.01

    def test_delay_exceeding_capacity_rejected(self):
        with pytest.raises(ValueError):
            FeedbackChain(
                bandpass=SPEC,
                shifter=PhaseShifterSpec(theta=359.0, mode="ideal_delay",
                                         f_ref=0.01, max_delay_samples=64),
                gain=1.0)

    def test_quadrature_allpass_is_exactly_quadrature_at_fref(self):
        a = quadrature_allpass_coeff(35.0, FS)
        h = allpass_response(a, 35.0, FS)
        assert abs(h) == pytest.approx(1.0, rel=1e-12)
        assert math.degrees(cmath.phase(h)) == pytest.approx(-90.0, abs=1e-9)

    @pytest.mark.parametrize("theta", [0, 30, 60, 90, 120, 150, 180])
    @pytest.mark.parametrize("mode,tol", [("ideal_delay", 6.3),
                                          ("quadrature", 0.1),
                                          ("allpass", 0.2)])
    def test_phase_accuracy_per_mode(self, theta, mode, tol):
        # contract is on the shifter stage alone, steady tone at f_ref
        chain = FeedbackChain(
            bandpass=SPEC,
            shifter=PhaseShifterSpec(theta=float(theta), mode=mode, f_ref=35.0),
            gain=1.0)
        n_settle, n_meas = 3000, 3000
        t = np.arange(n_settle + n_meas) / FS
        x = np.sin(2 * np.pi * 35.0 * t)
        y = np.array([chain.phase_shift(float(v)) for v in x])
        design = np.column_stack([np.sin(2 * np.pi * 35.0 * t[n_settle:]),
                                  np.cos(2 * np.pi * 35.0 * t[n_settle:])])
        a, b = np.linalg.lstsq(design, y[n_settle:], rcond=None)[0]
        lag = math.degrees(math.atan2(-b, a)) % 360.0
        err = (lag - theta + 180.0) % 360.0 - 180.0
        assert abs(err) <= tol


class TestFeedbackStep:
    def test_zero_gain_open_loop(self):
        chain = quad_chain(gain=0.0)
        rng = np.random.default_rng(1)
        assert all(chain.feedback_step(float(v)) == 0.0
                   for v in rng.standard_normal(500))

    def test_threshold_scale_drive_amplitude(self):
        # G=1000, steady 35 Hz tone of 0.02 uG -> 20 uG drive
        def factory():
            return quad_chain(gain=1000.0, theta=90.0)
        gain, _ = steady_tone_response(factory, 35.0, FS, amplitude=2e-8,
                                       settle=3.0, measure=3.0)
        assert gain * 2e-8 == pytest.approx(20e-6, rel=0.02)

    def test_saturation_clamps(self):
        chain = quad_chain(gain=1000.0, theta=90.0, saturation=10e-6)
        t = np.arange(5000) / FS
        x = 2e-8 * np.sin(2 * np.pi * 35.0 * t)
        y = run_stream(chain, x)
        assert np.max(np.abs(y)) <= 10e-6 + 1e-18
        assert np.isclose(np.max(np.abs(y)), 10e-6)

    def test_linearity_below_saturation(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(400) * 1e-8
        alpha = 3.7
        y1 = run_stream(quad_chain(gain=500.0, theta=60.0), x)
        y2 = run_stream(quad_chain(gain=500.0, theta=60.0), alpha * x)
        scale = np.max(np.abs(y1)) * alpha
        assert np.allclose(y2, alpha * y1, rtol=1e-9, atol=1e-12 * scale)

    def test_bounded_input_bounded_output(self):
        rng = np.random.default_rng(3)
        chain = quad_chain(gain=1.0, theta=45.0)
        x = rng.uniform(-1, 1, 20000)
        y = run_stream(chain, x)
        assert np.all(np.isfinite(y))
        assert np.max(np.abs(y)) < 100.0

    def test_noise_is_seeded_and_additive(self):
        out = []
        for _ in range(2):
            chain = quad_chain(gain=0.0, noise_std=1e-9)
            chain.seed_noise(42)
            out.append(run_stream(chain, np.zeros(100)))
        assert np.array_equal(out[0], out[1])
        assert np.std(out[0]) == pytest.approx(1e-9, rel=0.3)


class TestCompositionOrder:
    def test_bandpass_and_shifter_commute_on_single_tone(self):
        # both stages are LTI: steady-state single-tone response is identical
        f = 35.0
        n_settle, n_meas = 4000, 3000
        t = np.arange(n_settle + n_meas) / FS
        x = np.sin(2 * np.pi * f * t)

        c1 = quad_chain(gain=1.0, theta=72.0)
        y1 = np.array([c1.phase_shift(c1.step_bandpass(float(v))) for v in x])
        c2 = quad_chain(gain=1.0, theta=72.0)
        y2 = np.array([c2.step_bandpass(c2.phase_shift(float(v))) for v in x])
        assert np.max(np.abs(y1[n_settle:] - y2[n_settle:])) <= 1e-6
