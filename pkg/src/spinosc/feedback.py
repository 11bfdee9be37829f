"""Discrete-time model of the drive electronics: band-pass amplifier,
phase shifter, gain stage (optional clamp and additive output noise).

The chain converts the sampled alkali transverse magnetization into the
drive-coil field value, one sample per feedback-loop tick:

    drive = clamp(G * shift_theta(bandpass(mx_rb)) + noise)

A chain is stateful and single-owner: one sample stream per chain instance.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .model import TWO_PI

__all__ = [
    "ShifterMode",
    "BandPassSpec",
    "PhaseShifterSpec",
    "BiquadCoeffs",
    "FeedbackChain",
    "design_bandpass",
    "bandpass_response",
    "quadrature_allpass_coeff",
    "allpass_coeff_for_phase",
    "allpass_response",
    "step_bandpass",
    "phase_shift",
    "feedback_step",
]


class ShifterMode(str, Enum):
    IDEAL_DELAY = "ideal_delay"
    QUADRATURE = "quadrature"
    ALLPASS = "allpass"


@dataclass(frozen=True)
class BandPassSpec:
    """Center frequency (Hz), quality factor, loop sample rate (Hz)."""

    f_center: float = 35.0
    q_factor: float = 10.0
    fs: float = 1000.0

    def __post_init__(self):
        if not (0.0 < self.f_center < self.fs / 2.0):
            raise ValueError(
                f"f_center must lie in (0, fs/2), got {self.f_center} at fs={self.fs}")
        if not self.q_factor > 0:
            raise ValueError(f"q_factor must be > 0, got {self.q_factor}")


@dataclass(frozen=True)
class PhaseShifterSpec:
    """Requested lag theta (degrees, [0, 360)) exact at f_ref for the chosen mode."""

    theta: float = 90.0
    mode: ShifterMode = ShifterMode.QUADRATURE
    f_ref: float = 35.0
    max_delay_samples: int = 4096

    def __post_init__(self):
        if not (0.0 <= self.theta < 360.0):
            raise ValueError(f"theta must be in [0, 360), got {self.theta}")
        if not self.f_ref > 0:
            raise ValueError(f"f_ref must be > 0, got {self.f_ref}")
        object.__setattr__(self, "mode", ShifterMode(self.mode))


class BiquadCoeffs(NamedTuple):
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float


def design_bandpass(spec: BandPassSpec) -> BiquadCoeffs:
    """Second-order resonator by pole placement.

    Poles at radius exp(-pi*f0/(Q*fs)) and angle 2*pi*f0/fs, zeros at z = +-1
    (DC and Nyquist), numerator scaled for exactly unity gain at f0.
    """
    r = math.exp(-math.pi * spec.f_center / (spec.q_factor * spec.fs))
    w0 = TWO_PI * spec.f_center / spec.fs
    a1 = -2.0 * r * math.cos(w0)
    a2 = r * r
    raw = BiquadCoeffs(1.0, 0.0, -1.0, a1, a2)
    b0 = 1.0 / abs(bandpass_response(raw, spec.f_center, spec.fs))
    return BiquadCoeffs(b0, 0.0, -b0, a1, a2)


def bandpass_response(coeffs: BiquadCoeffs, f: float, fs: float) -> complex:
    """Frequency response H(e^{j*2*pi*f/fs}) of a biquad."""
    z1 = cmath.exp(-1j * TWO_PI * f / fs)
    z2 = z1 * z1
    return ((coeffs.b0 + coeffs.b1 * z1 + coeffs.b2 * z2)
            / (1.0 + coeffs.a1 * z1 + coeffs.a2 * z2))


def quadrature_allpass_coeff(f_ref: float, fs: float) -> float:
    """First-order allpass coefficient giving exactly -90 deg at f_ref.

    H(z) = (a + z^-1)/(1 + a*z^-1) with a = -(1 - t)/(1 + t), t = tan(pi*f_ref/fs).
    """
    t = math.tan(math.pi * f_ref / fs)
    return -(1.0 - t) / (1.0 + t)


def allpass_response(a: float, f: float, fs: float) -> complex:
    z1 = cmath.exp(-1j * TWO_PI * f / fs)
    return (a + z1) / (1.0 + a * z1)


def allpass_coeff_for_phase(theta_deg: float, f_ref: float, fs: float) -> float:
    """Coefficient of a first-order allpass whose lag at f_ref is theta_deg.

    Valid for theta in (0, 180); the phase is monotone in the coefficient, so
    plain bisection suffices.
    """
    if not (0.0 < theta_deg < 180.0):
        raise ValueError("single allpass section covers theta in (0, 180) only")
    target = -math.radians(theta_deg)

    def phase(a: float) -> float:
        return cmath.phase(allpass_response(a, f_ref, fs))

    lo, hi = -1.0 + 1e-12, 1.0 - 1e-12
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phase(mid) > target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class FeedbackChain:
    """Band-pass -> phase shifter -> gain, with internal filter registers."""

    bandpass: BandPassSpec = field(default_factory=BandPassSpec)
    shifter: PhaseShifterSpec = field(default_factory=PhaseShifterSpec)
    gain: float = 0.0
    saturation: Optional[float] = None  # clamp level in G, None = off
    noise_std: float = 0.0  # additive white noise on the output, G rms

    def __post_init__(self):
        if self.gain < 0:
            raise ValueError(f"gain must be >= 0, got {self.gain}")
        if self.saturation is not None and not self.saturation > 0:
            raise ValueError("saturation level must be > 0 when set")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        self.coeffs = design_bandpass(self.bandpass)
        self._bx1 = self._bx2 = 0.0  # biquad input registers
        self._by1 = self._by2 = 0.0  # biquad output registers
        self._rng: Optional[np.random.Generator] = None
        self._init_shifter()

    def _init_shifter(self):
        sh = self.shifter
        fs = self.bandpass.fs
        theta = sh.theta % 360.0
        if sh.mode is ShifterMode.IDEAL_DELAY:
            self.delay_seconds = theta / (360.0 * sh.f_ref)
            n = int(round(fs * self.delay_seconds))
            if n > sh.max_delay_samples:
                raise ValueError(
                    f"required delay of {n} samples exceeds buffer capacity "
                    f"{sh.max_delay_samples}")
            self.delay_samples = n
            self._dbuf = [0.0] * n
            self._dpos = 0
        elif sh.mode is ShifterMode.QUADRATURE:
            self.ap_a = quadrature_allpass_coeff(sh.f_ref, fs)
            self.cos_theta = math.cos(math.radians(theta))
            self.sin_theta = math.sin(math.radians(theta))
            self._apx = self._apy = 0.0
        else:  # ALLPASS: optional sign flip plus one tuned section
            self.negate = theta >= 180.0
            t = theta - 180.0 if self.negate else theta
            self.ap_a = None if t == 0.0 else allpass_coeff_for_phase(t, sh.f_ref, fs)
            self._apx = self._apy = 0.0

    def seed_noise(self, seed: Optional[int]) -> None:
        self._rng = np.random.default_rng(seed)

    def step_bandpass(self, x: float) -> float:
        c = self.coeffs
        y = (c.b0 * x + c.b1 * self._bx1 + c.b2 * self._bx2
             - c.a1 * self._by1 - c.a2 * self._by2)
        self._bx2, self._bx1 = self._bx1, x
        self._by2, self._by1 = self._by1, y
        return y

    def _step_allpass(self, x: float) -> float:
        y = self.ap_a * (x - self._apy) + self._apx
        self._apx, self._apy = x, y
        return y

    def phase_shift(self, x: float) -> float:
        sh = self.shifter
        if sh.mode is ShifterMode.IDEAL_DELAY:
            if self.delay_samples == 0:
                return x
            y = self._dbuf[self._dpos]
            self._dbuf[self._dpos] = x
            self._dpos = (self._dpos + 1) % self.delay_samples
            return y
        if sh.mode is ShifterMode.QUADRATURE:
            xq = self._step_allpass(x)
            return self.cos_theta * x + self.sin_theta * xq
        y = -x if self.negate else x
        return y if self.ap_a is None else self._step_allpass(y)

    def feedback_step(self, mx_rb: float) -> float:
        d = self.gain * self.phase_shift(self.step_bandpass(mx_rb))
        if self.noise_std > 0.0:
            if self._rng is None:
                self._rng = np.random.default_rng()
            d += self.noise_std * self._rng.standard_normal()
        if self.saturation is not None:
            d = max(-self.saturation, min(self.saturation, d))
        return d

    def reset(self) -> None:
        """Zero all filter registers (does not reseed noise)."""
        self._bx1 = self._bx2 = self._by1 = self._by2 = 0.0
        if self.shifter.mode is ShifterMode.IDEAL_DELAY:
            self._dbuf = [0.0] * self.delay_samples
            self._dpos = 0
        else:
            self._apx = self._apy = 0.0


def step_bandpass(chain: FeedbackChain, x: float) -> float:
    """One sample through the band-pass stage (registers advance)."""
    return chain.step_bandpass(x)


def phase_shift(chain: FeedbackChain, x: float) -> float:
    """One sample through the phase-shifter stage (registers advance)."""
    return chain.phase_shift(x)


def feedback_step(chain: FeedbackChain, mx_rb: float) -> float:
    """Full chain: gain * shift(bandpass(mx_rb)), noise added, clamp applied."""
    return chain.feedback_step(mx_rb)
