"""Signal characterization: spectra, precision frequency estimation, envelope
fits, Allan deviation, Welch PSD, and frequency-to-field conversion.

Conventions: fwhm is the half-power (-3 dB) full width of the magnitude
spectrum, which matches both the rectangular-window Fourier limit 0.886/T and
the Lorentzian width 1/(pi*T2) of an exponentially decaying tone.  SNR is the
spectral peak magnitude over the RMS of the magnitude floor excluding
+-10 FWHM around the peak (a stated, fixed definition: ratios between runs are
meaningful, absolute values depend on it).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .sim import TimeSeries

__all__ = [
    "EstimationError",
    "SpectrumResult",
    "AllanResult",
    "PSDResult",
    "FrequencyEstimate",
    "EnvelopeFit",
    "FieldResolution",
    "fft_spectrum",
    "estimate_frequency",
    "fit_exp_envelope",
    "allan_deviation",
    "welch_psd",
    "field_resolution",
    "analytic_envelope",
    "spectrum_to_csv",
    "allan_to_csv",
    "write_summary",
]


class EstimationError(RuntimeError):
    """An estimator failed to converge or the data violates its model."""


@dataclass
class SpectrumResult:
    freqs: np.ndarray
    magnitude: np.ndarray
    peak_freq: float
    fwhm: float
    snr: float
    window: str


@dataclass
class AllanResult:
    taus: np.ndarray
    adev: np.ndarray
    confidence: np.ndarray  # 1 sigma


@dataclass
class PSDResult:
    freqs: np.ndarray
    psd: np.ndarray  # (channel units)^2 / Hz


class FrequencyEstimate(NamedTuple):
    frequency: float
    sigma: float
    amplitude: float


class EnvelopeFit(NamedTuple):
    amplitude: float
    decay_time: float  # seconds; inf = no measurable decay; negative = growing
    growing: bool


class FieldResolution(NamedTuple):
    gauss: float
    tesla: float


def _get_channel(ts: TimeSeries, channel: Optional[str]) -> np.ndarray:
    if channel is None:
        if len(ts.channels) != 1:
            raise ValueError("channel must be named when the series has several")
        return next(iter(ts.channels.values()))
    return ts.channel(channel)


def fft_spectrum(ts: TimeSeries, channel: Optional[str] = None,
                 window: str = "rect") -> SpectrumResult:
    """One-sided magnitude spectrum with interpolated peak, width and SNR."""
    x = np.asarray(_get_channel(ts, channel), dtype=float)
    n = len(x)
    if n < 64:
        raise ValueError(f"need >= 64 samples, got {n}")
    if np.std(x) == 0.0:
        raise ValueError("constant input has no spectrum")
    if window == "rect":
        w = np.ones(n)
    elif window == "hann":
        w = np.hanning(n)
    else:
        raise ValueError(f"unknown window {window!r}")
    xw = (x - np.mean(x)) * w
    # 4x zero padding interpolates the DTFT so peak and width measurements
    # are window-shape limited, not bin-grid limited
    nfft = 4 * n
    mag = np.abs(np.fft.rfft(xw, n=nfft))
    freqs = np.fft.rfftfreq(nfft, d=1.0 / ts.fs)

    ipk = 1 + int(np.argmax(mag[1:]))  # exclude the DC bin
    # parabolic interpolation on log magnitude
    if 1 <= ipk < len(mag) - 1 and mag[ipk - 1] > 0 and mag[ipk + 1] > 0:
        la, lb, lc = np.log(mag[ipk - 1: ipk + 2])
        denom = la - 2 * lb + lc
        delta = 0.5 * (la - lc) / denom if denom != 0 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
    else:
        delta = 0.0
    df = ts.fs / nfft
    peak_freq = (ipk + delta) * df
    peak_mag = float(mag[ipk])

    half = peak_mag / math.sqrt(2.0)
    fwhm = _halfpower_width(freqs, mag, ipk, half)

    # noise floor: exclude +-10 fwhm (at least +-3 bins) around the peak
    guard = max(3, int(round(10.0 * fwhm / df)))
    mask = np.ones(len(mag), dtype=bool)
    mask[max(0, ipk - guard): ipk + guard + 1] = False
    mask[0] = False
    floor = mag[mask]
    rms = float(np.sqrt(np.mean(floor ** 2))) if len(floor) else 0.0
    snr = peak_mag / rms if rms > 0 else math.inf
    return SpectrumResult(freqs, mag, peak_freq, fwhm, snr, window)


def _halfpower_width(freqs, mag, ipk, half) -> float:
    df = freqs[1] - freqs[0]

    def cross(direction: int) -> float:
        i = ipk
        while 0 < i < len(mag) - 1:
            j = i + direction
            if mag[j] < half:
                # linear interpolation between bins i and j
                frac = (mag[i] - half) / (mag[i] - mag[j])
                return freqs[i] + direction * frac * df
            i = j
        return freqs[i]

    lo, hi = cross(-1), cross(+1)
    return max(hi - lo, df * 1e-6)


def _sinusoid_design(t: np.ndarray, f: float) -> np.ndarray:
    w = 2.0 * math.pi * f
    return np.column_stack([np.sin(w * t), np.cos(w * t), np.ones_like(t)])


def _residual_ss(t, x, f):
    m = _sinusoid_design(t, f)
    coef, *_ = np.linalg.lstsq(m, x, rcond=None)
    r = x - m @ coef
    return float(r @ r), coef, r


def estimate_frequency(ts: TimeSeries, channel: Optional[str] = None,
                       f_guess: Optional[float] = None) -> FrequencyEstimate:
    """Least-squares single-tone fit A*sin(2*pi*f*t + phi) + C.

    The amplitude/phase/offset are projected out for each trial frequency
    (linear subproblem) and the concentrated residual is minimized over f by
    golden-section search plus parabolic polish, so the frequency resolution
    is limited by the data, not by a solver tolerance.  Raises
    EstimationError instead of silently returning the guess.
    """
    x = np.asarray(_get_channel(ts, channel), dtype=float)
    n = len(x)
    if n < 16:
        raise ValueError(f"need >= 16 samples, got {n}")
    t = np.arange(n) / ts.fs
    t_obs = n / ts.fs
    if f_guess is None:
        spec = fft_spectrum(ts, channel, "rect")
        f_guess = spec.peak_freq
    if not 0 < f_guess < ts.fs / 2:
        raise ValueError(f"f_guess must be in (0, fs/2), got {f_guess}")

    half_width = 1.5 / t_obs
    for attempt in range(2):
        lo = max(f_guess - half_width, 0.1 / t_obs)
        hi = min(f_guess + half_width, 0.499 * ts.fs)
        f_fit = _golden_min(lambda f: _residual_ss(t, x, f)[0], lo, hi)
        at_edge = (f_fit - lo) < 1e-3 / t_obs or (hi - f_fit) < 1e-3 / t_obs
        if not at_edge:
            break
        half_width *= 4.0
    else:
        raise EstimationError(
            f"frequency fit did not converge near f_guess={f_guess}")

    ss, coef, r = _residual_ss(t, x, f_fit)
    a, b, c = coef
    amp = math.hypot(a, b)
    # A large residual is fine when it is envelope mismatch of the same
    # carrier (spectrum hugging f_fit); a coherent residual at a different
    # frequency means a second tone and the single-tone model is ambiguous.
    sig_rms = float(np.std(x))
    res_rms = math.sqrt(ss / n)
    if sig_rms > 0 and res_rms > 0.6 * sig_rms:
        rmag = np.abs(np.fft.rfft(r - np.mean(r)))
        f_res = (1 + int(np.argmax(rmag[1:]))) * ts.fs / n
        if abs(f_res - f_fit) > 2.0 / t_obs:
            raise EstimationError(
                f"single-tone model is ambiguous: residual rms is "
                f"{res_rms / sig_rms:.2f} of the signal rms with a second "
                f"component near {f_res:.6g} Hz")

    # 1-sigma from the full 4-parameter Jacobian at the optimum
    w = 2.0 * math.pi * f_fit
    dmodel_df = 2.0 * math.pi * t * (a * np.cos(w * t) - b * np.sin(w * t))
    jac = np.column_stack([_sinusoid_design(t, f_fit), dmodel_df])
    dof = max(n - 4, 1)
    var = ss / dof
    try:
        cov = var * np.linalg.inv(jac.T @ jac)
        sigma = math.sqrt(max(cov[3, 3], 0.0))
    except np.linalg.LinAlgError:
        sigma = math.inf
    return FrequencyEstimate(float(f_fit), float(sigma), float(amp))


def _golden_min(fun, lo, hi, iters: int = 200) -> float:
    """Golden-section minimization followed by a parabolic polish."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if b - a < 1e-15 * max(abs(a), 1.0):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    xm = 0.5 * (a + b)
    # parabolic step using three close points
    h = max(1e-12, 1e-9 * (hi - lo))
    f0, fp, fm = fun(xm), fun(xm + h), fun(xm - h)
    denom = fp - 2 * f0 + fm
    if denom > 0:
        step = 0.5 * h * (fm - fp) / denom
        if abs(step) < 2 * h and lo < xm + step < hi and fun(xm + step) <= f0:
            xm += step
    return xm


def analytic_envelope(x: np.ndarray) -> np.ndarray:
    """Magnitude of the analytic signal (FFT Hilbert method)."""
    n = len(x)
    spec = np.fft.fft(np.asarray(x, dtype=float))
    h = np.zeros(n)
    if n % 2 == 0:
        h[0] = h[n // 2] = 1.0
        h[1: n // 2] = 2.0
    else:
        h[0] = 1.0
        h[1: (n + 1) // 2] = 2.0
    return np.abs(np.fft.ifft(spec * h))


def fit_exp_envelope(ts: TimeSeries, channel: Optional[str] = None) -> EnvelopeFit:
    """Exponential fit of the oscillation envelope.

    Envelope from the analytic-signal magnitude (5% edge trim), then a
    Gauss-Newton fit of A*exp(-t/tau) seeded by the log-linear solution.
    decay_time is +inf when the fitted rate is below 1/(10*T_obs), negative
    (with growing=True) for a growing envelope.
    """
    x = np.asarray(_get_channel(ts, channel), dtype=float)
    n = len(x)
    if n < 64:
        raise ValueError(f"need >= 64 samples for an envelope fit, got {n}")
    env = analytic_envelope(x - np.mean(x))
    trim = max(2, n // 20)
    env = env[trim: n - trim]
    t = (trim + np.arange(len(env))) / ts.fs
    t_obs = n / ts.fs
    good = env > 0
    if np.count_nonzero(good) < 32:
        raise ValueError("too few positive envelope points")
    env, t = env[good], t[good]

    # log-linear seed
    ln = np.log(env)
    a1, a0 = np.polyfit(t, ln, 1)
    amp, rate = math.exp(a0), -a1
    # Gauss-Newton on A*exp(-rate*t)
    for _ in range(60):
        e = np.exp(-rate * t)
        model = amp * e
        r = env - model
        j = np.column_stack([e, -amp * t * e])
        try:
            step, *_ = np.linalg.lstsq(j, r, rcond=None)
        except np.linalg.LinAlgError:
            break
        amp += step[0]
        rate += step[1]
        if abs(step[0]) < 1e-14 * max(abs(amp), 1e-300) and \
           abs(step[1]) < 1e-14 * max(abs(rate), 1e-30):
            break

    if abs(rate) < 1.0 / (10.0 * t_obs):
        return EnvelopeFit(float(amp), math.inf, False)
    if rate < 0:
        return EnvelopeFit(float(amp), 1.0 / rate, True)
    return EnvelopeFit(float(amp), 1.0 / rate, False)


def allan_deviation(freq_series: TimeSeries, taus: Optional[Sequence[float]] = None,
                    channel: Optional[str] = None) -> AllanResult:
    """Overlapping Allan deviation of a uniformly sampled frequency series.

    taus defaults to powers of two times the sample spacing, up to half the
    record; explicitly requested taus beyond that are skipped with a warning.
    """
    y = np.asarray(_get_channel(freq_series, channel), dtype=float)
    n = len(y)
    if n < 4:
        raise ValueError("need at least 4 frequency samples")
    tau0 = 1.0 / freq_series.fs
    t_obs = n * tau0
    if taus is None:
        ms = []
        m = 1
        while m <= n // 2 and m * tau0 <= t_obs / 2:
            ms.append(m)
            m *= 2
    else:
        ms = []
        for tau in taus:
            m = int(round(tau / tau0))
            if m < 1 or m * tau0 > t_obs / 2 or 2 * m >= n:
                warnings.warn(f"tau={tau:g}s outside usable range, skipped",
                              stacklevel=2)
                continue
            ms.append(m)
        if not ms:
            raise ValueError("no usable tau values")

    # Allan variance is offset-invariant; removing the mean keeps the running
    # sums well conditioned when the fluctuations are tiny against the carrier
    y = y - np.mean(y)
    csum = np.concatenate([[0.0], np.cumsum(y)])
    taus_out, adev, conf = [], [], []
    for m in ms:
        avg = (csum[m:] - csum[:-m]) / m  # overlapping m-sample means
        d = avg[m:] - avg[:-m]
        if len(d) < 1:
            continue
        avar = 0.5 * float(np.mean(d * d))
        sigma = math.sqrt(avar)
        edf = max(n / m - 1.0, 1.0)
        taus_out.append(m * tau0)
        adev.append(sigma)
        conf.append(sigma / math.sqrt(edf))
    return AllanResult(np.asarray(taus_out), np.asarray(adev), np.asarray(conf))


def welch_psd(ts: TimeSeries, channel: Optional[str] = None,
              segment_length: int = 1024, overlap: float = 0.5) -> PSDResult:
    """Averaged periodogram, Hann window, one-sided density normalization
    (integrated PSD equals the signal variance)."""
    x = np.asarray(_get_channel(ts, channel), dtype=float)
    n = len(x)
    seg = int(segment_length)
    if seg < 8 or seg > n:
        raise ValueError(f"segment_length must be in [8, {n}], got {segment_length}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    step = max(1, int(round(seg * (1.0 - overlap))))
    w = np.hanning(seg)
    wpow = float(np.sum(w * w))
    acc = np.zeros(seg // 2 + 1)
    count = 0
    for start in range(0, n - seg + 1, step):
        s = x[start: start + seg]
        s = (s - np.mean(s)) * w
        acc += np.abs(np.fft.rfft(s)) ** 2
        count += 1
    if count == 0:
        raise ValueError("no complete segments")
    pxx = acc / (count * ts.fs * wpow)
    pxx[1:] *= 2.0
    if seg % 2 == 0:
        pxx[-1] /= 2.0
    freqs = np.fft.rfftfreq(seg, d=1.0 / ts.fs)
    return PSDResult(freqs, pxx)


def field_resolution(delta_f: float, gamma: float) -> FieldResolution:
    """Convert a frequency resolution to field units: delta_f / gamma.

    gamma in Hz/G; returns both Gauss and Tesla (1 G = 1e-4 T).
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    g = delta_f / gamma
    return FieldResolution(g, g * 1e-4)


def spectrum_to_csv(result: SpectrumResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("freq_hz,magnitude\n")
        for f, m in zip(result.freqs, result.magnitude):
            fh.write(f"{f:.9g},{m:.9g}\n")


def allan_to_csv(result: AllanResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("tau_s,adev,confidence_1sigma\n")
        for t, a, c in zip(result.taus, result.adev, result.confidence):
            fh.write(f"{t:.9g},{a:.9g},{c:.9g}\n")


def write_summary(pairs: dict, path) -> None:
    """Flat ``key = value`` text, one per line; floats at 9 significant digits."""
    with open(path, "w") as fh:
        for k, v in pairs.items():
            if isinstance(v, float):
                fh.write(f"{k} = {v:.9g}\n")
            else:
                fh.write(f"{k} = {v}\n")
