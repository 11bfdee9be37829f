"""Time integration of the coupled system.

Fixed-step RK4 with the feedback drive sampled at the loop rate and held by
zero-order hold over the inner substeps.  Two dynamics modes:

* ``full`` -- both species integrated (resolves the alkali dynamics, slow);
* ``adiabatic`` -- noble gas integrated, alkali replaced by its quasi-static
  Bloch solution at every RK4 stage (valid when the alkali settles much
  faster than the noble-gas precession period).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._engine import get_kernel
from .feedback import FeedbackChain, ShifterMode
from .model import TWO_PI, SpinState, StateDerivative, SystemParams, bloch_rhs

__all__ = ["SimConfig", "TimeSeries", "rk4_step", "adiabatic_rb", "run"]

BASE_CHANNELS = ("mx_rb", "drive_by")
XE_CHANNELS = ("mx_xe", "my_xe", "mz_xe", "mz_rb")


@dataclass
class SimConfig:
    dt: float = 1e-4
    fs_loop: float = 1000.0
    duration: float = 10.0
    mode: str = "adiabatic"  # "full" | "adiabatic"
    loop_mode: str = "closed"  # "open" | "closed"
    initial_tip_xe: float = 10.0  # degrees about x
    initial_tip_rb: float = 0.0
    record_decimation: int = 1
    noise_seed: Optional[int] = None
    record_xe: bool = True
    theta_drift: float = 0.0  # deg/s, quadrature shifter only

    DT_FULL_DEFAULT = 2e-6

    def __post_init__(self):
        if self.mode not in ("full", "adiabatic"):
            raise ValueError(f"mode must be 'full' or 'adiabatic', got {self.mode!r}")
        if self.loop_mode not in ("open", "closed"):
            raise ValueError(f"loop_mode must be 'open' or 'closed', got {self.loop_mode!r}")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        n_sub = 1.0 / (self.dt * self.fs_loop)
        if abs(n_sub - round(n_sub)) > 1e-9 * n_sub or round(n_sub) < 1:
            raise ValueError(
                f"1/dt must be an integer multiple of fs_loop "
                f"(dt={self.dt}, fs_loop={self.fs_loop})")
        for name in ("initial_tip_xe", "initial_tip_rb"):
            v = getattr(self, name)
            if not (0.0 <= v <= 180.0):
                raise ValueError(f"{name} must be in [0, 180] degrees, got {v}")
        if self.record_decimation < 1 or self.record_decimation != int(self.record_decimation):
            raise ValueError("record_decimation must be an integer >= 1")

    @property
    def n_sub(self) -> int:
        return int(round(1.0 / (self.dt * self.fs_loop)))

    @property
    def n_loop(self) -> int:
        return int(round(self.duration * self.fs_loop))


@dataclass
class TimeSeries:
    """Uniformly sampled named channels."""

    fs: float
    t0: float = 0.0
    channels: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError("fs must be > 0")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channels have unequal lengths: {lengths}")

    def __len__(self) -> int:
        return len(next(iter(self.channels.values()))) if self.channels else 0

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / self.fs

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise KeyError(f"no channel {name!r}; have {sorted(self.channels)}") from None

    def slice_time(self, t_start: float, t_stop: float | None = None) -> "TimeSeries":
        """Sub-series with t_start <= t < t_stop (times relative to t0=0 origin)."""
        i0 = max(0, int(math.ceil((t_start - self.t0) * self.fs - 1e-9)))
        i1 = len(self) if t_stop is None else min(
            len(self), int(math.floor((t_stop - self.t0) * self.fs + 1e-9)))
        ch = {k: v[i0:i1] for k, v in self.channels.items()}
        return TimeSeries(self.fs, self.t0 + i0 / self.fs, ch, dict(self.meta))

    def to_csv(self, path) -> None:
        """Header ``t,<channel>,...``; 9 significant digits throughout."""
        names = sorted(self.channels)
        cols = [self.t] + [self.channels[n] for n in names]
        with open(path, "w") as fh:
            fh.write("t," + ",".join(names) + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{v:.9g}" for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        with open(path) as fh:
            header = fh.readline().strip()
            names = header.split(",")
            if names[0] != "t":
                raise ValueError(f"line 1: expected first column 't', got {names[0]!r}")
            ncol = len(names)
            rows = []
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != ncol:
                    raise ValueError(
                        f"line {lineno}: expected {ncol} columns, got {len(parts)}")
                try:
                    rows.append([float(p) for p in parts])
                except ValueError:
                    raise ValueError(f"line {lineno}: non-numeric value") from None
        if len(rows) < 2:
            raise ValueError("need at least 2 samples")
        data = np.asarray(rows)
        t = data[:, 0]
        dts = np.diff(t)
        fs = 1.0 / np.mean(dts)
        if np.max(np.abs(dts * fs - 1.0)) > 1e-3:
            raise ValueError("time column is not uniformly sampled")
        channels = {n: np.ascontiguousarray(data[:, i])
                    for i, n in enumerate(names) if i > 0}
        return cls(fs=fs, t0=float(t[0]), channels=channels)


def rk4_step(state: SpinState, sys: SystemParams, drive_by: float, dt: float) -> SpinState:
    """One classical RK4 step with the drive held constant."""
    if not dt > 0:
        raise ValueError("dt must be > 0")

    def add(s: SpinState, k: StateDerivative, h: float) -> SpinState:
        return SpinState(s.m_rb + h * k.d_m_rb, s.m_xe + h * k.d_m_xe, s.t + h)

    k1 = bloch_rhs(state, sys, drive_by)
    k2 = bloch_rhs(add(state, k1, dt / 2), sys, drive_by)
    k3 = bloch_rhs(add(state, k2, dt / 2), sys, drive_by)
    k4 = bloch_rhs(add(state, k3, dt), sys, drive_by)
    m_rb = state.m_rb + dt / 6 * (k1.d_m_rb + 2 * k2.d_m_rb + 2 * k3.d_m_rb + k4.d_m_rb)
    m_xe = state.m_xe + dt / 6 * (k1.d_m_xe + 2 * k2.d_m_xe + 2 * k3.d_m_xe + k4.d_m_xe)
    out = SpinState(m_rb, m_xe, state.t + dt)
    if not (np.all(np.isfinite(m_rb)) and np.all(np.isfinite(m_xe))):
        raise RuntimeError(f"rk4_step produced a non-finite state at t={state.t}")
    return out


def adiabatic_rb(m_xe: np.ndarray, sys: SystemParams, drive_by: float = 0.0) -> np.ndarray:
    """Quasi-static alkali magnetization for the instantaneous noble-gas state.

    Solves 0 = (gamma_rb/q) M x B_eff + (M0 z - M)/(q T_rb) with
    B_eff = B0 + lam*m_xe; the q factors cancel in the fixed point.  The drive
    couples only to the noble-gas block in this model, so ``drive_by`` does not
    enter B_eff; the argument is accepted for signature symmetry with the full
    dynamics.
    """
    rb = sys.rb
    ratio = sys.xe.gamma * float(np.linalg.norm(sys.fields.b0)) * sys.coupling.q * rb.t2
    if ratio > 0.1:
        warnings.warn(
            f"adiabatic following questionable: gamma_xe*B0*q*T_rb = {ratio:.3g} > 0.1",
            stacklevel=2)
    b = sys.fields.b0 + sys.lam * np.asarray(m_xe, dtype=float)
    w = TWO_PI * rb.gamma
    i1, i2 = 1.0 / rb.t1, 1.0 / rb.t2
    a = np.array([
        [-i2, w * b[2], -w * b[1]],
        [-w * b[2], -i2, w * b[0]],
        [w * b[1], -w * b[0], -i1],
    ])
    rhs = np.array([0.0, 0.0, -rb.m0 * i1])
    return np.linalg.solve(a, rhs)


def _shifter_args(chain: FeedbackChain, cfg: SimConfig):
    sh = chain.shifter
    theta = sh.theta % 360.0
    if cfg.theta_drift != 0.0 and sh.mode is not ShifterMode.QUADRATURE:
        raise ValueError("theta_drift requires the quadrature shifter mode")
    if sh.mode is ShifterMode.IDEAL_DELAY:
        n = chain.delay_samples
        if n == 0:
            return 0, np.zeros(1), np.zeros(1)
        return 1, np.zeros(1), np.zeros(n)
    if sh.mode is ShifterMode.QUADRATURE:
        par = np.array([chain.cos_theta, chain.sin_theta, chain.ap_a,
                        math.radians(theta), math.radians(cfg.theta_drift)])
        return 2, par, np.zeros(1)
    # allpass family
    if theta == 0.0:
        return 0, np.zeros(1), np.zeros(1)
    if theta == 180.0:
        return 5, np.zeros(1), np.zeros(1)
    if theta < 180.0:
        return 3, np.array([chain.ap_a]), np.zeros(1)
    return 4, np.array([chain.ap_a]), np.zeros(1)


def run(sys: SystemParams, chain: Optional[FeedbackChain], cfg: SimConfig,
        use_compiled: bool | None = None) -> TimeSeries:
    """Integrate the loop and return the recorded channels.

    Starts both species at M0*z, applies the configured tips about x, then at
    every loop sample reads mx_rb, feeds the chain (closed loop only), and
    holds the resulting drive field over the inner RK4 substeps.  The chain's
    register state is not consumed; each run starts from zeroed registers.
    """
    closed = cfg.loop_mode == "closed"
    if closed and chain is None:
        raise ValueError("closed loop requires a feedback chain")
    if cfg.mode == "adiabatic":
        # emit the adiabatic-validity warning once per run
        adiabatic_rb(np.zeros(3), sys)

    kern = get_kernel(use_compiled)
    rb, xe = sys.rb, sys.xe
    par = np.array([
        TWO_PI * rb.gamma, sys.coupling.q, rb.t1, rb.t2, rb.m0,
        TWO_PI * xe.gamma, xe.t1, xe.t2, xe.m0,
        sys.lam,
        sys.fields.b0[0], sys.fields.b0[1], sys.fields.b0[2],
        sys.fields.drive_axis[0], sys.fields.drive_axis[1], sys.fields.drive_axis[2],
    ])

    tr = math.radians(cfg.initial_tip_rb)
    tx = math.radians(cfg.initial_tip_xe)
    state = np.array([
        0.0, -rb.m0 * math.sin(tr), rb.m0 * math.cos(tr),
        0.0, -xe.m0 * math.sin(tx), xe.m0 * math.cos(tx),
    ])

    if closed:
        bp = np.array(chain.coeffs, dtype=float)
        kind, sh_par, dbuf = _shifter_args(chain, cfg)
        gain = chain.gain
        sat = chain.saturation if chain.saturation is not None else math.inf
        if chain.noise_std > 0.0:
            rng = np.random.default_rng(cfg.noise_seed)
            noise = chain.noise_std * rng.standard_normal(cfg.n_loop)
        else:
            noise = np.zeros(0)
    else:
        bp = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
        kind, sh_par, dbuf = 0, np.zeros(1), np.zeros(1)
        gain, sat, noise = 0.0, math.inf, np.zeros(0)

    n_loop, decim = cfg.n_loop, int(cfg.record_decimation)
    n_rec = (n_loop + decim - 1) // decim
    n_ch = 6 if cfg.record_xe else 2
    rec = np.empty((n_ch, n_rec))

    bad = kern.run_loop(0 if cfg.mode == "full" else 1, 1 if closed else 0,
                        par, state, cfg.dt, cfg.n_sub, n_loop, cfg.fs_loop,
                        bp, kind, sh_par, dbuf, gain, sat, noise, decim,
                        rec, 1 if cfg.record_xe else 0)
    if bad >= 0:
        raise RuntimeError(
            f"unstable loop: |M| exceeded 10*M0 at t = {bad / cfg.fs_loop:.3f} s "
            f"(gain/phase configuration drives the system beyond the model's validity)")

    names = BASE_CHANNELS + (XE_CHANNELS if cfg.record_xe else ())
    channels = {n: np.ascontiguousarray(rec[i]) for i, n in enumerate(names)}
    return TimeSeries(
        fs=cfg.fs_loop / decim, t0=0.0, channels=channels,
        meta={"final_state": state.copy(), "mode": cfg.mode,
              "loop_mode": cfg.loop_mode, "compiled": kern.COMPILED},
    )
