"""Domain types and closed-form physics of the coupled two-species spin system.

Unit conventions (used everywhere in this package):

* magnetic fields and magnetizations in Gauss -- magnetization is stored in
  field-equivalent Gauss so the field one species produces at the other is
  simply ``lam * M`` with the dimensionless contact enhancement
  ``lam = 8*pi*kappa/3``;
* gyromagnetic ratios in Hz/G (i.e. gamma/2pi); precession torques use
  ``2*pi*gamma`` internally so frequencies come out in Hz;
* times in seconds, frequencies in Hz.

Sign convention: positive gamma precesses clockwise about +z when viewed from
+z, i.e. ``dM/dt = 2*pi*gamma * (M x B)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi

__all__ = [
    "TWO_PI",
    "SpeciesParams",
    "CouplingParams",
    "FieldConfig",
    "SystemParams",
    "SpinState",
    "StateDerivative",
    "vec3",
    "enhancement_factor",
    "larmor_frequency",
    "bloch_rhs",
    "threshold_gain",
    "default_system",
]


def vec3(x: float, y: float, z: float) -> np.ndarray:
    """A 3-vector (float64 ndarray); components must be finite."""
    v = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"vector components must be finite, got {v}")
    return v


def _as_vec3(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} components must be finite, got {v}")
    return v


@dataclass(frozen=True)
class SpeciesParams:
    """One spin species: gyromagnetic ratio (Hz/G), relaxation times (s),
    equilibrium longitudinal magnetization (field-equivalent G)."""

    gamma: float
    t1: float
    t2: float
    m0: float

    def __post_init__(self):
        if self.gamma == 0 or not math.isfinite(self.gamma):
            raise ValueError("gamma must be nonzero and finite")
        if not self.t1 > 0:
            raise ValueError(f"t1 must be > 0, got {self.t1}")
        if not self.t2 > 0:
            raise ValueError(f"t2 must be > 0, got {self.t2}")
        if self.t2 > 2.0 * self.t1:
            raise ValueError(f"t2 must be <= 2*t1, got t2={self.t2}, t1={self.t1}")
        if self.m0 < 0 or not math.isfinite(self.m0):
            raise ValueError(f"m0 must be >= 0 and finite, got {self.m0}")


@dataclass(frozen=True)
class CouplingParams:
    """Contact-interaction enhancement kappa and the alkali slowing-down factor q."""

    kappa: float = 500.0
    q: float = 5.0

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if not self.q >= 1.0:
            raise ValueError(f"q must be >= 1, got {self.q}")

    @property
    def lam(self) -> float:
        """Field-enhancement factor 8*pi*kappa/3 (dimensionless)."""
        return enhancement_factor(self.kappa)


@dataclass(frozen=True)
class FieldConfig:
    """Static field and the axis the feedback coil drives (unit vector)."""

    b0: np.ndarray = field(default_factory=lambda: vec3(0.0, 0.0, 0.030))
    drive_axis: np.ndarray = field(default_factory=lambda: vec3(0.0, 1.0, 0.0))

    def __post_init__(self):
        object.__setattr__(self, "b0", _as_vec3(self.b0, "b0"))
        axis = _as_vec3(self.drive_axis, "drive_axis")
        n = float(np.linalg.norm(axis))
        if not math.isclose(n, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"drive_axis must have unit norm, got |axis|={n}")
        object.__setattr__(self, "drive_axis", axis)


@dataclass(frozen=True)
class SystemParams:
    """Full parameter set of the coupled system."""

    rb: SpeciesParams
    xe: SpeciesParams
    coupling: CouplingParams = field(default_factory=CouplingParams)
    fields: FieldConfig = field(default_factory=FieldConfig)

    @property
    def lam(self) -> float:
        return self.coupling.lam

    def replace(self, **kw) -> "SystemParams":
        return replace(self, **kw)


# Defaults. Values quoted in the source experiment: B0 = 30 mG, gamma_xe =
# 1.178 Hz/mG, T2_xe ~ 10 s, kappa ~ 500, bandpass 35 Hz / Q 10.  gamma_rb is
# the 87Rb gF=1/2 value.  The Rb relaxation time and both equilibrium
# magnetizations are calibrated so that the closed loop (a) leaves open-loop
# decay within 1% of T2_xe, (b) self-sustains with its phase window centered
# near 90 deg, and (c) crosses threshold within a factor 2 of
# lam*M0_xe/(q*M0_rb); see README for the regime discussion.
DEFAULT_GAMMA_RB = 7.0e5  # Hz/G
DEFAULT_GAMMA_XE = 1178.0  # Hz/G  (= 11.78 MHz/T)
DEFAULT_T_RB = 1.8e-6  # s; overdamped alkali response (t2_rb << 1/(2pi*gamma_rb*B0))
DEFAULT_T_XE = 10.0  # s
DEFAULT_M0_RB = 7.3e-10  # G
DEFAULT_M0_XE = 8.8e-7  # G
DEFAULT_B0Z = 0.030  # G


def default_system(**overrides) -> SystemParams:
    """The calibrated default SystemParams; keyword overrides replace fields.

    Accepted overrides: rb, xe, coupling, fields (full sub-objects).
    """
    sys_ = SystemParams(
        rb=SpeciesParams(gamma=DEFAULT_GAMMA_RB, t1=DEFAULT_T_RB,
                         t2=DEFAULT_T_RB, m0=DEFAULT_M0_RB),
        xe=SpeciesParams(gamma=DEFAULT_GAMMA_XE, t1=DEFAULT_T_XE,
                         t2=DEFAULT_T_XE, m0=DEFAULT_M0_XE),
    )
    return sys_.replace(**overrides) if overrides else sys_


@dataclass
class SpinState:
    """Instantaneous magnetization of both species plus the simulation clock."""

    m_rb: np.ndarray
    m_xe: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.m_rb = _as_vec3(self.m_rb, "m_rb")
        self.m_xe = _as_vec3(self.m_xe, "m_xe")
        if not math.isfinite(self.t):
            raise ValueError("t must be finite")

    def copy(self) -> "SpinState":
        return SpinState(self.m_rb.copy(), self.m_xe.copy(), self.t)

    def validate(self, sys: SystemParams, eps: float = 1e-6) -> None:
        """Check |M| <= M0*(1+eps) for both species (magnetization cannot
        exceed its equilibrium value in this model)."""
        for m, m0, name in ((self.m_rb, sys.rb.m0, "m_rb"),
                            (self.m_xe, sys.xe.m0, "m_xe")):
            norm = float(np.linalg.norm(m))
            if norm > m0 * (1.0 + eps):
                raise ValueError(f"|{name}|={norm:.6g} exceeds M0={m0:.6g}")


class StateDerivative(NamedTuple):
    d_m_rb: np.ndarray
    d_m_xe: np.ndarray


def enhancement_factor(kappa: float) -> float:
    """Contact-interaction field enhancement, 8*pi*kappa/3."""
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    return 8.0 * math.pi * kappa / 3.0


def larmor_frequency(gamma: float, bz: float) -> float:
    """Precession frequency gamma*Bz in Hz (signed)."""
    return gamma * bz


def bloch_rhs(state: SpinState, sys: SystemParams, drive_by: float) -> StateDerivative:
    """Time derivative of both magnetizations.

    The alkali species sees the static field plus the noble-gas contact field;
    the noble-gas species additionally sees the alkali contact field and the
    externally supplied drive field ``drive_by`` along the drive axis.  The
    drive value is computed elsewhere (feedback chain); this function never
    phase-shifts anything.  Alkali precession and relaxation are both slowed
    by q.  Relaxation is split T1 (longitudinal) / T2 (transverse).
    """
    if not math.isfinite(drive_by):
        raise ValueError("drive_by must be finite")
    if not (np.all(np.isfinite(state.m_rb)) and np.all(np.isfinite(state.m_xe))):
        raise ValueError("state is not finite")

    lam = sys.lam
    q = sys.coupling.q
    b0 = sys.fields.b0
    rb, xe = sys.rb, sys.xe

    b_at_rb = b0 + lam * state.m_xe
    b_at_xe = b0 + lam * state.m_rb + drive_by * sys.fields.drive_axis

    d_rb = (TWO_PI * rb.gamma / q) * np.cross(state.m_rb, b_at_rb)
    d_rb[0] -= state.m_rb[0] / (q * rb.t2)
    d_rb[1] -= state.m_rb[1] / (q * rb.t2)
    d_rb[2] += (rb.m0 - state.m_rb[2]) / (q * rb.t1)

    d_xe = (TWO_PI * xe.gamma) * np.cross(state.m_xe, b_at_xe)
    d_xe[0] -= state.m_xe[0] / xe.t2
    d_xe[1] -= state.m_xe[1] / xe.t2
    d_xe[2] += (xe.m0 - state.m_xe[2]) / xe.t1

    return StateDerivative(d_rb, d_xe)


def threshold_gain(sys: SystemParams) -> float:
    """Self-oscillation threshold estimate lam*M0_xe/(q*M0_rb)."""
    if sys.rb.m0 == 0:
        raise ValueError("threshold_gain undefined for M0_rb = 0")
    return sys.lam * sys.xe.m0 / (sys.coupling.q * sys.rb.m0)
