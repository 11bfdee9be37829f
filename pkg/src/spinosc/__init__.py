"""spinosc: closed-loop alkali/noble-gas spin oscillator simulator and
signal-analysis toolkit.

The integration core is a compiled extension when built, with a pure-Python
fallback selected automatically at import (see spinosc.COMPILED_CORE).
"""
from ._engine import HAVE_COMPILED as COMPILED_CORE
from .model import (
    CouplingParams,
    FieldConfig,
    SpeciesParams,
    SpinState,
    SystemParams,
    bloch_rhs,
    default_system,
    enhancement_factor,
    larmor_frequency,
    threshold_gain,
    vec3,
)
from .feedback import (
    BandPassSpec,
    FeedbackChain,
    PhaseShifterSpec,
    ShifterMode,
    design_bandpass,
    feedback_step,
    phase_shift,
    step_bandpass,
)
from .sim import SimConfig, TimeSeries, adiabatic_rb, rk4_step, run
from .analysis import (
    AllanResult,
    EstimationError,
    SpectrumResult,
    allan_deviation,
    estimate_frequency,
    fft_spectrum,
    field_resolution,
    fit_exp_envelope,
    welch_psd,
)

__version__ = "0.1.0"
