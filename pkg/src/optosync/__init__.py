"""Deterministic simulator for Lyapunov-controlled synchronization of two
mechanical oscillators coupled to a driven optical cavity.

The mean-field trajectory and the Gaussian fluctuation covariance are
co-integrated under two designed feedback laws (constant position offset,
delayed replay); `measures` turns the results into synchronization,
robustness, stability and entanglement diagnostics, and `cli` runs the
bundled regression scenarios.
"""

from .config import ConfigError, Scenario, SweepSpec, load_scenario, load_sweep
from .control import (
    ControlReading,
    constant_error_control,
    perturb_output,
    perturb_reading,
    reading_from_state,
    time_delay_control,
)
from .dynamics import (
    EmptyHistory,
    IntegratorConfig,
    NonFinite,
    Trajectory,
    history_lookup,
    integrate,
    step,
)
from .measures import (
    ConstantShift,
    GeneralizedMapping,
    Identity,
    LimitCycleStats,
    NegativityResult,
    TimeShift,
    first_order_errors,
    limit_cycle_stats,
    lyapunov_exponent,
    max_negativity,
    negativity,
    robustness,
    sync_measure,
    sync_series,
    time_averaged_sync,
)
from .model import (
    OMEGA_REF,
    ConstantError,
    ControlLaw,
    DelayHistory,
    MeanState,
    NoControl,
    SystemParams,
    TimeDelay,
    build_drift_matrix,
    build_noise_matrix,
    initial_covariance,
    mean_field_deriv,
    mean_phonon_number,
)

__version__ = "0.1.0"
