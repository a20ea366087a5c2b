"""gridfill: state estimation for multiphase distribution feeders by
constrained low-rank matrix completion."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    FeederError,
    GridfillError,
    NumericalError,
    PowerFlowError,
)
from .feeder import Feeder, Line, MultiphaseAdmittance, PhaseId, assemble_admittance
from .powerflow import StateVector, no_load_voltage, solve_power_flow
from .linmodel import (
    LinearPowerFlowModel,
    StackedLinearModel,
    build_block_model,
    linearize_power_flow,
    load_linear_model,
    save_linear_model,
)
from .measurements import (
    GroundTruthSeries,
    LoadProfile,
    MeasurementMatrix,
    NoiseSpec,
    ObservationMask,
    apply_observation_mask,
    build_measurement_matrix,
    inject_noise,
    singular_value_spectrum,
    simulate_timeseries,
)
from .estimator import (
    EstimateResult,
    EstimatorConfig,
    FactorPair,
    IterationTrace,
    SelectorMaps,
    evaluate_objective,
    extract_state,
    initialize_factors,
    run_alternating_minimization,
    select_x,
    select_y,
    solve_u_step,
    solve_v_step,
    svt_complete,
)
from .metrics import MetricsRecord, compute_mae_angle, compute_mape_magnitude
from .harness import (
    ScenarioConfig,
    ScenarioResult,
    aggregate_records,
    derive_seeds,
    emit_outputs,
    run_and_emit,
    run_scenario,
)

__all__ = [name for name in dir() if not name.startswith("_")]
