"""Dynamic state estimation for power systems with unknown injectors.

The package couples a descriptor-system Kalman filter (linear recursion
plus an iterated EKF for nonlinear DAE models) with a power-system
estimation model, a graph-based estimability checker for PMU
placements, and a ground-truth transient simulator used to exercise the
estimator end to end.
"""

from .config import CaseConfig, ConfigError, EstimationSettings, parse_case
from .descriptor import (
    EstimatorState,
    FilterNumericalError,
    LinearDescriptorSystem,
    batch_solve,
    linear_step,
)
from .discretize import (
    BACKWARD_EULER,
    FORWARD_EULER,
    TRAPEZOIDAL,
    DiscretizationScheme,
    amplification_factor,
    step_jacobians,
    step_residual,
)
from .estimability import (
    EstimabilityCertificate,
    NumericRankResult,
    StructuredPairGraph,
    build_structured_pair,
    check_numeric_rank,
    check_topological_estimability,
)
from .iekf import (
    DescriptorModel,
    FilterConfig,
    IekfResult,
    LinearizationWorkspace,
    assemble_linearization,
    iekf_step,
)
from .machines import MachineParams, SubtransientFleet, TwoAxisFleet
from .network import Branch, Bus, NetworkModel, expand_complex
from .powerflow import Dispatch, PowerFlowError, solve_power_flow
from .runner import (
    CaseSetup,
    EstimabilityError,
    RunReport,
    build_setup,
    check_estimability,
    run_case,
    run_estimability,
    run_sweep,
    simulate_truth,
)
from .psmodel import (
    ConstantLoad,
    CurrentPmu,
    NoiseModel,
    PowerSystemModel,
    StateIndexMap,
    UnknownInjectorSet,
    VoltagePmu,
    build_measurement_matrix,
)
from .simulator import (
    ClearEvent,
    FaultEvent,
    GroundTruthModel,
    LoadBank,
    LoadStepEvent,
    MeasurementStream,
    Scenario,
    SimulationError,
    Trajectory,
    initialize_equilibrium,
    sample_pmu,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "amplification_factor",
    "assemble_linearization",
    "BACKWARD_EULER",
    "batch_solve",
    "Branch",
    "build_measurement_matrix",
    "build_setup",
    "build_structured_pair",
    "Bus",
    "CaseConfig",
    "CaseSetup",
    "check_estimability",
    "check_numeric_rank",
    "check_topological_estimability",
    "ClearEvent",
    "ConfigError",
    "ConstantLoad",
    "CurrentPmu",
    "DescriptorModel",
    "DiscretizationScheme",
    "Dispatch",
    "EstimabilityCertificate",
    "EstimabilityError",
    "EstimationSettings",
    "EstimatorState",
    "expand_complex",
    "FaultEvent",
    "FilterConfig",
    "FilterNumericalError",
    "FORWARD_EULER",
    "GroundTruthModel",
    "iekf_step",
    "IekfResult",
    "initialize_equilibrium",
    "linear_step",
    "LinearDescriptorSystem",
    "LinearizationWorkspace",
    "LoadBank",
    "LoadStepEvent",
    "MachineParams",
    "MeasurementStream",
    "NetworkModel",
    "NoiseModel",
    "NumericRankResult",
    "parse_case",
    "PowerFlowError",
    "PowerSystemModel",
    "run_case",
    "run_estimability",
    "run_sweep",
    "RunReport",
    "sample_pmu",
    "Scenario",
    "simulate",
    "simulate_truth",
    "SimulationError",
    "solve_power_flow",
    "StateIndexMap",
    "step_jacobians",
    "step_residual",
    "StructuredPairGraph",
    "SubtransientFleet",
    "Trajectory",
    "TRAPEZOIDAL",
    "TwoAxisFleet",
    "UnknownInjectorSet",
    "VoltagePmu",
]
