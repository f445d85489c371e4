"""Direct underwater source localization under environment mismatch.

Simulation of multipath acoustic channels, closed-form and sample-based
performance bounds under a presumed/actual model mismatch, and two
localizers (grid maximum likelihood, learned regressor) with an
experiment harness tying them together.
"""

__version__ = "0.1.0"

from .bounds import (
    BlockForm,
    BoundEvaluation,
    CovariancePair,
    JointDiagonalization,
    MismatchReport,
    block_diagonalize,
    build_covariance,
    csd_exact,
    delta_squared_closed_form,
    eigenvalues_closed_form,
    gamma_and_condition,
    joint_diagonalizer,
    mismatch_report,
    snr_limits,
    strong_bound,
    weak_bound,
)
from .channel import (
    ArrivalSet,
    Environment,
    Geometry,
    arrivals_batch,
    average_attenuation,
    environment_from_dict,
    environment_to_dict,
    geometry_from_dict,
    geometry_to_dict,
    image_method_arrivals,
    load_scene,
    stratified_delay,
    validate_environment,
    validate_geometry,
)
from .csd import CsdEstimate, SampleSet, estimate_csd, knn_radius
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    EstimationError,
    JointDiagonalizationError,
    StageError,
    StructureError,
    TrainingError,
)
from .harness import (
    CurvePoint,
    ExperimentConfig,
    ExperimentResult,
    config_from_dict,
    default_experiment_config,
    derive_seed,
    emit_outputs,
    generate_dataset,
    load_config,
    parse_curve_csv,
    run_experiment,
)
from .localize import (
    GridEvaluator,
    GridSpec,
    NetModel,
    TrainingSet,
    concentrated_loglikelihood,
    extract_features,
    grid_search_ml,
    load_model,
    save_model,
    train_net,
)
from .signal import (
    FrequencyResponseStack,
    Observation,
    WaveformSpectrum,
    angular_frequencies,
    draw_waveform,
    frequency_response,
    load_observations,
    response_stack,
    response_stack_batch,
    save_observations,
    steering_matrix,
    synthesize_observation,
)
