"""Accelerated projection-based consensus solver for linear systems.

A server and M agents jointly solve ``A x = y``: each agent owns one row,
projects the consensus iterate onto its local solution set, and the server
averages the corrected solutions with momentum. The package couples the
round-based simulation with closed-form spectral and noise-error analysis
tools that verify each other.
"""

from .bench import (
    ExperimentConfig,
    MseCurve,
    PredictionComparison,
    emit_outputs,
    flatten_round,
    generate_instance,
    measured_kappa,
    predict_vs_measure,
    run_mse_experiment,
)
from .engine import (
    AgentState,
    RunRecord,
    ServerState,
    agent_init,
    agent_step,
    default_round_count,
    export_run_csv,
    run_apc,
    server_init,
    server_step,
)
from .exceptions import (
    ApcError,
    DimensionMismatchError,
    EigensolveFailedError,
    InputError,
    InvalidSpectrumError,
    KappaUnreachableError,
    MissingAgentError,
    MissingGroundTruthError,
    NonFiniteError,
    NumericalError,
    RankDeficientError,
    SingularIterationError,
    ZeroRowError,
)
from .model import (
    ConsensusSpectrum,
    LinearSystem,
    Projection,
    RowBlock,
    consensus_matrix,
    from_json_dict,
    load_instance,
    partition_rows,
    projection_complement,
    row_pseudoinverse,
    save_instance,
    to_json_dict,
)
from .spectral import (
    EigenvectorCheck,
    GainMatrix,
    MultiplicityReport,
    SpectralReport,
    build_gain_matrix,
    decay_envelope_constant,
    gain_from_system,
    neumann_margin,
    predicted_eigenvalues,
    verify_eigenvector_formula,
    verify_multiplicity_structure,
    verify_spectrum,
)
from .theory import (
    DecayFit,
    ErrorPrediction,
    NoiseDrive,
    StateVector,
    closed_form_state,
    initial_state,
    limit_state,
    noise_drive,
    predict_asymptotic_error,
    prediction_report,
    stacked_error,
    transient_decay_fit,
)
from .tuning import TuningParams, optimal_params

__version__ = "0.1.0"
