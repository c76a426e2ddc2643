"""Impact-aware latent distance models for single-event citation networks."""

from .errors import (
    CausalityViolation,
    DiseeError,
    DuplicateEvent,
    EmptyNetwork,
    EmptySample,
    IngestError,
    InsufficientRemovableEdges,
    InsufficientTruth,
    InvalidParams,
    NetworkError,
    NotEnoughNegatives,
    NumericalError,
    ParseError,
    UndefinedMetric,
)
from .generator import GeneratorConfig, PlantedTruth, generate, preset, sample_without_replacement
from .impact import ImpactKind, ImpactParams, cdf, fit_empirical, integral, pdf
from .metrics import EvalReport, auc_pr, auc_roc, evaluate, recovery_stats, score_dyads
from .model import (
    CaseControlConfig,
    ModelParameters,
    ModelVariant,
    cumulative_intensity,
    gradient_check,
    gradients,
    intensity,
    link_probability,
    load_checkpoint,
    log_likelihood,
    log_likelihood_case_control,
    save_checkpoint,
)
from .network import (
    SingleEventNetwork,
    SplitResult,
    load_network,
    load_split,
    relabel_by_time,
    sample_negatives,
    save_network,
    save_split,
    train_test_split,
)
from .optim import ModelConfig, TrainConfig, TrainTrace, fit, initialize

__version__ = "0.1.0"
