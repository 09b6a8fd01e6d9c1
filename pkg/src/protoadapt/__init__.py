"""Privacy-preserving multi-source unsupervised domain adaptation.

Per labeled source domain: train a classifier, summarize its latent
features as class-conditional Gaussians, release the data, then align a
copy of the encoder to the unlabeled target by minimizing a sliced
Wasserstein distance to Gaussian draws. Predictions mix the adapted
models with weights inversely proportional to the recorded distances.
Sources never exchange samples — only model parameters, per-class
Gaussian statistics, and scalars cross domain boundaries, and the
simulated multi-node protocol makes that boundary auditable.
"""

from .datasets import DomainSpec, LabeledDataset, blobs3, gen_domain, read_features, write_features
from .errors import (
    ConfigError,
    DataAccessRevoked,
    DivergenceError,
    InvalidDimension,
    MissingClass,
    NotPositiveDefinite,
    ParseError,
    ProtoAdaptError,
)
from .estimator import PrototypeAdaptationEnsemble
from .nets import SourceModel, TrainConfig, train_source
from .pipeline import (
    AdaptationReport,
    BoundReport,
    RunConfig,
    RunResult,
    adapt_encoder,
    bound_report,
    compute_weights,
    direct_adapt_baseline,
    predict_ensemble,
    pseudo_target_distribution,
    run_algorithm1,
    source_combined_baseline,
    verify_ensemble_bound,
)
from .presets import BLOBS3_SEED, blobs3_task
from .prototypes import ClassPrototypes, fit_prototypes
from .protocol import Transcript, audit_privacy, plant_canary, run_distributed
from .sliced import ProjectionSet, sample_projections, sliced_w2, sliced_w2_grad

__version__ = "0.1.0"

__all__ = [
    "PrototypeAdaptationEnsemble",
    "run_algorithm1",
    "run_distributed",
    "direct_adapt_baseline",
    "source_combined_baseline",
    "RunConfig",
    "RunResult",
    "TrainConfig",
    "AdaptationReport",
    "BoundReport",
    "adapt_encoder",
    "compute_weights",
    "predict_ensemble",
    "pseudo_target_distribution",
    "verify_ensemble_bound",
    "bound_report",
    "train_source",
    "SourceModel",
    "ClassPrototypes",
    "fit_prototypes",
    "ProjectionSet",
    "sample_projections",
    "sliced_w2",
    "sliced_w2_grad",
    "LabeledDataset",
    "DomainSpec",
    "gen_domain",
    "blobs3",
    "blobs3_task",
    "BLOBS3_SEED",
    "read_features",
    "write_features",
    "Transcript",
    "audit_privacy",
    "plant_canary",
    "ProtoAdaptError",
    "ConfigError",
    "DataAccessRevoked",
    "DivergenceError",
    "InvalidDimension",
    "MissingClass",
    "NotPositiveDefinite",
    "ParseError",
]
