"""Rule-guided variational autoencoder clustering."""

from .clustering import (
    FuzzyCMeans,
    HardAssignment,
    KMeans,
    RefinementLog,
    SoftAssignment,
    fuzzy_cmeans,
    harden,
    kmeans,
    refine,
)
from .exceptions import DatasetError, NumericError, RuleParseError, ShapeError, TrainingError
from .features import (
    AttributeEncoder,
    Dataset,
    FeatureRecord,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    standardize,
)
from .metrics import (
    EvaluationReport,
    calinski_harabasz,
    davies_bouldin,
    evaluate,
    fpc,
    fpe,
    fuzzy_silhouette,
    mean_membership,
    silhouette,
)
from .model import Batch, LossBreakdown, ModelConfig, ModelParams, embed, total_loss
from .rules import (
    AttributeSchema,
    RuleSet,
    ViolationReport,
    cluster_violation_flags,
    load_ruleset,
    parse_ruleset,
    sample_violates,
    violation_report,
    violation_targets,
)
from .training import DartVAE, TrainConfig, load_checkpoint, rule_weight_schedule, save_checkpoint, train

__version__ = "0.1.0"
