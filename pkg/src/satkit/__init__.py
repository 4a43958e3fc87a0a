"""satkit: contrastive features, feature-space attacks, and robustness metrics.

The package layers a scikit-learn estimator API (``satkit.estimators``)
and a command-line interface (``satkit.cli``) over a functional core:
float64 reverse-mode autodiff (``tensor``), synthetic data and binary
dataset formats (``data``), an MLP encoder with score heads
(``encoder``), exact kNN over a frozen feature library (``knn``),
feature-space attacks (``attacks``), contrastive pretraining and
supervised baselines (``pretrain``), adversarial fine-tuning (``sat``),
and the evaluation harness (``metrics``).
"""

from .attacks import (
    LARGE_ATTACK,
    SMALL_ATTACK,
    AttackConfig,
    AttackResult,
    OptimizationConfig,
    gradient_attack,
    optimization_attack,
)
from .data import (
    AugmentationPolicy,
    Dataset,
    augment,
    gen_synthetic,
    load_f32,
    load_raw8,
    save_f32,
    save_raw8,
    split,
)
from .encoder import (
    EncoderModel,
    LayerSpec,
    ScoreHeads,
    default_layer_specs,
    load_params,
    save_params,
)
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    GraphError,
    GroupError,
    ModelError,
    NumericalError,
    SatkitError,
    ShapeMismatchError,
)
from .estimators import (
    ContrastiveEncoder,
    FeatureKnnClassifier,
    SatFineTuner,
    SupervisedEncoder,
)
from .knn import (
    FeatureLibrary,
    build_library,
    knn_predict,
    load_library,
    nearest_group,
    save_library,
)
from .metrics import (
    L2Summary,
    MetricsReport,
    accuracy,
    dsr,
    l2_distance,
    read_results_csv,
    report,
    write_results_csv,
)
from .pretrain import (
    ClassifierHead,
    TrainConfig,
    cross_entropy,
    merge_classifier,
    pgd_label_attack,
    pretrain_ssl,
    split_classifier,
    train_alp,
    train_at,
    train_mat,
    train_supervised,
)
from .sat import (
    SatConfig,
    SatLog,
    contrast_loss,
    nce_estimate,
    sat_train,
    write_training_log,
)
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackResult",
    "AugmentationPolicy",
    "ClassifierHead",
    "ConfigError",
    "ContrastiveEncoder",
    "DataError",
    "Dataset",
    "DomainError",
    "EncoderModel",
    "FeatureKnnClassifier",
    "FeatureLibrary",
    "GraphError",
    "GroupError",
    "L2Summary",
    "LARGE_ATTACK",
    "LayerSpec",
    "MetricsReport",
    "ModelError",
    "NumericalError",
    "OptimizationConfig",
    "SMALL_ATTACK",
    "SatConfig",
    "SatFineTuner",
    "SatkitError",
    "SatLog",
    "ScoreHeads",
    "ShapeMismatchError",
    "SupervisedEncoder",
    "Tensor",
    "TrainConfig",
    "accuracy",
    "augment",
    "build_library",
    "contrast_loss",
    "cross_entropy",
    "default_layer_specs",
    "dsr",
    "gen_synthetic",
    "gradient_attack",
    "knn_predict",
    "l2_distance",
    "load_f32",
    "load_library",
    "load_params",
    "load_raw8",
    "merge_classifier",
    "nce_estimate",
    "nearest_group",
    "optimization_attack",
    "pgd_label_attack",
    "pretrain_ssl",
    "read_results_csv",
    "report",
    "sat_train",
    "save_f32",
    "save_library",
    "save_params",
    "save_raw8",
    "split",
    "split_classifier",
    "train_alp",
    "train_at",
    "train_mat",
    "train_supervised",
    "write_results_csv",
    "write_training_log",
]
