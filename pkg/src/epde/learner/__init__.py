"""Learning right-hand sides of PDEs in emergent coordinates."""
from .dynamics import (
    FeatureSet, IntegrateConfig, IntegrationError, SourceModel, fd_features, integrate,
    node_features, space_derivatives, svd_basis, svd_regularize, train_rhs, train_source,
)
from .mlp import (
    MlpModel, TrainConfig, TrainResult, TrainingError, fit, param_count, rhs_architecture,
    source_architecture, surrogate_architecture, swish, train_surrogate,
)
