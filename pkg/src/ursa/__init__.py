"""Point-cloud classification built on a trainable constellation layer.

A constellation of m learnable d-dimensional stars maps an unordered
point set to a fixed-length feature vector through one of three radial
distance profiles; a small dense head turns that descriptor into class
probabilities. Everything trains end to end with hand-derived gradients
that a finite-difference oracle can verify.
"""

from .constellation import (
    EXPONENTIAL,
    GAUSSIAN,
    MEASURES,
    MINIMUM,
    Constellation,
    backward,
    forward,
    forward_exponential,
    forward_gaussian,
    forward_minimum,
    init_constellation,
)
from .data import (
    AugmentConfig,
    LabeledCloudSet,
    augment,
    convert_images,
    image_to_cloud,
    load_cloud_archive,
    load_idx,
    make_synthetic_dataset,
    read_constellation_snapshot,
    save_cloud_archive,
    write_constellation_snapshot,
)
from .errors import ConfigError, DataError, NumericalAbort, UrsaError
from .head import (
    BatchNormState,
    DenseLayer,
    Gradients,
    ModelParams,
    cast_model,
    dropout,
    head_backward,
    head_forward,
    init_model,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
    summary,
)
from .linalg import Rng, matmul, sample_clipped_normal, sample_uniform
from .training import (
    Adam,
    GradCheckReport,
    Sgd,
    TrainConfig,
    TrainReport,
    config_from_text,
    config_to_text,
    cross_entropy_loss,
    evaluate,
    gradient_check,
    model_backward,
    model_forward,
    train,
    train_epoch,
)

__version__ = "0.1.0"
