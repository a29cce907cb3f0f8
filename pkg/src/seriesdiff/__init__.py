"""Text-controllable denoising diffusion for 1-D series, desk scale.

Two training stages: unconditional distribution fitting on the full
corpus, then conditional finetuning in which a dynamic barrier keeps the
unconditional loss pinned near its pretrained level. Ships with a
template-based text codec, a synthetic feature-controlled corpus,
concentration-bound calculators, and a CLI pipeline.
"""

from .condition import (
    FEATURE_NAMES,
    ConditionVector,
    FeatureVector,
    QuintileBins,
    encode,
    parse_text,
    render_text,
)
from .diffusion import diffuse, loss_conditional, loss_unconditional, sample, sample_many
from .features import extract_features, minmax_normalize
from .lexopt import (
    LexoptConfig,
    StepTrace,
    barrier_phi,
    compute_xi_hat,
    finetune,
    lambda_weight,
    lex_step,
    plain_finetune,
)
from .network import Architecture, ScoreNetwork, predict_noise
from .schedule import NoiseSchedule, make_linear_schedule
from .synthdata import Dataset, SeriesSpec, generate_series, load_dataset, make_dataset, save_dataset
from .tensor import ParamSet, Tensor

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "ConditionVector",
    "Dataset",
    "FEATURE_NAMES",
    "FeatureVector",
    "LexoptConfig",
    "NoiseSchedule",
    "ParamSet",
    "QuintileBins",
    "ScoreNetwork",
    "SeriesSpec",
    "StepTrace",
    "Tensor",
    "barrier_phi",
    "compute_xi_hat",
    "diffuse",
    "encode",
    "extract_features",
    "finetune",
    "generate_series",
    "lambda_weight",
    "lex_step",
    "load_dataset",
    "loss_conditional",
    "loss_unconditional",
    "make_dataset",
    "make_linear_schedule",
    "minmax_normalize",
    "parse_text",
    "plain_finetune",
    "predict_noise",
    "render_text",
    "sample",
    "sample_many",
    "save_dataset",
]
