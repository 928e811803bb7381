"""Stitched-image quality assessment via fine-tuned feature distances.

Pipeline: augment a corpus with a fixed 14-transform catalog, fine-tune a
small convolutional encoder with a siamese cosine objective under each
transform, score stitched images by the Fréchet distance between encoder
feature Gaussians, correlate scores with subjective ratings per epoch, and
keep the checkpoint whose correlation curve is positive, smooth, and highest.
"""

from .augment import CATALOG, NoiseSpec, Rng, apply_noise, build_distorted_set, catalog_by_tag
from .baselines import (
    MetricScore,
    NiqeModel,
    ORIENTATIONS,
    average_gradient,
    mse,
    niqe_fit,
    niqe_score,
    psnr,
    spatial_frequency,
    ssim,
)
from .correlation import (
    CorrelationCurve,
    NoiseVerdict,
    SiFidSelection,
    build_curve,
    classify_noise,
    compare_indicators,
    midranks,
    pcc,
    select_si_fid,
    srocc,
)
from .encoder import (
    Encoder,
    EncoderConfig,
    forward,
    forward_batch,
    init_encoder,
    load_checkpoint,
    load_feature_file,
    preprocess,
    save_checkpoint,
    save_feature_file,
)
from .errors import PipelineError
from .fid import (
    GaussianStats,
    fit_gaussian,
    frechet_distance,
    score_features,
    score_stitched,
    sqrtm_psd,
)
from .imagecore import Image, load_image, resize_bilinear, save_image, to_grayscale
from .rating_service import RatingStore, create_app
from .subjective import ScoreTable, SubjectiveScore, aggregate, ingest_csv, normalize
from .synthgen import (
    DistortionRecipe,
    EvalBundle,
    EvalGroup,
    build_severity_ladder,
    load_bundle,
    make_stitched_pair,
    warp_homography,
    write_bundle,
)
from .trainer import (
    CheckpointSeries,
    TrainConfig,
    cosine_loss,
    cosine_loss_grad,
    load_series,
    mean_pair_cosine,
    sgd_step,
    train,
    train_on_images,
)

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "CheckpointSeries",
    "CorrelationCurve",
    "DistortionRecipe",
    "Encoder",
    "EncoderConfig",
    "EvalBundle",
    "EvalGroup",
    "GaussianStats",
    "Image",
    "MetricScore",
    "NiqeModel",
    "NoiseSpec",
    "NoiseVerdict",
    "ORIENTATIONS",
    "PipelineError",
    "RatingStore",
    "Rng",
    "ScoreTable",
    "SiFidSelection",
    "SubjectiveScore",
    "TrainConfig",
    "aggregate",
    "apply_noise",
    "average_gradient",
    "build_curve",
    "build_distorted_set",
    "build_severity_ladder",
    "catalog_by_tag",
    "classify_noise",
    "compare_indicators",
    "cosine_loss",
    "cosine_loss_grad",
    "create_app",
    "fit_gaussian",
    "forward",
    "forward_batch",
    "frechet_distance",
    "ingest_csv",
    "init_encoder",
    "load_bundle",
    "load_checkpoint",
    "load_feature_file",
    "load_image",
    "load_series",
    "make_stitched_pair",
    "mean_pair_cosine",
    "midranks",
    "mse",
    "niqe_fit",
    "niqe_score",
    "normalize",
    "pcc",
    "preprocess",
    "psnr",
    "resize_bilinear",
    "save_checkpoint",
    "save_feature_file",
    "save_image",
    "score_features",
    "score_stitched",
    "select_si_fid",
    "sgd_step",
    "spatial_frequency",
    "sqrtm_psd",
    "srocc",
    "ssim",
    "to_grayscale",
    "train",
    "train_on_images",
    "warp_homography",
    "write_bundle",
]
