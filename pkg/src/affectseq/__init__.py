"""affectseq: sequence-to-one valence/arousal regression over per-second
multimodal feature tracks, with context-gated mixture-of-experts fusion,
low-pass post-smoothing, run ensembling, and MSE/PCC evaluation."""

from .dataio import (
    AnnotationTrack,
    DatasetManifest,
    FeatureTrack,
    SynthSpec,
    load_manifest,
    split_dataset,
    synth_generate,
    window_sequences,
)
from .errors import AffectSeqError
from .evalmetrics import EvalReport, ensemble_average, evaluate_run, mse, pearson
from .fusion import EmotionPrediction, FusionConfig, fusion_head_forward
from .model import ModelConfig, init_model_params, predict_batch, training_loss
from .numerics import AdamState, LossValue, ParamStore, adam_step, grad_check
from .seqmodel import EncoderConfig, encode_sequence
from .smoothing import IIRCoefficients, SmootherSpec, butter_design, filtfilt, smooth_track
from .training import predict_tracks, train_run

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AffectSeqError", "AnnotationTrack", "DatasetManifest",
    "EmotionPrediction", "EncoderConfig", "EvalReport", "FeatureTrack",
    "FusionConfig", "IIRCoefficients", "LossValue", "ModelConfig",
    "ParamStore", "SmootherSpec", "SynthSpec", "adam_step", "butter_design",
    "encode_sequence", "ensemble_average", "evaluate_run", "filtfilt",
    "fusion_head_forward", "grad_check", "init_model_params", "load_manifest",
    "mse", "pearson", "predict_batch", "predict_tracks", "smooth_track",
    "split_dataset", "synth_generate", "train_run", "training_loss",
    "window_sequences",
]
