"""Training, inference and ablation orchestration."""

from .ablation import AblationResult, calibrate_threshold, evaluate_state, predict_sequences, run_ablation
from .infer import frame_fields, infer, inference_supports, static_cache
from .stft import VARIANTS, LevelPrediction, ModelState, forward_stft, static_pass, temporal_pass
from .train import SGD, TrainConfig, annotated_frames, compute_loss, train

__all__ = [name for name in dir() if not name.startswith("_")]
