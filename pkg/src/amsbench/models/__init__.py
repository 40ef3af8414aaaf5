from .encoder import EncoderSpec, EventGridEncoder
from .sequence import MMoE, MODES, SequenceNet, pcgrad_combine
from .tabular import LogisticRegression, MLPClassifier, ModelInputError
from .training import (
    TrainConfig, TrainResult, embed_rows, evaluate_loss, fit_sequence, predict_sequences, task_labels,
)

__all__ = [
    "EncoderSpec", "EventGridEncoder", "LogisticRegression", "MLPClassifier", "MMoE", "MODES",
    "ModelInputError", "SequenceNet", "TrainConfig", "TrainResult", "embed_rows", "evaluate_loss",
    "fit_sequence", "pcgrad_combine", "predict_sequences", "task_labels",
]
