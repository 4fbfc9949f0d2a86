"""In-enclave transcription and sensitivity classification."""

from .modelio import (
    CorpusFormatError,
    ModelFormatError,
    load_corpus,
    load_model,
    model_from_bytes,
    model_to_bytes,
    save_corpus,
    save_model,
)
from .models import (
    AttentionEncoder,
    CnnModel,
    HybridModel,
    Model,
    attention_forward,
    attention_weights,
    cnn_forward,
    hybrid_forward,
    init_attention,
    init_cnn,
    init_hybrid,
    pad_tokens,
    score,
    sigmoid,
    trainable_params,
)
from .text import (
    UNKNOWN_INDEX,
    UNKNOWN_WORD,
    MissingPayload,
    Transcript,
    Vocab,
    detokenize,
    tokenize,
    transcribe,
)
from .training import (
    ARCHITECTURES,
    DegenerateCorpus,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    UnknownArchitecture,
    Verdict,
    classify,
    evaluate,
    train,
)

__all__ = [
    "ARCHITECTURES",
    "UNKNOWN_INDEX",
    "UNKNOWN_WORD",
    "AttentionEncoder",
    "CnnModel",
    "CorpusFormatError",
    "DegenerateCorpus",
    "HybridModel",
    "MissingPayload",
    "Model",
    "ModelFormatError",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "Transcript",
    "UnknownArchitecture",
    "Verdict",
    "Vocab",
    "attention_forward",
    "attention_weights",
    "classify",
    "cnn_forward",
    "detokenize",
    "evaluate",
    "hybrid_forward",
    "init_attention",
    "init_cnn",
    "init_hybrid",
    "load_corpus",
    "load_model",
    "model_from_bytes",
    "model_to_bytes",
    "pad_tokens",
    "save_corpus",
    "save_model",
    "score",
    "sigmoid",
    "tokenize",
    "train",
    "trainable_params",
    "transcribe",
]
