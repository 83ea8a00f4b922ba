"""Config-driven evaluation harness for audio foundation models and codecs."""

from .aggregate import (
    CodecPairSet,
    acoustic_composite,
    average_scores,
    build_leaderboard,
    evaluate_codec,
    normalize,
)
from .benchgen import build_speech_benchmark
from .config import Registry, RunSpec, load_config, register_prompt, validate_run
from .data import DataRecord, load_dataset
from .metrics import (
    MetricValue,
    accuracy,
    bleu,
    cosine_similarity,
    exist_match,
    judge_score,
    quality_scores,
    rouge_l,
    word_error_rate,
)
from .postprocess import apply_chain, extract_option, normalize_text, parse_yes_no
from .runtime import connect, spawn_worker
from .templates import parse_template, render

__version__ = "0.1.0"

__all__ = [
    "CodecPairSet", "DataRecord", "MetricValue", "Registry", "RunSpec",
    "accuracy", "acoustic_composite", "apply_chain", "average_scores",
    "bleu", "build_leaderboard", "build_speech_benchmark", "connect",
    "cosine_similarity", "evaluate_codec", "exist_match", "extract_option",
    "judge_score", "load_config", "load_dataset", "normalize",
    "normalize_text", "parse_template", "parse_yes_no", "quality_scores",
    "register_prompt", "render", "rouge_l", "spawn_worker", "validate_run",
    "word_error_rate",
]
