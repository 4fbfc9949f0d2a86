"""Simulated TrustZone pipeline that keeps microphone audio inside a secure
enclave, classifies its transcript for sensitivity, and redacts before any
byte leaves for the cloud."""

from . import audio, cli, cloud, driver, pipeline, pta, relay, sense, tcbtrace, tee, words
from .pipeline import PipelineConfig, PipelineError, RunMetrics, RunResult, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig",
    "PipelineError",
    "RunMetrics",
    "RunResult",
    "audio",
    "cli",
    "cloud",
    "driver",
    "pipeline",
    "pta",
    "relay",
    "run_pipeline",
    "sense",
    "tcbtrace",
    "tee",
    "words",
]
