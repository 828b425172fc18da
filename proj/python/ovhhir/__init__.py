"""Open-vocabulary human interaction recognition at desk scale."""

from ovhhir._core import (
    ConfigError,
    DataError,
    NumericError,
    Tokenizer,
    UsageError,
    caption_similarity,
    generate,
    macro_f1,
    run,
    sample_frames,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "Tokenizer",
    "UsageError",
    "caption_similarity",
    "generate",
    "macro_f1",
    "run",
    "sample_frames",
]
