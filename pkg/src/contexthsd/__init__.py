"""Context-augmented hate speech detection pipeline.

Generates background context for potentially hateful posts and memes through a
pluggable LLM provider, fuses that context into classifier inputs via
competing strategies, trains a seeded MLP against static-knowledge and
direct-LLM baselines, and emits the full evaluation and error-analysis
reports.
"""

__version__ = "0.1.0"

from .corpus import Corpus, Post, SplitPair, load_latent_hatred, load_mami, stratified_split
from .cache import ContextRecord, ContextStore
from .errors import PipelineError

__all__ = [
    "Corpus",
    "Post",
    "SplitPair",
    "ContextRecord",
    "ContextStore",
    "PipelineError",
    "load_latent_hatred",
    "load_mami",
    "stratified_split",
    "__version__",
]
