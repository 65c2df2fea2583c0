"""Exception hierarchy shared across the pipeline.

Every error raised by this package derives from PipelineError so callers can
catch pipeline failures without swallowing programming errors.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(PipelineError):
    """An input file does not match its declared schema (e.g. missing column)."""


class RowValueError(PipelineError, ValueError):
    """A row holds a value outside the allowed set; carries the row index."""

    def __init__(self, message: str, row: int):
        super().__init__(f"{message} (row {row})")
        self.row = row


class CorpusIntegrityError(PipelineError):
    """Cross-file integrity violation (e.g. annotation rows without images)."""

    def __init__(self, message: str, ids: list[str]):
        super().__init__(f"{message}: {', '.join(ids)}")
        self.ids = ids


class ValidationError(PipelineError):
    """Configuration or CLI-argument validation failure (exit code 1)."""


class UpstreamMissingError(PipelineError):
    """A required artifact from an earlier stage is absent (exit code 2)."""

    def __init__(self, message: str, producing_command: str):
        super().__init__(f"{message} (run `{producing_command}` first)")
        self.producing_command = producing_command


class ProviderError(PipelineError):
    """Base class for LLM/linker provider failures."""


class RetriableBackendError(ProviderError):
    """Transient backend failure; safe to retry."""


class GenerationError(ProviderError):
    """Generation failed after exhausting retries; carries the cache key."""

    def __init__(self, message: str, cache_key: str):
        super().__init__(f"{message} (cache_key={cache_key})")
        self.cache_key = cache_key


class ConfigurationError(PipelineError):
    """A component is missing a capability or could not be loaded."""


class InputError(PipelineError):
    """An input item cannot be read (e.g. unreadable image file)."""


class ContractError(PipelineError):
    """An interface contract was violated (e.g. input dimensionality mismatch)."""


class DivergenceError(PipelineError):
    """Training produced a non-finite loss; carries the epoch index."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class ThresholdExceededError(PipelineError):
    """Per-item failure rate crossed the configured threshold (exit code 3)."""

    def __init__(self, message: str, failed: int, total: int):
        super().__init__(f"{message} ({failed}/{total} items failed)")
        self.failed = failed
        self.total = total


class LabelParseError(PipelineError):
    """A model reply could not be parsed into a label; preserves the raw text."""

    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}: {raw!r}")
        self.raw = raw


class MissingContextError(PipelineError):
    """Context records are absent for some posts; lists the offending ids."""

    def __init__(self, message: str, ids: list[str]):
        super().__init__(f"{message}: {', '.join(sorted(ids))}")
        self.ids = sorted(ids)
