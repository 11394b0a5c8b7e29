"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent; raised at construction."""


class SynthesisError(RuntimeError):
    """A source digit cannot be synthesized (e.g. empty high-gradient set)."""


class IngestionError(RuntimeError):
    """A dataset file is missing or corrupt; the message names the file."""
