class DataError(Exception):
    """Dataset content or files are missing or malformed."""


class ManifestError(DataError):
    """The manifest violates its schema (duplicate keys, incomplete scenes, bad header)."""


class ConfigError(Exception):
    """Incompatible or invalid model/training configuration."""


class TrainingError(RuntimeError):
    """Training hit an unrecoverable state, e.g. a non-finite loss."""
