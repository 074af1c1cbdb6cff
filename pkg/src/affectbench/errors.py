"""Exception types shared across the package.

File-format problems get distinct classes so callers (and the CLI exit
code mapping) can tell corruption modes apart.
"""


class FormatError(Exception):
    """Base for malformed container or checkpoint files."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ModalityTableError(FormatError):
    """Modality name table is missing entries or out of canonical order."""


class ConfigMismatchError(FormatError):
    """Checkpoint was written for a different model configuration."""


class NumericsError(Exception):
    """Non-finite value where a finite one is required (loss, gradients)."""
