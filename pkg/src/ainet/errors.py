"""Exception taxonomy shared by all modules.

The CLI maps these onto stable exit codes: configuration problems exit 2,
failed checks/assertions exit 1.
"""


class AinetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(AinetError):
    """Mismatched dimensions, unknown kinds, bad config fields."""


class DomainError(AinetError):
    """Inputs outside the operation's valid domain (e.g. empty spatial extent)."""


class FormatError(AinetError):
    """Malformed on-disk data (wrong magic, record length, column count)."""


class ContractError(AinetError):
    """Internal invariant violated; indicates a bug, not bad user input."""


class BuildError(AinetError):
    """Network specification cannot be assembled into a runnable model."""


class TrainingAbort(AinetError):
    """Non-finite loss or gradient encountered mid-training."""
