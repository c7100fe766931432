"""Exception hierarchy shared by every iaflow module."""


class IaflowError(Exception):
    """Base class for all library errors."""


class ShapeError(IaflowError, ValueError):
    pass


class DomainError(IaflowError, ValueError):
    pass


class ContractError(IaflowError, ValueError):
    pass


class FormatError(IaflowError, ValueError):
    pass


class TrainingError(IaflowError, RuntimeError):
    pass


class ConfigError(IaflowError, ValueError):
    """Invalid configuration entry.

    Carries the offending key, the 1-based line number (``None`` for
    command-line overrides) and a description of the accepted range.
    """

    def __init__(self, key, message, line=None, accepted=None):
        self.key = key
        self.line = line
        self.accepted = accepted
        where = f"line {line}" if line is not None else "command line"
        text = f"config key '{key}' ({where}): {message}"
        if accepted:
            text += f"; accepted: {accepted}"
        super().__init__(text)
