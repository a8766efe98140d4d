"""Exception hierarchy.

The CLI maps :class:`InputError` (and subclasses) to exit code 1 and
:class:`ConfigurationError` to exit code 2.
"""


class EendError(Exception):
    pass


class ConfigurationError(EendError):
    """Invalid configuration, shapes or hyperparameters."""


class InputError(EendError):
    """Bad input data: files, annotations, corpora."""


class ParseError(InputError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class FormatError(InputError):
    """A binary or audio file does not match the expected format."""


class EvaluationError(EendError):
    """A function evaluated to a non-finite value."""


class TrainingError(EendError):
    pass


class InternalError(EendError):
    pass
