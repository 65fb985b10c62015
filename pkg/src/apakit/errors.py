"""Exception hierarchy. Each error carries the name of the module that raised it."""


class ApaError(Exception):
    module = "apakit"


class ScaleError(ApaError, ValueError):
    module = "scorekit"


class IngestionError(ApaError):
    module = "corpus"


class AlignmentError(ApaError):
    module = "corpus"


class InsufficientDataError(ApaError):
    module = "corpus"


class TaskSpecError(ApaError, ValueError):
    module = "promptgen"


class PromptError(ApaError):
    module = "promptgen"


class ParseError(ApaError):
    """Raised on malformed score output.

    ``line`` and ``column`` are 1-based and always point inside the input
    (or at its end for missing sections).
    """

    module = "respparse"

    def __init__(self, message: str, line: int = 1, column: int = 1, fragment: str = ""):
        self.line = line
        self.column = column
        self.fragment = fragment
        where = f"line {line}, column {column}"
        if fragment:
            where += f" near {fragment!r}"
        super().__init__(f"{message} ({where})")


class SerializeError(ApaError):
    module = "respparse"


class PerturbationError(ApaError):
    module = "prefsim"


class DegeneratePerturbation(PerturbationError):
    """Both shift directions clamp back onto the gold value."""


class VocabularyError(ApaError, KeyError):
    module = "simpo"

    def __str__(self):
        return self.args[0] if self.args else "token outside vocabulary"


class DivergenceError(ApaError):
    module = "simpo"

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")


class MetricError(ApaError, ValueError):
    module = "metrics"


class ConfigError(ApaError, ValueError):
    module = "client"
