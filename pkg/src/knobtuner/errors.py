"""Exception types shared across the package."""


class KnobTunerError(Exception):
    """Base class for all package errors."""


class ConfigError(KnobTunerError):
    """Invalid construction parameters or session configuration."""


class ParseError(KnobTunerError):
    """A knowledge, checkpoint, or metrics document failed to parse."""


class SchemaViolation(KnobTunerError):
    """Structured data failed schema validation.

    Carries every violation found, each prefixed with a path to the
    offending field, so callers can report them all at once instead of
    fixing files one error at a time.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "schema violation")


class UnknownKnob(KnobTunerError):
    pass


class SpaceMismatch(KnobTunerError):
    pass


class ExtractionRejected(KnobTunerError):
    """Backend reply failed schema validation even after the repair retry."""


class IllegalTransition(KnobTunerError):
    pass


class CandidateRejected(KnobTunerError):
    """A proposed action failed reply-schema or payload validation."""


class BackendUnavailable(KnobTunerError):
    pass


class AllCandidatesRejected(KnobTunerError):
    pass


class EvaluatorError(KnobTunerError):
    """Base for evaluation failures."""


class SpawnFailure(EvaluatorError):
    pass


class BenchmarkTimeout(EvaluatorError):
    pass


class MetricsParseError(EvaluatorError):
    pass


class EvaluatorFailure(EvaluatorError):
    """An evaluator error severe enough to abort the measurement."""


class MissingBaseline(KnobTunerError):
    pass


class NoViableChildren(KnobTunerError):
    pass


class AllChildrenPruned(KnobTunerError):
    pass
