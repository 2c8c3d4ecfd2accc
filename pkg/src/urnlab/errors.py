"""Exception hierarchy shared by every urnlab module."""


class UrnLabError(Exception):
    """Base class; ``code`` is the machine-readable error name."""

    code = "urnlab_error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class ValidationError(UrnLabError, ValueError):
    code = "validation_error"


class NonStochasticRow(ValidationError):
    code = "non_stochastic_row"


class NegativeEntry(ValidationError):
    code = "negative_entry"


class ThetaOutOfRange(ValidationError):
    code = "theta_out_of_range"


class BadInitial(ValidationError):
    code = "bad_initial"


class SingularSystem(UrnLabError, ArithmeticError):
    code = "singular_system"


class NoUniqueLimit(UrnLabError, ArithmeticError):
    code = "no_unique_limit"


class EigenFailure(UrnLabError, ArithmeticError):
    code = "eigen_failure"


class InternalInconsistency(UrnLabError, AssertionError):
    code = "internal_inconsistency"


class ReducibleInput(UrnLabError, ValueError):
    code = "reducible_input"


class InvariantViolation(UrnLabError, AssertionError):
    code = "invariant_violation"

    def __init__(self, message, step=None, replica=None):
        super().__init__(message)
        self.step = step
        self.replica = replica


class MissingHistory(UrnLabError, ValueError):
    code = "missing_history"


class DimensionMismatch(UrnLabError, ValueError):
    code = "dimension_mismatch"


class UnsupportedRegime(UrnLabError, ValueError):
    code = "unsupported_regime"


class TooFewReplicas(UrnLabError, ValueError):
    code = "too_few_replicas"


class GammaZero(UrnLabError, ValueError):
    code = "gamma_zero"


class NotAStar(UrnLabError, ValueError):
    code = "not_a_star"


class EmptySample(UrnLabError, ValueError):
    code = "empty_sample"


class DegenerateVariance(UrnLabError, ArithmeticError):
    code = "degenerate_variance"


class InapplicableSuite(UrnLabError, ValueError):
    code = "inapplicable_suite"
