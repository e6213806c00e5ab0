"""Exception types shared across the package."""


class ModelError(Exception):
    """Base class for model/numeric errors (CLI exit code 3)."""

    code = "model-error"


class InvalidParamsError(ModelError):
    code = "invalid-params"


class ConstructionInfeasibleError(ModelError):
    code = "construction-infeasible"


class DegenerateTransitionError(ModelError):
    code = "degenerate-transition"


class DepthTooLargeError(ModelError):
    code = "depth-too-large"


class InvalidIntervalError(ModelError):
    code = "invalid-interval"


class InvalidDomainError(ModelError):
    code = "invalid-domain"


class HorizonTooShortError(ModelError):
    code = "horizon-too-short"


class HorizonInsufficientError(ModelError):
    code = "horizon-insufficient"


class SplitNotFoundError(ModelError):
    code = "split-not-found"


class InsufficientTailMassError(ModelError):
    code = "insufficient-tail-mass"


class NotAModelTreeError(ModelError):
    code = "not-a-model-tree"


class ConfigError(Exception):
    """Invalid CLI/experiment configuration (CLI exit code 2)."""

    code = "config-error"
