"""Exception hierarchy shared by all modules."""


class QexpError(Exception):
    """Base class for every error raised by the package."""


class ModelEvaluationError(QexpError):
    """A model coefficient returned a non-finite value."""

    def __init__(self, what, t, x):
        self.what = what
        self.t = t
        self.x = x
        super().__init__(f"non-finite {what} at t={t!r}, x={x!r}")


class DomainError(QexpError, ValueError):
    """An argument lies outside the admissible domain."""


class ContractError(QexpError, ValueError):
    """Shapes or grids of two objects do not match."""


class SaturationError(QexpError, OverflowError):
    """j_gamma overflowed for the given argument."""

    def __init__(self, argument):
        self.argument = argument
        super().__init__(f"j_gamma saturates (exp overflow) at gamma*u={argument!r}")


class CapacityError(QexpError):
    """The lattice would exceed its node budget."""


class PicardDivergenceError(QexpError):
    """The per-step fixed-point iteration stopped contracting."""

    def __init__(self, step, residuals):
        self.step = step
        self.residuals = list(residuals)
        super().__init__(
            f"Picard iteration diverged at step {step} "
            f"(last residuals {self.residuals[-5:]})"
        )


class ConditioningError(QexpError):
    """The regression design at a time step is rank deficient."""

    def __init__(self, step, message=""):
        self.step = step
        super().__init__(f"rank-deficient regression at step {step}. {message}".strip())


class CapabilityError(QexpError):
    """A requested computation needs information the model does not provide."""


class ConfigError(QexpError, ValueError):
    """Invalid experiment configuration; carries the JSON path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class PipelineError(QexpError):
    """A scenario step failed; carries module/step provenance."""

    def __init__(self, module, step, cause):
        self.module = module
        self.step = step
        self.cause = cause
        super().__init__(f"[{module}/{step}] {type(cause).__name__}: {cause}")
