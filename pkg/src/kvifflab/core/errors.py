"""
Error types for kvifflab

Every failure the library raises on purpose derives from KviffLabError so
callers (the CLI in particular) can tell expected failures from bugs.
"""

from typing import Optional


class KviffLabError(Exception):
    """Base class for all kvifflab errors"""


class UsageError(KviffLabError, ValueError):
    """An operation was called with arguments violating its preconditions"""


class InvalidCovarianceError(KviffLabError, ValueError):
    """A covariance matrix is not symmetric positive semi-definite"""


class UnsupportedNoiseError(UsageError):
    """A noise law is used where only Gaussian laws are supported"""


class NumericalError(KviffLabError, ArithmeticError):
    """A linear solve failed even after jitter escalation"""


class DivergenceError(NumericalError):
    """The KVIF inner loop produced non-finite particles"""

    def __init__(self, step: int, step_size: float):
        self.step = step
        self.step_size = step_size
        super().__init__(
            f"KVIF flow diverged at inner step {step} with step size {step_size:g}; "
            "try a smaller epsilon"
        )


class DegenerateLikelihoodError(NumericalError):
    """A Bayes update left (numerically) no probability mass"""


class StepSizeError(NumericalError):
    """The Fokker-Planck integrator became unstable"""


class ConfigError(KviffLabError):
    """An experiment configuration could not be parsed or validated"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class ExperimentError(KviffLabError):
    """A trial failed; identifies the trial and its seed"""

    def __init__(self, trial: int, seed: int, cause: BaseException):
        self.trial = trial
        self.seed = seed
        self.cause = cause
        super().__init__(f"trial {trial} (seed {seed}) failed: {cause}")
