"""
Exception hierarchy for the stochastic wave simulator
"""

from typing import Optional


class SwaveError(Exception):
    """Base class for all simulator errors"""


class ConfigError(SwaveError, ValueError):
    """Invalid or unknown configuration value"""


class MeshError(SwaveError, ValueError):
    """Invalid spatial mesh or field dimension"""


class NoiseError(SwaveError, ValueError):
    """Level set not nested or sub-mesh too large"""


class NonFiniteFieldError(SwaveError):
    """A field picked up NaN or Inf entries"""


class PicardDivergedError(SwaveError):
    """Fixed-point iteration did not converge within picard_max iterations"""

    def __init__(self, iterations: int, change: float):
        self.iterations = iterations
        self.change = change
        super().__init__(
            f"Picard iteration did not converge after {iterations} iterations "
            f"(last relative change {change:.3e}); reduce tau or check lipschitz_F"
        )

    def __reduce__(self):
        return (self.__class__, (self.iterations, self.change))


class MissingLagError(SwaveError):
    """The theta=1/2 step needs u^{n-1}"""


class StepError(SwaveError):
    """A time step failed; carries the step index"""

    def __init__(self, step: int, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"step {step}: {cause}")

    def __reduce__(self):
        return (self.__class__, (self.step, self.cause))


class SampleError(SwaveError):
    """A Monte Carlo sample failed; carries the sample index and level"""

    def __init__(self, sample: int, level: Optional[int], cause: Exception):
        self.sample = sample
        self.level = level
        self.cause = cause
        where = f"sample {sample}" if level is None else f"sample {sample}, N={level}"
        super().__init__(f"{where}: {cause}")

    def __reduce__(self):
        return (self.__class__, (self.sample, self.level, self.cause))
