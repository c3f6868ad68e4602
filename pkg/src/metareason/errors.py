"""Exception and warning types shared across the package.

Every error raised for bad *input data* derives from :class:`ValidationError`;
the CLI maps those to exit code 1 and ``OSError`` to exit code 2.
"""


class ValidationError(ValueError):
    """Base class for input that violates a data contract."""


class SchemaError(ValidationError):
    pass


class EmptyTrace(ValidationError):
    pass


class UnannotatedTrace(ValidationError):
    pass


class MalformedSequence(ValidationError):
    pass


class MissingDraws(ValidationError):
    pass


class AlignmentError(ValidationError):
    pass


class MissingPolarity(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class MissingGold(ValidationError):
    pass


class InvalidK(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class LikelihoodUndefined(ValidationError):
    """An observation has zero probability under the supplied matrix."""

    def __init__(self, index: int, observation):
        super().__init__(f"observation {index} has zero likelihood: {observation!r}")
        self.index = index
        self.observation = observation


class PriorFallbackWarning(UserWarning):
    """An estimate was built from zero observations and equals the prior."""


class DegenerateWeightWarning(UserWarning):
    """A transition weight had a zero denominator and was set to 1.0."""


class TruncatedTrajectory(UserWarning):
    """A simulated chain hit the length cap before reaching the stop state."""
