"""Exception types shared across modules."""


class IllConditionedError(ValueError):
    """A linear solve hit a (near-)singular system; add regularization."""


class DegenerateDataError(ValueError):
    """Input data has no variation where the estimator requires some."""
