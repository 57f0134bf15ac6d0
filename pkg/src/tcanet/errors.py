"""Errors shared by the training modules."""


class TrainingFailure(RuntimeError):
    """Raised when an update produces NaN or the objective diverges."""
