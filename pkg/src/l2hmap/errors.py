"""Exception hierarchy shared by every module in the package."""


class L2HError(Exception):
    """Base class for all pipeline errors."""


class FormatError(L2HError):
    """A file does not conform to its declared binary/text format."""


class ShapeError(L2HError):
    """Array dimensions are inconsistent with the operation's contract."""


class ConfigError(L2HError):
    """A configuration value is out of its legal range."""


class AlignmentError(L2HError):
    """Two grids that must share shape/georeference do not."""


class UnknownClassError(L2HError):
    """A class ID was encountered that the active scheme or table lacks."""

    def __init__(self, class_id, context=""):
        self.class_id = int(class_id)
        msg = f"unknown class id {self.class_id}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class StateError(L2HError):
    """An operation was invoked without its required cached state."""


class DivergenceError(L2HError):
    """Training produced a non-finite loss; carries the last good params."""

    def __init__(self, step, last_good_params=None):
        self.step = step
        self.last_good_params = last_good_params
        super().__init__(f"non-finite loss at step {step}")


class EmptyMatrixError(L2HError):
    """Metrics requested on a confusion matrix with zero total count."""
