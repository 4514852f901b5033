"""
Error categories raised across the alignment engine.

The command-line entry maps each category to an exit status, so callers
should raise the most specific class that applies.
"""


class AlignmentError(Exception):
    """Base class for every failure raised by this package"""

    category = "error"


class InvalidGraphError(AlignmentError, ValueError):
    category = "graph"


class InvalidAlignmentError(AlignmentError, ValueError):
    category = "alignment"


class ShapeMismatchError(AlignmentError, ValueError):
    category = "shape"


class NonFiniteError(AlignmentError, ArithmeticError):
    category = "numerical"


class DivergenceError(NonFiniteError):
    category = "numerical"


class TrainingContractError(AlignmentError, ValueError):
    category = "training"


class ConfigError(AlignmentError, ValueError):
    category = "config"


class CheckpointError(AlignmentError):
    category = "checkpoint"


class GradientCheckError(AlignmentError, ArithmeticError):
    category = "numerical"


class DatasetFormatError(AlignmentError, ValueError):
    """Malformed input file; keeps the file name and 1-based line number"""

    category = "dataset"

    def __init__(self, message: str, path: str = "", line_number: int = 0):
        self.path = str(path)
        self.line_number = line_number
        location = f"{self.path}:{line_number}: " if path else ""
        super().__init__(f"{location}{message}")
