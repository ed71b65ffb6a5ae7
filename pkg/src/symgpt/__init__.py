"""Symbolic regression with a point-cloud conditioned character-level transformer."""

from .expr import Vocabulary, evaluate_batch, parse, to_infix_string
from .fit import fit_constants, mse_n

__all__ = ["Vocabulary", "evaluate_batch", "fit_constants", "mse_n", "parse", "to_infix_string"]
__version__ = "0.1.0"
