"""Error types shared across modules.

ValueError covers malformed inputs (shape mismatches, bad configuration);
NumericalError and its subclasses cover solver failures, and map to a
distinct exit code in the CLI.
"""

from __future__ import annotations

import numpy as np


class NumericalError(RuntimeError):
    """A numerical routine failed to produce a certified result."""

    def __init__(self, message: str, candidates=None):
        super().__init__(message)
        self.candidates = None if candidates is None else np.asarray(candidates)


class PoleError(NumericalError):
    """Evaluation requested exactly at a pole of a rational function."""

    def __init__(self, message: str, pole: float):
        super().__init__(message)
        self.pole = pole


class InSupportError(NumericalError):
    """A spectral argument fell inside the bulk support."""
