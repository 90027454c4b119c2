"""Numerical toolkit for physics-aware, uncertainty-gated super-resolution:
radiometric normalization, flow-match noising, gated control scalars,
MC-dropout uncertainty, spectral/colour losses and SR quality metrics.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateInput,
    DomainError,
    EmptyInput,
    FormatError,
    InsufficientSamples,
    NumericalError,
    ShapeError,
    SizeError,
    SrkitError,
)
from .imgmath import Domain, GaussianKernel, ImageTensor  # noqa: E402
