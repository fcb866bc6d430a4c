"""deu: diffusion-ensemble prediction and zero-shot uncertainty quantification.

A desk-scale numpy library for studying ensembles of conditional diffusion
samplers on PDE regression tasks: data generation (1D Kuramoto-Sivashinsky,
2D vorticity fields), a small hand-written noise-prediction network, three
conditional sampling procedures (ancestral, iterative refinement, and
guided mid-chain super-resolution), Monte-Carlo ensemble statistics, and
error/variance correlation analysis.
"""

from .field import (
    Field,
    FieldError,
    RngStream,
    as_array,
    derive_seed,
    field_new,
    field_read,
    field_write,
    reduce_mean,
    standard_normal,
)

__all__ = [
    "Field",
    "FieldError",
    "RngStream",
    "as_array",
    "derive_seed",
    "field_new",
    "field_read",
    "field_write",
    "reduce_mean",
    "standard_normal",
]

__version__ = "0.1.0"
