"""Sampled construction of polynomial sequences whose Julia sets carry positive area."""
from .poly_core import (
    FAMILY_BOUNDS,
    P1,
    P2,
    P2_SCALED,
    BoundedSequence,
    PolyKind,
    PolynomialOp,
    SequenceBounds,
    compose_orbit,
    dumps_sequence,
    loads_sequence,
    p1_shifted,
)

__version__ = "0.1.0"

__all__ = [
    "FAMILY_BOUNDS",
    "P1",
    "P2",
    "P2_SCALED",
    "BoundedSequence",
    "PolyKind",
    "PolynomialOp",
    "SequenceBounds",
    "compose_orbit",
    "dumps_sequence",
    "loads_sequence",
    "p1_shifted",
]
