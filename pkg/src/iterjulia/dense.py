"""Enumeration of the rational points of a disc."""
from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Iterator


def calkin_wilf() -> Iterator[Fraction]:
    """1, 1/2, 2, 1/3, 3/2, 2/3, 3, ... every positive rational exactly once."""
    q = Fraction(1)
    while True:
        yield q
        q = 1 / (2 * (q.numerator // q.denominator) - q + 1)


def signed_rationals() -> Iterator[Fraction]:
    yield Fraction(0)
    for q in calkin_wilf():
        yield q
        yield -q


def rational_points(radius: Fraction = Fraction(1, 3), center: complex = 0j) -> Iterator[complex]:
    """Cantor-diagonal walk over pairs of signed rationals, kept if strictly inside the disc."""
    seen: list[Fraction] = []
    src = signed_rationals()
    r2 = radius * radius
    for s in itertools.count():
        seen.append(next(src))
        for a in range(s + 1):
            x, y = seen[a], seen[s - a]
            if x * x + y * y < r2:
                yield center + complex(float(x), float(y))


def first_rational_points(n: int, radius: Fraction = Fraction(1, 3)) -> list[complex]:
    return list(itertools.islice(rational_points(radius), n))
