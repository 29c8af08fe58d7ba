from fractions import Fraction
import itertools

from iterjulia.dense import calkin_wilf, first_rational_points, rational_points


def test_calkin_wilf_prefix():
    assert list(itertools.islice(calkin_wilf(), 7)) == [Fraction(1), Fraction(1, 2), Fraction(2), Fraction(1, 3),
                                                       Fraction(3, 2), Fraction(2, 3), Fraction(3)]


def test_calkin_wilf_unique():
    first = list(itertools.islice(calkin_wilf(), 2000))
    assert len(set(first)) == 2000


def test_rational_points_prefix():
    assert first_rational_points(9) == [0j, 0.25j, 0.25, -0.25j, -0.25, 0.2j, 0.2, -0.2j, -0.2]


def test_rational_points_inside_and_distinct():
    pts = list(itertools.islice(rational_points(), 3000))
    assert len(set(pts)) == len(pts)
    assert all(abs(p) < 1 / 3 for p in pts)


def test_rational_points_dense_enough():
    # every point of a coarse lattice in the disc has a rational point nearby
    pts = list(itertools.islice(rational_points(), 3000))
    for x in (-0.3, -0.1, 0.0, 0.1, 0.3):
        for y in (-0.1, 0.0, 0.1):
            assert min(abs(p - complex(x, y)) for p in pts) < 0.05
