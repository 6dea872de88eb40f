from fractions import Fraction

import pytest
from hypothesis import strategies as st

from conecert.polyfield import Polynomial, PolyVectorField


def small_fractions():
    return st.fractions(
        min_value=-4, max_value=4, max_denominator=3
    )


def polynomials(dim: int, max_degree: int = 3, max_terms: int = 4):
    exps = st.lists(
        st.integers(min_value=0, max_value=max_degree), min_size=dim, max_size=dim
    ).filter(lambda e: sum(e) <= max_degree).map(tuple)
    term = st.tuples(exps, small_fractions())
    return st.lists(term, max_size=max_terms).map(
        lambda terms: Polynomial(dim, dict(terms))
    )


def vector_fields(dim: int, max_degree: int = 3):
    return st.lists(
        polynomials(dim, max_degree), min_size=dim, max_size=dim
    ).map(lambda ps: PolyVectorField(dim, tuple(ps)))


def constant_vectors(dim: int):
    return st.lists(small_fractions(), min_size=dim, max_size=dim).map(
        lambda v: tuple(Fraction(c) for c in v)
    )


@pytest.fixture
def bhw_model():
    from conecert.models import bhw

    return bhw(0, 0, 1, 2, 1)
