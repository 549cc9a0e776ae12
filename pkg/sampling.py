# sampling.py
"""Random tensors and polynomial/trigonometric fields for identity sweeps."""
from math import comb
from typing import List, Optional

import numpy as np

from expr import Expression
from exterior import AlternatingTensor, Variance
from fields import (
    ChartDomain,
    DifferentialForm,
    MultiVectorField,
    ScalarField,
    Term,
    VectorField,
)


def random_tensor(n: int, k: int, variance: Variance, rng: np.random.Generator) -> AlternatingTensor:
    return AlternatingTensor(n, k, variance, rng.standard_normal(comb(n, k)))


def random_expression(
    dimension: int,
    rng: np.random.Generator,
    degree: int = 2,
    terms: int = 3,
    trig: bool = False,
) -> Expression:
    """Sum of random monomials of total degree ≤ `degree`, optionally with a sin/cos term."""
    total = Expression.constant(round(float(rng.uniform(-1, 1)), 3), dimension)
    for _ in range(terms):
        monomial = Expression.constant(round(float(rng.uniform(-1, 1)), 3), dimension)
        for _ in range(int(rng.integers(1, degree + 1))):
            monomial = monomial * Expression.variable(int(rng.integers(dimension)), dimension)
        total = total + monomial
    if trig:
        axis = Expression.variable(int(rng.integers(dimension)), dimension)
        name = "sin" if rng.random() < 0.5 else "cos"
        scale = round(float(rng.uniform(0.5, 1.5)), 3)
        total = total + (axis * scale).apply(name) * round(float(rng.uniform(-1, 1)), 3)
    return total


def random_scalar_field(
    dimension: int, rng: np.random.Generator, domain: Optional[ChartDomain] = None, **kwargs
) -> ScalarField:
    return ScalarField(random_expression(dimension, rng, **kwargs), dimension, domain, "f")


def random_vector_field(
    dimension: int, rng: np.random.Generator, domain: Optional[ChartDomain] = None, **kwargs
) -> VectorField:
    return VectorField(
        [random_expression(dimension, rng, **kwargs) for _ in range(dimension)], domain, "X"
    )


def random_form(
    dimension: int, grade: int, rng: np.random.Generator, domain: Optional[ChartDomain] = None, **kwargs
) -> DifferentialForm:
    comps = [random_expression(dimension, rng, **kwargs) for _ in range(comb(dimension, grade))]
    return DifferentialForm(dimension, grade, comps, domain, "omega")


def random_multivector(
    dimension: int,
    grade: int,
    rng: np.random.Generator,
    domain: Optional[ChartDomain] = None,
    terms: int = 1,
    **kwargs,
) -> MultiVectorField:
    built: List[Term] = []
    for _ in range(terms):
        coefficient = random_scalar_field(dimension, rng, domain, **kwargs)
        factors = tuple(random_vector_field(dimension, rng, domain, **kwargs) for _ in range(grade))
        built.append(Term(coefficient, factors))
    return MultiVectorField(built, dimension, grade, domain, "Z")
