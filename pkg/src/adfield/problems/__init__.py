"""Benchmark inverse problems on the unit square."""
from __future__ import annotations

from ..errors import ConfigError
from .base import InverseProblem, Observation, ground_truth
from .burgers import Burgers
from .hyperelasticity import Hyperelasticity
from .linear_elasticity import LinearElasticity
from .stokes import Stokes

PROBLEMS = {
    "linear_elasticity": LinearElasticity,
    "stokes": Stokes,
    "hyperelasticity": Hyperelasticity,
    "burgers": Burgers,
}


def make_problem(kind: str, n: int, **options) -> InverseProblem:
    try:
        cls = PROBLEMS[kind]
    except KeyError:
        raise ConfigError(f"unknown problem {kind!r}; expected one of {sorted(PROBLEMS)}") from None
    return cls(n, **options)


__all__ = ["Burgers", "Hyperelasticity", "InverseProblem", "LinearElasticity", "Observation",
           "PROBLEMS", "Stokes", "ground_truth", "make_problem"]
