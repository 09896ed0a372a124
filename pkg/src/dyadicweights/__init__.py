"""Extremal dyadic A2 weights, dyadic operators on them, and a weak-type Bellman function checker."""

__version__ = "0.1.0"

from .construction import AnnotatedWeight, WeightParams, build_weight, solve_parameters
from .dyadic import DyadicInterval, StepFunction
from .scalar import QuadraticNumber

__all__ = ["AnnotatedWeight", "DyadicInterval", "QuadraticNumber", "StepFunction", "WeightParams",
           "build_weight", "solve_parameters"]
