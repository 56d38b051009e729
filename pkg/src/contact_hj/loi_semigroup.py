"""Alias of :mod:`contact_hj.semigroup` under the name of the implicit Lax-Oleinik semigroups."""

from .semigroup import *  # noqa: F401,F403
from .semigroup import EvolutionTrace, SemigroupParams, evolve, evolve_final, evolve_values, step_backward, step_forward  # noqa: F401
