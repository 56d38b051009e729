"""Contact Hamilton-Jacobi equations w_t + H(x, w, w_x) = 0 on the circle.

Implicit Lax-Oleinik semigroups by semi-Lagrangian dynamic programming,
implicit action functions, a monotone finite-difference cross-check, contact
characteristics and weak KAM constructions.
"""

from .grid import GridFunction, PeriodicGrid
from .model import ContactHamiltonian, dual, example_quadratic, get_hamiltonian
from .semigroup import EvolutionTrace, SemigroupParams, evolve, step_backward, step_forward

__all__ = ["ContactHamiltonian", "EvolutionTrace", "GridFunction", "PeriodicGrid", "SemigroupParams",
           "dual", "evolve", "example_quadratic", "get_hamiltonian", "step_backward", "step_forward"]
__version__ = "0.1.0"
