"""Global passivity toolkit for few-spin quantum thermodynamics.

Builds ``B = -ln rho_0`` operators from initial states, evolves system + microbath
setups under unitary, noisy, dissipative and feedback protocols, and evaluates the
Clausius-type and passivity inequalities along the resulting trajectories.
"""

from . import dynamics, linalg, passivity, scenarios, states
from .errors import PassivityError

__all__ = ["dynamics", "linalg", "passivity", "scenarios", "states", "PassivityError"]
__version__ = "0.1.0"
