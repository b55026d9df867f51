"""Agent-based market models as time-step discretisations of continuous dynamics.

Modules:

- ``rng``: seeded random streams
- ``fw``: Franke-Westerhoff model, explicit and semi-implicit fraction updates
- ``lls``: Levy-Levy-Solomon model with scaled or fixed memory
- ``meanfield``: transport PDE, particle system, W1 tools, OU steady state
- ``experiments``: seeded experiment runners
- ``cli``: command-line entry point
"""

__version__ = "0.1.0"
