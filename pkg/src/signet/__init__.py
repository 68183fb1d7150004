"""Idempotent generator networks distilled from score functions.

Trains a single network f with f(f(x)) = f(x) that maps noise to data in
one forward pass, by matching the network's behaviour along probability-flow
ODE trajectories of a known, kernel, or learned score function.
"""

from signet._backend import BACKEND
from signet.errors import SignetError

__version__ = "0.1.0"

__all__ = ["BACKEND", "SignetError", "__version__"]
