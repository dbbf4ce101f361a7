"""Pulse-coupled oscillator networks with partial reset.

Modules
-------
core            elementary maps, partial resets, coupling matrices
rise_functions  rise-function families and the shape classifier
engine          exact event-driven simulation and cluster detection
analysis        splay states, linear stability, cluster bounds, bifurcation points
cli             configuration files, presets and sweeps
"""
from .core import (ATOL, PERIOD, RESET, THRESHOLD, ChainDomainError, CouplingMatrix,
                   DomainError, H, H_inverse, J, PartialReset, S, compose_chain,
                   custom_reset, linear_reset, table_reset)
from .rise_functions import (ClassificationConflict, RiseFunction, ShapeReport, classify,
                             identity, make_LIF, make_LIF_CB, make_QIF, make_QIF_CB,
                             make_Ub, to_conductance_based)

__version__ = "0.1.0"
