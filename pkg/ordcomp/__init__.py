"""
ordcomp - Order Completion Toolkit for Nonlinear PDEs

Normal lower semi-continuous function representations, Baire envelopes,
Dedekind lattice operations, order-convergence checks and a constructive
solver producing certified approximate solutions of T(x, D)u = g.
"""

__version__ = '1.0.0'

from .core_types import Box, MultiIndex, Point, XReal
from .dsl import PdeSystem, parse_operator, pretty_print
from .errors import InputError, InvariantViolation, OrdCompError, SolveError
from .gridfn import Grid, GridFn, lower_envelope, nlsc_regularize, upper_envelope
from .lattice import (LatticeCfg, chain_check, dedekind_inf, dedekind_sup, distributivity_check, leq,
                      order_converges)
from .ordsolve import (ApproxSolution, JetSolverCfg, SolveCfg, assemble, jet_solve, patch_with_initial,
                       restrict_initial, solution_sequence, taylor_patch, verify, witness_sequence)
from .pdeop import Rhs, apply_T, eval_F, ns_system
from .pwpoly import CellComplex, Poly, PwExpr, PwPoly

__all__ = [
    'ApproxSolution', 'Box', 'CellComplex', 'Grid', 'GridFn', 'InputError', 'InvariantViolation',
    'JetSolverCfg', 'LatticeCfg', 'MultiIndex', 'OrdCompError', 'PdeSystem', 'Point', 'Poly', 'PwExpr',
    'PwPoly', 'Rhs', 'SolveCfg', 'SolveError', 'XReal', 'apply_T', 'assemble', 'chain_check',
    'dedekind_inf', 'dedekind_sup', 'distributivity_check', 'eval_F', 'jet_solve', 'leq', 'lower_envelope',
    'nlsc_regularize', 'ns_system', 'order_converges', 'parse_operator', 'patch_with_initial',
    'pretty_print', 'restrict_initial', 'solution_sequence', 'taylor_patch', 'upper_envelope', 'verify',
    'witness_sequence',
]
