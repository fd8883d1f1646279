"""
PDE Operator Module

Evaluation of parsed PDE systems T(x, D)u = F(x, u, ..., D^alpha u, ...):
pointwise jet substitution, the extension of T to piecewise polynomials
(evaluated with NLSC semantics on the cell skeleton), right-hand sides, and
the built-in Navier-Stokes system in any spatial dimension.
"""

from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .core_types import MultiIndex, Point, as_point
from .dsl import (BinOp, Const, Coord, Expr, Func, Jet, Neg, Param, PdeSystem, Pow, parse_expression,
                  parse_operator, pretty_expr, walk)
from .errors import (DegreeTooLow, DimensionMismatch, EvalDomainError, InputError,
                     NonpositiveViscosity, UnboundParameter)
from .log_utils import get_logger
from .pwpoly import Piecewise, Poly, PwExpr, PwPoly, eval_nlsc_many, shared_complex

logger = get_logger(__name__)

CONVECTIVE_PRINTED = 'printed'
CONVECTIVE_STANDARD = 'standard'

_FUNCS = {'sin': np.sin, 'cos': np.cos, 'exp': np.exp, 'abs': np.abs}


def check_bindings(system: PdeSystem) -> Dict[str, float]:
    """Parameter bindings of a system, or UnboundParameter naming the first gap"""
    bindings = system.bindings
    for name in system.parameter_names():
        if name not in bindings:
            raise UnboundParameter(f"Parameter {name!r} has no value", name=name)
    return bindings


class Evaluator:
    """Vectorized evaluation of expression trees over sample points"""

    def __init__(self, system: Optional[PdeSystem], bindings: Optional[Dict[str, float]] = None,
                 n_space: Optional[int] = None):
        self.system = system
        self.bindings = dict(bindings if bindings is not None else check_bindings(system))
        self.n_space = n_space if n_space is not None else system.n_space

    def evaluate(self, expr: Expr, coords: np.ndarray, jets: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Evaluate an expression at S points

        Args:
            expr: Expression tree
            coords: Point coordinates, shape (S, dim), time last
            jets: Jet values, shape (S, K), in JetSpec order

        Returns:
            Values, shape (S,)
        """
        with np.errstate(all='ignore'):
            result = self._eval(expr, coords, jets)
        result = np.broadcast_to(np.asarray(result, dtype=float), (coords.shape[0],))
        if np.isnan(result).any():
            raise EvalDomainError(f"Expression {pretty_expr(expr)} is undefined at some points", expr)
        return result

    def _eval(self, expr: Expr, coords: np.ndarray, jets: Optional[np.ndarray]):
        if isinstance(expr, Const):
            return expr.value
        if isinstance(expr, Param):
            if expr.name not in self.bindings:
                raise UnboundParameter(f"Parameter {expr.name!r} has no value", name=expr.name)
            return self.bindings[expr.name]
        if isinstance(expr, Coord):
            axis = self.n_space if expr.is_time else expr.axis - 1
            if axis >= coords.shape[1]:
                raise DimensionMismatch(f"Coordinate {pretty_expr(expr)} is not an axis of {coords.shape[1]}-dimensional points")
            return coords[:, axis]
        if isinstance(expr, Jet):
            if jets is None or self.system is None:
                raise InputError(f"Jet variable {pretty_expr(expr)} outside an operator")
            alpha = expr.multi_index(self.system.n_space, self.system.has_time)
            return jets[:, self.system.jet_spec.index(expr.unknown, alpha)]
        if isinstance(expr, Neg):
            return -self._eval(expr.operand, coords, jets)
        if isinstance(expr, Pow):
            return self._eval(expr.base, coords, jets) ** expr.exponent
        if isinstance(expr, Func):
            return _FUNCS[expr.name](self._eval(expr.arg, coords, jets))
        left = self._eval(expr.left, coords, jets)
        right = self._eval(expr.right, coords, jets)
        if expr.op == '+':
            return left + right
        if expr.op == '-':
            return left - right
        if expr.op == '*':
            return left * right
        if np.any(np.asarray(right) == 0.0):
            raise EvalDomainError(f"Division by zero in {pretty_expr(expr)}", expr)
        return left / right


def eval_F_many(system: PdeSystem, points: np.ndarray, jets: np.ndarray) -> np.ndarray:
    """F at S points with S jets; returns shape (S, m)"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    jets = np.atleast_2d(np.asarray(jets, dtype=float))
    if points.shape[1] != system.dim:
        raise DimensionMismatch(f"Points of dimension {points.shape[1]} for a {system.dim}-dimensional system")
    if jets.shape != (points.shape[0], system.jet_spec.size):
        raise DimensionMismatch(f"Expected jets of shape {(points.shape[0], system.jet_spec.size)}, got {jets.shape}")
    evaluator = Evaluator(system)
    return np.stack([evaluator.evaluate(expr, points, jets) for expr in system.exprs], axis=1)


def eval_F(system: PdeSystem, p: Union[Point, Sequence[float]], jet: Sequence[float]) -> np.ndarray:
    """
    Evaluate every equation of a system at one point and jet

    Args:
        system: Parsed system
        p: Point of dimension system.dim
        jet: K jet values in JetSpec order

    Returns:
        Array of m values
    """
    p = as_point(p)
    jet = np.asarray(jet, dtype=float)
    if jet.shape != (system.jet_spec.size,):
        raise DimensionMismatch(f"Jet length {jet.shape} does not match K = {system.jet_spec.size}")
    return eval_F_many(system, p.as_array()[None, :], jet[None, :])[0]


class CellJet:
    """Derivatives of one cell's polynomials in JetSpec order"""

    def __init__(self, system: PdeSystem, polys: Dict[str, Poly]):
        self.system = system
        self.derivatives = [polys[u].derivative(alpha) for u, alpha in system.jet_spec.slots]

    def jets_at(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if not self.derivatives:
            return np.zeros((points.shape[0], 0))
        return np.stack([d.evaluate_many(points) for d in self.derivatives], axis=1)

    def residuals_at(self, points: np.ndarray) -> np.ndarray:
        """All m components of F at points of the cell, shape (S, m)"""
        return eval_F_many(self.system, points, self.jets_at(points))


class ComposedPiece:
    """One component of F composed with a cell's jets; continuous on the cell"""

    def __init__(self, cell_jet: CellJet, component: int):
        self.cell_jet = cell_jet
        self.component = component

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        expr = self.cell_jet.system.exprs[self.component]
        return Evaluator(self.cell_jet.system).evaluate(expr, points, self.cell_jet.jets_at(points))

    def __repr__(self) -> str:
        return f"ComposedPiece(equation {self.component + 1})"


def required_degrees(system: PdeSystem) -> Dict[str, int]:
    """Highest derivative order of each unknown"""
    spec = system.jet_spec
    return {u: max(alpha.order for alpha in spec.indices_of(u)) for u in spec.unknowns}


def _components(system: PdeSystem, v: Union[Sequence[PwPoly], Dict[str, PwPoly]]) -> Dict[str, PwPoly]:
    if isinstance(v, dict):
        missing = [u for u in system.unknowns if u not in v]
        if missing:
            raise InputError(f"No function given for unknowns {missing}")
        return {u: v[u] for u in system.unknowns}
    v = list(v)
    if len(v) != len(system.unknowns):
        raise InputError(f"Expected {len(system.unknowns)} functions for unknowns {list(system.unknowns)}, got {len(v)}")
    return dict(zip(system.unknowns, v))


def apply_T(system: PdeSystem, v: Union[Sequence[PwPoly], Dict[str, PwPoly]]) -> List[PwExpr]:
    """
    Extend T to piecewise polynomials

    Args:
        system: Parsed system with all parameters bound
        v: One PwPoly per unknown (JetSpec unknown order), all on one complex

    Returns:
        One PwExpr per equation; its cell pieces compose F with the cell
        polynomials' jets and evaluate with NLSC semantics on the skeleton
    """
    check_bindings(system)
    components = _components(system, v)
    complex_ = shared_complex(components.values())
    if complex_.dim != system.dim:
        raise DimensionMismatch(f"Functions live in dimension {complex_.dim}, the system in {system.dim}")
    for unknown, needed in required_degrees(system).items():
        have = components[unknown].max_degree
        if have < needed:
            raise DegreeTooLow(f"{unknown} has degree {have} but the system needs derivatives of order {needed}",
                               unknown=unknown, degree=have, needed=needed)
    cell_jets = [CellJet(system, {u: f.pieces[i] for u, f in components.items()}) for i in range(len(complex_))]
    return [PwExpr(complex_, [ComposedPiece(cj, k) for cj in cell_jets]) for k in range(system.m)]


class Rhs:
    """Right-hand side g: one continuous function per equation"""

    def __init__(self, system: PdeSystem, parts: Sequence[Callable[[np.ndarray], np.ndarray]],
                 labels: Optional[Sequence[str]] = None):
        if len(parts) != system.m:
            raise InputError(f"Expected {system.m} right-hand side components, got {len(parts)}")
        self.system = system
        self.parts = list(parts)
        self.labels = list(labels) if labels is not None else system.rhs_names

    @classmethod
    def from_bindings(cls, system: PdeSystem, values: Optional[Dict[str, Union[float, str, Expr, Callable]]] = None
                      ) -> 'Rhs':
        """
        Build g from the equations' right-hand sides

        Numeric right-hand sides are constants; named ones are looked up in
        values, where each entry is a number, DSL expression text, a parsed
        expression or a vectorized callable of points.
        """
        values = values or {}
        bindings = system.bindings
        parts, labels = [], []
        for eq in system.equations:
            if not isinstance(eq.rhs, str):
                parts.append(_constant(eq.rhs))
                labels.append(repr(eq.rhs))
                continue
            if eq.rhs not in values:
                raise UnboundParameter(f"Right-hand side {eq.rhs!r} has no value", name=eq.rhs)
            parts.append(expression_function(values[eq.rhs], bindings, system.n_space))
            labels.append(eq.rhs)
        return cls(system, parts, labels)

    @classmethod
    def from_functions(cls, system: PdeSystem, functions: Sequence[Piecewise]) -> 'Rhs':
        """g given as piecewise functions, evaluated with NLSC semantics"""
        return cls(system, [lambda pts, f=f: eval_nlsc_many(f, pts) for f in functions])

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """g at S points, shape (S, m)"""
        points = np.atleast_2d(points)
        return np.stack([np.broadcast_to(np.asarray(part(points), dtype=float), (points.shape[0],))
                         for part in self.parts], axis=1)

    def evaluate(self, p: Union[Point, Sequence[float]]) -> np.ndarray:
        return self.evaluate_many(as_point(p).as_array()[None, :])[0]


def _constant(value: float) -> Callable[[np.ndarray], np.ndarray]:
    value = float(value)
    return lambda pts: np.full(np.atleast_2d(pts).shape[0], value)


def expression_function(value: Union[float, str, Expr, Callable], bindings: Dict[str, float],
                        n_space: int) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a number, DSL text or expression tree into a vectorized function of points"""
    if callable(value):
        return value
    if isinstance(value, (int, float)):
        return _constant(value)
    expr = parse_expression(value) if isinstance(value, str) else value
    if any(isinstance(node, Jet) for node in walk(expr)):
        raise InputError(f"Expression {pretty_expr(expr)} must not contain jet variables")
    evaluator = Evaluator(None, bindings, n_space)
    return lambda pts: evaluator.evaluate(expr, np.atleast_2d(pts))


def expr_to_poly(expr: Expr, center: Union[Point, Sequence[float]], bindings: Dict[str, float],
                 n_space: int, max_degree: Optional[int] = None) -> Optional[Poly]:
    """
    Exact conversion of a polynomial expression to a Poly around center

    Returns None when the expression is not a polynomial in the coordinates
    (elementary functions, division by a non-constant, jet variables).
    """
    center = as_point(center)
    try:
        poly = _to_poly(expr, center, bindings, n_space)
    except _NotPolynomial:
        return None
    if max_degree is not None:
        if poly.max_degree > max_degree:
            return None
        poly = Poly(center, poly.coeffs, max_degree)
    return poly


class _NotPolynomial(Exception):
    pass


def _to_poly(expr: Expr, center: Point, bindings: Dict[str, float], n_space: int) -> Poly:
    if isinstance(expr, Const):
        return Poly.constant(center, expr.value)
    if isinstance(expr, Param):
        if expr.name not in bindings:
            raise UnboundParameter(f"Parameter {expr.name!r} has no value", name=expr.name)
        return Poly.constant(center, bindings[expr.name])
    if isinstance(expr, Coord):
        axis = n_space if expr.is_time else expr.axis - 1
        if axis >= center.dim:
            raise DimensionMismatch(f"Coordinate {pretty_expr(expr)} is not an axis of dimension {center.dim}")
        return Poly.coordinate(center, axis)
    if isinstance(expr, Neg):
        return -_to_poly(expr.operand, center, bindings, n_space)
    if isinstance(expr, Pow):
        return _to_poly(expr.base, center, bindings, n_space) ** expr.exponent
    if isinstance(expr, BinOp):
        left = _to_poly(expr.left, center, bindings, n_space)
        right = _to_poly(expr.right, center, bindings, n_space)
        if expr.op == '+':
            return left + right
        if expr.op == '-':
            return left - right
        if expr.op == '*':
            return left * right
        if right.max_degree == 0:
            divisor = right.coeffs.get(MultiIndex.zero(center.dim), 0.0)
            if divisor == 0.0:
                raise EvalDomainError(f"Division by zero in {pretty_expr(expr)}", expr)
            return left * (1.0 / divisor)
    raise _NotPolynomial()


def ns_text(dim: int = 3, convective: str = CONVECTIVE_PRINTED) -> str:
    """DSL text of the incompressible Navier-Stokes system in dim spatial axes"""
    if convective not in (CONVECTIVE_PRINTED, CONVECTIVE_STANDARD):
        raise InputError(f"Unknown convective form {convective!r}")
    axes = range(1, dim + 1)
    lines = [f"# Navier-Stokes, {dim} spatial dimensions, {convective} convective term"]
    for i in axes:
        if convective == CONVECTIVE_PRINTED:
            convection = ' + '.join(f"u{j}*dx{i}(u{j})" for j in axes)
        else:
            convection = ' + '.join(f"u{j}*dx{j}(u{i})" for j in axes)
        laplacian = ' + '.join(f"dxx{j}(u{i})" for j in axes)
        lines.append(f"dt(u{i}) + {convection} - nu*({laplacian}) + dx{i}(p) = f{i}")
    lines.append(' + '.join(f"dx{j}(u{j})" for j in axes) + ' = 0')
    return '\n'.join(lines) + '\n'


def ns_system(nu: float, dim: int = 3, convective: str = CONVECTIVE_PRINTED) -> PdeSystem:
    """
    Navier-Stokes momentum equations plus the divergence constraint

    Args:
        nu: Viscosity, > 0
        dim: Number of spatial axes, >= 2
        convective: 'printed' for sum_j u_j * du_j/dx_i, 'standard' for
            sum_j u_j * du_i/dx_j

    Returns:
        PdeSystem in unknowns p, u1..u_dim over (x1..x_dim, t), with the
        closed-form jet hook attached
    """
    if not nu > 0:
        raise NonpositiveViscosity(f"Viscosity must be positive, got {nu}", nu=nu)
    if dim < 2:
        raise InputError(f"Navier-Stokes needs at least 2 spatial dimensions, got {dim}")
    system = parse_operator(ns_text(dim, convective), n_space=dim, has_time=True, params={'nu': nu})
    return system.with_closed_form(ns_closed_form)


def ns_closed_form(system: PdeSystem, p: Point, target: np.ndarray) -> Optional[np.ndarray]:
    """
    Closed-form jet for the Navier-Stokes system

    With u = 0 and p = 0 at the point every nonlinear and viscous term
    vanishes, so du_i/dt carries the momentum targets and du_1/dx_1 the
    divergence target. Returns None when the system does not have that shape.
    """
    spec = system.jet_spec
    dim = system.n_space
    jet = np.zeros(spec.size)
    try:
        for i in range(1, dim + 1):
            jet[spec.index(f"u{i}", MultiIndex.unit(system.dim, dim))] = target[i - 1]
        jet[spec.index('u1', MultiIndex.unit(system.dim, 0))] = target[dim]
    except (InputError, IndexError):
        return None
    return jet
