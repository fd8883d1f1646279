"""
Piecewise Polynomial Module

Exact model of the space of normal lower semi-continuous functions that are
continuous off a closed nowhere dense set: polynomials on the cells of a
finite axis-aligned cell complex. A value at any point is the minimum over
the cells whose closure contains the point, which on cellwise continuous
data is exactly the continuum (I∘S) regularization.

Polynomials are stored in the Taylor basis (x - a)^alpha / alpha!, so the
coefficient of alpha is the alpha-derivative at the center a.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core_types import Box, MultiIndex, Point, all_multi_indices, as_point, monomial_eval_many, sample_cells
from .errors import (ComplexMismatch, DimensionMismatch, DomainMismatch, InputError,
                     InvariantViolation, OnSkeleton, OutOfDomain)
from .gridfn import Grid, GridFn
from .log_utils import get_logger

logger = get_logger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_DENSITY = 4


class Poly:
    """Polynomial in the Taylor basis around a center point"""

    def __init__(self, center: Union[Point, Sequence[float]], coeffs: Dict[MultiIndex, float],
                 max_degree: Optional[int] = None):
        self.center = as_point(center)
        self.coeffs: Dict[MultiIndex, float] = {}
        for alpha, value in coeffs.items():
            if alpha.dim != self.center.dim:
                raise DimensionMismatch(f"Multi-index {alpha.orders} does not match dimension {self.center.dim}")
            self.coeffs[alpha] = float(value)
        highest = max((alpha.order for alpha in self.coeffs), default=0)
        if max_degree is None:
            max_degree = highest
        elif highest > max_degree:
            raise InputError(f"Coefficient of order {highest} exceeds the declared degree {max_degree}")
        self.max_degree = int(max_degree)

    @classmethod
    def constant(cls, center: Union[Point, Sequence[float]], value: float, max_degree: int = 0) -> 'Poly':
        center = as_point(center)
        return cls(center, {MultiIndex.zero(center.dim): value}, max_degree)

    @classmethod
    def coordinate(cls, center: Union[Point, Sequence[float]], axis: int) -> 'Poly':
        """The coordinate function x_axis"""
        center = as_point(center)
        return cls(center, {MultiIndex.zero(center.dim): center[axis],
                            MultiIndex.unit(center.dim, axis): 1.0})

    @property
    def dim(self) -> int:
        return self.center.dim

    @property
    def degree(self) -> int:
        nonzero = [alpha.order for alpha, c in self.coeffs.items() if c != 0.0]
        return max(nonzero, default=0)

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        result = np.zeros(points.shape[0])
        for alpha, c in self.coeffs.items():
            result = result + c * monomial_eval_many(alpha, points, self.center.coords)
        return result

    def evaluate(self, x: Union[Point, Sequence[float]]) -> float:
        return float(self.evaluate_many(as_point(x).as_array()[None, :])[0])

    def derivative(self, beta: MultiIndex) -> 'Poly':
        """Exact D^beta: in the Taylor basis a shift of multi-indices"""
        if beta.dim != self.dim:
            raise DimensionMismatch(f"Derivative {beta.orders} does not match dimension {self.dim}")
        shifted = {alpha - beta: c for alpha, c in self.coeffs.items() if alpha.dominates(beta)}
        return Poly(self.center, shifted, max(self.max_degree - beta.order, 0))

    def _same_center(self, other: 'Poly') -> None:
        if other.center != self.center:
            raise InputError("Polynomial arithmetic needs a common center")

    def __add__(self, other: Union['Poly', float]) -> 'Poly':
        if not isinstance(other, Poly):
            other = Poly.constant(self.center, float(other))
        self._same_center(other)
        coeffs = dict(self.coeffs)
        for alpha, c in other.coeffs.items():
            coeffs[alpha] = coeffs.get(alpha, 0.0) + c
        return Poly(self.center, coeffs, max(self.max_degree, other.max_degree))

    __radd__ = __add__

    def __neg__(self) -> 'Poly':
        return Poly(self.center, {alpha: -c for alpha, c in self.coeffs.items()}, self.max_degree)

    def __sub__(self, other: Union['Poly', float]) -> 'Poly':
        return self + (-other if isinstance(other, Poly) else -float(other))

    def __mul__(self, other: Union['Poly', float]) -> 'Poly':
        if not isinstance(other, Poly):
            return Poly(self.center, {alpha: c * float(other) for alpha, c in self.coeffs.items()}, self.max_degree)
        self._same_center(other)
        coeffs: Dict[MultiIndex, float] = {}
        for alpha, a in self.coeffs.items():
            for beta, b in other.coeffs.items():
                gamma = alpha + beta
                weight = gamma.factorial // (alpha.factorial * beta.factorial)
                coeffs[gamma] = coeffs.get(gamma, 0.0) + a * b * weight
        return Poly(self.center, coeffs, self.max_degree + other.max_degree)

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> 'Poly':
        if exponent < 0:
            raise InputError("Polynomials only take nonnegative integer powers")
        result = Poly.constant(self.center, 1.0)
        for _ in range(exponent):
            result = result * self
        return result

    def recentered(self, center: Union[Point, Sequence[float]]) -> 'Poly':
        """The same polynomial expanded around another center"""
        center = as_point(center)
        if center == self.center:
            return self
        coeffs = {}
        for beta in all_multi_indices(self.dim, self.max_degree):
            value = self.derivative(beta).evaluate(center)
            if value != 0.0:
                coeffs[beta] = value
        return Poly(center, coeffs, self.max_degree)

    def extended(self, value_of_new_axis: float = 0.0) -> 'Poly':
        """The same polynomial as a function of one more (trailing) coordinate"""
        center = Point(self.center.coords + (value_of_new_axis,))
        return Poly(center, {alpha.extended(0): c for alpha, c in self.coeffs.items()}, self.max_degree)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Poly):
            return NotImplemented
        return self.center == other.center and self.coeffs == other.coeffs

    def __repr__(self) -> str:
        terms = ', '.join(f"{alpha.key()}: {c!r}" for alpha, c in self.coeffs.items())
        return f"Poly(center={self.center.coords}, {{{terms}}})"


class CellComplex:
    """Finite set of boxes with disjoint interiors covering a domain box"""

    def __init__(self, domain: Box, cells: Sequence[Box], validate: bool = True):
        if not cells:
            raise InputError("A cell complex needs at least one cell")
        self.domain = domain
        self.cells: Tuple[Box, ...] = tuple(cells)
        self.lo = np.array([c.lo.coords for c in self.cells], dtype=float)
        self.hi = np.array([c.hi.coords for c in self.cells], dtype=float)
        if validate:
            self._validate()

    @classmethod
    def single(cls, domain: Box) -> 'CellComplex':
        return cls(domain, [domain])

    @classmethod
    def uniform(cls, domain: Box, cells_per_axis: Sequence[int]) -> 'CellComplex':
        return cls(domain, domain.subdivide(cells_per_axis))

    def _validate(self) -> None:
        for cell in self.cells:
            if cell.dim != self.domain.dim:
                raise DimensionMismatch("Cell dimension differs from the domain dimension")
            if not self.domain.contains_box(cell):
                raise OutOfDomain(f"Cell {cell.to_dict()} leaves the domain {self.domain.to_dict()}")
            if cell.is_degenerate:
                raise InputError(f"Cell {cell.to_dict()} has empty interior")
        total = float(np.prod(self.hi - self.lo, axis=1).sum())
        if not np.isclose(total, self.domain.volume, rtol=1e-9, atol=0.0):
            raise InputError(f"Cells do not tile the domain: volume {total} vs {self.domain.volume}")
        # Every cell center must lie in the open interior of exactly one cell
        centers = 0.5 * (self.lo + self.hi)
        for start in range(0, len(self.cells), 512):
            block = centers[start:start + 512]
            inside = np.all((self.lo[None, :, :] < block[:, None, :]) & (block[:, None, :] < self.hi[None, :, :]), axis=2)
            if not np.all(inside.sum(axis=1) == 1):
                raise InputError("Cells of the complex overlap")

    def __len__(self) -> int:
        return len(self.cells)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CellComplex):
            return NotImplemented
        return self.domain == other.domain and self.cells == other.cells

    @property
    def dim(self) -> int:
        return self.domain.dim

    def closure_mask(self, index: int, points: np.ndarray) -> np.ndarray:
        return np.all((self.lo[index] <= points) & (points <= self.hi[index]), axis=1)

    def interior_mask(self, index: int, points: np.ndarray) -> np.ndarray:
        return np.all((self.lo[index] < points) & (points < self.hi[index]), axis=1)

    def incident_cells(self, x: Point) -> List[int]:
        """Indices of the cells whose closure contains x, in complex order"""
        arr = x.as_array()
        return [int(i) for i in np.nonzero(np.all((self.lo <= arr) & (arr <= self.hi), axis=1))[0]]

    def interior_cell(self, x: Point) -> int:
        """Index of the cell containing x in its interior"""
        if x.dim != self.dim:
            raise DimensionMismatch(f"Point of dimension {x.dim} in a {self.dim}-dimensional complex")
        if not self.domain.contains(x):
            raise OutOfDomain(f"Point {x.coords} is outside the domain", point=x)
        arr = x.as_array()
        inside = np.nonzero(np.all((self.lo < arr) & (arr < self.hi), axis=1))[0]
        if len(inside) != 1:
            raise OnSkeleton(f"Point {x.coords} lies on a cell face", point=x)
        return int(inside[0])

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Cell index of each interior point (-1 where a point is on the skeleton or outside)"""
        owner = np.full(points.shape[0], -1, dtype=int)
        for index in range(len(self.cells)):
            owner[self.interior_mask(index, points) & (owner < 0)] = index
        return owner

    def on_skeleton(self, x: Point) -> bool:
        """True iff x lies on a face of some cell"""
        incident = self.incident_cells(x)
        return bool(incident) and not any(self.cells[i].contains_interior(x) for i in incident)


class MinOf:
    """Pointwise minimum of continuous pieces"""

    def __init__(self, children: Sequence):
        self.children = tuple(children)

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        return np.minimum.reduce([child.evaluate_many(points) for child in self.children])

    def __repr__(self) -> str:
        return f"MinOf({list(self.children)!r})"


class MaxOf:
    """Pointwise maximum of continuous pieces"""

    def __init__(self, children: Sequence):
        self.children = tuple(children)

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        return np.maximum.reduce([child.evaluate_many(points) for child in self.children])

    def __repr__(self) -> str:
        return f"MaxOf({list(self.children)!r})"


class Offset:
    """A piece shifted by a constant"""

    def __init__(self, child, shift: float):
        self.child = child
        self.shift = float(shift)

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        return self.child.evaluate_many(points) + self.shift

    def __repr__(self) -> str:
        return f"Offset({self.child!r}, {self.shift!r})"


class FunctionPiece:
    """A continuous vectorized callable fn(points (S, n)) -> (S,) used as a piece"""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], label: str = 'fn'):
        self.fn = fn
        self.label = label

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        values = np.asarray(self.fn(np.atleast_2d(points)), dtype=float)
        return np.broadcast_to(values, (np.atleast_2d(points).shape[0],)).astype(float)

    def __repr__(self) -> str:
        return f"FunctionPiece({self.label})"


class Piecewise:
    """A function given by one continuous piece per cell of a complex"""

    def __init__(self, complex_: CellComplex, pieces: Sequence):
        if len(pieces) != len(complex_):
            raise ComplexMismatch(f"{len(pieces)} pieces for {len(complex_)} cells")
        self.complex = complex_
        self.pieces = tuple(pieces)

    @property
    def domain(self) -> Box:
        return self.complex.domain

    def cell_piece(self, index: int):
        return self.pieces[index]

    def restrict_to(self, refined: CellComplex) -> 'Piecewise':
        """The same function on a refinement of its complex"""
        if refined.domain != self.domain:
            raise DomainMismatch("Refinement has a different domain")
        centers = 0.5 * (refined.lo + refined.hi)
        owner = self.complex.locate(centers)
        if np.any(owner < 0):
            raise ComplexMismatch("Target complex does not refine this function's complex")
        return type(self)(refined, [self.pieces[i] for i in owner])


class PwPoly(Piecewise):
    """Piecewise polynomial, one Poly per cell"""

    @classmethod
    def constant(cls, domain: Box, value: float) -> 'PwPoly':
        return cls(CellComplex.single(domain), [Poly.constant(domain.center, value)])

    @property
    def degree(self) -> int:
        return max(piece.degree for piece in self.pieces)

    @property
    def max_degree(self) -> int:
        """Declared degree d, the smallest over the cells"""
        return min(piece.max_degree for piece in self.pieces)


class PwExpr(Piecewise):
    """Piecewise min/max expression trees over continuous leaves"""

    @classmethod
    def from_pwpoly(cls, f: Piecewise) -> 'PwExpr':
        return cls(f.complex, f.pieces)

    @classmethod
    def from_callable(cls, domain: Box, fn: Callable[[np.ndarray], np.ndarray], label: str = 'fn') -> 'PwExpr':
        return cls(CellComplex.single(domain), [FunctionPiece(fn, label)])

    @classmethod
    def constant(cls, domain: Box, value: float) -> 'PwExpr':
        return cls(CellComplex.single(domain), [Poly.constant(domain.center, value)])

    @classmethod
    def shifted(cls, f: Piecewise, shift: float) -> 'PwExpr':
        """f + shift, cell by cell"""
        return cls(f.complex, [Offset(piece, shift) for piece in f.pieces])


def eval_nlsc_many(f: Piecewise, points: np.ndarray) -> np.ndarray:
    """NLSC values at many points: minimum over incident cells, fixed cell order"""
    return _incident_reduce(f, points, np.minimum, np.inf)


def eval_usc_many(f: Piecewise, points: np.ndarray) -> np.ndarray:
    """Upper regularized values at many points: maximum over incident cells"""
    return _incident_reduce(f, points, np.maximum, -np.inf)


def _incident_reduce(f: Piecewise, points: np.ndarray, reduce, start: float) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != f.complex.dim:
        raise DimensionMismatch(f"Points of dimension {points.shape[1]} for a {f.complex.dim}-dimensional function")
    result = np.full(points.shape[0], start)
    covered = np.zeros(points.shape[0], dtype=bool)
    for index, piece in enumerate(f.pieces):
        mask = f.complex.closure_mask(index, points)
        if not mask.any():
            continue
        result[mask] = reduce(result[mask], piece.evaluate_many(points[mask]))
        covered |= mask
    if not covered.all():
        bad = points[np.argmin(covered)]
        raise OutOfDomain(f"Point {tuple(bad)} is outside the domain", point=tuple(bad))
    return result


def eval_nlsc(f: Piecewise, x: Union[Point, Sequence[float]]) -> float:
    """
    Evaluate with NLSC semantics

    Args:
        f: PwPoly or PwExpr
        x: Point of the domain

    Returns:
        Minimum over the cells whose closure contains x of the cell piece at x
    """
    return float(eval_nlsc_many(f, as_point(x).as_array()[None, :])[0])


def eval_usc(f: Piecewise, x: Union[Point, Sequence[float]]) -> float:
    """Evaluate with the dual rule: maximum over incident cells"""
    return float(eval_usc_many(f, as_point(x).as_array()[None, :])[0])


def deriv_eval(f: PwPoly, x: Union[Point, Sequence[float]], alpha: MultiIndex) -> float:
    """
    Exact alpha-derivative of the cell polynomial at an interior point

    Raises:
        OnSkeleton: x lies on a cell face
        OutOfDomain: x is outside the domain
    """
    x = as_point(x)
    index = f.complex.interior_cell(x)
    return f.pieces[index].derivative(alpha).evaluate(x)


def complex_of(f: Union[Piecewise, CellComplex]) -> CellComplex:
    return f if isinstance(f, CellComplex) else f.complex


def common_refinement(f: Union[Piecewise, CellComplex], g: Union[Piecewise, CellComplex]) -> CellComplex:
    """
    Coarsest complex refining both inputs

    Every output cell is the nonempty-interior intersection of one cell of
    each input; cells are sorted by their lower then upper corner.
    """
    a, b = complex_of(f), complex_of(g)
    if a.domain != b.domain:
        raise DomainMismatch(f"Domains differ: {a.domain.to_dict()} vs {b.domain.to_dict()}")
    if a == b:
        return a
    lo = np.maximum(a.lo[:, None, :], b.lo[None, :, :])
    hi = np.minimum(a.hi[:, None, :], b.hi[None, :, :])
    valid = np.all(hi > lo, axis=2)
    i, j = np.nonzero(valid)
    cells = [Box.from_bounds(lo[p, q], hi[p, q]) for p, q in zip(i, j)]
    cells.sort(key=lambda c: c.sort_key())
    return CellComplex(a.domain, cells, validate=False)


def refine_all(functions: Sequence[Union[Piecewise, CellComplex]]) -> CellComplex:
    """Common refinement of a whole family"""
    result = complex_of(functions[0])
    for f in functions[1:]:
        result = common_refinement(result, f)
    return result


@dataclass
class LeqResult:
    """Outcome of a sampled order test: holds, or a worst witness point and gap"""

    holds: bool
    point: Optional[Point] = None
    gap: float = 0.0
    samples: int = 0

    def __bool__(self) -> bool:
        return self.holds

    def to_dict(self) -> Dict:
        """Convert result to dictionary"""
        return {
            'holds': self.holds,
            'point': list(self.point.coords) if self.point is not None else None,
            'gap': self.gap,
            'samples': self.samples,
        }


def worst_gap(lhs: np.ndarray, rhs: np.ndarray, points: np.ndarray, tol: float) -> LeqResult:
    """Check lhs <= rhs + tol; report the largest violation (first on ties)"""
    with np.errstate(invalid='ignore'):
        gaps = lhs - rhs
    gaps = np.where(np.isnan(gaps), 0.0, gaps)
    worst = int(np.argmax(gaps))
    if gaps[worst] > tol:
        return LeqResult(False, Point(tuple(points[worst])), float(gaps[worst]), len(gaps))
    return LeqResult(True, None, float(max(gaps[worst], 0.0)), len(gaps))


def leq_samples(f: Piecewise, g: Piecewise, density: int = DEFAULT_DENSITY, tol: float = DEFAULT_TOL) -> LeqResult:
    """
    Order test on a dense sample set

    Compares eval_nlsc(f) <= eval_nlsc(g) + tol on the interior samples of
    the common refinement.
    """
    refined = common_refinement(f, g)
    samples = sample_cells(refined.domain, refined.cells, density)
    return worst_gap(eval_nlsc_many(f, samples.array), eval_nlsc_many(g, samples.array), samples.array, tol)


def to_gridfn(f: Piecewise, grid: Grid) -> GridFn:
    """Sample the NLSC values at every grid node"""
    if grid.box.dim != f.domain.dim or not f.domain.contains_box(grid.box):
        raise OutOfDomain(f"Grid box {grid.box.to_dict()} is not inside {f.domain.to_dict()}")
    return GridFn(grid, eval_nlsc_many(f, grid.nodes()).reshape(grid.shape))


def shared_complex(functions: Iterable[Piecewise]) -> CellComplex:
    """The complex shared by every function, or ComplexMismatch"""
    functions = list(functions)
    first = functions[0].complex
    for f in functions[1:]:
        if f.complex != first:
            raise ComplexMismatch("Functions must share one cell complex; use common_refinement first")
    return first


def check_complex(complex_: CellComplex) -> None:
    """Re-validate a complex built without validation"""
    try:
        complex_._validate()
    except InputError as e:
        raise InvariantViolation(f"Invalid cell complex: {e}")
