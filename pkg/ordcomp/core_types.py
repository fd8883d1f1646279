"""
Core Types Module

Extended-real scalars, points, boxes, multi-indices and the interior
sampling lattice shared by every other module. All values are immutable.
"""

import itertools
import math
from dataclasses import dataclass
from functools import total_ordering
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, EmptyPartition, InputError, NaNValue, OutOfDomain, ZeroWidthAxis

Number = Union[int, float]


@total_ordering
@dataclass(frozen=True)
class XReal:
    """Extended real number: a finite float, +inf or -inf (never NaN)"""

    value: float

    def __post_init__(self):
        value = float(self.value)
        if math.isnan(value):
            raise NaNValue("XReal cannot hold NaN")
        object.__setattr__(self, 'value', value)

    def __lt__(self, other: 'XReal') -> bool:
        return self.value < _xvalue(other)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (XReal, int, float)):
            return self.value == _xvalue(other)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.value)

    def __neg__(self) -> 'XReal':
        return XReal(-self.value)

    def __float__(self) -> float:
        return self.value

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)

    def to_token(self) -> str:
        """Text form: 17 significant digits, 'inf' and '-inf' for infinities"""
        return format_number(self.value)

    @classmethod
    def from_token(cls, token: str) -> 'XReal':
        text = token.strip().lower()
        if text in ('inf', '+inf', 'infinity', '+infinity'):
            return POS_INF
        if text in ('-inf', '-infinity'):
            return NEG_INF
        try:
            return cls(float(text))
        except ValueError:
            raise InputError(f"Not an extended real: {token!r}")


def _xvalue(other: Union['XReal', Number]) -> float:
    return other.value if isinstance(other, XReal) else float(other)


POS_INF = XReal(math.inf)
NEG_INF = XReal(-math.inf)


def format_number(value: float) -> str:
    """Format a float with 17 significant digits (bit-exact round trip)"""
    if value == math.inf:
        return 'inf'
    if value == -math.inf:
        return '-inf'
    return format(float(value), '.17g')


@dataclass(frozen=True)
class Point:
    """A point of R^n; all coordinates finite"""

    coords: Tuple[float, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if len(coords) < 1:
            raise DimensionMismatch("A point needs at least one coordinate")
        if not all(math.isfinite(c) for c in coords):
            raise InputError(f"Point coordinates must be finite: {coords}")
        object.__setattr__(self, 'coords', coords)

    @classmethod
    def of(cls, *coords: Number) -> 'Point':
        return cls(tuple(coords))

    @property
    def dim(self) -> int:
        return len(self.coords)

    def __len__(self) -> int:
        return len(self.coords)

    def __getitem__(self, axis: int) -> float:
        return self.coords[axis]

    def __iter__(self) -> Iterator[float]:
        return iter(self.coords)

    def as_array(self) -> np.ndarray:
        return np.array(self.coords, dtype=float)

    def with_coord(self, axis: int, value: float) -> 'Point':
        coords = list(self.coords)
        coords[axis] = value
        return Point(tuple(coords))


def as_point(value: Union[Point, Sequence[Number], Number]) -> Point:
    """Coerce a Point, a sequence of numbers or a scalar to a Point"""
    if isinstance(value, Point):
        return value
    if isinstance(value, (int, float)):
        return Point((value,))
    return Point(tuple(value))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi]"""

    lo: Point
    hi: Point

    def __post_init__(self):
        lo, hi = as_point(self.lo), as_point(self.hi)
        if lo.dim != hi.dim:
            raise DimensionMismatch(f"Box corners differ in dimension: {lo.dim} vs {hi.dim}")
        if any(a > b for a, b in zip(lo, hi)):
            raise InputError(f"Box has lo > hi: {lo.coords} / {hi.coords}")
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)

    @classmethod
    def from_bounds(cls, lo: Sequence[Number], hi: Sequence[Number]) -> 'Box':
        return cls(Point(tuple(lo)), Point(tuple(hi)))

    @classmethod
    def unit(cls, dim: int) -> 'Box':
        return cls.from_bounds([0.0] * dim, [1.0] * dim)

    @property
    def dim(self) -> int:
        return self.lo.dim

    @property
    def widths(self) -> Tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def center(self) -> Point:
        return Point(tuple(0.5 * (a + b) for a, b in zip(self.lo, self.hi)))

    @property
    def is_degenerate(self) -> bool:
        return any(w == 0.0 for w in self.widths)

    def lo_array(self) -> np.ndarray:
        return self.lo.as_array()

    def hi_array(self) -> np.ndarray:
        return self.hi.as_array()

    def contains(self, x: Union[Point, Sequence[Number]]) -> bool:
        """Closed-box membership"""
        x = as_point(x)
        _check_dims(self.dim, x.dim)
        return all(a <= c <= b for a, c, b in zip(self.lo, x, self.hi))

    def contains_interior(self, x: Union[Point, Sequence[Number]]) -> bool:
        """Open-box membership"""
        x = as_point(x)
        _check_dims(self.dim, x.dim)
        return all(a < c < b for a, c, b in zip(self.lo, x, self.hi))

    def contains_box(self, other: 'Box') -> bool:
        _check_dims(self.dim, other.dim)
        return self.contains(other.lo) and self.contains(other.hi)

    def intersect(self, other: 'Box') -> Optional['Box']:
        """Intersection with nonempty interior, or None"""
        _check_dims(self.dim, other.dim)
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(a >= b for a, b in zip(lo, hi)):
            return None
        return Box.from_bounds(lo, hi)

    def widest_axis(self) -> int:
        """Widest axis; ties go to the lowest index"""
        widths = self.widths
        best = 0
        for axis, width in enumerate(widths):
            if width > widths[best]:
                best = axis
        return best

    def subdivide(self, cells_per_axis: Sequence[int]) -> List['Box']:
        """Uniform partition, cells in row-major order"""
        if len(cells_per_axis) != self.dim:
            raise DimensionMismatch(f"Expected {self.dim} cell counts, got {len(cells_per_axis)}")
        if any(k < 1 for k in cells_per_axis):
            raise InputError("Cell counts must be positive")
        edges = [np.linspace(a, b, k + 1) for a, b, k in zip(self.lo, self.hi, cells_per_axis)]
        cells = []
        for index in itertools.product(*(range(k) for k in cells_per_axis)):
            lo = [float(edges[i][j]) for i, j in enumerate(index)]
            hi = [float(edges[i][j + 1]) for i, j in enumerate(index)]
            cells.append(Box.from_bounds(lo, hi))
        return cells

    def to_dict(self) -> Dict[str, List[float]]:
        """Convert box to dictionary"""
        return {'lo': list(self.lo.coords), 'hi': list(self.hi.coords)}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[Number]]) -> 'Box':
        return cls.from_bounds(data['lo'], data['hi'])

    def sort_key(self) -> Tuple[float, ...]:
        return self.lo.coords + self.hi.coords


def _check_dims(expected: int, got: int) -> None:
    if expected != got:
        raise DimensionMismatch(f"Dimension mismatch: expected {expected}, got {got}")


@dataclass(frozen=True, order=True)
class MultiIndex:
    """Multi-index alpha of a partial derivative D^alpha"""

    orders: Tuple[int, ...]

    def __post_init__(self):
        orders = tuple(int(k) for k in self.orders)
        if any(k < 0 for k in orders):
            raise InputError(f"Multi-index orders must be nonnegative: {orders}")
        object.__setattr__(self, 'orders', orders)

    @classmethod
    def zero(cls, dim: int) -> 'MultiIndex':
        return cls((0,) * dim)

    @classmethod
    def unit(cls, dim: int, axis: int, times: int = 1) -> 'MultiIndex':
        orders = [0] * dim
        orders[axis] = times
        return cls(tuple(orders))

    @property
    def dim(self) -> int:
        return len(self.orders)

    @property
    def order(self) -> int:
        """|alpha|"""
        return sum(self.orders)

    @property
    def factorial(self) -> int:
        """alpha! = prod of alpha_i!"""
        result = 1
        for k in self.orders:
            result *= math.factorial(k)
        return result

    def __add__(self, other: 'MultiIndex') -> 'MultiIndex':
        _check_dims(self.dim, other.dim)
        return MultiIndex(tuple(a + b for a, b in zip(self.orders, other.orders)))

    def __sub__(self, other: 'MultiIndex') -> 'MultiIndex':
        _check_dims(self.dim, other.dim)
        return MultiIndex(tuple(a - b for a, b in zip(self.orders, other.orders)))

    def dominates(self, other: 'MultiIndex') -> bool:
        """True iff alpha_i >= beta_i for every i"""
        _check_dims(self.dim, other.dim)
        return all(a >= b for a, b in zip(self.orders, other.orders))

    def extended(self, extra: int = 0) -> 'MultiIndex':
        """Append one more axis with the given order"""
        return MultiIndex(self.orders + (extra,))

    def key(self) -> str:
        """Comma-joined form used in JSON files"""
        return ','.join(str(k) for k in self.orders)

    @classmethod
    def from_key(cls, key: str) -> 'MultiIndex':
        try:
            return cls(tuple(int(part) for part in key.split(',')))
        except ValueError:
            raise InputError(f"Bad multi-index key: {key!r}")


def all_multi_indices(dim: int, max_order: int) -> List[MultiIndex]:
    """All multi-indices with |alpha| <= max_order, graded then lexicographic"""
    result = [MultiIndex(orders) for orders in itertools.product(range(max_order + 1), repeat=dim)
              if sum(orders) <= max_order]
    return sorted(result, key=lambda a: (a.order, tuple(-k for k in a.orders)))


def monomial_eval_many(alpha: MultiIndex, points: np.ndarray, center: Sequence[float]) -> np.ndarray:
    """
    Evaluate the Taylor basis monomial (x - a)^alpha / alpha! at many points

    Args:
        alpha: Multi-index
        points: Array of shape (S, n)
        center: Expansion point a, length n

    Returns:
        Array of shape (S,)
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    center = np.asarray(center, dtype=float)
    if points.shape[1] != alpha.dim or center.shape[0] != alpha.dim:
        raise DimensionMismatch(
            f"Monomial of dimension {alpha.dim} evaluated at points of dimension "
            f"{points.shape[1]} around a center of dimension {center.shape[0]}")
    product = np.ones(points.shape[0])
    for axis, power in enumerate(alpha.orders):
        product = product * (points[:, axis] - center[axis]) ** power
    return product / alpha.factorial


def monomial_eval(alpha: MultiIndex, x: Union[Point, Sequence[Number]], center: Union[Point, Sequence[Number]]) -> float:
    """Evaluate (x - a)^alpha / alpha! at one point"""
    x, center = as_point(x), as_point(center)
    if x.dim != alpha.dim or center.dim != alpha.dim:
        raise DimensionMismatch(f"Dimensions differ: alpha {alpha.dim}, x {x.dim}, center {center.dim}")
    return float(monomial_eval_many(alpha, x.as_array()[None, :], center.coords)[0])


def bisect(b: Box, axis: int) -> Tuple[Box, Box]:
    """
    Split a box at the midpoint of one axis

    Args:
        b: Box to split
        axis: Axis index, 0 <= axis < n

    Returns:
        (lower half, upper half) sharing the midpoint hyperplane
    """
    if not 0 <= axis < b.dim:
        raise DimensionMismatch(f"Axis {axis} out of range for a {b.dim}-dimensional box")
    lo, hi = b.lo[axis], b.hi[axis]
    if lo == hi:
        raise ZeroWidthAxis(f"Box has zero width along axis {axis}", box=b, axis=axis)
    mid = 0.5 * (lo + hi)
    left = Box(b.lo, b.hi.with_coord(axis, mid))
    right = Box(b.lo.with_coord(axis, mid), b.hi)
    return left, right


def interior_lattice(cell: Box, density: int) -> np.ndarray:
    """
    Interior sample lattice of one cell

    k points per axis at fractions j/(k+1), j = 1..k, row-major order; never
    on the cell boundary.
    """
    if density < 1:
        raise InputError(f"Sampling density must be >= 1, got {density}")
    fractions = np.arange(1, density + 1) / (density + 1)
    axes = [a + (b - a) * fractions for a, b in zip(cell.lo, cell.hi)]
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=1)


def boundary_lattice(cell: Box, density: int) -> np.ndarray:
    """Points of the closed lattice j/(k+1), j = 0..k+1, that lie on the cell boundary"""
    if density < 1:
        raise InputError(f"Sampling density must be >= 1, got {density}")
    fractions = np.arange(0, density + 2) / (density + 1)
    axes = [a + (b - a) * fractions for a, b in zip(cell.lo, cell.hi)]
    mesh = np.meshgrid(*axes, indexing='ij')
    index = np.meshgrid(*[np.arange(density + 2)] * cell.dim, indexing='ij')
    on_face = np.zeros(mesh[0].shape, dtype=bool)
    for j in index:
        on_face |= (j == 0) | (j == density + 1)
    return np.stack([m[on_face] for m in mesh], axis=1)


class SampleSet:
    """Ordered sample points inside a box, with the cell each came from"""

    def __init__(self, box: Box, array: np.ndarray, cell_index: np.ndarray, density: int):
        self.box = box
        self.array = array
        self.cell_index = cell_index
        self.density = density

    def __len__(self) -> int:
        return self.array.shape[0]

    @property
    def points(self) -> List[Point]:
        return [Point(tuple(row)) for row in self.array]

    def point(self, i: int) -> Point:
        return Point(tuple(self.array[i]))


def sample_cells(b: Box, partition: Sequence[Box], density: int) -> SampleSet:
    """
    Sample the interior of every cell of a partition

    Args:
        b: Covering box
        partition: Cells covering b with disjoint interiors
        density: Points per axis per cell

    Returns:
        SampleSet in partition order, lattice order within each cell
    """
    if not partition:
        raise EmptyPartition("Cannot sample an empty partition")
    if density < 1:
        raise InputError(f"Sampling density must be >= 1, got {density}")
    blocks = []
    owners = []
    for index, cell in enumerate(partition):
        if not b.contains_box(cell):
            raise OutOfDomain(f"Cell {cell.to_dict()} is not inside {b.to_dict()}")
        block = interior_lattice(cell, density)
        blocks.append(block)
        owners.append(np.full(block.shape[0], index, dtype=int))
    return SampleSet(b, np.concatenate(blocks, axis=0), np.concatenate(owners), density)
