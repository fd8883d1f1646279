"""
Grid Function Module

Sampled extended-real functions on uniform rectangular grids and the
discrete Baire envelope operators I (window minimum) and S (window maximum),
together with the regularizations I∘S and I∘S∘I.

Windows are L-infinity node balls clipped at the grid boundary. With
mode='nearest' the scipy filters replicate edge values, which for a minimum
or maximum is the same as clipping the window. Infinities only ever meet
min and max, never addition.
"""

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core_types import Box, Point, XReal
from .errors import DimensionMismatch, InputError, NaNValue, RadiusOrder
from .log_utils import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class Grid:
    """Uniform node lattice of a box, faces included"""

    box: Box
    nodes_per_axis: Tuple[int, ...]

    def __post_init__(self):
        nodes = tuple(int(k) for k in self.nodes_per_axis)
        if len(nodes) != self.box.dim:
            raise DimensionMismatch(f"Grid needs {self.box.dim} node counts, got {len(nodes)}")
        if any(k < 2 for k in nodes):
            raise InputError(f"Every axis needs at least 2 nodes: {nodes}")
        if self.box.is_degenerate:
            raise InputError("Grid box must have positive width on every axis")
        object.__setattr__(self, 'nodes_per_axis', nodes)

    @classmethod
    def uniform(cls, box: Box, nodes: int) -> 'Grid':
        return cls(box, (nodes,) * box.dim)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.nodes_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes_per_axis))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(w / (k - 1) for w, k in zip(self.box.widths, self.nodes_per_axis))

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.linspace(self.box.lo[axis], self.box.hi[axis], self.nodes_per_axis[axis])

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (size, n), row-major order"""
        mesh = np.meshgrid(*(self.axis_coords(i) for i in range(self.box.dim)), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)


class GridFn:
    """One extended-real value per grid node"""

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.array(values, dtype=float).reshape(grid.shape)
        if np.isnan(values).any():
            raise NaNValue("Grid function values cannot be NaN")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> 'GridFn':
        """Sample a vectorized function fn(points (S, n)) -> (S,) at the nodes"""
        return cls(grid, np.asarray(fn(grid.nodes()), dtype=float))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> 'GridFn':
        return cls(grid, np.full(grid.shape, float(value)))

    def __getitem__(self, index) -> XReal:
        return XReal(float(self.values[index]))

    def __neg__(self) -> 'GridFn':
        return GridFn(self.grid, -self.values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridFn):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"GridFn(shape={self.grid.shape}, box={self.grid.box.to_dict()})"

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values: np.ndarray) -> 'GridFn':
        return GridFn(self.grid, values)


def _window(r: int) -> int:
    if r < 1:
        raise InputError(f"Window radius must be >= 1, got {r}")
    return 2 * r + 1


def lower_envelope(u: GridFn, r: int) -> GridFn:
    """Discrete lower Baire operator I: minimum over the radius-r node ball"""
    return u.with_values(ndimage.minimum_filter(u.values, size=_window(r), mode='nearest'))


def upper_envelope(u: GridFn, r: int) -> GridFn:
    """Discrete upper Baire operator S: maximum over the radius-r node ball"""
    return u.with_values(ndimage.maximum_filter(u.values, size=_window(r), mode='nearest'))


def nlsc_regularize(u: GridFn, r_inner: int = 1, r_outer: int = 2) -> GridFn:
    """
    Discrete normal lower semi-continuous regularization (I∘S)(u)

    Args:
        u: Grid function
        r_inner: Radius of the inner upper envelope
        r_outer: Radius of the outer lower envelope, strictly larger

    Returns:
        lower_envelope(upper_envelope(u, r_inner), r_outer)
    """
    if r_inner < 1 or r_outer <= r_inner:
        raise RadiusOrder(f"Need r_outer > r_inner >= 1, got r_inner={r_inner}, r_outer={r_outer}")
    return lower_envelope(upper_envelope(u, r_inner), r_outer)


def usc_then_nlsc(u: GridFn, r: int = 1) -> GridFn:
    """Discrete (I∘S∘I)(u): lower envelope first, then the NLSC regularization"""
    return nlsc_regularize(lower_envelope(u, r), r, 2 * r)


def is_nearly_finite(u: GridFn) -> bool:
    """True iff every radius-1 node window contains a finite value"""
    finite = np.isfinite(u.values).astype(np.uint8)
    touched = ndimage.maximum_filter(finite, size=3, mode='nearest')
    return bool(touched.all())


def changed_nodes(before: GridFn, after: GridFn) -> int:
    """Number of nodes whose value differs"""
    if before.grid != after.grid:
        raise DimensionMismatch("Grid functions live on different grids")
    return int(np.count_nonzero(before.values != after.values))


def node_point(grid: Grid, flat_index: int) -> Point:
    """Coordinates of a node given its row-major index"""
    index = np.unravel_index(flat_index, grid.shape)
    return Point(tuple(float(grid.axis_coords(axis)[i]) for axis, i in enumerate(index)))


def same_grid(functions: Sequence[GridFn]) -> Grid:
    """Common grid of a family, or DimensionMismatch"""
    grid = functions[0].grid
    for fn in functions[1:]:
        if fn.grid != grid:
            raise DimensionMismatch("Grid functions of a family must share one grid")
    return grid
