"""
Lattice Module

Order-theoretic operations on nearly finite NLSC functions: Dedekind
supremum and infimum of finite families, binary meet and join, the sampled
order test, order convergence of finite sequence prefixes, interval-chain
pinch checks and the full distributivity law.

Functions are either exact piecewise functions (PwPoly / PwExpr, mode
'exact-pw') or grid functions (GridFn, mode 'grid'). All verdicts hold at
sample scale and at the truncation given by the inputs.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .core_types import Box, Point, sample_cells
from .errors import EmptyFamily, InputError, NotNearlyFinite, NotNested
from .gridfn import Grid, GridFn, is_nearly_finite, nlsc_regularize, same_grid, usc_then_nlsc
from .log_utils import get_logger
from .pwpoly import (LeqResult, MaxOf, MinOf, Piecewise, PwExpr, eval_nlsc_many,
                     refine_all, to_gridfn, worst_gap)

logger = get_logger(__name__)

MODE_EXACT = 'exact-pw'
MODE_GRID = 'grid'
MODES = (MODE_EXACT, MODE_GRID)

FunctionValue = Union[Piecewise, GridFn]


@dataclass
class LatticeCfg:
    """Tolerances, densities and radii of the lattice checks"""

    gap_tol: float = 1e-7
    density: int = 4
    tol: float = 1e-9
    r: int = 1
    r_inner: int = 1
    r_outer: int = 2
    grid: Optional[Grid] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert config to dictionary"""
        return {
            'gap_tol': self.gap_tol,
            'density': self.density,
            'tol': self.tol,
            'r': self.r,
            'r_inner': self.r_inner,
            'r_outer': self.r_outer,
            'grid': None if self.grid is None else {
                'box': self.grid.box.to_dict(), 'nodes_per_axis': list(self.grid.nodes_per_axis)},
        }


DEFAULT_CFG = LatticeCfg()


def resolve_mode(functions: Sequence[FunctionValue], mode: Optional[str] = None,
                 cfg: LatticeCfg = DEFAULT_CFG) -> str:
    """Pick the representation mode of a family, rejecting mixed inputs"""
    grids = [isinstance(f, GridFn) for f in functions]
    if mode is None:
        if all(grids):
            return MODE_GRID
        if not any(grids):
            return MODE_EXACT
        raise InputError("Family mixes grid functions and piecewise functions")
    if mode not in MODES:
        raise InputError(f"Unknown lattice mode {mode!r}; expected one of {MODES}")
    if mode == MODE_EXACT and any(grids):
        raise InputError("Grid functions cannot be combined in exact-pw mode")
    if mode == MODE_GRID and not all(grids) and cfg.grid is None:
        raise InputError("Grid mode on piecewise inputs needs a grid in the config")
    return mode


def _as_grid_functions(functions: Sequence[FunctionValue], cfg: LatticeCfg) -> List[GridFn]:
    return [f if isinstance(f, GridFn) else to_gridfn(f, cfg.grid) for f in functions]


class SampleFrame:
    """Common sample points of a family, optionally restricted to an open box"""

    def __init__(self, functions: Sequence[FunctionValue], mode: str, cfg: LatticeCfg = DEFAULT_CFG,
                 region: Optional[Box] = None):
        self.mode = mode
        self.cfg = cfg
        if mode == MODE_GRID:
            grid = same_grid(functions)
            nodes = grid.nodes()
            if region is None:
                self.mask = np.ones(nodes.shape[0], dtype=bool)
            else:
                self.mask = np.all((region.lo_array() <= nodes) & (nodes <= region.hi_array()), axis=1)
            self.points = nodes[self.mask]
        else:
            refined = refine_all(list(functions))
            cells = list(refined.cells)
            box = refined.domain
            if region is not None:
                cells = [c for c in (cell.intersect(region) for cell in cells) if c is not None]
                box = region
            self.points = sample_cells(box, cells, cfg.density).array
        if self.points.shape[0] == 0:
            raise InputError("No sample points in the requested region")

    def values(self, f: FunctionValue) -> np.ndarray:
        if self.mode == MODE_GRID:
            return f.flat()[self.mask]
        return eval_nlsc_many(f, self.points)

    def point(self, index: int) -> Point:
        return Point(tuple(self.points[index]))


def _check_family(family: Sequence[FunctionValue]) -> List[FunctionValue]:
    family = list(family)
    if not family:
        raise EmptyFamily("Dedekind operations need a nonempty family")
    return family


def dedekind_sup(family: Sequence[FunctionValue], mode: Optional[str] = None,
                 cfg: LatticeCfg = DEFAULT_CFG) -> FunctionValue:
    """
    Least upper bound of a finite family

    Args:
        family: Nonempty list of functions on a common domain
        mode: 'exact-pw' or 'grid' (default: from the inputs)
        cfg: Lattice configuration (radii for grid mode)

    Returns:
        exact-pw: PwExpr with a per-cell max tree on the common refinement
        grid: nodewise maximum followed by the discrete (I∘S) regularization
    """
    family = _check_family(family)
    mode = resolve_mode(family, mode, cfg)
    if mode == MODE_GRID:
        members = _as_grid_functions(family, cfg)
        grid = same_grid(members)
        phi = GridFn(grid, np.maximum.reduce([u.values for u in members]))
        if not is_nearly_finite(phi):
            raise NotNearlyFinite("Pointwise supremum is +inf on a set with interior")
        return nlsc_regularize(phi, cfg.r_inner, cfg.r_outer)
    if len(family) == 1:
        return family[0]
    return _combine(family, MaxOf)


def dedekind_inf(family: Sequence[FunctionValue], mode: Optional[str] = None,
                 cfg: LatticeCfg = DEFAULT_CFG) -> FunctionValue:
    """
    Greatest lower bound of a finite family

    On cellwise continuous data the continuum (I∘S∘I) of the pointwise
    minimum is the incident-cell minimum of the per-cell min trees, which is
    how exact-pw results evaluate. Grid mode applies the discrete (I∘S∘I).
    """
    family = _check_family(family)
    mode = resolve_mode(family, mode, cfg)
    if mode == MODE_GRID:
        members = _as_grid_functions(family, cfg)
        grid = same_grid(members)
        phi = GridFn(grid, np.minimum.reduce([u.values for u in members]))
        if not is_nearly_finite(phi):
            raise NotNearlyFinite("Pointwise infimum is -inf on a set with interior")
        return usc_then_nlsc(phi, cfg.r)
    if len(family) == 1:
        return family[0]
    return _combine(family, MinOf)


def _combine(family: Sequence[Piecewise], node) -> PwExpr:
    refined = refine_all(family)
    restricted = [f.restrict_to(refined) for f in family]
    trees = [node([f.pieces[i] for f in restricted]) for i in range(len(refined))]
    return PwExpr(refined, trees)


def meet(f: FunctionValue, g: FunctionValue, mode: Optional[str] = None,
         cfg: LatticeCfg = DEFAULT_CFG) -> FunctionValue:
    """f ∧ g"""
    return dedekind_inf([f, g], mode, cfg)


def join(f: FunctionValue, g: FunctionValue, mode: Optional[str] = None,
         cfg: LatticeCfg = DEFAULT_CFG) -> FunctionValue:
    """f ∨ g"""
    return dedekind_sup([f, g], mode, cfg)


def leq(f: FunctionValue, g: FunctionValue, cfg: LatticeCfg = DEFAULT_CFG,
        mode: Optional[str] = None) -> LeqResult:
    """Sampled order test f <= g + tol in either representation"""
    mode = resolve_mode([f, g], mode, cfg)
    if mode == MODE_GRID:
        f, g = _as_grid_functions([f, g], cfg)
    frame = SampleFrame([f, g], mode, cfg)
    return worst_gap(frame.values(f), frame.values(g), frame.points, cfg.tol)


@dataclass
class OrderInterval:
    """Order interval [lo, hi]; both ends in the same representation"""

    lo: FunctionValue
    hi: FunctionValue


@dataclass
class IntervalChain:
    """Nested sequence of order intervals"""

    intervals: List[OrderInterval]

    def __len__(self) -> int:
        return len(self.intervals)

    @classmethod
    def of(cls, pairs: Sequence) -> 'IntervalChain':
        return cls([OrderInterval(lo, hi) for lo, hi in pairs])


@dataclass
class ConvergenceWitness:
    """Monotone lower/upper sequences sandwiching a sequence prefix"""

    lambda_seq: List[FunctionValue]
    mu_seq: List[FunctionValue]
    target: FunctionValue
    residual: float
    gaps: List[float] = field(default_factory=list)
    samples: int = 0

    def to_dict(self) -> Dict[str, Any]:
        """Convert witness to dictionary"""
        return {
            'terms': len(self.lambda_seq),
            'residual': self.residual,
            'gaps': list(self.gaps),
            'samples': self.samples,
        }


@dataclass
class ConvergenceVerdict:
    """Converged with a witness, or NotConverged with the failing check"""

    converged: bool
    witness: Optional[ConvergenceWitness] = None
    reason: Optional[str] = None
    point: Optional[Point] = None
    config: Dict[str, Any] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.converged

    def to_dict(self) -> Dict[str, Any]:
        """Convert verdict to dictionary"""
        return {
            'verdict': 'Converged' if self.converged else 'NotConverged',
            'reason': self.reason,
            'point': list(self.point.coords) if self.point is not None else None,
            'witness': self.witness.to_dict() if self.witness is not None else None,
            'config': self.config,
        }


def order_converges(seq: Sequence[FunctionValue], candidate: FunctionValue, cfg: LatticeCfg = DEFAULT_CFG,
                    mode: Optional[str] = None, bounds: Optional[Sequence[OrderInterval]] = None,
                    sandwich_tol: Optional[float] = None) -> ConvergenceVerdict:
    """
    Check that a finite prefix u_1..u_N order converges to a candidate

    Without explicit bounds the witness is lambda_n = inf of the tail
    {u_k : k >= n} and mu_n = sup of the tail, for every tail with at least
    two terms. Explicit bounds give one interval per term instead.

    Args:
        seq: Sequence prefix, N >= 3
        candidate: Proposed limit
        cfg: Lattice configuration (gap_tol, tol, density)
        mode: 'exact-pw' or 'grid' (default: from the inputs)
        bounds: Optional [lambda_n, mu_n] per term
        sandwich_tol: Allowed excursion of u_n outside [lambda_n, mu_n] on the
            samples (default: cfg.tol)

    Returns:
        ConvergenceVerdict
    """
    seq = list(seq)
    if len(seq) < 3:
        raise InputError(f"Order convergence needs at least 3 terms, got {len(seq)}")
    members = seq + [candidate]
    if bounds is not None:
        if len(bounds) != len(seq):
            raise InputError(f"Need one bound per term: {len(bounds)} bounds for {len(seq)} terms")
        members += [b.lo for b in bounds] + [b.hi for b in bounds]
    mode = resolve_mode(members, mode, cfg)
    if mode == MODE_GRID:
        members = _as_grid_functions(members, cfg)
        seq, candidate = members[:len(seq)], members[len(seq)]

    if bounds is None:
        lambdas = [dedekind_inf(seq[n:], mode, cfg) for n in range(len(seq) - 1)]
        mus = [dedekind_sup(seq[n:], mode, cfg) for n in range(len(seq) - 1)]
    elif mode == MODE_GRID:
        lambdas = members[len(seq) + 1:2 * len(seq) + 1]
        mus = members[2 * len(seq) + 1:]
    else:
        lambdas = [b.lo for b in bounds]
        mus = [b.hi for b in bounds]

    frame = SampleFrame(members, mode, cfg)
    lam = np.array([frame.values(f) for f in lambdas])
    mu = np.array([frame.values(f) for f in mus])
    terms = np.array([frame.values(f) for f in seq[:len(lambdas)]])
    target = frame.values(candidate)
    config = dict(cfg.to_dict(), mode=mode, truncation=len(seq))

    def fail(reason: str, index: int) -> ConvergenceVerdict:
        logger.info(f"Order convergence rejected: {reason}")
        return ConvergenceVerdict(False, reason=reason, point=frame.point(index), config=config)

    with np.errstate(invalid='ignore'):
        for n in range(len(lambdas) - 1):
            drop = lam[n] - lam[n + 1]
            if np.nanmax(drop) > cfg.tol:
                return fail(f"lambda_{n + 2} < lambda_{n + 1}", int(np.nanargmax(drop)))
            rise = mu[n + 1] - mu[n]
            if np.nanmax(rise) > cfg.tol:
                return fail(f"mu_{n + 2} > mu_{n + 1}", int(np.nanargmax(rise)))
        slack = cfg.tol if sandwich_tol is None else sandwich_tol
        for n in range(len(lambdas)):
            below = lam[n] - terms[n]
            if np.nanmax(below) > slack:
                return fail(f"lambda_{n + 1} > u_{n + 1}", int(np.nanargmax(below)))
            above = terms[n] - mu[n]
            if np.nanmax(above) > slack:
                return fail(f"u_{n + 1} > mu_{n + 1}", int(np.nanargmax(above)))
        gaps = [float(np.max(mu[n] - lam[n])) for n in range(len(lambdas))]
        if not np.isfinite(gaps[-1]) or gaps[-1] > cfg.gap_tol:
            return fail(f"final gap {gaps[-1]!r} exceeds gap_tol {cfg.gap_tol!r}",
                        int(np.argmax(mu[-1] - lam[-1])))
        deviation = np.abs(target - 0.5 * (lam[-1] + mu[-1]))
        if np.max(deviation) > cfg.gap_tol:
            return fail(f"candidate misses the limit by {float(np.max(deviation))!r}", int(np.argmax(deviation)))

    witness = ConvergenceWitness(lambdas, mus, candidate, max(gaps[-1], float(np.max(deviation))),
                                 gaps, frame.points.shape[0])
    logger.info(f"Order convergence witnessed over {len(seq)} terms, residual {witness.residual:.3e}")
    return ConvergenceVerdict(True, witness=witness, config=config)


@dataclass
class ChainResult:
    """Classification of one (chain, open box) pair: Pinched or Gap"""

    chain: int
    box: Box
    pinched: bool
    gap: float
    point: Point
    midpoint: float
    lower: Optional[FunctionValue] = None
    upper: Optional[FunctionValue] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert result to dictionary"""
        return {
            'chain': self.chain,
            'box': self.box.to_dict(),
            'verdict': 'Pinched' if self.pinched else 'Gap',
            'gap': self.gap,
            'point': list(self.point.coords),
            'value': self.midpoint,
        }


def _check_nested(chain: IntervalChain, frame: SampleFrame, tol: float, index: int) -> None:
    previous = None
    for n, interval in enumerate(chain.intervals):
        lo, hi = frame.values(interval.lo), frame.values(interval.hi)
        with np.errstate(invalid='ignore'):
            if np.nanmax(lo - hi) > tol:
                raise NotNested(f"Chain {index}: interval {n + 1} is empty", chain=index, interval=n + 1)
            if previous is not None:
                if np.nanmax(previous[0] - lo) > tol or np.nanmax(hi - previous[1]) > tol:
                    raise NotNested(f"Chain {index}: interval {n + 1} is not inside interval {n}",
                                    chain=index, interval=n + 1)
        previous = (lo, hi)


def chain_check(chains: Sequence[IntervalChain], test_opens: Sequence[Box], cfg: LatticeCfg = DEFAULT_CFG,
                mode: Optional[str] = None) -> List[ChainResult]:
    """
    Classify every (chain, open box) pair as Pinched or Gap

    The lower ends are joined and the upper ends met; the pair is Pinched
    when the largest sampled gap on the box is at most cfg.gap_tol.
    """
    results = []
    for index, chain in enumerate(chains):
        if len(chain) == 0:
            raise EmptyFamily(f"Chain {index} has no intervals")
        ends = [i.lo for i in chain.intervals] + [i.hi for i in chain.intervals]
        chain_mode = resolve_mode(ends, mode, cfg)
        if chain_mode == MODE_GRID:
            ends = _as_grid_functions(ends, cfg)
            chain = IntervalChain.of(zip(ends[:len(chain)], ends[len(chain):]))
        _check_nested(chain, SampleFrame(ends, chain_mode, cfg), cfg.tol, index)
        lower = dedekind_sup([i.lo for i in chain.intervals], chain_mode, cfg)
        upper = dedekind_inf([i.hi for i in chain.intervals], chain_mode, cfg)
        for box in test_opens:
            if box.is_degenerate:
                raise InputError(f"Test box {box.to_dict()} has empty interior")
            frame = SampleFrame([lower, upper], chain_mode, cfg, region=box)
            a, b = frame.values(lower), frame.values(upper)
            with np.errstate(invalid='ignore'):
                gaps = np.where(np.isnan(b - a), 0.0, b - a)
            worst = int(np.argmax(gaps))
            gap = float(gaps[worst])
            result = ChainResult(index, box, gap <= cfg.gap_tol, gap, frame.point(worst),
                                 float(0.5 * (a[worst] + b[worst])), lower, upper)
            logger.debug(f"Chain {index} on {box.to_dict()}: {'Pinched' if result.pinched else 'Gap'} {gap:.3e}")
            results.append(result)
    return results


@dataclass
class DistributivityResult:
    """Holds, or a Violation with the point and both sides"""

    holds: bool
    gap: float
    point: Optional[Point] = None
    lhs: Optional[float] = None
    rhs: Optional[float] = None

    def __bool__(self) -> bool:
        return self.holds

    def to_dict(self) -> Dict[str, Any]:
        """Convert result to dictionary"""
        return {
            'verdict': 'Holds' if self.holds else 'Violation',
            'gap': self.gap,
            'point': list(self.point.coords) if self.point is not None else None,
            'lhs': self.lhs,
            'rhs': self.rhs,
        }


def distributivity_check(family: Sequence[FunctionValue], v: FunctionValue, cfg: LatticeCfg = DEFAULT_CFG,
                         mode: Optional[str] = None) -> DistributivityResult:
    """Compare sup(A) ∧ v with sup{u ∧ v : u in A} at samples"""
    family = _check_family(family)
    mode = resolve_mode(family + [v], mode, cfg)
    lhs = meet(dedekind_sup(family, mode, cfg), v, mode, cfg)
    rhs = dedekind_sup([meet(u, v, mode, cfg) for u in family], mode, cfg)
    frame = SampleFrame([lhs, rhs], mode, cfg)
    left, right = frame.values(lhs), frame.values(rhs)
    with np.errstate(invalid='ignore'):
        gaps = np.abs(left - right)
    gaps = np.where(np.isnan(gaps), 0.0, gaps)
    worst = int(np.argmax(gaps))
    gap = float(gaps[worst])
    if gap <= cfg.gap_tol:
        return DistributivityResult(True, gap)
    return DistributivityResult(False, gap, frame.point(worst), float(left[worst]), float(right[worst]))
