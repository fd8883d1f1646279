"""
Formats Module

Text codecs for everything the command line reads or writes: GridFn CSV,
piecewise function JSON (polynomial cells, optionally min/max/offset
trees), solution JSON with its certificate, sample-dump CSV and plain JSON
reports. Malformed input raises FormatError with the offending line.
"""

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .core_types import Box, MultiIndex, XReal, format_number
from .dsl import PdeSystem, parse_operator, pretty_print
from .errors import FormatError, InputError, OrdCompError
from .gridfn import Grid, GridFn
from .log_utils import get_logger
from .pwpoly import CellComplex, MaxOf, MinOf, Offset, Piecewise, Poly, PwExpr, PwPoly

logger = get_logger(__name__)

GRIDFN_SUFFIXES = ('.csv', '.txt')


# GridFn CSV

def format_gridfn(u: GridFn) -> str:
    """Header `ndim,n1..nk,lo..,hi..` then one value per line, row-major"""
    box = u.grid.box
    header = [str(box.dim)] + [str(k) for k in u.grid.nodes_per_axis]
    header += [format_number(v) for v in box.lo] + [format_number(v) for v in box.hi]
    lines = [','.join(header)]
    lines.extend(format_number(v) for v in u.flat())
    return '\n'.join(lines) + '\n'


def parse_gridfn(text: str, path: Optional[str] = None) -> GridFn:
    """Parse GridFn CSV text; FormatError names the failing line"""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise FormatError("Missing GridFn header", 1, path)
    header = [cell.strip() for cell in rows[0]]
    try:
        ndim = int(header[0])
    except ValueError:
        raise FormatError(f"Header must start with the dimension, got {header[0]!r}", 1, path)
    if ndim < 1 or len(header) != 1 + 3 * ndim:
        raise FormatError(f"Header needs 1 + 3*{ndim} fields, got {len(header)}", 1, path)
    try:
        nodes = tuple(int(v) for v in header[1:1 + ndim])
        lo = [float(v) for v in header[1 + ndim:1 + 2 * ndim]]
        hi = [float(v) for v in header[1 + 2 * ndim:]]
        grid = Grid(Box.from_bounds(lo, hi), nodes)
    except (ValueError, InputError) as e:
        raise FormatError(f"Invalid GridFn header: {e}", 1, path)

    values = []
    for number, row in enumerate(rows[1:], start=2):
        if not row or not ''.join(row).strip():
            continue
        if len(row) != 1:
            raise FormatError(f"Expected one value per line, got {len(row)}", number, path)
        try:
            values.append(XReal.from_token(row[0]).value)
        except InputError as e:
            raise FormatError(str(e), number, path)
    if len(values) != grid.size:
        raise FormatError(f"Expected {grid.size} values, got {len(values)}", len(rows), path)
    return GridFn(grid, np.array(values).reshape(grid.shape))


def read_gridfn(path: str) -> GridFn:
    logger.info(f"Reading grid function {path}")
    with open(path, encoding='utf-8') as f:
        return parse_gridfn(f.read(), path)


def write_gridfn(path: str, u: GridFn) -> None:
    logger.info(f"Writing grid function {path}")
    with open(path, 'w', encoding='utf-8') as f:
        f.write(format_gridfn(u))


# Piecewise function JSON

def poly_to_dict(poly: Poly) -> Dict[str, Any]:
    return {
        'center': list(poly.center.coords),
        'coeffs': {alpha.key(): c for alpha, c in poly.coeffs.items()},
        'degree': poly.max_degree,
    }


def poly_from_dict(data: Dict[str, Any], center: Optional[Sequence[float]] = None) -> Poly:
    center = data.get('center', center)
    if center is None:
        raise InputError("Polynomial without a center")
    coeffs = {MultiIndex.from_key(key): float(value) for key, value in data.get('coeffs', {}).items()}
    return Poly(center, coeffs, data.get('degree'))


def _piece_to_dict(piece: Any) -> Dict[str, Any]:
    if isinstance(piece, Poly):
        return poly_to_dict(piece)
    if isinstance(piece, MinOf):
        return {'min': [_piece_to_dict(c) for c in piece.children]}
    if isinstance(piece, MaxOf):
        return {'max': [_piece_to_dict(c) for c in piece.children]}
    if isinstance(piece, Offset):
        return {'offset': piece.shift, 'child': _piece_to_dict(piece.child)}
    raise InputError(f"Cannot serialize piece {piece!r}")


def _piece_from_dict(data: Dict[str, Any], center: Sequence[float]) -> Any:
    if 'min' in data:
        return MinOf([_piece_from_dict(c, center) for c in data['min']])
    if 'max' in data:
        return MaxOf([_piece_from_dict(c, center) for c in data['max']])
    if 'offset' in data:
        return Offset(_piece_from_dict(data['child'], center), float(data['offset']))
    return poly_from_dict(data, center)


def piecewise_to_dict(f: Piecewise) -> Dict[str, Any]:
    """
    JSON form of a piecewise function

    Polynomial cells carry center, coeffs (comma-joined multi-index keys)
    and degree; min/max/offset trees nest under an "expr" key.
    """
    cells = []
    for cell, piece in zip(f.complex.cells, f.pieces):
        entry = cell.to_dict()
        if isinstance(piece, Poly):
            entry.update(poly_to_dict(piece))
        else:
            entry['center'] = list(cell.center.coords)
            entry['expr'] = _piece_to_dict(piece)
        cells.append(entry)
    return {'domain': f.domain.to_dict(), 'cells': cells}


def piecewise_from_dict(data: Dict[str, Any]) -> Piecewise:
    """PwPoly when every cell is a polynomial, PwExpr otherwise"""
    domain = Box.from_dict(data['domain'])
    boxes, pieces = [], []
    for entry in data['cells']:
        box = Box.from_dict(entry)
        center = entry.get('center', list(box.center.coords))
        boxes.append(box)
        pieces.append(_piece_from_dict(entry['expr'], center) if 'expr' in entry
                      else poly_from_dict(entry, center))
    complex_ = CellComplex(domain, boxes)
    if all(isinstance(p, Poly) for p in pieces):
        return PwPoly(complex_, pieces)
    return PwExpr(complex_, pieces)


def _load_json(path: str) -> Any:
    with open(path, encoding='utf-8') as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"Invalid JSON: {e.msg}", e.lineno, path)


def read_piecewise(path: str) -> Piecewise:
    logger.info(f"Reading piecewise function {path}")
    data = _load_json(path)
    try:
        return piecewise_from_dict(data)
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, OrdCompError) as e:
        raise FormatError(f"Malformed piecewise function: {e}", 1, path)


def write_piecewise(path: str, f: Piecewise) -> None:
    write_json(path, piecewise_to_dict(f))


def read_function(path: str) -> Union[GridFn, Piecewise]:
    """GridFn for .csv/.txt files, piecewise JSON otherwise"""
    if os.path.splitext(path)[1].lower() in GRIDFN_SUFFIXES:
        return read_gridfn(path)
    return read_piecewise(path)


def write_function(path: str, f: Union[GridFn, Piecewise]) -> None:
    if isinstance(f, GridFn):
        write_gridfn(path, f)
    else:
        write_piecewise(path, f)


# Reports and solutions

def _json_float(value: float) -> str:
    if value != value:
        return 'NaN'
    if value in (math.inf, -math.inf):
        return 'Infinity' if value > 0 else '-Infinity'
    text = format(float(value), '.17g')
    # Keep a float token so readers do not see an integer
    return text if any(c in text for c in '.en') else text + '.0'


class FixedDigitsEncoder(json.JSONEncoder):
    """JSON encoder printing every float with 17 significant digits"""

    def iterencode(self, o: Any, _one_shot: bool = False):
        encoder = json.encoder.encode_basestring_ascii if self.ensure_ascii else json.encoder.encode_basestring
        markers = {} if self.check_circular else None
        chunks = json.encoder._make_iterencode(markers, self.default, encoder, self.indent, _json_float,
                                               self.key_separator, self.item_separator, self.sort_keys,
                                               self.skipkeys, _one_shot)
        return chunks(o, 0)


def dumps_json(data: Any) -> str:
    return json.dumps(data, indent=2, cls=FixedDigitsEncoder)


def write_json(path: str, data: Any) -> None:
    logger.info(f"Writing {path}")
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps_json(data))
        f.write('\n')


@dataclass
class SolutionFile:
    """Everything needed to rebuild and re-verify a stored solution"""

    system: PdeSystem
    w: Dict[str, PwPoly]
    eps: float
    rhs: Dict[str, Any] = field(default_factory=dict)
    u0: Dict[str, Any] = field(default_factory=dict)
    solve: Dict[str, Any] = field(default_factory=dict)
    certificate: Dict[str, Any] = field(default_factory=dict)


def solution_to_dict(sol, rhs: Optional[Dict[str, Any]] = None, u0: Optional[Dict[str, Any]] = None,
                     config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    JSON form of an ApproxSolution

    rhs and u0 are the textual right-hand side and initial data the run
    used; callables cannot be stored and are left out.
    """
    system = sol.system
    return {
        'operator': pretty_print(system),
        'n_space': system.n_space,
        'has_time': system.has_time,
        'params': system.bindings,
        'eps': sol.eps,
        'rhs': {k: v for k, v in (rhs or {}).items() if isinstance(v, (str, int, float))},
        'u0': {k: v for k, v in (u0 or {}).items() if isinstance(v, (str, int, float))},
        'solve': sol.cfg.to_dict() if sol.cfg is not None else {},
        'unknowns': {u: piecewise_to_dict(sol.w[u]) for u in system.unknowns},
        'certificate': sol.certificate.to_dict() if sol.certificate is not None else None,
        'config': config or {},
    }


def solution_from_dict(data: Dict[str, Any]) -> SolutionFile:
    system = parse_operator(data['operator'], data['n_space'], data['has_time'], data.get('params') or {},
                            unknowns=list(data['unknowns']))
    w = {}
    for unknown, entry in data['unknowns'].items():
        f = piecewise_from_dict(entry)
        if not isinstance(f, PwPoly):
            raise InputError(f"Solution component {unknown} is not piecewise polynomial")
        w[unknown] = f
    return SolutionFile(system, w, float(data['eps']), data.get('rhs') or {}, data.get('u0') or {},
                        data.get('solve') or {}, data.get('certificate') or {})


def write_solution(path: str, sol, rhs: Optional[Dict[str, Any]] = None, u0: Optional[Dict[str, Any]] = None,
                   config: Optional[Dict[str, Any]] = None) -> None:
    write_json(path, solution_to_dict(sol, rhs, u0, config))


def sample_header(system: PdeSystem) -> List[str]:
    coords = [f"x{i}" for i in range(1, system.n_space + 1)]
    if system.has_time:
        coords.append('t')
    return coords + ['component', 'residual', 'band_lo', 'band_hi']


def write_samples(path: str, system: PdeSystem, rows: np.ndarray) -> None:
    """Long-format sample dump: coordinates, component, residual, band low, band high"""
    logger.info(f"Writing {rows.shape[0]} samples to {path}")
    dim = system.dim
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(sample_header(system))
        for row in rows:
            values = [format_number(v) for v in row[:dim]]
            values.append(str(int(row[dim])))
            values.extend(format_number(v) for v in row[dim + 1:])
            writer.writerow(values)


def read_solutions(path: str) -> List[SolutionFile]:
    """One stored solution, or every solution of a stored sequence"""
    logger.info(f"Reading solutions {path}")
    data = _load_json(path)
    entries = data['solutions'] if isinstance(data, dict) and 'solutions' in data else [data]
    try:
        return [solution_from_dict(entry) for entry in entries]
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"Malformed solution file: {e}", 1, path)
