"""
Configuration Module

RunConfig gathers every knob of every subcommand. Values come from the
dataclass defaults, then a flat `key = value` file, then the environment
(ORDCOMP_THREADS), then command-line flags; later sources win.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Optional

from .cell_processor import default_threads
from .core_types import Box
from .errors import ConfigError
from .gridfn import Grid
from .lattice import LatticeCfg
from .log_utils import get_logger
from .ordsolve import JetSolverCfg, SolveCfg

logger = get_logger(__name__)

DOTTED_SECTIONS = ('rhs', 'u0', 'param')


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(',') if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(',') if v.strip()]


def _strings(text: str) -> List[str]:
    return [v.strip() for v in text.split(',') if v.strip()]


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_bool(text: str) -> Optional[bool]:
    return None if text.strip().lower() in ('', 'auto', 'none') else _bool(text)


@dataclass
class RunConfig:
    """All settings of one command-line run"""

    command: Optional[str] = None
    # files
    inputs: List[str] = field(default_factory=list)
    output: Optional[str] = None
    candidate: Optional[str] = None
    report: Optional[str] = None
    samples_out: Optional[str] = None
    solution: Optional[str] = None
    # lattice
    mode: Optional[str] = None
    r: int = 1
    r_inner: int = 1
    r_outer: int = 2
    gap_tol: float = 1e-7
    tol: float = 1e-9
    density: int = 4
    grid_nodes: Optional[int] = None
    boxes: List[str] = field(default_factory=list)
    # operator
    operator: Optional[str] = None
    operator_path: Optional[str] = None
    n_space: Optional[int] = None
    has_time: Optional[bool] = None
    rhs: Dict[str, str] = field(default_factory=dict)
    u0: Dict[str, str] = field(default_factory=dict)
    param: Dict[str, float] = field(default_factory=dict)
    unknowns: List[str] = field(default_factory=list)
    # solver
    domain_lo: List[float] = field(default_factory=list)
    domain_hi: List[float] = field(default_factory=list)
    cells: List[int] = field(default_factory=list)
    eps: float = 0.1
    check_eps: Optional[float] = None
    theta: float = 0.5
    n_list: List[int] = field(default_factory=list)
    max_depth: int = 12
    samples: int = 4
    degree: Optional[int] = None
    initial_tol: float = 1e-12
    jet_tol: float = 1e-10
    jet_max_iter: int = 100
    neighbor_matching: bool = False
    seed: int = 0
    verify_density: Optional[int] = None
    threads: Optional[int] = None
    # Navier-Stokes demo
    nu: float = 0.01
    dim: int = 3
    convective: str = 'printed'

    def to_dict(self) -> Dict[str, Any]:
        """Convert config to dictionary"""
        return asdict(self)

    @classmethod
    def from_file(cls, path: str, base: Optional['RunConfig'] = None) -> 'RunConfig':
        logger.info(f"Reading config {path}")
        with open(path, encoding='utf-8') as f:
            return cls.from_text(f.read(), base, path)

    @classmethod
    def from_text(cls, text: str, base: Optional['RunConfig'] = None, path: str = '<config>') -> 'RunConfig':
        """
        Parse `key = value` lines

        `#` starts a comment, list values are comma separated, and dotted
        keys `rhs.<name>`, `u0.<unknown>` and `param.<name>` fill the maps.
        """
        config = base if base is not None else cls()
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{path}:{number}: expected key = value", path=path, line=number)
            key, value = (part.strip() for part in line.split('=', 1))
            try:
                config.set(key, value)
            except ConfigError as e:
                raise ConfigError(f"{path}:{number}: {e.message}", path=path, line=number)
        return config

    def set(self, key: str, value: str) -> None:
        """Set one setting from its text form"""
        key = key.replace('-', '_')
        if '.' in key:
            section, name = key.split('.', 1)
            if section not in DOTTED_SECTIONS or not name:
                raise ConfigError(f"Unknown setting {key!r}")
            if section == 'param':
                try:
                    self.param[name] = float(value)
                except ValueError:
                    raise ConfigError(f"param.{name} must be a number, got {value!r}")
            else:
                getattr(self, section)[name] = value
            return
        if key not in _COERCE:
            raise ConfigError(f"Unknown setting {key!r}")
        try:
            setattr(self, key, _COERCE[key](value))
        except ValueError as e:
            raise ConfigError(f"Bad value for {key}: {e}")

    def override(self, values: Dict[str, Any]) -> 'RunConfig':
        """Apply already-typed values (command-line flags); None means unset"""
        known = {f.name for f in fields(self)}
        for key, value in values.items():
            if value is None or key not in known:
                continue
            if isinstance(value, dict):
                getattr(self, key).update(value)
            elif isinstance(value, list) and not value:
                continue
            else:
                setattr(self, key, value)
        return self

    def resolved_threads(self) -> int:
        """--threads, else ORDCOMP_THREADS, else 1"""
        if self.threads is not None:
            if self.threads < 1:
                raise ConfigError(f"threads must be >= 1, got {self.threads}")
            return self.threads
        return default_threads()

    def operator_text(self) -> str:
        if self.operator_path:
            logger.info(f"Reading operator {self.operator_path}")
            with open(self.operator_path, encoding='utf-8') as f:
                return f.read()
        if self.operator:
            return self.operator.replace(';', '\n')
        raise ConfigError("No operator given (operator or operator_path)")

    def domain(self) -> Box:
        if not self.domain_lo or not self.domain_hi:
            raise ConfigError("No domain given (domain_lo and domain_hi)")
        if len(self.domain_lo) != len(self.domain_hi):
            raise ConfigError("domain_lo and domain_hi differ in length")
        return Box.from_bounds(self.domain_lo, self.domain_hi)

    def lattice_cfg(self, box: Optional[Box] = None) -> LatticeCfg:
        grid = None
        if self.grid_nodes is not None and box is not None:
            grid = Grid.uniform(box, self.grid_nodes)
        return LatticeCfg(gap_tol=self.gap_tol, density=self.density, tol=self.tol, r=self.r,
                          r_inner=self.r_inner, r_outer=self.r_outer, grid=grid)

    def solve_cfg(self, domain: Box) -> SolveCfg:
        return SolveCfg(domain, eps=self.eps, theta=self.theta, cells_per_axis=self.cells or None,
                        max_depth=self.max_depth, samples=self.samples, degree=self.degree,
                        initial_tol=self.initial_tol, threads=self.resolved_threads())

    def jet_cfg(self) -> JetSolverCfg:
        return JetSolverCfg(max_iter=self.jet_max_iter, tol=self.jet_tol,
                            neighbor_matching=self.neighbor_matching)


def _optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ('', 'none') else int(text)


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ('', 'none') else float(text)


def _optional_str(text: str) -> Optional[str]:
    return text or None


_COERCE: Dict[str, Callable[[str], Any]] = {
    'command': _optional_str,
    'inputs': _strings,
    'output': _optional_str,
    'candidate': _optional_str,
    'report': _optional_str,
    'samples_out': _optional_str,
    'solution': _optional_str,
    'mode': _optional_str,
    'r': int,
    'r_inner': int,
    'r_outer': int,
    'gap_tol': float,
    'tol': float,
    'density': int,
    'grid_nodes': _optional_int,
    'boxes': lambda text: [b.strip() for b in text.split(';') if b.strip()],
    'operator': _optional_str,
    'operator_path': _optional_str,
    'n_space': _optional_int,
    'has_time': _optional_bool,
    'unknowns': _strings,
    'domain_lo': _floats,
    'domain_hi': _floats,
    'cells': _ints,
    'eps': float,
    'check_eps': _optional_float,
    'theta': float,
    'n_list': _ints,
    'max_depth': int,
    'samples': int,
    'degree': _optional_int,
    'initial_tol': float,
    'jet_tol': float,
    'jet_max_iter': int,
    'neighbor_matching': _bool,
    'seed': int,
    'verify_density': _optional_int,
    'threads': _optional_int,
    'nu': float,
    'dim': int,
    'convective': str,
}
