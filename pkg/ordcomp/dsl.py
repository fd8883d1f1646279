"""
Operator DSL Module

Tokenizer, recursive-descent parser and pretty printer for the text form of
PDE systems. One equation per line, `expr = rhs`, with `#` comments:

    dt(u1) - nu*dxx1(u1) = f1

Jet variables are unknown values (`u1`, `p`) and positional derivatives of
unknowns: `dt(u)`, `dx2(u)`, `dxx1(u)`, `dx1x3(u)`. Coordinates are
`x1`..`xn` and `t`; `sin`, `cos`, `exp` and `abs` are the elementary
functions; every other identifier is a named parameter. Unknowns are the
names declared to parse_operator, or by default `u`, `u1`, `u2`, ... and `p`.
Identifiers may be any Unicode word, so `ν` works as a parameter.
"""

import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .core_types import MultiIndex
from .errors import ArityError, DimensionMismatch, DslSyntaxError, InputError, UnknownFunction
from .log_utils import get_logger

logger = get_logger(__name__)

FUNCTIONS = ('sin', 'cos', 'exp', 'abs')

# Token types
NUMBER = 'NUMBER'
NAME = 'NAME'
OP = 'OP'
END = 'END'

_TOKEN_RE = re.compile(r'(?P<number>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?)|(?P<name>[^\W\d]\w*)'
                       r'|(?P<op>[-+*/^()=,])|(?P<space>[ \t\r]+)')
_COORD_RE = re.compile(r'x(\d+)$')
_DERIV_RE = re.compile(r'(?:dx(\d*)|dxx(\d*)|dx(\d+)x(\d+)|dt)$')
_UNKNOWN_RE = re.compile(r'(?:u\d*|p)$')
_NAME_RE = re.compile(r'[^\W\d]\w*$')

# Highest derivative order the derivative names can express
MAX_JET_ORDER = 2


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str, line: int = 1) -> List[Token]:
    """Split one line of DSL text into tokens, ending with an END token"""
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise DslSyntaxError(f"Unexpected character {text[pos]!r}", line, pos + 1)
        if match.lastgroup != 'space':
            kind = {'number': NUMBER, 'name': NAME, 'op': OP}[match.lastgroup]
            tokens.append(Token(kind, match.group(), line, pos + 1))
        pos = match.end()
    tokens.append(Token(END, '', line, len(text) + 1))
    return tokens


# AST

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Coord:
    """Coordinate x_axis (1-based) or time when axis == 0"""

    axis: int

    @property
    def is_time(self) -> bool:
        return self.axis == 0


@dataclass(frozen=True)
class Jet:
    """D^alpha of an unknown: sorted spatial axes (1-based) plus a time order"""

    unknown: str
    axes: Tuple[int, ...] = ()
    time: int = 0

    @property
    def order(self) -> int:
        return len(self.axes) + self.time

    def multi_index(self, n_space: int, has_time: bool) -> MultiIndex:
        orders = [0] * (n_space + (1 if has_time else 0))
        for axis in self.axes:
            orders[axis - 1] += 1
        if self.time:
            orders[n_space] = self.time
        return MultiIndex(tuple(orders))


@dataclass(frozen=True)
class BinOp:
    op: str
    left: 'Expr'
    right: 'Expr'


@dataclass(frozen=True)
class Neg:
    operand: 'Expr'


@dataclass(frozen=True)
class Pow:
    base: 'Expr'
    exponent: int


@dataclass(frozen=True)
class Func:
    name: str
    arg: 'Expr'


Expr = Union[Const, Param, Coord, Jet, BinOp, Neg, Pow, Func]


@dataclass(frozen=True)
class Equation:
    expr: Expr
    rhs: Union[str, float]


def walk(expr: Expr):
    """Yield every node of an expression, parents first"""
    yield expr
    if isinstance(expr, BinOp):
        yield from walk(expr.left)
        yield from walk(expr.right)
    elif isinstance(expr, Neg):
        yield from walk(expr.operand)
    elif isinstance(expr, Func):
        yield from walk(expr.arg)
    elif isinstance(expr, Pow):
        yield from walk(expr.base)


@dataclass(frozen=True)
class JetSpec:
    """Ordered jet slots (unknown, multi-index); unknowns and indices sorted"""

    unknowns: Tuple[str, ...]
    slots: Tuple[Tuple[str, MultiIndex], ...]

    def __post_init__(self):
        for unknown, alpha in self.slots:
            if alpha.order > MAX_JET_ORDER:
                raise InputError(f"Jet slot {unknown}{alpha.orders} has order {alpha.order} > {MAX_JET_ORDER}")
            if unknown not in self.unknowns:
                raise InputError(f"Jet slot for undeclared unknown {unknown}")
        if len({alpha.dim for _, alpha in self.slots}) > 1:
            raise DimensionMismatch("Jet slots mix multi-index dimensions")

    @classmethod
    def from_jets(cls, jets: Sequence[Jet], n_space: int, has_time: bool,
                  order_limit: int = MAX_JET_ORDER) -> 'JetSpec':
        """Slots of the distinct jets; InputError when one exceeds order_limit"""
        for jet in jets:
            if jet.order > order_limit:
                raise InputError(f"{jet_name(jet)} has order {jet.order}, above the limit {order_limit}",
                                 order=jet.order, limit=order_limit)
        slots = sorted({(jet.unknown, jet.multi_index(n_space, has_time)) for jet in jets},
                       key=lambda s: (s[0], s[1].orders))
        unknowns = tuple(sorted({u for u, _ in slots}))
        return cls(unknowns, tuple(slots))

    @property
    def size(self) -> int:
        """K, the jet length"""
        return len(self.slots)

    @property
    def max_order(self) -> int:
        return max((alpha.order for _, alpha in self.slots), default=0)

    def index(self, unknown: str, alpha: MultiIndex) -> int:
        try:
            return self.slots.index((unknown, alpha))
        except ValueError:
            raise InputError(f"Jet slot {unknown}{alpha.orders} is not part of the system")

    def has_slot(self, unknown: str, alpha: MultiIndex) -> bool:
        return (unknown, alpha) in self.slots

    def indices_of(self, unknown: str) -> List[MultiIndex]:
        return [alpha for u, alpha in self.slots if u == unknown]

    def labels(self) -> List[str]:
        return [f"{u}[{alpha.key()}]" for u, alpha in self.slots]


@dataclass(frozen=True)
class PdeSystem:
    """Parsed system F(x, jet) = g; one expression per equation"""

    equations: Tuple[Equation, ...]
    jet_spec: JetSpec
    n_space: int
    has_time: bool
    params: Tuple[Tuple[str, float], ...] = ()
    closed_form: Optional[Callable] = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        """Dimension of the point space (time last)"""
        return self.n_space + (1 if self.has_time else 0)

    @property
    def m(self) -> int:
        return len(self.equations)

    @property
    def exprs(self) -> Tuple[Expr, ...]:
        return tuple(eq.expr for eq in self.equations)

    @property
    def rhs_names(self) -> List[str]:
        return [eq.rhs if isinstance(eq.rhs, str) else repr(eq.rhs) for eq in self.equations]

    @property
    def unknowns(self) -> Tuple[str, ...]:
        return self.jet_spec.unknowns

    @property
    def bindings(self) -> Dict[str, float]:
        return dict(self.params)

    def parameter_names(self) -> List[str]:
        names = {node.name for expr in self.exprs for node in walk(expr) if isinstance(node, Param)}
        return sorted(names)

    def with_params(self, **values: float) -> 'PdeSystem':
        """Copy with additional parameter bindings"""
        bindings = self.bindings
        bindings.update({k: float(v) for k, v in values.items()})
        return PdeSystem(self.equations, self.jet_spec, self.n_space, self.has_time,
                         tuple(sorted(bindings.items())), self.closed_form)

    def with_closed_form(self, hook: Callable) -> 'PdeSystem':
        return PdeSystem(self.equations, self.jet_spec, self.n_space, self.has_time, self.params, hook)

    def time_axis(self) -> int:
        if not self.has_time:
            raise InputError("System has no time coordinate")
        return self.n_space


class Parser:
    """Recursive-descent parser over the tokens of one line"""

    def __init__(self, tokens: List[Token], unknowns: Optional[Sequence[str]] = None):
        self.tokens = tokens
        self.cursor = 0
        self.unknowns = frozenset(unknowns) if unknowns is not None else None

    def is_unknown(self, name: str) -> bool:
        if self.unknowns is not None:
            return name in self.unknowns
        return is_unknown(name)

    def current(self) -> Token:
        return self.tokens[self.cursor]

    def advance(self) -> Token:
        token = self.current()
        if token.kind != END:
            self.cursor += 1
        return token

    def at_op(self, text: str) -> bool:
        token = self.current()
        return token.kind == OP and token.text == text

    def error(self, message: str) -> DslSyntaxError:
        token = self.current()
        found = 'end of line' if token.kind == END else repr(token.text)
        return DslSyntaxError(f"{message}, found {found}", token.line, token.col)

    def expect_op(self, text: str) -> Token:
        if not self.at_op(text):
            raise self.error(f"Expected {text!r}")
        return self.advance()

    def expect_end(self) -> None:
        if self.current().kind != END:
            raise self.error("Expected end of line")

    # equation -> expr "=" rhs
    def parse_equation(self) -> Equation:
        expr = self.parse_expr()
        self.expect_op('=')
        token = self.current()
        negative = False
        if self.at_op('-'):
            self.advance()
            negative = True
            token = self.current()
        if token.kind == NUMBER:
            self.advance()
            rhs: Union[str, float] = -float(token.text) if negative else float(token.text)
        elif token.kind == NAME and not negative:
            self.advance()
            rhs = token.text
        else:
            raise self.error("Expected a right-hand side name or number")
        self.expect_end()
        return Equation(expr, rhs)

    # expr -> term (("+"|"-") term)*
    def parse_expr(self) -> Expr:
        expr = self.parse_term()
        while self.at_op('+') or self.at_op('-'):
            op = self.advance().text
            expr = BinOp(op, expr, self.parse_term())
        return expr

    # term -> unary (("*"|"/") unary)*
    def parse_term(self) -> Expr:
        expr = self.parse_unary()
        while self.at_op('*') or self.at_op('/'):
            op = self.advance().text
            expr = BinOp(op, expr, self.parse_unary())
        return expr

    # unary -> "-" unary | power
    def parse_unary(self) -> Expr:
        if self.at_op('-'):
            self.advance()
            return Neg(self.parse_unary())
        return self.parse_power()

    # power -> primary ("^" integer)*
    def parse_power(self) -> Expr:
        expr = self.parse_primary()
        while self.at_op('^'):
            self.advance()
            token = self.current()
            if token.kind != NUMBER or not token.text.isdigit():
                raise self.error("Expected a nonnegative integer exponent")
            self.advance()
            expr = Pow(expr, int(token.text))
        return expr

    def parse_primary(self) -> Expr:
        token = self.current()
        if token.kind == NUMBER:
            self.advance()
            return Const(float(token.text))
        if self.at_op('('):
            self.advance()
            expr = self.parse_expr()
            self.expect_op(')')
            return expr
        if token.kind != NAME:
            raise self.error("Expected an operand")
        self.advance()
        name = token.text
        if self.at_op('('):
            return self.parse_call(token)
        if self.is_unknown(name):
            return Jet(name)
        if name == 't':
            return Coord(0)
        coord = _COORD_RE.match(name)
        if coord:
            axis = int(coord.group(1))
            if axis < 1:
                raise DslSyntaxError(f"Coordinate axes start at 1: {name}", token.line, token.col)
            return Coord(axis)
        if name in FUNCTIONS:
            raise DslSyntaxError(f"Function {name} needs an argument", token.line, token.col)
        return Param(name)

    def parse_arguments(self) -> List[Tuple[Token, Expr]]:
        self.expect_op('(')
        args = []
        if not self.at_op(')'):
            while True:
                start = self.current()
                args.append((start, self.parse_expr()))
                if not self.at_op(','):
                    break
                self.advance()
        self.expect_op(')')
        return args

    def parse_call(self, name_token: Token) -> Expr:
        name = name_token.text
        derivative = _DERIV_RE.match(name)
        if derivative is None and name not in FUNCTIONS:
            raise UnknownFunction(f"Unknown function {name!r} (line {name_token.line}, column {name_token.col})",
                                  name=name, line=name_token.line, col=name_token.col)
        args = self.parse_arguments()
        if len(args) != 1:
            raise ArityError(f"{name} takes exactly one argument, got {len(args)} "
                             f"(line {name_token.line}, column {name_token.col})",
                             name=name, line=name_token.line, col=name_token.col)
        start, arg = args[0]
        if derivative is None:
            return Func(name, arg)
        if not isinstance(arg, Jet) or arg.order != 0:
            raise DslSyntaxError(f"{name} applies to an unknown name", start.line, start.col)
        return Jet(arg.unknown, *_derivative_axes(derivative, name_token))


def _derivative_axes(match, token: Token) -> Tuple[Tuple[int, ...], int]:
    first, second, mixed_a, mixed_b = match.groups()
    if token.text == 'dt':
        return (), 1
    if mixed_a is not None:
        axes = (int(mixed_a), int(mixed_b))
    elif second is not None:
        axis = int(second) if second else 1
        axes = (axis, axis)
    else:
        axes = (int(first) if first else 1,)
    if min(axes) < 1:
        raise DslSyntaxError(f"Derivative axes start at 1: {token.text}", token.line, token.col)
    return tuple(sorted(axes)), 0


def is_unknown(name: str) -> bool:
    """Default unknown names: u, u1, u2, ... and p"""
    return _UNKNOWN_RE.match(name) is not None


def _check_unknown_names(unknowns: Sequence[str]) -> None:
    for name in unknowns:
        reserved = name == 't' or _COORD_RE.match(name) or _DERIV_RE.match(name) or name in FUNCTIONS
        if not _NAME_RE.match(name) or reserved:
            raise InputError(f"{name!r} cannot name an unknown")


def _split_lines(text: str) -> List[Tuple[int, str]]:
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0]
        if line.strip():
            lines.append((number, line))
    return lines


def _infer_dims(exprs: Sequence[Expr], n_space: Optional[int], has_time: Optional[bool]) -> Tuple[int, bool]:
    axes = [0]
    uses_time = False
    for expr in exprs:
        for node in walk(expr):
            if isinstance(node, Coord):
                uses_time |= node.is_time
                axes.append(node.axis)
            elif isinstance(node, Jet):
                uses_time |= node.time > 0
                axes.extend(node.axes)
    needed = max(axes)
    if has_time is None:
        has_time = uses_time
    elif uses_time and not has_time:
        raise DimensionMismatch("Expression uses time but the system has no time axis")
    if n_space is None:
        # A pure time equation lives on the time axis alone
        n_space = needed if (needed or has_time) else 1
    elif n_space < needed:
        raise DimensionMismatch(f"Expression uses x{needed} but the system has {n_space} spatial axes")
    if n_space == 0 and not has_time:
        raise DimensionMismatch("A system needs at least one axis")
    return n_space, has_time


def parse_operator(text: str, n_space: Optional[int] = None, has_time: Optional[bool] = None,
                   params: Optional[Dict[str, float]] = None, unknowns: Optional[Sequence[str]] = None,
                   order_limit: int = MAX_JET_ORDER) -> PdeSystem:
    """
    Parse DSL text into a PdeSystem

    Args:
        text: One equation per line, `#` comments allowed
        n_space: Number of spatial axes (default: highest axis referenced)
        has_time: Whether the last axis is time (default: whether t or dt appears)
        params: Parameter bindings
        unknowns: Names of the unknowns (default: u, u1, u2, ... and p)
        order_limit: Highest derivative order allowed

    Returns:
        PdeSystem with a sorted JetSpec
    """
    if unknowns is not None:
        _check_unknown_names(unknowns)
    equations = []
    for number, line in _split_lines(text):
        parser = Parser(tokenize(line, number), unknowns)
        equations.append(parser.parse_equation())
    if not equations:
        raise DslSyntaxError("Operator text has no equations", 1, 1)
    n_space, has_time = _infer_dims([eq.expr for eq in equations], n_space, has_time)
    jets = [node for eq in equations for node in walk(eq.expr) if isinstance(node, Jet)]
    spec = JetSpec.from_jets(jets, n_space, has_time, order_limit)
    unused = sorted(set(unknowns or ()) - set(spec.unknowns))
    if unused:
        logger.warning(f"Declared unknowns {unused} do not appear in the operator")
    system = PdeSystem(tuple(equations), spec, n_space, has_time,
                       tuple(sorted((k, float(v)) for k, v in (params or {}).items())))
    logger.debug(f"Parsed {system.m} equations, jet length {spec.size}, point dimension {system.dim}")
    return system


def parse_expression(text: str, line: int = 1) -> Expr:
    """Parse a single expression, e.g. a right-hand side or initial data"""
    parser = Parser(tokenize(text, line))
    expr = parser.parse_expr()
    parser.expect_end()
    return expr


# Pretty printer

_PREC = {'+': 1, '-': 1, '*': 2, '/': 2}
_NEG_PREC = 3
_POW_PREC = 4
_ATOM_PREC = 5


def _prec(expr: Expr) -> int:
    if isinstance(expr, BinOp):
        return _PREC[expr.op]
    if isinstance(expr, Neg):
        return _NEG_PREC
    if isinstance(expr, Pow):
        return _POW_PREC
    if isinstance(expr, Const) and (expr.value < 0 or repr(expr.value) in ('inf', 'nan')):
        return 0
    return _ATOM_PREC


def _wrap(expr: Expr, min_prec: int) -> str:
    text = pretty_expr(expr)
    return f"({text})" if _prec(expr) < min_prec else text


def jet_name(jet: Jet) -> str:
    if jet.time:
        return f"dt({jet.unknown})"
    if not jet.axes:
        return jet.unknown
    if len(jet.axes) == 1:
        return f"dx{jet.axes[0]}({jet.unknown})"
    a, b = jet.axes
    if a == b:
        return f"dxx{a}({jet.unknown})"
    return f"dx{a}x{b}({jet.unknown})"


def pretty_expr(expr: Expr) -> str:
    """Canonical text of an expression; parses back to the same tree"""
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Param):
        return expr.name
    if isinstance(expr, Coord):
        return 't' if expr.is_time else f"x{expr.axis}"
    if isinstance(expr, Jet):
        return jet_name(expr)
    if isinstance(expr, Func):
        return f"{expr.name}({pretty_expr(expr.arg)})"
    if isinstance(expr, Neg):
        return '-' + _wrap(expr.operand, _NEG_PREC)
    if isinstance(expr, Pow):
        return f"{_wrap(expr.base, _ATOM_PREC)}^{expr.exponent}"
    prec = _PREC[expr.op]
    return f"{_wrap(expr.left, prec)} {expr.op} {_wrap(expr.right, prec + 1)}"


def pretty_print(system: PdeSystem) -> str:
    """Canonical DSL text of a system, one equation per line"""
    lines = []
    for eq in system.equations:
        rhs = eq.rhs if isinstance(eq.rhs, str) else repr(eq.rhs)
        lines.append(f"{pretty_expr(eq.expr)} = {rhs}")
    return '\n'.join(lines) + '\n'
