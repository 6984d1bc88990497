"""Line-oriented system description language.

    system <ident>
    states <ident>+
    inputs <ident>*        (line optional when there are no inputs)
    d<state> = <expr>      (one equation per state, any order)

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' integer)?
    base   := number | ident | '(' expr ')'
            | ('sin'|'cos'|'exp') '(' expr ')' | '-' base

'#' starts a comment.  Identifiers are ASCII [a-zA-Z][a-zA-Z0-9_]*.
parse and serialize are exact inverses on valid systems.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .expr import (
    Add,
    Constant,
    Cos,
    Div,
    Exp,
    Expr,
    InputVar,
    Mul,
    Neg,
    Pow,
    Sin,
    StateVar,
    Sub,
    diff,
    is_probably_zero,
    max_input_index,
    max_state_index,
    simplify,
    subst,
)
from .fields import VectorField

_IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_RESERVED = {"system", "states", "inputs", "sin", "cos", "exp"}
_FUNCS = {"sin": Sin, "cos": Cos, "exp": Exp}


class DslError(ValueError):
    """Parse or validation failure, with 1-based line/column when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None and col is not None:
            message = f"line {line}, col {col}: {message}"
        elif line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _check_name(name: str, kind: str):
    if not _IDENT_RE.fullmatch(name):
        raise ValueError(f"invalid {kind} name {name!r}")
    if name in _RESERVED:
        raise ValueError(f"{kind} name {name!r} is reserved")


@dataclass(frozen=True)
class ControlSystem:
    """Immutable system description: named states/inputs plus one rhs
    expression per state."""

    name: str
    states: tuple[str, ...]
    inputs: tuple[str, ...]
    rhs: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "rhs", tuple(self.rhs))
        _check_name(self.name, "system")
        if not self.states:
            raise ValueError("a system needs at least one state")
        for s in self.states:
            _check_name(s, "state")
        for s in self.inputs:
            _check_name(s, "input")
        seen = set()
        for s in self.states + self.inputs:
            if s in seen:
                raise ValueError(f"duplicate name {s!r}")
            seen.add(s)
        if len(self.rhs) != len(self.states):
            raise ValueError(
                f"{len(self.states)} states but {len(self.rhs)} equations"
            )
        for i, e in enumerate(self.rhs):
            if not isinstance(e, Expr):
                raise TypeError(f"equation {i} is not an expression")
            if max_state_index(e) >= self.n:
                raise ValueError(f"equation for {self.states[i]} references an undeclared state")
            if max_input_index(e) >= self.m:
                raise ValueError(f"equation for {self.states[i]} references an undeclared input")

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def m(self) -> int:
        return len(self.inputs)

    def structurally_equal(self, other: "ControlSystem", match_names: bool = False) -> bool:
        """Equality of shape and equation trees; names optional."""
        if self.n != other.n or self.m != other.m:
            return False
        if match_names and (
            self.name != other.name
            or self.states != other.states
            or self.inputs != other.inputs
        ):
            return False
        return self.rhs == other.rhs


@dataclass(frozen=True)
class AffineSystem:
    """Control-affine form: drift plus one constant-in-u channel field per
    input.  All fields are non-parametric by construction."""

    name: str
    states: tuple[str, ...]
    input_names: tuple[str, ...]
    drift: VectorField
    channels: tuple[VectorField, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "input_names", tuple(self.input_names))
        object.__setattr__(self, "channels", tuple(self.channels))
        n = len(self.states)
        if self.drift.parametric or self.drift.n != n:
            raise ValueError("drift must be a non-parametric field on the state space")
        if len(self.channels) != len(self.input_names):
            raise ValueError("one channel field per input required")
        for g in self.channels:
            if g.parametric or g.n != n:
                raise ValueError("channel fields must be non-parametric fields on the state space")

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def m(self) -> int:
        return len(self.channels)


@dataclass(frozen=True)
class NotAffineReport:
    """First equation/input pair whose second input-derivative does not
    vanish."""

    system: str
    state: str
    input: str
    input2: str

    @property
    def pair(self) -> tuple[str, str]:
        return (self.state, self.input)

    def __str__(self):
        if self.input == self.input2:
            where = f"input {self.input!r}"
        else:
            where = f"inputs {self.input!r}, {self.input2!r}"
        return f"system {self.system!r} is not control-affine: d{self.state} is nonlinear in {where}"


# --- tokenizer -------------------------------------------------------------

_OPS = set("+-*/^()=")


def _tokenize(text: str, lineno: int):
    tokens = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in " \t":
            i += 1
            continue
        if ch == "#":
            break
        m = _NUMBER_RE.match(text, i)
        if m:
            tokens.append(("number", m.group(), i + 1))
            i = m.end()
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            tokens.append(("ident", m.group(), i + 1))
            i = m.end()
            continue
        if ch in _OPS:
            tokens.append(("op", ch, i + 1))
            i += 1
            continue
        raise DslError(f"unexpected character {ch!r}", lineno, i + 1)
    return tokens


class _ExprParser:
    """Recursive descent over one line of tokens."""

    def __init__(self, tokens, lineno, names):
        self.tokens = tokens
        self.lineno = lineno
        self.names = names
        self.pos = 0

    def peek(self):
        if self.pos < len(self.tokens):
            return self.tokens[self.pos]
        return ("end", "", self.tokens[-1][2] + 1 if self.tokens else 1)

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise DslError(message, self.lineno, tok[2])

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, _ = self.peek()
        if kind != "end":
            self.fail(f"unexpected {text!r} after expression")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.next()
                rhs = self.term()
                e = Add(e, rhs) if text == "+" else Sub(e, rhs)
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.next()
                rhs = self.factor()
                if text == "*":
                    e = Mul(e, rhs)
                else:
                    if isinstance(rhs, Constant) and rhs.value == 0.0:
                        self.fail("division by constant zero")
                    e = Div(e, rhs)
            else:
                return e

    def factor(self) -> Expr:
        e = self.base()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.next()
            e = Pow(e, self.integer())
        return e

    def integer(self) -> int:
        sign = 1
        kind, text, col = self.peek()
        if kind == "op" and text == "-":
            self.next()
            sign = -1
            kind, text, col = self.peek()
        if kind != "number" or not re.fullmatch(r"\d+", text):
            self.fail("power exponent must be an integer")
        self.next()
        return sign * int(text)

    def base(self) -> Expr:
        kind, text, col = self.next()
        if kind == "number":
            return Constant(float(text))
        if kind == "op" and text == "-":
            # fold a directly attached literal so -2 is the constant -2,
            # while -(2) stays an explicit negation
            k2, t2, _ = self.peek()
            if k2 == "number":
                self.next()
                return Constant(-float(t2))
            return Neg(self.base())
        if kind == "op" and text == "(":
            e = self.expr()
            k2, t2, _ = self.next()
            if not (k2 == "op" and t2 == ")"):
                self.fail("expected ')'")
            return e
        if kind == "ident":
            if text in _FUNCS:
                k2, t2, _ = self.next()
                if not (k2 == "op" and t2 == "("):
                    self.fail(f"expected '(' after {text!r}")
                arg = self.expr()
                k3, t3, _ = self.next()
                if not (k3 == "op" and t3 == ")"):
                    self.fail("expected ')'")
                return _FUNCS[text](arg)
            if text in self.names:
                return self.names[text]
            raise DslError(f"undeclared variable {text!r}", self.lineno, col)
        self.fail(f"unexpected {text!r}" if text else "unexpected end of line",
                  (kind, text, col))


def parse(text: str) -> ControlSystem:
    """Parse a system description; raises DslError with line/column on
    failure."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(raw, lineno)
        if tokens:
            lines.append((lineno, tokens))
    if not lines:
        raise DslError("missing 'system' header", 1, 1)

    idx = 0
    lineno, tokens = lines[idx]
    if not (tokens[0][:2] == ("ident", "system") and len(tokens) == 2 and tokens[1][0] == "ident"):
        raise DslError("missing 'system' header", lineno, tokens[0][2])
    name = tokens[1][1]
    if name in _RESERVED:
        raise DslError(f"system name {name!r} is reserved", lineno, tokens[1][2])
    idx += 1

    if idx >= len(lines):
        raise DslError("missing 'states' declaration", lineno)
    lineno, tokens = lines[idx]
    if tokens[0][:2] != ("ident", "states"):
        raise DslError("missing 'states' declaration", lineno, tokens[0][2])
    if len(tokens) < 2:
        raise DslError("at least one state is required", lineno, tokens[0][2])
    states = []
    for kind, text, col in tokens[1:]:
        if kind != "ident":
            raise DslError(f"bad state name {text!r}", lineno, col)
        if text in _RESERVED:
            raise DslError(f"state name {text!r} is reserved", lineno, col)
        if text in states:
            raise DslError(f"duplicate state name {text!r}", lineno, col)
        states.append(text)
    idx += 1

    inputs: list[str] = []
    if idx < len(lines) and lines[idx][1][0][:2] == ("ident", "inputs"):
        lineno, tokens = lines[idx]
        for kind, text, col in tokens[1:]:
            if kind != "ident":
                raise DslError(f"bad input name {text!r}", lineno, col)
            if text in _RESERVED:
                raise DslError(f"input name {text!r} is reserved", lineno, col)
            if text in states or text in inputs:
                raise DslError(f"duplicate name {text!r}", lineno, col)
            inputs.append(text)
        idx += 1

    names: dict[str, Expr] = {}
    for i, s in enumerate(states):
        names[s] = StateVar(i)
    for j, s in enumerate(inputs):
        names[s] = InputVar(j)

    equations: dict[str, Expr] = {}
    eq_lines: dict[str, int] = {}
    for lineno, tokens in lines[idx:]:
        kind, text, col = tokens[0]
        if kind != "ident" or not text.startswith("d") or len(text) < 2:
            raise DslError("expected equation 'd<state> = <expr>'", lineno, col)
        target = text[1:]
        if target not in names or not isinstance(names[target], StateVar):
            raise DslError(f"equation for undeclared state {target!r}", lineno, col)
        if target in equations:
            raise DslError(
                f"duplicate equation for state {target!r} (first at line {eq_lines[target]})",
                lineno, col,
            )
        if len(tokens) < 2 or tokens[1][:2] != ("op", "="):
            raise DslError("expected '='", lineno, tokens[1][2] if len(tokens) > 1 else col)
        equations[target] = _ExprParser(tokens[2:], lineno, names).parse()
        eq_lines[target] = lineno

    for s in states:
        if s not in equations:
            raise DslError(f"missing equation for state {s!r}")

    return ControlSystem(name, tuple(states), tuple(inputs), tuple(equations[s] for s in states))


# --- serializer ------------------------------------------------------------

def _prec(e: Expr) -> int:
    if isinstance(e, (Add, Sub)):
        return 1
    if isinstance(e, (Mul, Div)):
        return 2
    return 3


def _render(e: Expr, names: list[str], input_names: list[str], min_prec: int = 1) -> str:
    if isinstance(e, Constant):
        s = repr(e.value)
    elif isinstance(e, StateVar):
        s = names[e.index]
    elif isinstance(e, InputVar):
        s = input_names[e.index]
    elif isinstance(e, Add):
        s = f"{_render(e.left, names, input_names, 1)} + {_render(e.right, names, input_names, 2)}"
    elif isinstance(e, Sub):
        s = f"{_render(e.left, names, input_names, 1)} - {_render(e.right, names, input_names, 2)}"
    elif isinstance(e, Mul):
        s = f"{_render(e.left, names, input_names, 2)} * {_render(e.right, names, input_names, 3)}"
    elif isinstance(e, Div):
        s = f"{_render(e.left, names, input_names, 2)} / {_render(e.right, names, input_names, 3)}"
    elif isinstance(e, Pow):
        s = f"{_render_base(e.base, names, input_names)}^{e.exponent}"
    elif isinstance(e, Neg):
        s = f"-{_render_base(e.arg, names, input_names)}"
    elif isinstance(e, (Sin, Cos, Exp)):
        fn = {Sin: "sin", Cos: "cos", Exp: "exp"}[type(e)]
        s = f"{fn}({_render(e.arg, names, input_names, 1)})"
    else:
        raise TypeError(f"not an expression node: {e!r}")
    if _prec(e) < min_prec:
        return f"({s})"
    return s


def _render_base(e: Expr, names, input_names) -> str:
    # the grammar's 'base' slot: atoms, calls and '-' chains fit bare,
    # anything else (and literals after '-') needs parentheses
    if isinstance(e, Constant):
        return f"({repr(e.value)})"
    if isinstance(e, (StateVar, InputVar, Sin, Cos, Exp, Neg)):
        return _render(e, names, input_names, 3)
    return f"({_render(e, names, input_names, 1)})"


def serialize(sys: ControlSystem) -> str:
    lines = [f"system {sys.name}", "states " + " ".join(sys.states)]
    if sys.inputs:
        lines.append("inputs " + " ".join(sys.inputs))
    for s, e in zip(sys.states, sys.rhs):
        lines.append(f"d{s} = {_render(e, list(sys.states), list(sys.inputs))}")
    return "\n".join(lines) + "\n"


def parse_expression(text: str, states, inputs) -> Expr:
    """Parse one expression against explicit state/input name lists."""
    names: dict[str, Expr] = {}
    for i, s in enumerate(states):
        names[s] = StateVar(i)
    for j, s in enumerate(inputs):
        names[s] = InputVar(j)
    tokens = _tokenize(text, 1)
    if not tokens:
        raise DslError("empty expression", 1, 1)
    return _ExprParser(tokens, 1, names).parse()


def render_expression(e: Expr, states, inputs) -> str:
    return _render(e, list(states), list(inputs))


# --- affine extraction -----------------------------------------------------

def to_affine(sys: ControlSystem) -> AffineSystem | NotAffineReport:
    """Split rhs into drift plus input channels, or report the first
    equation whose dependence on the inputs is not affine."""
    n, m = sys.n, sys.m
    for k in range(n):
        for i in range(m):
            for j in range(i, m):
                d2 = diff(diff(sys.rhs[k], InputVar(i)), InputVar(j))
                if not is_probably_zero(d2, n, m):
                    return NotAffineReport(sys.name, sys.states[k], sys.inputs[i], sys.inputs[j])
    zero_inputs = {j: Constant(0.0) for j in range(m)}
    drift = VectorField(
        tuple(simplify(subst(e, input_map=zero_inputs)) for e in sys.rhs), n
    )
    channels = []
    for i in range(m):
        comps = tuple(
            simplify(subst(diff(e, InputVar(i)), input_map=zero_inputs)) for e in sys.rhs
        )
        channels.append(VectorField(comps, n))
    return AffineSystem(sys.name, sys.states, sys.inputs, drift, tuple(channels))


def from_linear(name: str, a_matrix, b_matrix, state_names=None, input_names=None) -> ControlSystem:
    """Build dx = A x + B u as a ControlSystem."""
    import numpy as np

    a = np.asarray(a_matrix, dtype=float)
    b = np.asarray(b_matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("A must be square")
    n = a.shape[0]
    if b.ndim == 1:
        b = b.reshape(n, 1)
    if b.shape[0] != n:
        raise ValueError("B must have one row per state")
    m = b.shape[1]
    states = tuple(state_names) if state_names else tuple(f"x{i+1}" for i in range(n))
    inputs = tuple(input_names) if input_names else tuple(f"u{i+1}" for i in range(m))
    rhs = []
    for i in range(n):
        terms: list[Expr] = []
        for j in range(n):
            if a[i, j] != 0.0:
                terms.append(Mul(Constant(a[i, j]), StateVar(j)))
        for j in range(m):
            if b[i, j] != 0.0:
                terms.append(Mul(Constant(b[i, j]), InputVar(j)))
        if not terms:
            rhs.append(Constant(0.0))
        else:
            acc = terms[0]
            for t in terms[1:]:
                acc = Add(acc, t)
            rhs.append(acc)
    return ControlSystem(name, states, inputs, tuple(rhs))
