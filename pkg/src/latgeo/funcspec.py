"""Expression language for user-supplied maps and the scanners consuming them.

Grammar (recursive descent, documented in README):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

Identifiers are the variables ``s1 .. sN`` (N declared by the caller), the
constants ``pi`` and ``e``, and the functions ``sin cos sqrt exp log abs``.
Precedence: ``^`` binds tighter than unary minus, which binds tighter than
``* /``, which bind tighter than ``+ -``.  Parse errors carry byte offsets
and render as ``line:col: message``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ConfigError, NumericError

FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "sqrt": None,  # domain-checked in _eval
    "exp": math.exp,
    "log": None,
    "abs": abs,
}

CONSTANTS = {"pi": math.pi, "e": math.e}


class ExprSyntaxError(ConfigError):
    """Syntax or name error while parsing an expression."""

    def __init__(self, text: str, pos: int, message: str):
        line = text.count("\n", 0, pos) + 1
        col = pos - (text.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"{line}:{col}: {message}")
        self.pos = pos


class DomainError(NumericError):
    """Evaluation left the declared real domain (division by zero, log of
    a nonpositive number, and so on)."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based; prints as s{index+1}


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Num | Var | Const | Neg | Bin | Call

_MAX_SOURCE_BYTES = 64 * 1024


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self):
        self._skip_ws()
        if self.pos >= len(self.text):
            return ("end", "", self.pos)
        start = self.pos
        ch = self.text[start]
        if ch.isdigit() or ch == ".":
            j = start
            seen_dot = False
            while j < len(self.text) and (self.text[j].isdigit() or (self.text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or self.text[j] == "."
                j += 1
            # optional exponent
            if j < len(self.text) and self.text[j] in "eE":
                k = j + 1
                if k < len(self.text) and self.text[k] in "+-":
                    k += 1
                if k < len(self.text) and self.text[k].isdigit():
                    while k < len(self.text) and self.text[k].isdigit():
                        k += 1
                    j = k
            return ("num", self.text[start:j], start)
        if ch.isalpha() or ch == "_":
            j = start
            while j < len(self.text) and (self.text[j].isalnum() or self.text[j] == "_"):
                j += 1
            return ("ident", self.text[start:j], start)
        if ch in "+-*/^()":
            return ("op", ch, start)
        raise ExprSyntaxError(self.text, start, f"unexpected character {ch!r}")

    def take(self):
        kind, value, start = self.peek()
        self.pos = start + len(value)
        return kind, value, start


class _Parser:
    def __init__(self, text: str, n_vars: int | None):
        self.text = text
        self.tok = _Tokenizer(text)
        self.n_vars = n_vars

    def parse(self) -> Expr:
        node = self._expr()
        kind, value, start = self.tok.peek()
        if kind != "end":
            raise ExprSyntaxError(self.text, start, f"unexpected token {value!r}")
        return node

    def _expr(self) -> Expr:
        node = self._term()
        while True:
            kind, value, _ = self.tok.peek()
            if kind == "op" and value in "+-":
                self.tok.take()
                node = Bin(value, node, self._term())
            else:
                return node

    def _term(self) -> Expr:
        node = self._unary()
        while True:
            kind, value, _ = self.tok.peek()
            if kind == "op" and value in "*/":
                self.tok.take()
                node = Bin(value, node, self._unary())
            else:
                return node

    def _unary(self) -> Expr:
        kind, value, _ = self.tok.peek()
        if kind == "op" and value == "-":
            self.tok.take()
            return Neg(self._unary())
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        kind, value, _ = self.tok.peek()
        if kind == "op" and value == "^":
            self.tok.take()
            return Bin("^", base, self._unary())
        return base

    def _atom(self) -> Expr:
        kind, value, start = self.tok.take()
        if kind == "num":
            return Num(float(value))
        if kind == "ident":
            nkind, nvalue, _ = self.tok.peek()
            if nkind == "op" and nvalue == "(":
                if value not in FUNCTIONS:
                    raise ExprSyntaxError(self.text, start, f"unknown function {value!r}")
                self.tok.take()
                arg = self._expr()
                ckind, cvalue, cstart = self.tok.take()
                if not (ckind == "op" and cvalue == ")"):
                    raise ExprSyntaxError(self.text, cstart, "expected ')'")
                return Call(value, arg)
            if value in CONSTANTS:
                return Const(value)
            if value.startswith("s") and value[1:].isdigit():
                index = int(value[1:]) - 1
                if index < 0:
                    raise ExprSyntaxError(self.text, start, f"bad variable {value!r}")
                if self.n_vars is not None and index >= self.n_vars:
                    raise ExprSyntaxError(
                        self.text, start, f"variable {value!r} exceeds declared arity {self.n_vars}"
                    )
                return Var(index)
            raise ExprSyntaxError(self.text, start, f"unknown identifier {value!r}")
        if kind == "op" and value == "(":
            node = self._expr()
            ckind, cvalue, cstart = self.tok.take()
            if not (ckind == "op" and cvalue == ")"):
                raise ExprSyntaxError(self.text, cstart, "expected ')'")
            return node
        raise ExprSyntaxError(self.text, start, "expected a number, name, or '('")


def parse(text: str, n_vars: int | None = None) -> Expr:
    """Parse ``text`` into an AST.  ``n_vars`` bounds the allowed s-variables."""
    if len(text.encode()) > _MAX_SOURCE_BYTES:
        raise ExprSyntaxError(text, 0, "expression source exceeds 64 KiB")
    return _Parser(text, n_vars).parse()


def _prec(e: Expr) -> int:
    if isinstance(e, Bin):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[e.op]
    if isinstance(e, Neg):
        return 3
    return 9


def to_text(e: Expr) -> str:
    """Print an AST so that ``parse(to_text(e)) == e``."""

    def wrap(child: Expr, min_prec: int) -> str:
        s = to_text(child)
        return f"({s})" if _prec(child) < min_prec else s

    if isinstance(e, Num):
        if e.value == int(e.value) and abs(e.value) < 1e15:
            return str(int(e.value))
        return repr(e.value)
    if isinstance(e, Var):
        return f"s{e.index + 1}"
    if isinstance(e, Const):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    if isinstance(e, Neg):
        return "-" + wrap(e.operand, 3)
    if isinstance(e, Bin):
        p = _prec(e)
        if e.op == "^":
            return f"{wrap(e.left, 9)}^{wrap(e.right, 3)}"
        return f"{wrap(e.left, p)} {e.op} {wrap(e.right, p + 1)}"
    raise TypeError(f"not an Expr: {e!r}")


def evaluate(e: Expr, s) -> float:
    """Evaluate at the point ``s`` (indexable by variable position)."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return float(s[e.index])
    if isinstance(e, Const):
        return CONSTANTS[e.name]
    if isinstance(e, Neg):
        return -evaluate(e.operand, s)
    if isinstance(e, Call):
        x = evaluate(e.arg, s)
        if e.func == "sqrt":
            if x < 0:
                raise DomainError(f"sqrt of negative value {x!r}")
            return math.sqrt(x)
        if e.func == "log":
            if x <= 0:
                raise DomainError(f"log of nonpositive value {x!r}")
            return math.log(x)
        return FUNCTIONS[e.func](x)
    if isinstance(e, Bin):
        a = evaluate(e.left, s)
        b = evaluate(e.right, s)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0:
                raise DomainError("division by zero")
            return a / b
        # power
        if a == 0 and b < 0:
            raise DomainError("zero raised to a negative power")
        if a < 0 and b != int(b):
            raise DomainError(f"negative base {a!r} with non-integer exponent {b!r}")
        try:
            return float(a**b)
        except OverflowError as exc:
            raise DomainError(str(exc)) from exc
    raise TypeError(f"not an Expr: {e!r}")


class FuncFamily:
    """A matrix of expressions sharing the input variables s1..sN.

    ``shape`` is (rows, cols); evaluation returns an ndarray of that shape.
    With ``normalize=True`` each column is scaled to unit Euclidean norm at
    evaluation time (raw norms below 1e-9 are rejected).
    """

    def __init__(self, exprs, n_vars: int, normalize: bool = False):
        rows = []
        for row in exprs:
            parsed = [parse(item, n_vars) if isinstance(item, str) else item for item in row]
            rows.append(tuple(parsed))
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ConfigError("expression matrix must be rectangular and nonempty")
        self.exprs = tuple(rows)
        self.n_vars = n_vars
        self.normalize = normalize
        self.shape = (len(rows), len(rows[0]))

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty(self.shape)
        for i, row in enumerate(self.exprs):
            for j, e in enumerate(row):
                out[i, j] = evaluate(e, s)
        if not np.all(np.isfinite(out)):
            raise DomainError("expression evaluated to a non-finite value")
        if self.normalize:
            norms = np.linalg.norm(out, axis=0)
            if np.any(norms < 1e-9):
                raise DomainError("cannot normalize a column with norm below 1e-9")
            out = out / norms
        return out

    def vector(self, s) -> np.ndarray:
        """Evaluate a single-column family as a flat vector."""
        out = self(s)
        if out.shape[1] != 1:
            raise ValueError(f"family has {out.shape[1]} columns, expected 1")
        return out[:, 0]


def vector_family(texts, n_vars: int, normalize: bool = False) -> FuncFamily:
    return FuncFamily([[t] for t in texts], n_vars, normalize=normalize)


def fd_jacobian(fam: FuncFamily, s, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of the flattened outputs, shape (rows*cols, n_vars)."""
    if not (1e-8 <= h <= 1e-3):
        raise ValueError(f"step h={h} outside [1e-8, 1e-3]")
    s = np.asarray(s, dtype=float)
    cols = []
    for i in range(fam.n_vars):
        dp = s.copy()
        dm = s.copy()
        dp[i] += h
        dm[i] -= h
        cols.append((fam(dp) - fam(dm)).ravel() / (2 * h))
    return np.stack(cols, axis=1)


def jacobian_rank(fam: FuncFamily, s, h: float = 1e-5, tol: float = 1e-7) -> int:
    """Numerical rank of the Jacobian; a regularity probe for direction maps."""
    jac = fd_jacobian(fam, s, h)
    if jac.size == 0:
        return 0
    return int(np.linalg.matrix_rank(jac, tol=tol))


def theta_genericity_scan(
    theta: FuncFamily,
    f: FuncFamily,
    phis,
    m,
    lo,
    hi,
    t_bound: float,
    k_bound: int,
    tol: float,
    grid_per_axis: int = 32,
):
    """Bounded-height violation search for the direction-avoidance condition.

    Flags grid points s where some integer vector kvec with sup-norm at most
    ``k_bound`` and some |t| <= ``t_bound`` bring
    ``sum_j m_j (phi_j(s) - theta(s)) - t f(s) - kvec`` within ``tol``.
    This is a bounded search, not a decision procedure: the target set is
    dense for irrational directions, so the bounds are part of the answer.

    Returns (flagged_fraction, witnesses) where each witness is a dict with
    the grid point, the minimizing t, and kvec.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if not (np.isfinite(t_bound) and t_bound >= 0 and k_bound >= 0):
        raise ValueError("bounds must be finite and nonnegative")
    m = np.asarray(m, dtype=float)
    d = theta.shape[0]
    axes = [np.linspace(a, b, grid_per_axis) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij") if axes else []
    points = np.stack([g.ravel() for g in mesh], axis=1) if axes else np.zeros((1, 0))

    rng_box = np.arange(-k_bound, k_bound + 1)
    kvecs = np.stack(np.meshgrid(*([rng_box] * d), indexing="ij"), axis=-1).reshape(-1, d)

    witnesses = []
    flagged = 0
    for s in points:
        g = (np.stack([p(s) for p in phis], axis=2) - theta(s)[:, :, None]).reshape(d, -1) @ m
        fv = f.vector(s)
        # per kvec the best t is the clamped projection onto the flow direction
        resid = g[None, :] - kvecs
        t_star = np.clip(resid @ fv, -t_bound, t_bound)
        dist = np.linalg.norm(resid - t_star[:, None] * fv[None, :], axis=1)
        best = int(np.argmin(dist))
        if dist[best] < tol:
            flagged += 1
            witnesses.append(
                {"s": s.tolist(), "t": float(t_star[best]), "kvec": kvecs[best].tolist(), "dist": float(dist[best])}
            )
    return flagged / len(points), witnesses
