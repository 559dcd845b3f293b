"""Scalar expression language for the nonlinearities f_L, f_M, h and inputs u(t).

Grammar (whitespace ignored)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

so ``^`` binds tighter than unary minus (``-x^2 == -(x^2)``) and is right
associative (``x^2^3 == x^(2^3)``).  Identifiers are the variables
``x<i>``, ``u<i>``, ``y<i>``, ``w<i>`` (1-based) and ``t``, or one of the
functions in :data:`FUNCTIONS`.

Expressions are compiled to plain Python closures over :mod:`math`; every
domain violation (log of a non-positive number, division by zero, a
non-integer power of a negative base, overflow) raises
:class:`ExprDomainError` instead of producing NaN.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "tanh", "sqrt", "abs", "sign")
VAR_KINDS = ("x", "u", "y", "w")
NOT_GLOBALLY_SMOOTH = ("abs", "sqrt", "log", "sign")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at offset {offset}")
        self.offset = offset


class ExprDomainError(ExprError, ArithmeticError):
    pass


# --------------------------------------------------------------------- AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str

    @property
    def kind(self) -> str:
        return self.name[0]

    @property
    def index(self) -> int:
        return 0 if self.name == "t" else int(self.name[1:]) - 1


@dataclass(frozen=True)
class Call:
    fn: str  # one of FUNCTIONS or "neg"
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / ^
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Var, Call, BinOp]


# ------------------------------------------------------------------ parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_VAR = re.compile(r"^(?:[xuyw][1-9][0-9]*|t)$")


def _tokenize(text: str):
    pos, toks = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            off = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[off]!r}", off)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, val, off = self.take()
        if val != text:
            raise ExprSyntaxError(f"expected {text!r}, found {val or 'end of input'!r}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", off)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Call("neg", self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", off)
                self.take()
                arg = self.expr()
                if self.peek()[:2] == ("op", ","):
                    raise ExprSyntaxError(f"{val}() takes exactly one argument", self.peek()[2])
                self.expect(")")
                return Call(val, arg)
            if val in FUNCTIONS:
                raise ExprSyntaxError(f"function {val!r} needs an argument", off)
            if not _VAR.match(val):
                raise ExprSyntaxError(f"unknown identifier {val!r}", off)
            return Var(val)
        if (kind, val) == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", off)


def parse(text: str) -> Expr:
    return _Parser(text).parse()


# ----------------------------------------------------------------- printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Call) and e.fn == "neg":
        return 3
    if isinstance(e, Num) and e.value < 0:
        return 3
    return 5


def to_string(e: Expr) -> str:
    if isinstance(e, Num):
        s = format(e.value, ".17g")
        return f"(-{s[1:]})" if e.value < 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        if e.fn == "neg":
            inner = to_string(e.arg)
            return "-" + (f"({inner})" if _prec(e.arg) < 3 else inner)
        return f"{e.fn}({to_string(e.arg)})"
    p = _PREC[e.op]
    ls, rs = to_string(e.left), to_string(e.right)
    if e.op == "^":
        if _prec(e.left) <= 4:
            ls = f"({ls})"
        if _prec(e.right) < 3:
            rs = f"({rs})"
        return f"{ls}^{rs}"
    if _prec(e.left) < p:
        ls = f"({ls})"
    if _prec(e.right) <= p:
        rs = f"({rs})"
    return f"{ls} {e.op} {rs}"


def variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Call):
        return variables(e.arg)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    return set()


def functions_used(e: Expr) -> set[str]:
    if isinstance(e, Call):
        return {e.fn} | functions_used(e.arg)
    if isinstance(e, BinOp):
        return functions_used(e.left) | functions_used(e.right)
    return set()


# ---------------------------------------------------------- differentiation

ZERO, ONE = Num(0.0), Num(1.0)


def _is(e, v):
    return isinstance(e, Num) and e.value == v


def _add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Call) and a.fn == "neg":
        return a.arg
    return Call("neg", a)


def _mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a, b):
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    return BinOp("/", a, b)


def _pow(a, b):
    if _is(b, 1):
        return a
    if _is(b, 0):
        return ONE
    return BinOp("^", a, b)


def differentiate(e: Expr, var: str) -> Expr:
    """Exact symbolic derivative of ``e`` with respect to variable ``var``.

    ``abs`` is differentiated to ``sign`` with ``sign(0) = 0``.
    """
    d = lambda z: differentiate(z, var)  # noqa: E731
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Call):
        a, da = e.arg, d(e.arg)
        if _is(da, 0):
            return ZERO
        if e.fn == "neg":
            return _neg(da)
        if e.fn == "sin":
            return _mul(Call("cos", a), da)
        if e.fn == "cos":
            return _neg(_mul(Call("sin", a), da))
        if e.fn == "exp":
            return _mul(e, da)
        if e.fn == "log":
            return _div(da, a)
        if e.fn == "tanh":
            return _mul(_sub(ONE, _pow(e, Num(2.0))), da)
        if e.fn == "sqrt":
            return _div(da, _mul(Num(2.0), e))
        if e.fn == "abs":
            return _mul(Call("sign", a), da)
        if e.fn == "sign":
            return ZERO
        raise ExprError(f"cannot differentiate {e.fn}")
    a, b = e.left, e.right
    da, db = d(a), d(b)
    if e.op == "+":
        return _add(da, db)
    if e.op == "-":
        return _sub(da, db)
    if e.op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if e.op == "/":
        if _is(db, 0):
            return _div(da, b)
        return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, Num(2.0)))
    # power
    if var not in variables(b):
        if isinstance(b, Num):
            return _mul(_mul(b, _pow(a, Num(b.value - 1.0))), da)
        return _mul(_mul(b, _pow(a, _sub(b, ONE))), da)
    return _mul(e, _add(_mul(db, Call("log", a)), _div(_mul(b, da), a)))


# -------------------------------------------------------------- compilation

def _safe_div(a, b):
    if b == 0.0:
        raise ExprDomainError("division by zero")
    return a / b


def _safe_pow(a, b):
    if a < 0.0 and b != int(b):
        raise ExprDomainError(f"non-integer power {b} of negative base {a}")
    if a == 0.0 and b < 0.0:
        raise ExprDomainError("zero raised to a negative power")
    return a ** int(b) if b == int(b) and abs(b) < 64 else a ** b


def _safe_log(a):
    if a <= 0.0:
        raise ExprDomainError(f"log of non-positive value {a}")
    return math.log(a)


def _safe_sqrt(a):
    if a < 0.0:
        raise ExprDomainError(f"sqrt of negative value {a}")
    return math.sqrt(a)


def _sign(a):
    return float(a > 0.0) - float(a < 0.0)


_ENV = {
    "_sin": math.sin, "_cos": math.cos, "_exp": math.exp, "_log": _safe_log,
    "_tanh": math.tanh, "_sqrt": _safe_sqrt, "_abs": abs, "_sign": _sign,
    "_div": _safe_div, "_pow": _safe_pow,
}


def _py(e: Expr) -> str:
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return "t" if e.name == "t" else f"{e.kind}[{e.index}]"
    if isinstance(e, Call):
        if e.fn == "neg":
            return f"(-{_py(e.arg)})"
        return f"_{e.fn}({_py(e.arg)})"
    if e.op == "/":
        return f"_div({_py(e.left)}, {_py(e.right)})"
    if e.op == "^":
        return f"_pow({_py(e.left)}, {_py(e.right)})"
    return f"({_py(e.left)} {e.op} {_py(e.right)})"


def _compile(exprs, name="_f"):
    body = ", ".join(_py(e) for e in exprs)
    src = f"def {name}(x, u, y, w, t):\n    return ({body}{',' if exprs else ''})\n"
    ns = dict(_ENV)
    exec(compile(src, f"<expr {name}>", "exec"), ns)
    return ns[name]


def _plain(v):
    # plain floats are faster to index and make overflow raise instead of warn
    if v is None:
        return ()
    return v.tolist() if type(v) is np.ndarray else v


def _guarded(fn, exprs):
    used = set()
    for e in exprs:
        used |= {name[0] for name in variables(e)}
    ux, uu, uy, uw = (k in used for k in "xuyw")

    def call(x, u, y, w, t):
        try:
            vals = fn(_plain(x) if ux else (), _plain(u) if uu else (), _plain(y) if uy else (),
                      _plain(w) if uw else (), float(t))
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            if isinstance(exc, ExprDomainError):
                raise
            raise ExprDomainError(str(exc)) from exc
        for v in vals:
            if not math.isfinite(v):
                raise ExprDomainError("expression evaluated to a non-finite value")
        return np.array(vals, dtype=float)
    return call


_EMPTY = np.zeros(0)


class VectorFunction:
    """An ordered list of expressions over declared variable blocks.

    ``dims`` maps a variable kind (``x``, ``u``, ``y``, ``w``, ``t``) to its
    dimension; any variable outside the declared blocks is rejected.
    """

    def __init__(self, exprs, dims: dict[str, int]):
        parsed = tuple(parse(e) if isinstance(e, str) else e for e in exprs)
        self.dims = {k: int(v) for k, v in dims.items()}
        for e in parsed:
            for name in variables(e):
                kind = "t" if name == "t" else name[0]
                idx = Var(name).index
                if kind not in self.dims or (kind != "t" and idx >= self.dims[kind]):
                    raise ExprError(
                        f"variable {name!r} is not declared here (available: {self._declared()})")
        self.exprs = parsed
        self._fn = _guarded(_compile(parsed), parsed)
        self._jac = {}
        self._const = None
        if not any(variables(e) for e in parsed):
            self._const = self._fn(None, None, None, None, 0.0)

    def _declared(self):
        return ", ".join(f"{k}1..{k}{n}" for k, n in self.dims.items() if n > 0) or "none"

    @property
    def out_dim(self) -> int:
        return len(self.exprs)

    @property
    def texts(self) -> list[str]:
        return [to_string(e) for e in self.exprs]

    def functions_used(self) -> set[str]:
        out = set()
        for e in self.exprs:
            out |= functions_used(e)
        return out

    def __call__(self, x=None, u=None, y=None, w=None, t=0.0) -> np.ndarray:
        if self._const is not None:
            return self._const.copy()
        return self._fn(x, u, y, w, t)

    def _jac_fn(self, kind):
        if kind not in self._jac:
            names = [f"{kind}{j + 1}" for j in range(self.dims.get(kind, 0))]
            flat = [differentiate(e, v) for e in self.exprs for v in names]
            zero = all(isinstance(e, Num) and e.value == 0 for e in flat)
            self._jac[kind] = None if zero else _guarded(_compile(flat, "_jac"), flat)
        return self._jac[kind]

    def depends_on(self, kind: str) -> bool:
        """False when the partial derivatives in the ``kind`` block vanish
        identically."""
        return self._jac_fn(kind) is not None

    def jacobian(self, kind: str, x=None, u=None, y=None, w=None, t=0.0) -> np.ndarray:
        """Matrix of partial derivatives with respect to the ``kind`` block."""
        fn = self._jac_fn(kind)
        n = self.dims.get(kind, 0)
        if fn is None:
            return np.zeros((self.out_dim, n))
        return fn(x, u, y, w, t).reshape(self.out_dim, n)

    def __repr__(self):
        return f"VectorFunction({self.texts!r}, dims={self.dims})"


def evaluate(f: VectorFunction, x, u=None, y=None) -> np.ndarray:
    """Evaluate ``f`` with ``x`` bound to its first variable block."""
    first = "w" if "w" in f.dims else "x"
    return f(**{first: np.asarray(x, float)}, u=u, y=y)


# ------------------------------------------------- certificate refutation

def _box_bounds(box, n):
    if box is None:
        box = (-3.0, 3.0)
    lo, hi = box
    return np.broadcast_to(np.asarray(lo, float), (n,)), np.broadcast_to(np.asarray(hi, float), (n,))


def _sample_context(f: VectorFunction, box, rng):
    ctx = {}
    for kind in ("u", "y"):
        n = f.dims.get(kind, 0)
        lo, hi = _box_bounds(box, n)
        ctx[kind] = rng.uniform(lo, hi) if n else _EMPTY
    return ctx


def _pairs(n, box, n_pairs, rng):
    lo, hi = _box_bounds(box, n)
    for i in range(n_pairs):
        a = rng.uniform(lo, hi)
        if i % 2:
            b = a + rng.normal(size=n) * 1e-3 * np.maximum(hi - lo, 1e-12)
        else:
            b = rng.uniform(lo, hi)
        yield a, b


def estimate_lipschitz_margin(f_L: VectorFunction, F, box=None, n_pairs: int = 2000,
                              seed: int = 0) -> float:
    """Largest sampled ratio ``|f_L(z) - f_L(x)| / |F (z - x)|``.

    A value above one refutes the Lipschitz certificate ``F``; a value at or
    below one is evidence only.  ``inf`` means a pair with ``F(z-x) = 0`` but
    different function values was found.
    """
    F = np.atleast_2d(np.asarray(F, float))
    n = f_L.dims.get("x", 0)
    if F.shape[1] != n:
        raise ExprError(f"F must have {n} columns, has {F.shape[1]}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x, z in _pairs(n, box, n_pairs, rng):
        ctx = _sample_context(f_L, box, rng)
        df = np.linalg.norm(f_L(x=z, **ctx) - f_L(x=x, **ctx))
        dF = np.linalg.norm(F @ (z - x))
        scale = max(np.linalg.norm(z - x), 1e-300)
        if dF <= 1e-14 * scale:
            if df > 1e-12 * scale:
                return math.inf
            continue
        worst = max(worst, df / dF)
    return float(worst)


def estimate_monotonicity_margin(f_M: VectorFunction, Theta, mu: float, box=None,
                                 n_pairs: int = 2000, seed: int = 0) -> float:
    """Smallest sampled slack ``(z-x)^T Theta (f_M(z)-f_M(x)) - mu/2 |z-x|^2``.

    A negative value refutes the generalized monotonicity certificate.
    """
    Theta = np.atleast_2d(np.asarray(Theta, float))
    q = f_M.dims.get("w", 0)
    rng = np.random.default_rng(seed)
    worst = math.inf
    for x, z in _pairs(q, box, n_pairs, rng):
        ctx = _sample_context(f_M, box, rng)
        dz = z - x
        slack = dz @ Theta @ (f_M(w=z, **ctx) - f_M(w=x, **ctx)) - 0.5 * mu * (dz @ dz)
        worst = min(worst, float(slack))
    return worst
