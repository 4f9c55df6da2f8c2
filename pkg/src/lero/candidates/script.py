"""Candidate script: the sandboxed language generated reward and observation
functions are written in.

Grammar (informal)::

    program   := function*
    function  := "fn" NAME "(" [NAME ("," NAME)*] ")" block
    block     := "{" statement* "}"
    statement := "let" NAME "=" expr ";"
               | NAME ("=" | "+=" | "-=" | "*=" | "/=") expr ";"
               | "if" expr block ("elif" expr block)* ["else" block]
               | "for" NAME "in" "range" "(" expr ["," expr] ")" block
               | "return" expr ";"
    expr      := or-chain of and / not / comparisons / + - / * / % / unary - / ** / postfix
    postfix   := primary ( "[" expr "]" | "[" expr ":" expr "]" )*
    primary   := NUMBER | "true" | "false" | NAME | NAME "(" args ")"
               | "[" [expr ("," expr)*] "]" | "(" expr ")"

Values are floats, booleans and 1-D float vectors. Arithmetic broadcasts a
scalar over a vector; vector/vector arithmetic needs equal lengths. Comments
start with ``#`` or ``//``. There are no strings, no while loops, no
recursion and no attribute access; the only callables are the math
namespace below, the host API handed to :class:`Program`, and the
program's own functions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

DEFAULT_BUDGET = 10_000

KEYWORDS = {
    "fn", "let", "if", "elif", "else", "for", "in", "range", "return",
    "and", "or", "not", "true", "false",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>(?:\#|//)[^\n]*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|==|!=|<=|>=|\+=|-=|\*=|/=|[-+*/%<>=(){}\[\],;:])
    """,
    re.VERBOSE,
)


class ScriptError(Exception):
    """Static rejection of a script: ``category`` is "syntax" or "unknown symbol"."""

    def __init__(self, category: str, message: str, line: int | None = None):
        loc = f" (line {line})" if line is not None else ""
        super().__init__(f"{category}: {message}{loc}")
        self.category = category
        self.line = line


class RuntimeFault(Exception):
    """A script failed while running; ``reason`` is a short stable tag."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    line: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line = 0, 1
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ScriptError("syntax", f"unexpected character {source[pos]!r}", line)
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
        elif kind == "name":
            tokens.append(Token("kw" if text in KEYWORDS else "name", text, line))
        elif kind in ("num", "op"):
            tokens.append(Token(kind, text, line))
        pos = m.end()
    tokens.append(Token("eof", "", line))
    return tokens


# ---------------------------------------------------------------------------
# Parser. Nodes are tuples: (tag, line, *fields).
# ---------------------------------------------------------------------------

_COMPARE = {"==", "!=", "<", "<=", ">", ">="}
_ASSIGN = {"=", "+=", "-=", "*=", "/="}


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def check(self, value: str) -> bool:
        t = self.tok
        return t.value == value and t.kind in ("op", "kw")

    def expect(self, value: str) -> Token:
        if not self.check(value):
            t = self.tok
            got = "end of input" if t.kind == "eof" else repr(t.value)
            raise ScriptError("syntax", f"expected {value!r}, got {got}", t.line)
        return self.advance()

    def expect_name(self) -> Token:
        t = self.tok
        if t.kind != "name":
            raise ScriptError("syntax", f"expected a name, got {t.value!r}", t.line)
        return self.advance()

    def program(self) -> list[tuple]:
        funcs = []
        while self.tok.kind != "eof":
            funcs.append(self.function())
        return funcs

    def function(self) -> tuple:
        line = self.expect("fn").line
        name = self.expect_name().value
        self.expect("(")
        params: list[str] = []
        if not self.check(")"):
            params.append(self.expect_name().value)
            while self.check(","):
                self.advance()
                params.append(self.expect_name().value)
        self.expect(")")
        return ("fn", line, name, params, self.block())

    def block(self) -> list[tuple]:
        self.expect("{")
        body = []
        while not self.check("}"):
            if self.tok.kind == "eof":
                raise ScriptError("syntax", "unbalanced braces", self.tok.line)
            body.append(self.statement())
        self.expect("}")
        return body

    def statement(self) -> tuple:
        t = self.tok
        if self.check("let"):
            self.advance()
            name = self.expect_name().value
            self.expect("=")
            expr = self.expr()
            self.expect(";")
            return ("let", t.line, name, expr)
        if self.check("if"):
            self.advance()
            branches = [(self.expr(), self.block())]
            orelse: list[tuple] = []
            while self.check("elif"):
                self.advance()
                branches.append((self.expr(), self.block()))
            if self.check("else"):
                self.advance()
                orelse = self.block()
            return ("if", t.line, branches, orelse)
        if self.check("for"):
            self.advance()
            var = self.expect_name().value
            self.expect("in")
            self.expect("range")
            self.expect("(")
            first = self.expr()
            if self.check(","):
                self.advance()
                start, stop = first, self.expr()
            else:
                start, stop = ("num", t.line, 0.0), first
            self.expect(")")
            return ("for", t.line, var, start, stop, self.block())
        if self.check("return"):
            self.advance()
            expr = self.expr()
            self.expect(";")
            return ("return", t.line, expr)
        if t.kind == "name" and self.toks[self.i + 1].value in _ASSIGN:
            name = self.advance().value
            op = self.advance().value
            expr = self.expr()
            self.expect(";")
            return ("assign", t.line, name, op, expr)
        raise ScriptError("syntax", f"unexpected {t.value or 'end of input'!r}", t.line)

    def expr(self) -> tuple:
        left = self.and_expr()
        while self.check("or"):
            line = self.advance().line
            left = ("or", line, left, self.and_expr())
        return left

    def and_expr(self) -> tuple:
        left = self.not_expr()
        while self.check("and"):
            line = self.advance().line
            left = ("and", line, left, self.not_expr())
        return left

    def not_expr(self) -> tuple:
        if self.check("not"):
            line = self.advance().line
            return ("not", line, self.not_expr())
        return self.comparison()

    def comparison(self) -> tuple:
        left = self.additive()
        if self.tok.kind == "op" and self.tok.value in _COMPARE:
            t = self.advance()
            left = ("cmp", t.line, t.value, left, self.additive())
            if self.tok.kind == "op" and self.tok.value in _COMPARE:
                raise ScriptError("syntax", "chained comparison", self.tok.line)
        return left

    def additive(self) -> tuple:
        left = self.term()
        while self.check("+") or self.check("-"):
            t = self.advance()
            left = ("bin", t.line, t.value, left, self.term())
        return left

    def term(self) -> tuple:
        left = self.unary()
        while self.check("*") or self.check("/") or self.check("%"):
            t = self.advance()
            left = ("bin", t.line, t.value, left, self.unary())
        return left

    def unary(self) -> tuple:
        if self.check("-") or self.check("+"):
            t = self.advance()
            operand = self.unary()
            return operand if t.value == "+" else ("neg", t.line, operand)
        return self.power()

    def power(self) -> tuple:
        base = self.postfix()
        if self.check("**"):
            line = self.advance().line
            return ("bin", line, "**", base, self.unary())
        return base

    def postfix(self) -> tuple:
        node = self.primary()
        while self.check("["):
            line = self.advance().line
            lo = self.expr()
            if self.check(":"):
                self.advance()
                node = ("slice", line, node, lo, self.expr())
            else:
                node = ("index", line, node, lo)
            self.expect("]")
        return node

    def primary(self) -> tuple:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return ("num", t.line, float(t.value))
        if self.check("true") or self.check("false"):
            self.advance()
            return ("bool", t.line, t.value == "true")
        if t.kind == "name":
            self.advance()
            if self.check("("):
                self.advance()
                args = []
                if not self.check(")"):
                    args.append(self.expr())
                    while self.check(","):
                        self.advance()
                        args.append(self.expr())
                self.expect(")")
                return ("call", t.line, t.value, args)
            return ("name", t.line, t.value)
        if self.check("["):
            self.advance()
            items = []
            if not self.check("]"):
                items.append(self.expr())
                while self.check(","):
                    self.advance()
                    items.append(self.expr())
            self.expect("]")
            return ("vec", t.line, items)
        if self.check("("):
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        raise ScriptError("syntax", f"unexpected {t.value or 'end of input'!r}", t.line)


def parse(source: str) -> list[tuple]:
    return _Parser(tokenize(source)).program()


# ---------------------------------------------------------------------------
# Runtime helpers
# ---------------------------------------------------------------------------


def _is_vec(x: Any) -> bool:
    return isinstance(x, np.ndarray)


def _scalar(x: Any, what: str) -> float:
    if isinstance(x, (bool, np.bool_)):
        raise RuntimeFault("type", f"{what}: expected a number, got a boolean")
    if _is_vec(x):
        raise RuntimeFault("type", f"{what}: expected a scalar, got a vector")
    return float(x)


def _vec(x: Any, what: str) -> np.ndarray:
    if not _is_vec(x):
        raise RuntimeFault("type", f"{what}: expected a vector")
    return x


def _index(x: Any, what: str) -> int:
    v = _scalar(x, what)
    if not math.isfinite(v) or v != int(v):
        raise RuntimeFault("type", f"{what}: index must be an integer, got {v}")
    return int(v)


def _truth(x: Any) -> bool:
    if _is_vec(x):
        raise RuntimeFault("type", "condition must be a scalar or boolean")
    return bool(x)


def _num_operand(x: Any) -> Any:
    if isinstance(x, (bool, np.bool_)):
        raise RuntimeFault("type", "arithmetic on a boolean")
    return x


def _arith(op: str, a: Any, b: Any) -> Any:
    a, b = _num_operand(a), _num_operand(b)
    if _is_vec(a) or _is_vec(b):
        if _is_vec(a) and _is_vec(b) and a.shape != b.shape:
            raise RuntimeFault("shape", f"vector lengths {len(a)} and {len(b)} differ")
        with np.errstate(all="ignore"):
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                return np.true_divide(a, b)
            if op == "%":
                return np.mod(a, b)
            return np.power(np.asarray(a, dtype=float), b)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    # IEEE semantics instead of Python exceptions
    with np.errstate(all="ignore"):
        if op == "/":
            return float(np.float64(a) / np.float64(b))
        if op == "%":
            return float(np.mod(np.float64(a), np.float64(b)))
        return float(np.power(np.float64(a), np.float64(b)))


def _compare(op: str, a: Any, b: Any) -> bool:
    a, b = _scalar(a, "comparison"), _scalar(b, "comparison")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "==":
        return a == b
    return a != b


def _as_parts(args: tuple) -> list[np.ndarray]:
    parts = []
    for a in args:
        parts.append(a if _is_vec(a) else np.array([_scalar(a, "concat")]))
    return parts


def _minmax(fn: Callable, name: str) -> Callable:
    def impl(*args: Any) -> float:
        if len(args) == 1:
            v = _vec(args[0], name)
            if len(v) == 0:
                raise RuntimeFault("shape", f"{name} of an empty vector")
            return float(fn(v))
        return float(fn([_scalar(a, name) for a in args]))

    return impl


def _abs(x: Any) -> Any:
    return np.abs(x) if _is_vec(x) else abs(_scalar(x, "abs"))


def _mean(v: Any) -> float:
    v = _vec(v, "mean")
    if len(v) == 0:
        raise RuntimeFault("shape", "mean of an empty vector")
    return float(np.mean(v))


def _argmin(v: Any) -> float:
    v = _vec(v, "argmin")
    if len(v) == 0:
        raise RuntimeFault("shape", "argmin of an empty vector")
    return float(np.argmin(v))


def _sqrt(x: Any) -> Any:
    with np.errstate(all="ignore"):
        return np.sqrt(x) if _is_vec(x) else float(np.sqrt(np.float64(_scalar(x, "sqrt"))))


def _clamp(x: Any, lo: Any, hi: Any) -> Any:
    lo, hi = _scalar(lo, "clamp"), _scalar(hi, "clamp")
    if _is_vec(x):
        return np.clip(x, lo, hi)
    return min(max(_scalar(x, "clamp"), lo), hi)


def _dot(a: Any, b: Any) -> float:
    a, b = _vec(a, "dot"), _vec(b, "dot")
    if a.shape != b.shape:
        raise RuntimeFault("shape", f"dot of lengths {len(a)} and {len(b)}")
    return float(np.dot(a, b))


def _zeros(n: Any) -> np.ndarray:
    k = _index(n, "zeros")
    if not 0 <= k <= 4096:
        raise RuntimeFault("shape", f"zeros({k}) out of range")
    return np.zeros(k)


MATH: dict[str, tuple[int | None, Callable]] = {
    "norm": (1, lambda v: math.sqrt(float(np.dot(_vec(v, "norm"), v)))),
    "dot": (2, _dot),
    "atan2": (2, lambda y, x: math.atan2(_scalar(y, "atan2"), _scalar(x, "atan2"))),
    "clamp": (3, _clamp),
    "min": (None, _minmax(np.min, "min")),
    "max": (None, _minmax(np.max, "max")),
    "abs": (1, _abs),
    "mean": (1, _mean),
    "argmin": (1, _argmin),
    "sqrt": (1, _sqrt),
    "sum": (1, lambda v: float(np.sum(_vec(v, "sum")))),
    "len": (1, lambda v: float(len(_vec(v, "len")))),
    "concat": (None, lambda *a: np.concatenate(_as_parts(a)) if a else np.zeros(0)),
    "zeros": (1, _zeros),
}


class _Frame:
    __slots__ = ("vars", "ctx")

    def __init__(self, ctx: "_Context"):
        self.vars: dict[str, Any] = {}
        self.ctx = ctx


class _Context:
    __slots__ = ("steps", "budget", "api")

    def __init__(self, budget: int, api: Mapping[str, Callable]):
        self.steps = 0
        self.budget = budget
        self.api = api

    def tick(self) -> None:
        self.steps += 1
        if self.steps > self.budget:
            raise RuntimeFault("budget", f"exceeded {self.budget} interpreter steps")


# ---------------------------------------------------------------------------
# Static checks and compilation to closures
# ---------------------------------------------------------------------------


class Program:
    """A parsed, checked and compiled candidate script.

    Immutable after construction; each :meth:`call` runs with its own frame
    and step counter so one program may be shared between threads.
    """

    def __init__(self, source: str, api_arity: Mapping[str, int | None]):
        self.source = source
        self.api_arity = dict(api_arity)
        tree = parse(source)
        self.arity: dict[str, int] = {}
        for fn in tree:
            _, line, name, params, _ = fn
            if name in self.arity:
                raise ScriptError("syntax", f"function {name!r} defined twice", line)
            if name in MATH or name in self.api_arity:
                raise ScriptError("syntax", f"{name!r} shadows a builtin", line)
            if len(set(params)) != len(params):
                raise ScriptError("syntax", f"repeated parameter in {name!r}", line)
            self.arity[name] = len(params)
        self._calls: dict[str, set[str]] = {}
        self._funcs: dict[str, Callable] = {}
        for fn in tree:
            _, line, name, params, body = fn
            self._current = name
            self._calls[name] = set()
            scope = [set(params)]
            self._check_block(body, scope)
            self._funcs[name] = self._compile_function(params, body)
        self._check_recursion()

    @property
    def functions(self) -> list[str]:
        return list(self.arity)

    # -- static checks -----------------------------------------------------

    def _check_block(self, body: list[tuple], scope: list[set[str]]) -> None:
        scope.append(set())
        for stmt in body:
            self._check_stmt(stmt, scope)
        scope.pop()

    def _declared(self, name: str, scope: list[set[str]]) -> bool:
        return any(name in s for s in scope)

    def _check_stmt(self, stmt: tuple, scope: list[set[str]]) -> None:
        tag, line = stmt[0], stmt[1]
        if tag == "let":
            self._check_expr(stmt[3], scope)
            scope[-1].add(stmt[2])
        elif tag == "assign":
            if not self._declared(stmt[2], scope):
                raise ScriptError("unknown symbol", f"assignment to undeclared {stmt[2]!r}", line)
            self._check_expr(stmt[4], scope)
        elif tag == "if":
            for cond, block in stmt[2]:
                self._check_expr(cond, scope)
                self._check_block(block, scope)
            self._check_block(stmt[3], scope)
        elif tag == "for":
            self._check_expr(stmt[3], scope)
            self._check_expr(stmt[4], scope)
            scope.append({stmt[2]})
            self._check_block(stmt[5], scope)
            scope.pop()
        elif tag == "return":
            self._check_expr(stmt[2], scope)

    def _check_expr(self, node: tuple, scope: list[set[str]]) -> None:
        tag, line = node[0], node[1]
        if tag == "name":
            if not self._declared(node[2], scope):
                raise ScriptError("unknown symbol", repr(node[2]), line)
        elif tag == "call":
            name, args = node[2], node[3]
            if name in MATH:
                arity = MATH[name][0]
            elif name in self.api_arity:
                arity = self.api_arity[name]
            elif name in self.arity:
                arity = self.arity[name]
                self._calls[self._current].add(name)
            else:
                raise ScriptError("unknown symbol", f"{name!r} is not callable here", line)
            if arity is not None and len(args) != arity:
                raise ScriptError(
                    "syntax", f"{name} takes {arity} argument(s), got {len(args)}", line
                )
            for a in args:
                self._check_expr(a, scope)
        elif tag in ("vec",):
            for a in node[2]:
                self._check_expr(a, scope)
        elif tag in ("neg", "not"):
            self._check_expr(node[2], scope)
        elif tag in ("and", "or", "index"):
            self._check_expr(node[2], scope)
            self._check_expr(node[3], scope)
        elif tag == "bin":
            self._check_expr(node[3], scope)
            self._check_expr(node[4], scope)
        elif tag == "cmp":
            self._check_expr(node[3], scope)
            self._check_expr(node[4], scope)
        elif tag == "slice":
            for a in node[2:]:
                self._check_expr(a, scope)

    def _check_recursion(self) -> None:
        state: dict[str, int] = {}

        def visit(name: str) -> None:
            state[name] = 1
            for callee in self._calls.get(name, ()):
                if state.get(callee) == 1:
                    raise ScriptError("syntax", f"recursion through {callee!r}")
                if callee not in state:
                    visit(callee)
            state[name] = 2

        for name in self.arity:
            if name not in state:
                visit(name)

    # -- compilation -------------------------------------------------------

    def _compile_function(self, params: list[str], body: list[tuple]) -> Callable:
        block = self._compile_block(body)

        def run(ctx: _Context, args: tuple) -> Any:
            frame = _Frame(ctx)
            frame.vars.update(zip(params, args))
            out = block(frame)
            if out is None:
                raise RuntimeFault("missing return", "function ended without return")
            return out[0]

        return run

    def _compile_block(self, body: list[tuple]) -> Callable:
        stmts = [self._compile_stmt(s) for s in body]

        def run(f: _Frame) -> tuple | None:
            for s in stmts:
                out = s(f)
                if out is not None:
                    return out
            return None

        return run

    def _compile_stmt(self, stmt: tuple) -> Callable:
        tag = stmt[0]
        if tag == "let":
            name, expr = stmt[2], self._compile_expr(stmt[3])

            def run_let(f: _Frame) -> None:
                f.ctx.tick()
                f.vars[name] = expr(f)

            return run_let
        if tag == "assign":
            name, op, expr = stmt[2], stmt[3], self._compile_expr(stmt[4])
            arith_op = op[0] if op != "=" else None

            def run_assign(f: _Frame) -> None:
                f.ctx.tick()
                value = expr(f)
                if arith_op is not None:
                    value = _arith(arith_op, f.vars[name], value)
                f.vars[name] = value

            return run_assign
        if tag == "if":
            branches = [(self._compile_expr(c), self._compile_block(b)) for c, b in stmt[2]]
            orelse = self._compile_block(stmt[3])

            def run_if(f: _Frame) -> tuple | None:
                f.ctx.tick()
                for cond, block in branches:
                    if _truth(cond(f)):
                        return block(f)
                return orelse(f)

            return run_if
        if tag == "for":
            var = stmt[2]
            start, stop = self._compile_expr(stmt[3]), self._compile_expr(stmt[4])
            block = self._compile_block(stmt[5])

            def run_for(f: _Frame) -> tuple | None:
                f.ctx.tick()
                lo, hi = _index(start(f), "range"), _index(stop(f), "range")
                for k in range(lo, hi):
                    f.ctx.tick()
                    f.vars[var] = float(k)
                    out = block(f)
                    if out is not None:
                        return out
                return None

            return run_for
        expr = self._compile_expr(stmt[2])

        def run_return(f: _Frame) -> tuple:
            f.ctx.tick()
            return (expr(f),)

        return run_return

    def _compile_expr(self, node: tuple) -> Callable[[_Frame], Any]:
        tag = node[0]
        if tag == "num" or tag == "bool":
            value = node[2]
            return lambda f: value
        if tag == "name":
            name = node[2]
            return lambda f: f.vars[name]
        if tag == "vec":
            items = [self._compile_expr(e) for e in node[2]]

            def run_vec(f: _Frame) -> np.ndarray:
                return np.array([_scalar(e(f), "vector element") for e in items], dtype=float)

            return run_vec
        if tag == "neg":
            inner = self._compile_expr(node[2])

            def run_neg(f: _Frame) -> Any:
                v = _num_operand(inner(f))
                return -v

            return run_neg
        if tag == "not":
            inner = self._compile_expr(node[2])
            return lambda f: not _truth(inner(f))
        if tag == "and":
            a, b = self._compile_expr(node[2]), self._compile_expr(node[3])
            return lambda f: _truth(a(f)) and _truth(b(f))
        if tag == "or":
            a, b = self._compile_expr(node[2]), self._compile_expr(node[3])
            return lambda f: _truth(a(f)) or _truth(b(f))
        if tag == "bin":
            op = node[2]
            a, b = self._compile_expr(node[3]), self._compile_expr(node[4])
            return lambda f: _arith(op, a(f), b(f))
        if tag == "cmp":
            op = node[2]
            a, b = self._compile_expr(node[3]), self._compile_expr(node[4])
            return lambda f: _compare(op, a(f), b(f))
        if tag == "index":
            base, idx = self._compile_expr(node[2]), self._compile_expr(node[3])

            def run_index(f: _Frame) -> float:
                v = _vec(base(f), "indexing")
                k = _index(idx(f), "index")
                if not 0 <= k < len(v):
                    raise RuntimeFault("index", f"index {k} outside vector of length {len(v)}")
                return float(v[k])

            return run_index
        if tag == "slice":
            base = self._compile_expr(node[2])
            lo_e, hi_e = self._compile_expr(node[3]), self._compile_expr(node[4])

            def run_slice(f: _Frame) -> np.ndarray:
                v = _vec(base(f), "slicing")
                lo, hi = _index(lo_e(f), "slice"), _index(hi_e(f), "slice")
                if not 0 <= lo <= hi <= len(v):
                    raise RuntimeFault("index", f"slice {lo}:{hi} outside length {len(v)}")
                return v[lo:hi].copy()

            return run_slice
        # call
        name = node[2]
        args = [self._compile_expr(a) for a in node[3]]
        if name in MATH:
            fn = MATH[name][1]
            return lambda f: fn(*[a(f) for a in args])
        if name in self.api_arity:

            def run_api(f: _Frame) -> Any:
                return f.ctx.api[name](*[a(f) for a in args])

            return run_api

        def run_user(f: _Frame) -> Any:
            f.ctx.tick()
            return self._funcs[name](f.ctx, tuple(a(f) for a in args))

        return run_user

    def call(
        self,
        name: str,
        args: tuple = (),
        api: Mapping[str, Callable] | None = None,
        budget: int = DEFAULT_BUDGET,
    ) -> Any:
        """Run function ``name``; raises :class:`RuntimeFault` on any failure."""
        if name not in self._funcs:
            raise RuntimeFault("missing entry point", name)
        ctx = _Context(budget, api or {})
        try:
            return self._funcs[name](ctx, args)
        except RuntimeFault:
            raise
        except RecursionError as exc:
            raise RuntimeFault("budget", "expression nesting too deep") from exc
        except (TypeError, ValueError, IndexError, OverflowError, ZeroDivisionError) as exc:
            raise RuntimeFault("runtime", str(exc)) from exc
