"""Sparse multivariate polynomials over a named variable universe.

Coefficients are floats. A monomial is a tuple of ``(var_index, exponent)``
pairs sorted by index, with no zero exponents. Ordering is graded
lexicographic by variable index, fixed for the whole universe, so Gram
bases and printed forms are deterministic.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

ZERO_TOL = 1e-12

Monomial = tuple  # tuple[tuple[int, int], ...]
ONE: Monomial = ()


class UniverseMismatch(ValueError):
    pass


class PolyParseError(ValueError):
    def __init__(self, msg: str, text: str, pos: int, line: int | None = None):
        self.pos = pos
        self.line = line
        where = f"column {pos + 1}" if line is None else f"line {line}, column {pos + 1}"
        super().__init__(f"{msg} at {where}: {text!r}")


@dataclass(frozen=True)
class VarId:
    name: str
    index: int


class Universe:
    """An ordered set of variable names; indices are dense 0..n-1."""

    def __init__(self, names: Iterable[str]):
        self.names = tuple(names)
        self.index = {n: i for i, n in enumerate(self.names)}
        if len(self.index) != len(self.names):
            raise ValueError("duplicate variable names in universe")

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other: object) -> bool:
        return self is other or (isinstance(other, Universe) and self.names == other.names)

    def __hash__(self) -> int:
        return hash(self.names)

    def __repr__(self) -> str:
        return f"Universe({list(self.names)!r})"

    def var_id(self, name: str) -> VarId:
        try:
            return VarId(name, self.index[name])
        except KeyError:
            raise KeyError(f"unknown variable {name!r}") from None

    def var(self, name: str) -> "Polynomial":
        return Polynomial(self, {((self.index[name], 1),): 1.0})

    def vars(self, names: Iterable[str]) -> list["Polynomial"]:
        return [self.var(n) for n in names]

    def ids(self, names: Iterable[str]) -> list[VarId]:
        return [self.var_id(n) for n in names]


# -- monomial helpers -------------------------------------------------------

def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for i, e in b:
        d[i] = d.get(i, 0) + e
    return tuple(sorted(d.items()))


def mono_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


def mono_from_exponents(exps: Mapping[int, int]) -> Monomial:
    return tuple(sorted((i, e) for i, e in exps.items() if e))


def grlex_key(m: Monomial) -> tuple:
    """Ascending graded-lex key: degree first, then x_0 before x_1 at equal degree."""
    return (mono_degree(m), tuple((i, -e) for i, e in m))


def monomial_basis(vars: Sequence[Union[VarId, int]], max_degree: int, min_degree: int = 0) -> list[Monomial]:
    """All monomials in ``vars`` with total degree in [min_degree, max_degree]."""
    if not 0 <= min_degree <= max_degree:
        if min_degree > max_degree:
            return []
        raise ValueError("need 0 <= min_degree <= max_degree")
    idx = sorted({v.index if isinstance(v, VarId) else int(v) for v in vars})
    out = []
    for deg in range(min_degree, max_degree + 1):
        for combo in itertools.combinations_with_replacement(idx, deg):
            exps: dict[int, int] = {}
            for i in combo:
                exps[i] = exps.get(i, 0) + 1
            out.append(mono_from_exponents(exps))
    out.sort(key=grlex_key)
    return out


# -- polynomials ------------------------------------------------------------

Number = Union[int, float]


class Polynomial:
    __slots__ = ("universe", "terms")

    def __init__(self, universe: Universe, terms: Mapping[Monomial, float] | None = None, *, _raw: bool = False):
        self.universe = universe
        if _raw:
            self.terms = terms  # type: ignore[assignment]
        else:
            self.terms = {m: float(c) for m, c in (terms or {}).items() if abs(c) > ZERO_TOL}

    # construction
    @classmethod
    def constant(cls, universe: Universe, c: float) -> "Polynomial":
        return cls(universe, {ONE: c})

    @classmethod
    def zero(cls, universe: Universe) -> "Polynomial":
        return cls(universe, {}, _raw=True)

    @classmethod
    def from_monomials(cls, universe: Universe, monos: Sequence[Monomial], coeffs: Sequence[float]) -> "Polynomial":
        acc: dict[Monomial, float] = {}
        for m, c in zip(monos, coeffs):
            acc[m] = acc.get(m, 0.0) + float(c)
        return cls(universe, acc)

    def normalize(self) -> "Polynomial":
        return Polynomial(self.universe, self.terms)

    # structure
    def _check(self, other: "Polynomial") -> None:
        if other.universe is not self.universe and other.universe != self.universe:
            raise UniverseMismatch("polynomials live in different variable universes")

    def _lift(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.universe, float(other))
        return NotImplemented

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((mono_degree(m) for m in self.terms), default=0)

    def min_degree(self) -> int:
        return min((mono_degree(m) for m in self.terms), default=0)

    def variables(self) -> list[VarId]:
        idx = sorted({i for m in self.terms for i, _ in m})
        return [VarId(self.universe.names[i], i) for i in idx]

    def var_indices(self) -> set[int]:
        return {i for m in self.terms for i, _ in m}

    def coeff(self, m: Monomial) -> float:
        return self.terms.get(m, 0.0)

    def constant_term(self) -> float:
        return self.terms.get(ONE, 0.0)

    def monomials(self) -> list[Monomial]:
        return sorted(self.terms, key=grlex_key)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # arithmetic
    def __add__(self, other) -> "Polynomial":
        other = self._lift(other)
        if other is NotImplemented:
            return other
        acc = dict(self.terms)
        for m, c in other.terms.items():
            acc[m] = acc.get(m, 0.0) + c
        return Polynomial(self.universe, acc)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.universe, {m: -c for m, c in self.terms.items()}, _raw=True)

    def __sub__(self, other) -> "Polynomial":
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self.universe, {m: c * float(other) for m, c in self.terms.items()})
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check(other)
        acc: dict[Monomial, float] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = mono_mul(ma, mb)
                acc[m] = acc.get(m, 0.0) + ca * cb
        return Polynomial(self.universe, acc)

    __rmul__ = __mul__

    def __truediv__(self, other: Number) -> "Polynomial":
        return self * (1.0 / float(other))

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(self.universe, 1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.universe, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.universe == other.universe and self.terms == other.terms

    def __hash__(self):
        return hash((self.universe, frozenset(self.terms.items())))

    def allclose(self, other: "Polynomial", atol: float = 1e-9) -> bool:
        return (self - other).max_abs_coeff() <= atol

    # calculus
    def diff(self, var: Union[VarId, int, str]) -> "Polynomial":
        k = _var_index(self.universe, var)
        acc: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            d = dict(m)
            e = d.get(k, 0)
            if e == 0:
                continue
            if e == 1:
                del d[k]
            else:
                d[k] = e - 1
            mm = tuple(sorted(d.items()))
            acc[mm] = acc.get(mm, 0.0) + c * e
        return Polynomial(self.universe, acc)

    # evaluation
    def evaluate(self, point: Mapping) -> float:
        vals = _point_values(self.universe, point)
        total = 0.0
        for m, c in self.terms.items():
            t = c
            for i, e in m:
                if i not in vals:
                    raise KeyError(f"no value assigned to variable {self.universe.names[i]!r}")
                t *= vals[i] ** e
            total += t
        return total

    def evaluate_array(self, X: np.ndarray, columns: Sequence[Union[VarId, int, str]] | None = None) -> np.ndarray:
        """Evaluate at many points. ``X`` has shape (N, k); ``columns`` maps its
        columns to variables (default: the whole universe in index order)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if columns is None:
            col = {i: i for i in range(len(self.universe))}
        else:
            col = {_var_index(self.universe, v): j for j, v in enumerate(columns)}
        out = np.zeros(X.shape[0])
        for m, c in self.terms.items():
            t = np.full(X.shape[0], c)
            for i, e in m:
                if i not in col:
                    raise KeyError(f"no column for variable {self.universe.names[i]!r}")
                t = t * X[:, col[i]] ** e
            out += t
        return out

    def __call__(self, point: Mapping) -> float:
        return self.evaluate(point)

    # text form
    def to_text(self) -> str:
        if not self.terms:
            return "0"
        ordered = sorted(self.terms, key=lambda m: (-mono_degree(m), tuple((i, -e) for i, e in m)))
        parts = []
        for k, m in enumerate(ordered):
            c = self.terms[m]
            sign = "-" if c < 0 else "+"
            a = abs(c)
            factors = [n if e == 1 else f"{n}^{e}" for n, e in ((self.universe.names[i], e) for i, e in m)]
            if not factors:
                body = repr(a)
            elif a == 1.0:
                body = "*".join(factors)
            else:
                body = "*".join([repr(a)] + factors)
            if k == 0:
                parts.append(("-" if sign == "-" else "") + body)
            else:
                parts.append(f" {sign} {body}")
        return "".join(parts)

    def __str__(self) -> str:
        return self.to_text()

    def __repr__(self) -> str:
        return f"Polynomial({self.to_text()!r})"


def _var_index(universe: Universe, var) -> int:
    if isinstance(var, VarId):
        return var.index
    if isinstance(var, str):
        return universe.index[var]
    return int(var)


def _point_values(universe: Universe, point: Mapping) -> dict[int, float]:
    return {_var_index(universe, k): float(v) for k, v in point.items()}


def gradient(p: Polynomial, vars: Sequence[Union[VarId, int, str]]) -> list[Polynomial]:
    return [p.diff(v) for v in vars]


def lie_derivative(V: Polynomial, f: Sequence[Polynomial], vars: Sequence[Union[VarId, int, str]]) -> Polynomial:
    """Sum over k of dV/dx_k * f_k."""
    if len(f) != len(vars):
        raise ValueError(f"vector field has {len(f)} components for {len(vars)} variables")
    out = Polynomial.zero(V.universe)
    for fk, v in zip(f, vars):
        out = out + V.diff(v) * fk
    return out


def add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def evaluate(p: Polynomial, point: Mapping) -> float:
    return p.evaluate(point)


def sum_of_squares_norm(universe: Universe, vars: Sequence[Union[VarId, int, str]], power: int = 1) -> Polynomial:
    """(sum x_k^2)^power."""
    s = Polynomial.zero(universe)
    for v in vars:
        x = Polynomial(universe, {((_var_index(universe, v), 1),): 1.0})
        s = s + x * x
    return s ** power


# -- parsing ----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*^()]))"
)


def parse(text: str, universe: Universe, *, line: int | None = None) -> Polynomial:
    """Parse ``3.5*x1^2*x2 - 1.0`` style text (sums of products, ``^`` powers,
    parentheses allowed)."""
    tokens = []
    pos = 0
    stripped = text.rstrip()
    while pos < len(stripped):
        m = _TOKEN.match(stripped, pos)
        if not m or m.end() == pos:
            bad = len(stripped) - len(stripped[pos:].lstrip())
            raise PolyParseError("unexpected character", text, bad, line)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(stripped)))
    parser = _Parser(tokens, universe, text, line)
    p = parser.expr()
    if parser.peek()[0] != "end":
        raise PolyParseError("unexpected token", text, parser.peek()[2], line)
    return p


class _Parser:
    def __init__(self, tokens, universe, text, line):
        self.toks = tokens
        self.k = 0
        self.u = universe
        self.text = text
        self.line = line

    def peek(self):
        return self.toks[self.k]

    def take(self):
        t = self.toks[self.k]
        self.k += 1
        return t

    def fail(self, msg, tok):
        raise PolyParseError(msg, self.text, tok[2], self.line)

    def expr(self) -> Polynomial:
        sign = 1.0
        if self.peek()[1] in "+-" and self.peek()[0] == "op":
            sign = -1.0 if self.take()[1] == "-" else 1.0
        out = self.term() * sign
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            t = self.term()
            out = out + t if op == "+" else out - t
        return out

    def term(self) -> Polynomial:
        out = self.power()
        while self.peek()[0] == "op" and self.peek()[1] == "*":
            self.take()
            out = out * self.power()
        return out

    def power(self) -> Polynomial:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            tok = self.take()
            if tok[0] != "num" or not tok[1].isdigit():
                self.fail("exponent must be a non-negative integer", tok)
            base = base ** int(tok[1])
        return base

    def atom(self) -> Polynomial:
        tok = self.take()
        kind, val, _ = tok
        if kind == "num":
            return Polynomial.constant(self.u, float(val))
        if kind == "name":
            if val not in self.u.index:
                self.fail(f"unknown variable {val!r}", tok)
            return self.u.var(val)
        if kind == "op" and val == "(":
            inner = self.expr()
            if self.take()[1] != ")":
                self.fail("expected ')'", tok)
            return inner
        if kind == "op" and val == "-":
            return -self.atom()
        self.fail("unexpected token", tok)
        raise AssertionError  # unreachable


def binomial_count(n: int, d: int) -> int:
    """Number of monomials in n variables of degree at most d."""
    return math.comb(n + d, d)
