"""Potential expressions with exact derivatives, plus box domains and grids.

The expression grammar is deliberately small: binary ``+ - * / ^``, unary
minus, the functions ``exp, sin, cos, sqrt``, variables ``x1..xd`` and
numeric literals.  Gradients and Hessians are produced by second-order
forward-mode differentiation of the parsed AST, never by numerical
differencing, so Hessian eigenstructure downstream carries no step noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

__all__ = [
    "FieldError",
    "ParseError",
    "UnknownIdentifierError",
    "DimensionMismatchError",
    "EvaluationError",
    "ScalarField",
    "DomainSpec",
    "GridSpec",
    "GridFields",
    "parse_field",
    "evaluate_on_grid",
]


class FieldError(Exception):
    """Base class for errors raised by this module."""


class ParseError(FieldError):
    """Syntax error; ``position`` is the 0-based offset into the source."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(ParseError):
    pass


class DimensionMismatchError(ParseError):
    pass


class EvaluationError(FieldError):
    """Non-finite value produced while evaluating a field."""


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_OPS = set("+-*/^()")
_FUNCTIONS = ("exp", "sin", "cos", "sqrt")


def _tokenize(source):
    tokens = []  # (kind, text, position)
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            seen_dot = False
            while j < n and (source[j].isdigit() or source[j] == "."):
                if source[j] == ".":
                    if seen_dot:
                        raise ParseError("malformed number", i)
                    seen_dot = True
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            try:
                float(source[i:j])
            except ValueError:
                raise ParseError("malformed number", i) from None
            tokens.append(("number", source[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# AST nodes.  Each node evaluates value/gradient/Hessian in one forward pass
# over batched points of shape (n, d); Hessians are assembled from
# symmetric-by-construction rules.
# ---------------------------------------------------------------------------


def _outer(a, b):
    return np.einsum("ni,nj->nij", a, b)


def _sym_outer(a, b):
    o = _outer(a, b)
    return o + np.swapaxes(o, 1, 2)


@dataclass(frozen=True)
class Node:
    def eval(self, p):
        raise NotImplementedError

    def to_source(self):
        return self._src(0)

    def _src(self, parent_prec):
        raise NotImplementedError


@dataclass(frozen=True)
class Const(Node):
    value: float

    def eval(self, p):
        n, d = p.shape
        return (
            np.full(n, self.value),
            np.zeros((n, d)),
            np.zeros((n, d, d)),
        )

    def _src(self, parent_prec):
        if self.value < 0:
            return f"({self.value!r})"
        return repr(self.value)


@dataclass(frozen=True)
class Var(Node):
    axis: int  # 0-based

    def eval(self, p):
        n, d = p.shape
        g = np.zeros((n, d))
        g[:, self.axis] = 1.0
        return p[:, self.axis].copy(), g, np.zeros((n, d, d))

    def _src(self, parent_prec):
        return f"x{self.axis + 1}"


@dataclass(frozen=True)
class Neg(Node):
    child: Node

    def eval(self, p):
        v, g, H = self.child.eval(p)
        return -v, -g, -H

    def _src(self, parent_prec):
        s = f"-{self.child._src(25)}"
        return f"({s})" if parent_prec > 20 else s


_PREC = {"+": 10, "-": 10, "*": 15, "/": 15, "^": 30}


@dataclass(frozen=True)
class Bin(Node):
    op: str
    left: Node
    right: Node

    def eval(self, p):
        va, ga, Ha = self.left.eval(p)
        vb, gb, Hb = self.right.eval(p)
        op = self.op
        if op == "+":
            return va + vb, ga + gb, Ha + Hb
        if op == "-":
            return va - vb, ga - gb, Ha - Hb
        if op == "*":
            v = va * vb
            g = ga * vb[:, None] + gb * va[:, None]
            H = Ha * vb[:, None, None] + Hb * va[:, None, None] + _sym_outer(ga, gb)
            return v, g, H
        if op == "/":
            inv = 1.0 / vb
            v = va * inv
            g = ga * inv[:, None] - (va * inv * inv)[:, None] * gb
            H = (
                Ha * inv[:, None, None]
                - (inv * inv)[:, None, None] * _sym_outer(ga, gb) / 1.0
                - (va * inv * inv)[:, None, None] * Hb
                + (2.0 * va * inv**3)[:, None, None] * _outer(gb, gb)
            )
            return v, g, H
        if op == "^":
            if isinstance(self.right, Const):
                c = self.right.value
                v = np.power(va, c)
                vm1 = np.power(va, c - 1.0)
                vm2 = np.power(va, c - 2.0) if c != 1.0 else np.zeros_like(va)
                g = c * vm1[:, None] * ga
                H = c * vm1[:, None, None] * Ha + (c * (c - 1.0) * vm2)[
                    :, None, None
                ] * _outer(ga, ga)
                return v, g, H
            # general exponent: a^b = exp(b*ln a), requires a > 0
            la = np.log(va)
            v = np.exp(vb * la)
            # gradient of w = b*ln a
            gw = gb * la[:, None] + (vb / va)[:, None] * ga
            Hw = (
                Hb * la[:, None, None]
                + _sym_outer(gb, ga / va[:, None])
                + (vb / va)[:, None, None] * Ha
                - (vb / va**2)[:, None, None] * _outer(ga, ga)
            )
            g = v[:, None] * gw
            H = v[:, None, None] * (Hw + _outer(gw, gw))
            return v, g, H
        raise AssertionError(op)

    def _src(self, parent_prec):
        prec = _PREC[self.op]
        if self.op == "^":
            s = f"{self.left._src(prec + 1)}^{self.right._src(prec)}"
        else:
            s = f"{self.left._src(prec)}{self.op}{self.right._src(prec + 1)}"
        return f"({s})" if parent_prec > prec else s


@dataclass(frozen=True)
class Call(Node):
    fn: str
    arg: Node

    def eval(self, p):
        v, g, H = self.arg.eval(p)
        if self.fn == "exp":
            e = np.exp(v)
            return e, e[:, None] * g, e[:, None, None] * (H + _outer(g, g))
        if self.fn == "sin":
            s, c = np.sin(v), np.cos(v)
            return s, c[:, None] * g, c[:, None, None] * H - s[:, None, None] * _outer(g, g)
        if self.fn == "cos":
            s, c = np.sin(v), np.cos(v)
            return c, -s[:, None] * g, -s[:, None, None] * H - c[:, None, None] * _outer(g, g)
        if self.fn == "sqrt":
            r = np.sqrt(v)
            inv = 0.5 / r
            return (
                r,
                inv[:, None] * g,
                inv[:, None, None] * H - (0.25 / (r * v))[:, None, None] * _outer(g, g),
            )
        raise AssertionError(self.fn)

    def _src(self, parent_prec):
        return f"{self.fn}({self.arg._src(0)})"


# ---------------------------------------------------------------------------
# Parser (recursive descent, ^ right-associative and binding tighter than
# unary minus)
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens, dimension):
        self.tokens = tokens
        self.pos = 0
        self.dimension = dimension

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, text, position = self.peek()
        if kind != "op" or text != op:
            raise ParseError(f"expected {op!r}", position)
        return self.next()

    def parse(self):
        node = self.expr()
        kind, text, position = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", position)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.next()
                node = Bin(text, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.next()
                node = Bin(text, node, self.unary())
            else:
                return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.next()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, text, position = self.next()
        if kind == "number":
            return Const(float(text))
        if kind == "name":
            if text in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            if len(text) >= 2 and text[0] == "x" and text[1:].isdigit():
                axis = int(text[1:])
                if axis < 1:
                    raise UnknownIdentifierError(f"unknown identifier {text!r}", position)
                if axis > self.dimension:
                    raise DimensionMismatchError(
                        f"variable {text!r} not available in dimension {self.dimension}",
                        position,
                    )
                return Var(axis - 1)
            raise UnknownIdentifierError(f"unknown identifier {text!r}", position)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError(f"unexpected token {text!r}", position)


# ---------------------------------------------------------------------------
# Public field type
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarField:
    """Parsed potential with exact value/gradient/Hessian evaluators.

    Evaluators accept a single point of shape ``(d,)`` or a batch ``(n, d)``.
    The Hessian is symmetric by construction.
    """

    ast: Node
    dimension: int
    source: str = ""

    def _batch(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            if p.shape != (self.dimension,):
                raise FieldError(f"point has wrong dimension {p.shape}")
            return p[None, :], True
        if p.ndim == 2 and p.shape[1] == self.dimension:
            return p, False
        raise FieldError(f"points have wrong shape {p.shape}")

    def value(self, p):
        q, single = self._batch(p)
        with np.errstate(all="ignore"):  # non-finite data is reported downstream
            v, _, _ = self.ast.eval(q)
        return float(v[0]) if single else v

    def gradient(self, p):
        q, single = self._batch(p)
        with np.errstate(all="ignore"):
            _, g, _ = self.ast.eval(q)
        return g[0] if single else g

    def hessian(self, p):
        q, single = self._batch(p)
        with np.errstate(all="ignore"):
            _, _, H = self.ast.eval(q)
        return H[0] if single else H

    def all(self, p):
        """Value, gradient and Hessian in one pass."""
        q, single = self._batch(p)
        with np.errstate(all="ignore"):
            v, g, H = self.ast.eval(q)
        if single:
            return float(v[0]), g[0], H[0]
        return v, g, H

    def to_source(self):
        return self.ast.to_source()


def parse_field(source, dimension):
    """Parse ``source`` into a :class:`ScalarField` on ``x1..x<dimension>``."""
    if dimension not in (1, 2):
        raise FieldError(f"dimension must be 1 or 2, got {dimension}")
    tokens = _tokenize(source)
    ast = _Parser(tokens, dimension).parse()
    return ScalarField(ast=ast, dimension=dimension, source=source)


# ---------------------------------------------------------------------------
# Domain and grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned interval (d=1) or box (d=2) with outward face normals."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size not in (1, 2):
            raise FieldError("domain corners must both have length 1 or 2")
        if not np.all(lo < hi):
            raise FieldError("domain requires lower < upper componentwise")
        object.__setattr__(self, "lower", tuple(float(x) for x in lo))
        object.__setattr__(self, "upper", tuple(float(x) for x in hi))

    @property
    def dimension(self):
        return len(self.lower)

    @property
    def kind(self):
        return "interval" if self.dimension == 1 else "box"

    def faces(self):
        """All faces as (axis, side, coordinate, outward unit normal)."""
        out = []
        for axis in range(self.dimension):
            for side, coord in (("lower", self.lower[axis]), ("upper", self.upper[axis])):
                normal = np.zeros(self.dimension)
                normal[axis] = -1.0 if side == "lower" else 1.0
                out.append((axis, side, coord, normal))
        return out

    def contains(self, p, margin=0.0):
        p = np.asarray(p, dtype=float)
        lo = np.asarray(self.lower) + margin
        hi = np.asarray(self.upper) - margin
        return bool(np.all(p >= lo) and np.all(p <= hi))


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid; ``shape`` counts nodes per axis (boundary included)."""

    shape: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if any(n < 3 for n in shape):
            raise FieldError("grid needs at least 3 nodes per axis")
        object.__setattr__(self, "shape", shape)

    @property
    def dimension(self):
        return len(self.shape)

    def axes(self, domain):
        return [
            np.linspace(domain.lower[a], domain.upper[a], self.shape[a])
            for a in range(self.dimension)
        ]

    def mesh_widths(self, domain):
        return np.array(
            [
                (domain.upper[a] - domain.lower[a]) / (self.shape[a] - 1)
                for a in range(self.dimension)
            ]
        )

    def nodes(self, domain):
        """All node coordinates, shape ``grid.shape + (d,)``."""
        axs = self.axes(domain)
        if self.dimension == 1:
            return axs[0][:, None]
        X, Y = np.meshgrid(axs[0], axs[1], indexing="ij")
        return np.stack([X, Y], axis=-1)

    def boundary_mask(self, domain=None):
        mask = np.zeros(self.shape, dtype=bool)
        for a, n in enumerate(self.shape):
            sl = [slice(None)] * len(self.shape)
            sl[a] = 0
            mask[tuple(sl)] = True
            sl[a] = n - 1
            mask[tuple(sl)] = True
        return mask

    @property
    def n_total(self):
        return int(np.prod(self.shape))

    @property
    def n_interior(self):
        return int(np.prod([n - 2 for n in self.shape]))


@dataclass
class GridFields:
    """Node-indexed arrays of f, grad f, |grad f|^2 and the Laplacian trace."""

    f: np.ndarray
    grad: np.ndarray
    grad_sq: np.ndarray
    lap: np.ndarray
    nodes: np.ndarray = dc_field(repr=False, default=None)


def evaluate_on_grid(field, domain, grid):
    """Evaluate f, grad f, |grad f|^2 and tr Hess f at every grid node.

    The Laplacian column is the trace of the exact Hessian, not a discrete
    Laplacian of the sampled values.
    """
    if field.dimension != domain.dimension or grid.dimension != domain.dimension:
        raise FieldError("field/domain/grid dimensions disagree")
    pts = grid.nodes(domain)
    flat = pts.reshape(-1, domain.dimension)
    v, g, H = field.all(flat)
    if not np.all(np.isfinite(v)) or not np.all(np.isfinite(g)) or not np.all(np.isfinite(H)):
        bad = np.where(~np.isfinite(v.reshape(grid.shape)))
        if bad[0].size == 0:
            gbad = ~np.all(np.isfinite(g), axis=1)
            hbad = ~np.all(np.isfinite(H.reshape(H.shape[0], -1)), axis=1)
            bad = np.where((gbad | hbad).reshape(grid.shape))
        node = tuple(int(b[0]) for b in bad)
        raise EvaluationError(f"non-finite field data at node {node}")
    lap = np.trace(H, axis1=1, axis2=2)
    return GridFields(
        f=v.reshape(grid.shape),
        grad=g.reshape(grid.shape + (domain.dimension,)),
        grad_sq=(g**2).sum(axis=1).reshape(grid.shape),
        lap=lap.reshape(grid.shape),
        nodes=pts,
    )
