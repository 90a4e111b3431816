"""Core data model for nested polyhedral blocks.

Everything here is immutable: rewrites build new trees with
``dataclasses.replace`` rather than mutating nodes in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Union

DTYPES = {"i8": 8, "i16": 16, "i32": 32}
DIRECTIONS = ("in", "out", "inout", "none")
AGGREGATIONS = ("assign", "add", "max", "min", "mul")

INTRINSICS = {
    # name -> number of operands (None: variadic/special form)
    "load": 1,
    "store": 1,
    "add": 2,
    "sub": 2,
    "mul": 2,
    "neg": 1,
    "max": 2,
    "min": 2,
    "cmp_eq": 2,
    "cmp_ne": 2,
    "cmp_lt": 2,
    "cmp_le": 2,
    "cmp_gt": 2,
    "cmp_ge": 2,
    "select": 3,
    "constant": 1,
}
SPECIALS = {"gather": 3, "scatter": 3}

# Scalar temporaries are 32-bit; arithmetic wraps after every intrinsic.
TEMP_BITS = 32


class UnboundIndex(KeyError):
    """An affine expression referenced an index with no value."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unbound index {self.name!r}"


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    start: int
    end: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True, eq=False)
class AffineExpr:
    """Integer affine polynomial ``constant + sum(coeff * index)``.

    Terms keep insertion order for printing; equality and hashing ignore it.
    """

    terms: tuple[tuple[str, int], ...] = ()
    constant: int = 0

    def __post_init__(self):
        merged: dict[str, int] = {}
        for name, coeff in self.terms:
            merged[name] = merged.get(name, 0) + int(coeff)
        object.__setattr__(self, "terms", tuple((n, c) for n, c in merged.items() if c != 0))
        object.__setattr__(self, "constant", int(self.constant))

    @classmethod
    def const(cls, value: int) -> AffineExpr:
        return cls((), value)

    @classmethod
    def var(cls, name: str, coeff: int = 1) -> AffineExpr:
        return cls(((name, coeff),), 0)

    @classmethod
    def from_dict(cls, terms: Mapping[str, int], constant: int = 0) -> AffineExpr:
        return cls(tuple(terms.items()), constant)

    @property
    def coeffs(self) -> dict[str, int]:
        return dict(self.terms)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.terms)

    def coeff(self, name: str) -> int:
        return self.coeffs.get(name, 0)

    @property
    def is_constant(self) -> bool:
        return not self.terms

    def __eq__(self, other: object) -> bool:
        if isinstance(other, int):
            return self.is_constant and self.constant == other
        if not isinstance(other, AffineExpr):
            return NotImplemented
        return self.constant == other.constant and self.coeffs == other.coeffs

    def __hash__(self) -> int:
        return hash((frozenset(self.terms), self.constant))

    def __add__(self, other: Union[AffineExpr, int]) -> AffineExpr:
        if isinstance(other, int):
            return AffineExpr(self.terms, self.constant + other)
        return AffineExpr(self.terms + other.terms, self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self) -> AffineExpr:
        return AffineExpr(tuple((n, -c) for n, c in self.terms), -self.constant)

    def __sub__(self, other: Union[AffineExpr, int]) -> AffineExpr:
        return self + (-other)

    def __rsub__(self, other: int) -> AffineExpr:
        return (-self) + other

    def __mul__(self, k: int) -> AffineExpr:
        if not isinstance(k, int):
            return NotImplemented
        return AffineExpr(tuple((n, c * k) for n, c in self.terms), self.constant * k)

    __rmul__ = __mul__

    def eval(self, env: Mapping[str, int]) -> int:
        return affine_eval(self, env)

    def substitute(self, bindings: Mapping[str, AffineExpr]) -> AffineExpr:
        return affine_substitute(self, bindings)

    def rename(self, mapping: Mapping[str, str]) -> AffineExpr:
        return AffineExpr(tuple((mapping.get(n, n), c) for n, c in self.terms), self.constant)

    def bounds(self, ranges: Mapping[str, tuple[int, int]]) -> tuple[int, int]:
        """Min and max over a box given as inclusive ``(lo, hi)`` per index."""
        lo = hi = self.constant
        for name, c in self.terms:
            a, b = ranges[name]
            if c > 0:
                lo += c * a
                hi += c * b
            else:
                lo += c * b
                hi += c * a
        return lo, hi

    def __repr__(self) -> str:
        return f"AffineExpr({format_affine(self)!r})"

    def __str__(self) -> str:
        return format_affine(self)


def format_affine(e: AffineExpr, constant_first: bool = False) -> str:
    parts: list[tuple[int, str]] = []
    for name, c in e.terms:
        if c == 1:
            parts.append((1, name))
        elif c == -1:
            parts.append((-1, name))
        else:
            parts.append((1 if c > 0 else -1, f"{abs(c)}*{name}"))
    if e.constant or not parts:
        item = (1 if e.constant >= 0 else -1, str(abs(e.constant)))
        if constant_first:
            parts.insert(0, item)
        else:
            parts.append(item)
    out = ""
    for i, (sign, text) in enumerate(parts):
        if i == 0:
            out = text if sign > 0 else f"-{text}"
        else:
            out += f" + {text}" if sign > 0 else f" - {text}"
    return out


def affine_eval(expr: AffineExpr, env: Mapping[str, int]) -> int:
    total = expr.constant
    for name, c in expr.terms:
        try:
            total += c * env[name]
        except KeyError:
            raise UnboundIndex(name) from None
    return total


def affine_substitute(expr: AffineExpr, bindings: Mapping[str, AffineExpr]) -> AffineExpr:
    out = AffineExpr.const(expr.constant)
    for name, c in expr.terms:
        if name in bindings:
            out = out + bindings[name] * c
        else:
            out = out + AffineExpr.var(name, c)
    return out


@dataclass(frozen=True)
class IndexDecl:
    """A ranged index ``name:range`` or an alias ``name = expr`` over parent indexes."""

    name: str
    range: int | None = None
    alias: AffineExpr | None = None

    @property
    def is_alias(self) -> bool:
        return self.alias is not None


@dataclass(frozen=True)
class Constraint:
    """``expr >= 0``."""

    expr: AffineExpr
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Location:
    unit: str
    bank: AffineExpr = AffineExpr()
    address: int = 0


@dataclass(frozen=True)
class Refinement:
    """A window into a parent buffer (or, with direction ``none``, a fresh allocation)."""

    direction: str
    buffer: str
    offsets: tuple[AffineExpr, ...]
    sizes: tuple[int, ...]
    strides: tuple[int, ...]
    dtype: str = "i32"
    agg: str | None = None
    location: Location | None = None
    span: SourceSpan | None = field(default=None, compare=False)

    @property
    def rank(self) -> int:
        return len(self.sizes)

    @property
    def elements(self) -> int:
        n = 1
        for s in self.sizes:
            n *= s
        return n

    @property
    def reads(self) -> bool:
        return self.direction in ("in", "inout", "none")

    @property
    def writes(self) -> bool:
        return self.direction in ("out", "inout", "none")

    @property
    def is_alloc(self) -> bool:
        return self.direction == "none"


@dataclass(frozen=True)
class Intrinsic:
    """Scalar operation.

    ``load``: ``result = load(buffer)``; ``store``: ``buffer = store(operands[0])``;
    ``constant``: ``result = constant(value)``; everything else combines temps.
    """

    name: str
    operands: tuple[str, ...] = ()
    result: str | None = None
    buffer: str | None = None
    value: int | None = None
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Special:
    name: str
    args: tuple[str, ...]
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Block:
    indexes: tuple[IndexDecl, ...] = ()
    constraints: tuple[Constraint, ...] = ()
    refinements: tuple[Refinement, ...] = ()
    statements: tuple["Statement", ...] = ()
    tags: frozenset[str] = frozenset()
    count: int | None = None  # the ":N" header annotation; carries no semantics
    span: SourceSpan | None = field(default=None, compare=False)

    @property
    def ranged(self) -> tuple[IndexDecl, ...]:
        return tuple(i for i in self.indexes if not i.is_alias)

    @property
    def aliases(self) -> tuple[IndexDecl, ...]:
        return tuple(i for i in self.indexes if i.is_alias)

    @property
    def index_names(self) -> tuple[str, ...]:
        return tuple(i.name for i in self.indexes)

    def index(self, name: str) -> IndexDecl:
        for i in self.indexes:
            if i.name == name:
                return i
        raise KeyError(name)

    def ref(self, buffer: str) -> Refinement:
        for r in self.refinements:
            if r.buffer == buffer:
                return r
        raise KeyError(buffer)

    def has_ref(self, buffer: str) -> bool:
        return any(r.buffer == buffer for r in self.refinements)

    @property
    def volume(self) -> int:
        n = 1
        for i in self.ranged:
            n *= i.range
        return n

    @property
    def is_leaf(self) -> bool:
        return all(isinstance(s, Intrinsic) for s in self.statements)


Statement = Union[Block, Intrinsic, Special]


@dataclass(frozen=True)
class Program:
    """Top-level block plus the table of externally supplied buffers."""

    root: Block
    buffers: Mapping[str, tuple[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.buffers:
            object.__setattr__(self, "buffers", derive_buffer_table(self.root))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Program):
            return NotImplemented
        return self.root == other.root and dict(self.buffers) == dict(other.buffers)

    def __hash__(self) -> int:
        return hash(self.root)


def dense_strides(sizes: Iterable[int], order: Iterable[int] | None = None) -> tuple[int, ...]:
    """Row-major strides, or strides laying dims out outermost-first in ``order``."""
    sizes = tuple(sizes)
    order = tuple(range(len(sizes))) if order is None else tuple(order)
    strides = [0] * len(sizes)
    acc = 1
    for d in reversed(order):
        strides[d] = acc
        acc *= sizes[d]
    return tuple(strides)


def extent(sizes: Iterable[int], strides: Iterable[int]) -> tuple[int, int]:
    """Lowest and highest flat offset touched by a window at base 0."""
    lo = hi = 0
    for s, t in zip(sizes, strides):
        if t > 0:
            hi += (s - 1) * t
        else:
            lo += (s - 1) * t
    return lo, hi


def derive_buffer_table(root: Block) -> dict[str, tuple[str, int]]:
    table = {}
    for r in root.refinements:
        if r.is_alloc:
            continue
        base = sum(o.constant * t for o, t in zip(r.offsets, r.strides))
        _, hi = extent(r.sizes, r.strides)
        table[r.buffer] = (r.dtype, base + hi + 1)
    return table


def walk(block: Block, path: tuple[int, ...] = ()):
    """Yield ``(path, block)`` for the block and every nested block, preorder."""
    yield path, block
    for i, s in enumerate(block.statements):
        if isinstance(s, Block):
            yield from walk(s, path + (i,))


def get_block(root: Block, path: tuple[int, ...]) -> Block:
    b = root
    for i in path:
        b = b.statements[i]
    return b


def replace_block(root: Block, path: tuple[int, ...], new: Block | list[Block]) -> Block:
    """Return ``root`` with the block at ``path`` replaced (a list splices siblings)."""
    if not path:
        if isinstance(new, list):
            raise ValueError("cannot splice at the root")
        return new
    parent = get_block(root, path[:-1])
    stmts = list(parent.statements)
    i = path[-1]
    stmts[i : i + 1] = new if isinstance(new, list) else [new]
    return replace_block(root, path[:-1], replace(parent, statements=tuple(stmts)))


def strip_tags(p: Program | Block):
    if isinstance(p, Program):
        return Program(strip_tags(p.root), dict(p.buffers))
    stmts = tuple(strip_tags(s) if isinstance(s, Block) else s for s in p.statements)
    return replace(p, tags=frozenset(), statements=stmts)


def block_names(block: Block) -> set[str]:
    """All index names declared anywhere in the subtree."""
    return {i.name for _, b in walk(block) for i in b.indexes}


def fresh_name(base: str, taken: set[str]) -> str:
    if base not in taken:
        return base
    n = 1
    while f"{base}{n}" in taken:
        n += 1
    return f"{base}{n}"


def temps_used(stmt: Intrinsic) -> tuple[str, ...]:
    return stmt.operands


# --------------------------------------------------------------------------
# Structural equality
# --------------------------------------------------------------------------


def structural_equal(a: Block | Program, b: Block | Program, modulo_renaming: bool = False) -> bool:
    if isinstance(a, Program) or isinstance(b, Program):
        if not (isinstance(a, Program) and isinstance(b, Program)):
            return False
        if dict(a.buffers) != dict(b.buffers):
            return False
        a, b = a.root, b.root
    if not modulo_renaming:
        return a == b
    return _eq_renamed(a, b, {})


def _eq_renamed(a: Block, b: Block, outer: dict[str, str]) -> bool:
    if a.tags != b.tags or a.count != b.count or len(a.indexes) != len(b.indexes):
        return False
    env = dict(outer)
    for ia, ib in zip(a.indexes, b.indexes):
        if ia.range != ib.range or ia.is_alias != ib.is_alias:
            return False
        if ia.is_alias and ia.alias.rename(outer) != ib.alias:
            return False
    # Own indexes shadow parent names; two names may not collapse onto one.
    own = {ia.name: ib.name for ia, ib in zip(a.indexes, b.indexes)}
    if len(set(own.values())) != len(own):
        return False
    env.update(own)
    if len(a.constraints) != len(b.constraints):
        return False
    for ca, cb in zip(a.constraints, b.constraints):
        if ca.expr.rename(env) != cb.expr:
            return False
    if len(a.refinements) != len(b.refinements):
        return False
    for ra, rb in zip(a.refinements, b.refinements):
        la = ra.location
        if la is not None:
            la = replace(la, bank=la.bank.rename(env))
        ra = replace(ra, offsets=tuple(o.rename(env) for o in ra.offsets), location=la)
        if ra != rb:
            return False
    if len(a.statements) != len(b.statements):
        return False
    temps: dict[str, str] = {}
    for sa, sb in zip(a.statements, b.statements):
        if type(sa) is not type(sb):
            return False
        if isinstance(sa, Block):
            if not _eq_renamed(sa, sb, env):
                return False
        elif isinstance(sa, Special):
            if sa != sb:
                return False
        else:
            if sa.name != sb.name or sa.buffer != sb.buffer or sa.value != sb.value:
                return False
            if tuple(temps.get(o, o) for o in sa.operands) != sb.operands:
                return False
            if (sa.result is None) != (sb.result is None):
                return False
            if sa.result is not None:
                if sa.result in temps and temps[sa.result] != sb.result:
                    return False
                if sa.result not in temps and sb.result in temps.values():
                    return False
                temps[sa.result] = sb.result
    return True
