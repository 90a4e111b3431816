"""Footprints, overlap tests, cache-line counting and statement dependencies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .ir import AffineExpr, Block, Intrinsic, Refinement, Special, affine_substitute
from .interp import enumerate_points


class DifferentBuffers(ValueError):
    pass


@dataclass(frozen=True)
class CacheModel:
    line: int = 8
    capacity: int = 512

    def __post_init__(self):
        if self.line < 1 or self.capacity < self.line:
            raise ValueError("cache model needs line >= 1 and capacity >= line")


@dataclass(frozen=True)
class Footprint:
    """Elements of ``buffer`` (in the parent window's coordinates) reachable by a refinement.

    ``dims`` holds inclusive ``(min, max, step)`` per dimension.  ``points`` is
    the enumerated element set when ``exact`` is set.
    """

    buffer: str
    dims: tuple[tuple[int, int, int], ...]
    count: int
    exact: bool = False
    points: frozenset | None = field(default=None, compare=False, repr=False)

    def span(self, d: int) -> tuple[int, int]:
        """Half-open element range of dimension ``d``."""
        lo, hi, _ = self.dims[d]
        return lo, hi + 1

    @property
    def box_volume(self) -> int:
        n = 1
        for lo, hi, _ in self.dims:
            n *= hi - lo + 1
        return n

    def coords(self) -> np.ndarray:
        """All element coordinates, shape (count, rank)."""
        if self.points is not None:
            return np.array(sorted(self.points), dtype=np.int64).reshape(-1, len(self.dims))
        axes = [np.arange(lo, hi + 1, st) for lo, hi, st in self.dims]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)


def index_box(block: Block) -> dict[str, tuple[int, int]]:
    return {i.name: (0, i.range - 1) for i in block.ranged}


def window_footprint(r: Refinement, env: Mapping[str, int] | None = None) -> Footprint:
    """The window of ``r`` at one point (constant offsets or offsets evaluated in ``env``)."""
    env = env or {}
    dims = []
    for o, s in zip(r.offsets, r.sizes):
        base = o.eval(env)
        dims.append((base, base + s - 1, 1))
    return Footprint(r.buffer, tuple(dims), r.elements, exact=True)


def footprint(r: Refinement, block: Block, env: Mapping[str, int] | None = None,
              exact: bool = False) -> Footprint:
    """Region of the parent window touched by ``r`` across all points of ``block``.

    Box mode takes offset bounds over the index ranges (constraints ignored).
    Alias indexes are resolved from ``env`` when given; otherwise they must not
    appear in offsets.  Exact mode enumerates points, constraints included.
    """
    env = dict(env or {})
    alias_vals = {a.name: AffineExpr.const(a.alias.eval(env)) for a in block.aliases
                  if all(n in env for n in a.alias.names)}
    offsets = [affine_substitute(o, alias_vals) for o in r.offsets]
    if not exact:
        box = index_box(block)
        dims = []
        count = 1
        for o, s in zip(offsets, r.sizes):
            lo, hi = o.bounds(box)
            g = 0
            for name, c in o.terms:
                if box[name][1] > 0:
                    g = math.gcd(g, c)
            # a single-element window moves in multiples of the coefficient gcd
            step = g if s == 1 and g > 1 else 1
            dims.append((lo, hi + s - 1, step))
            count *= len(range(lo, hi + s, step))
        return Footprint(r.buffer, tuple(dims), count, exact=False)
    pts = set()
    grid = np.stack([g.ravel() for g in np.meshgrid(*[np.arange(s) for s in r.sizes], indexing="ij")], 1)
    for p in enumerate_points(block, env):
        origin = np.array([o.eval(p) for o in r.offsets], dtype=np.int64)
        pts.update(map(tuple, (grid + origin).tolist()))
    if not pts:
        return Footprint(r.buffer, tuple((0, -1, 1) for _ in r.sizes), 0, exact=True, points=frozenset())
    arr = np.array(sorted(pts))
    dims = tuple((int(arr[:, d].min()), int(arr[:, d].max()), 1) for d in range(arr.shape[1]))
    return Footprint(r.buffer, dims, len(pts), exact=True, points=frozenset(pts))


def regions_overlap(a: Footprint, b: Footprint, exact: bool = False) -> bool:
    if a.buffer != b.buffer:
        raise DifferentBuffers(f"{a.buffer} vs {b.buffer}")
    if a.count == 0 or b.count == 0:
        return False
    for (alo, ahi, _), (blo, bhi, _) in zip(a.dims, b.dims):
        if ahi < blo or bhi < alo:
            return False
    if exact:
        pa = a.points if a.points is not None else frozenset(map(tuple, a.coords().tolist()))
        pb = b.points if b.points is not None else frozenset(map(tuple, b.coords().tolist()))
        return not pa.isdisjoint(pb)
    return True


def count_cache_lines(f: Footprint, strides, cm: CacheModel, base_offset: int = 0) -> int:
    """Distinct ``floor((base_offset + sum(stride * coord)) / L)`` over the footprint."""
    if f.count == 0:
        return 0
    coords = f.coords()
    flat = base_offset + coords @ np.asarray(strides, dtype=np.int64)
    return int(np.unique(np.floor_divide(flat, cm.line)).size)


# --------------------------------------------------------------------------
# Dependencies
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    buffer: str
    kind: str  # true | anti | output


@dataclass
class DependencyDag:
    nodes: list[int]
    edges: list[Edge]

    def preds(self, n: int) -> set[int]:
        return {e.src for e in self.edges if e.dst == n}

    def succs(self, n: int) -> set[int]:
        return {e.dst for e in self.edges if e.src == n}

    def is_topological(self, order) -> bool:
        pos = {n: i for i, n in enumerate(order)}
        return sorted(order) == sorted(self.nodes) and all(pos[e.src] < pos[e.dst] for e in self.edges)

    def to_dot(self, labels: Mapping[int, str] | None = None) -> str:
        lines = ["digraph deps {"]
        for n in self.nodes:
            label = (labels or {}).get(n, str(n))
            lines.append(f'  s{n} [label="{label}"];')
        for e in self.edges:
            lines.append(f'  s{e.src} -> s{e.dst} [label="{e.buffer}:{e.kind}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Access:
    """What one statement touches in its parent's coordinates.

    Each dim is ``(expr, lo, hi)``: elements ``expr + lo .. expr + hi`` where
    ``expr`` is affine in the parent block's indexes.
    """

    buffer: str
    dims: tuple[tuple[AffineExpr, int, int], ...]
    write: bool
    read: bool


def statement_accesses(parent: Block, stmt) -> list[Access]:
    zero = AffineExpr()
    out: list[Access] = []
    if isinstance(stmt, Intrinsic):
        if stmt.name in ("load", "store"):
            r = parent.ref(stmt.buffer)
            dims = tuple((zero, 0, 0) for _ in r.sizes)
            out.append(Access(r.buffer, dims, stmt.name == "store", stmt.name == "load"))
    elif isinstance(stmt, Special):
        for k, name in enumerate(stmt.args):
            r = parent.ref(name)
            dims = tuple((zero, 0, s - 1) for s in r.sizes)
            out.append(Access(name, dims, k == 0, k != 0))
    elif isinstance(stmt, Block):
        aliases = {a.name: a.alias for a in stmt.aliases}
        box = index_box(stmt)
        for r in stmt.refinements:
            if r.is_alloc:
                continue
            dims = []
            for o, s in zip(r.offsets, r.sizes):
                sub = affine_substitute(o, aliases)
                own = AffineExpr(tuple((n, c) for n, c in sub.terms if n in box))
                outer = sub - own
                lo, hi = own.bounds(box)
                dims.append((outer, lo, hi + s - 1))
            out.append(Access(r.buffer, tuple(dims), r.writes, r.reads))
    return out


def accesses_overlap(a: Access, b: Access, parent: Block) -> bool:
    if a.buffer != b.buffer:
        return False
    box = index_box(parent)
    for (ea, alo, ahi), (eb, blo, bhi) in zip(a.dims, b.dims):
        dmin, dmax = (ea - eb).bounds(box)
        # exists d in [dmin, dmax] with [alo + d, ahi + d] meeting [blo, bhi]
        if dmax < blo - ahi or dmin > bhi - alo:
            return False
    return True


def temp_defs_uses(stmt) -> tuple[set[str], set[str]]:
    if isinstance(stmt, Intrinsic):
        return ({stmt.result} if stmt.result else set()), set(stmt.operands)
    return set(), set()


def build_dependency_dag(b: Block) -> DependencyDag:
    stmts = b.statements
    acc = [statement_accesses(b, s) for s in stmts]
    temps = [temp_defs_uses(s) for s in stmts]
    edges: list[Edge] = []
    seen = set()

    def add(i, j, buf, kind):
        if (i, j, buf, kind) not in seen:
            seen.add((i, j, buf, kind))
            edges.append(Edge(i, j, buf, kind))

    for j in range(len(stmts)):
        for i in range(j):
            for x in acc[i]:
                for y in acc[j]:
                    if not accesses_overlap(x, y, b):
                        continue
                    if x.write and y.read:
                        add(i, j, x.buffer, "true")
                    if x.write and y.write:
                        add(i, j, x.buffer, "output")
                    if x.read and y.write:
                        add(i, j, x.buffer, "anti")
            di, ui = temps[i]
            dj, uj = temps[j]
            for t in sorted(di & uj):
                add(i, j, t, "true")
            for t in sorted(ui & dj):
                add(i, j, t, "anti")
            for t in sorted(di & dj):
                add(i, j, t, "output")
    return DependencyDag(list(range(len(stmts))), edges)
