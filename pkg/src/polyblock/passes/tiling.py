"""Tiling rewrite, the cache-line cost model and the autotile search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from ..analysis import CacheModel, Footprint, count_cache_lines
from ..interp import point_arrays
from ..ir import (
    AffineExpr,
    Block,
    Constraint,
    IndexDecl,
    Refinement,
    Special,
    affine_substitute,
    block_names,
    fresh_name,
    walk,
)
from ..validate import Diagnostic


class InvalidTile(ValueError):
    pass


class NotTileable(ValueError):
    pass


@dataclass(frozen=True)
class TileShape:
    """Tile size per index; indexes left out keep their full range."""

    tiles: Mapping[str, int]
    interleaved: bool = False

    def size(self, index: IndexDecl) -> int:
        return self.tiles.get(index.name, index.range)

    def vector(self, b: Block) -> tuple[int, ...]:
        return tuple(self.size(i) for i in b.ranged)

    def __str__(self) -> str:
        return ",".join(f"{k}:{v}" for k, v in self.tiles.items())


def _split(b: Block, ts: TileShape):
    """Outer ranges and the substitution ``v -> outer/inner`` for every ranged index."""
    ranged = {i.name: i for i in b.ranged}
    for name, t in ts.tiles.items():
        if name not in ranged:
            raise InvalidTile(f"{name!r} is not a ranged index of the block")
        if not 1 <= t <= ranged[name].range:
            raise InvalidTile(f"tile {t} for {name!r} outside [1, {ranged[name].range}]")
    outer = {i.name: math.ceil(i.range / ts.size(i)) for i in b.ranged}
    return outer


def tile_rewrite(b: Block, ts: TileShape) -> Block:
    """Split ``b`` into an outer block over tiles and an inner block over one tile.

    Contiguous mode maps ``v = t*vo + vi``, interleaved mode ``v = vo + R_outer*vi``.
    The inner block sees ``vo`` through an alias when its constraints (or its
    children) need it.  Refinement windows on the outer block cover the whole
    per-tile footprint, halo included.  Uneven splits add an overflow constraint.
    """
    outer_range = _split(b, ts)
    split = [i for i in b.ranged if outer_range[i.name] > 1]
    if split:
        for _, sub in walk(b):
            if any(isinstance(s, Special) for s in sub.statements):
                raise NotTileable("block contains a special; specials are not split")
        tiled = {i.name for i in split}
        for r in b.refinements:
            if r.location is not None and set(r.location.bank.names) & tiled:
                raise NotTileable(f"location bank of {r.buffer!r} depends on a tiled index")

    taken = block_names(b) | {i.name for i in b.indexes}
    alias_name = {}
    for i in split:
        alias_name[i.name] = fresh_name(f"{i.name}o", taken)
        taken.add(alias_name[i.name])

    # per-index coefficients of the outer and inner parts
    outer_coef, inner_coef = {}, {}
    for i in b.ranged:
        t = ts.size(i)
        if ts.interleaved:
            outer_coef[i.name], inner_coef[i.name] = 1, outer_range[i.name]
        else:
            outer_coef[i.name], inner_coef[i.name] = t, 1

    # v in the inner block, in terms of the inner index and the alias
    inner_subst = {}
    for i in b.ranged:
        e = AffineExpr.var(i.name, inner_coef[i.name])
        if i.name in alias_name:
            e = AffineExpr.var(alias_name[i.name]) + e
        inner_subst[i.name] = e
    inner_box = {i.name: (0, ts.size(i) - 1) for i in b.ranged}

    constraints = [affine_substitute(c.expr, inner_subst) for c in b.constraints]
    for i in split:
        if i.range % ts.size(i):
            constraints.append(AffineExpr.const(i.range - 1) - inner_subst[i.name])

    outer_refs, inner_refs = [], []
    for r in b.refinements:
        if r.is_alloc:
            inner_refs.append(r)
            continue
        o_offs, i_offs, sizes = [], [], []
        for off, size in zip(r.offsets, r.sizes):
            own = {n: c for n, c in off.terms if n in inner_box}
            rest = AffineExpr(tuple((n, c) for n, c in off.terms if n not in inner_box), off.constant)
            inner_part = AffineExpr.from_dict({n: c * inner_coef[n] for n, c in own.items()})
            outer_part = AffineExpr.from_dict(
                {n: c * outer_coef[n] for n, c in own.items() if outer_range[n] > 1})
            lo, hi = inner_part.bounds(inner_box)
            o_offs.append(rest + outer_part + lo)
            i_offs.append(inner_part - lo)
            sizes.append(hi - lo + size)
        outer_refs.append(replace(r, offsets=tuple(o_offs), sizes=tuple(sizes), location=None, span=None))
        inner_refs.append(replace(r, offsets=tuple(i_offs), span=None))

    # children may reference the original indexes through their aliases
    stmts = []
    for s in b.statements:
        if isinstance(s, Block):
            idx = tuple(replace(i, alias=affine_substitute(i.alias, inner_subst)) if i.is_alias else i
                        for i in s.indexes)
            s = replace(s, indexes=idx)
        stmts.append(s)

    used = set()
    for e in constraints:
        used.update(e.names)
    for s in stmts:
        if isinstance(s, Block):
            for a in s.aliases:
                used.update(a.alias.names)
    inner_idx = [IndexDecl(i.name, range=ts.size(i)) for i in b.ranged]
    for i in split:
        a = alias_name[i.name]
        if a in used:
            inner_idx.append(IndexDecl(a, alias=AffineExpr.var(i.name, outer_coef[i.name])))
    inner_idx += [IndexDecl(a.name, alias=AffineExpr.var(a.name)) for a in b.aliases]

    inner = Block(
        tuple(inner_idx),
        tuple(Constraint(e) for e in constraints),
        tuple(inner_refs),
        tuple(stmts),
        b.tags,
    )
    outer_idx = tuple(IndexDecl(i.name, range=outer_range[i.name]) for i in b.ranged) + b.aliases
    return Block(outer_idx, (), tuple(outer_refs), (inner,), frozenset(), b.count)


# --------------------------------------------------------------------------
# Cost model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TileCostReport:
    tiles: tuple[tuple[str, int], ...]
    lines_total: int | None
    useful_ops: int
    cost: Fraction | None
    tile_elements: int
    excluded: str | None = None
    # every tile is charged for the full lines of each refinement, weights included
    weights_per_tile: bool = True

    def line(self) -> str:
        shape = ",".join(f"{k}:{v}" for k, v in self.tiles)
        cost = "-" if self.cost is None else f"{self.cost.numerator}/{self.cost.denominator}"
        fcost = "-" if self.cost is None else f"{float(self.cost):.6f}"
        lines = "-" if self.lines_total is None else self.lines_total
        return (f"tiles={shape} tile_elements={self.tile_elements} lines_total={lines} "
                f"useful_ops={self.useful_ops} cost={cost} cost_float={fcost} "
                f"excluded={self.excluded or 'no'}")


def outer_points(b: Block) -> np.ndarray:
    """All points of a constraint-free block, shape (n, rank)."""
    ranges = [i.range for i in b.ranged]
    if not ranges:
        return np.zeros((1, 0), np.int64)
    return np.indices(ranges, dtype=np.int64).reshape(len(ranges), -1).T


def _accessed_box(r: Refinement, points: Mapping[str, np.ndarray], env) -> tuple[list[int], list[int]]:
    """Per-dim element range that constraint-satisfying points of the block touch through ``r``."""
    lo, hi = [], []
    n = next(iter(points.values())).size if points else 1
    for off, size in zip(r.offsets, r.sizes):
        v = np.full(n, off.constant, np.int64)
        for name, c in off.terms:
            v += c * (points[name] if name in points else env[name])
        if v.size == 0:
            lo.append(0)
            hi.append(-1)
        else:
            lo.append(int(v.min()))
            hi.append(int(v.max()) + size - 1)
    return lo, hi


def _window_lines(r: Refinement, cm: CacheModel, base: int) -> int:
    dims = tuple((0, s - 1, 1) for s in r.sizes)
    return count_cache_lines(Footprint(r.buffer, dims, r.elements), r.strides, cm, base)


def tile_cost(b: Block, ts: TileShape, cm: CacheModel, mem_cap: int | None = None,
              untiled: Iterable[str] = (), env: Mapping[str, int] | None = None) -> TileCostReport:
    """Cache lines touched by all tiles, per useful (constraint-satisfying) operation.

    Every tile window is counted at its own base offset relative to a
    line-aligned parent window, so misaligned tiles pay for the extra line.
    Overflow and halo elements are counted; operations outside the
    constraints are not.  ``untiled`` buffers do not count toward the memory cap.
    """
    mem_cap = cm.capacity if mem_cap is None else mem_cap
    untiled = set(untiled)
    env = dict(env or {})
    outer = tile_rewrite(b, ts)
    refs = [r for r in outer.refinements if not r.is_alloc]
    pts = outer_points(outer)
    names = [i.name for i in outer.ranged]
    points = point_arrays(b, env)
    useful = int(next(iter(points.values())).size) if points else 1
    shape = tuple((i.name, ts.size(i)) for i in b.ranged)

    def origins(r):
        """Per-tile window origin, shape (tiles, rank)."""
        out = np.zeros((len(pts), r.rank), np.int64)
        for d, off in enumerate(r.offsets):
            out[:, d] = off.constant
            for n, c in off.terms:
                out[:, d] += c * (pts[:, names.index(n)] if n in names else env[n])
        return out

    # memory: the largest tile's in-bounds elements (halo yes, overflow no)
    per_tile = np.zeros(len(pts), np.int64)
    for r in refs:
        if r.buffer in untiled:
            continue
        lo = origins(r)
        hi = lo + np.array(r.sizes) - 1
        glo, ghi = _accessed_box(b.ref(r.buffer), points, env)
        n = np.ones(len(pts), np.int64)
        for d in range(r.rank):
            n *= np.clip(np.minimum(hi[:, d], ghi[d]) - np.maximum(lo[:, d], glo[d]) + 1, 0, None)
        per_tile += n
    tile_elements = int(per_tile.max()) if len(pts) else 0
    if tile_elements > mem_cap:
        return TileCostReport(shape, None, useful, None, tile_elements, "MemCap")
    lines = 0
    for r in refs:
        base = origins(r) @ np.array(r.strides, np.int64)
        residues, counts = np.unique(np.mod(base, cm.line), return_counts=True)
        for res, cnt in zip(residues, counts):
            lines += int(cnt) * _window_lines(r, cm, int(res))
    if useful == 0:
        return TileCostReport(shape, lines, 0, None, tile_elements, "NoWork")
    return TileCostReport(shape, lines, useful, Fraction(lines, useful), tile_elements)


# --------------------------------------------------------------------------
# Search
# --------------------------------------------------------------------------


def divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def powers_of_two(n: int) -> list[int]:
    out, p = [], 1
    while p <= n:
        out.append(p)
        p *= 2
    return out


def output_indexes(b: Block) -> list[str]:
    names = {n for r in b.refinements if r.direction in ("out", "inout") for o in r.offsets for n in o.names}
    return [i.name for i in b.ranged if i.name in names]


def search_indexes(b: Block, untiled: Iterable[str] = ()) -> list[str]:
    """Output indexes, minus any index that addresses an untiled buffer."""
    untiled = set(untiled)
    pinned = {n for r in b.refinements if r.buffer in untiled for o in r.offsets for n in o.names}
    return [n for n in output_indexes(b) if n not in pinned]


def search_space(b: Block, untiled: Iterable[str] = (), power_of_two: bool = False) -> list[TileShape]:
    names = search_indexes(b, untiled)
    choose = powers_of_two if power_of_two else divisors
    options = [choose(b.index(n).range) for n in names]
    return [TileShape(dict(zip(names, combo))) for combo in itertools.product(*options)]


@dataclass
class AutotileResult:
    block: Block
    tiles: TileShape | None
    report: TileCostReport | None
    candidates: list[TileCostReport] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)


def autotile_search(b: Block, cm: CacheModel, mem_cap: int | None = None, power_of_two: bool = False,
                    untiled: Iterable[str] = (), tiles: TileShape | None = None) -> AutotileResult:
    """Pick the cheapest tiling (ties: lexicographically smallest tile vector) and apply it.

    ``tiles`` pins the choice and skips the search.
    """
    untiled = tuple(untiled)
    if tiles is not None:
        rep = tile_cost(b, tiles, cm, mem_cap, untiled)
        return AutotileResult(tile_rewrite(b, tiles), tiles, rep, [rep])
    best = None
    reports = []
    for ts in search_space(b, untiled, power_of_two):
        rep = tile_cost(b, ts, cm, mem_cap, untiled)
        reports.append(rep)
        if rep.cost is None:
            continue
        key = (rep.cost, ts.vector(b))
        if best is None or key < best[0]:
            best = (key, ts, rep)
    if best is None:
        diag = Diagnostic("warning", "NoFeasibleTiling",
                          "every tiling candidate was excluded; block left untiled", b.span)
        return AutotileResult(b, None, None, reports, [diag])
    _, ts, rep = best
    return AutotileResult(tile_rewrite(b, ts), ts, rep, reports)


def autotile(b: Block, cm: CacheModel, mem_cap: int | None = None, power_of_two: bool = False,
             untiled: Iterable[str] = (), tiles: TileShape | None = None) -> Block:
    return autotile_search(b, cm, mem_cap, power_of_two, untiled, tiles).block
