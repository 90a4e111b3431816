"""Fusion of two sibling blocks that share an outer iteration space."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..analysis import build_dependency_dag
from ..ir import AffineExpr, Block, IndexDecl, Refinement
from .common import boxes_overlap_matrix, substitute_block, window_boxes


@dataclass(frozen=True)
class Refusal:
    reason: str
    detail: str = ""

    def __bool__(self) -> bool:
        return False

    def __str__(self) -> str:
        return f"{self.reason}: {self.detail}" if self.detail else self.reason


def _split_alias(e: AffineExpr, own: set[str]) -> tuple[AffineExpr, AffineExpr]:
    mine = AffineExpr(tuple((n, c) for n, c in e.terms if n in own), e.constant)
    return mine, e - mine


def _conflicts(ra: Refinement, rb: Refinement) -> bool:
    if ra.writes and rb.reads or ra.reads and rb.writes:
        return True
    if ra.writes and rb.writes:
        return ra.agg == "assign" or ra.agg != rb.agg
    return False


def fuse(parent: Block, i: int, j: int) -> Block | Refusal:
    """Merge statements ``i < j`` of ``parent`` into one block over their shared outer indexes.

    Outer indexes (range > 1) are paired in declaration order and must have
    equal ranges.  The fused block runs ``i``'s body then ``j``'s body at each
    point; this is refused when a window of one side at some point overlaps a
    conflicting window of the other side at a different point.
    """
    if not 0 <= i < j < len(parent.statements):
        return Refusal("BadStatements", f"need 0 <= i < j < {len(parent.statements)}")
    a, b = parent.statements[i], parent.statements[j]
    if not (isinstance(a, Block) and isinstance(b, Block)):
        return Refusal("NotBlocks")
    if a.constraints or b.constraints:
        return Refusal("ConstrainedOuter", "outer blocks must be rectilinear")
    out_a = [x for x in a.ranged if x.range > 1]
    out_b = [x for x in b.ranged if x.range > 1]
    if [x.range for x in out_a] != [x.range for x in out_b]:
        return Refusal("IndexMismatch", f"{[x.range for x in out_a]} vs {[x.range for x in out_b]}")

    dag = build_dependency_dag(parent)
    for e in dag.edges:
        if i < e.src < j and e.dst == j:
            return Refusal("InterveningDependence", f"statement {e.src} touches {e.buffer}")

    names = [x.name for x in out_a]
    alias_a = {x.name: x.alias for x in a.aliases}
    for x in b.aliases:
        if x.name in names or (x.name in alias_a and alias_a[x.name] != x.alias):
            return Refusal("NameClash", f"alias {x.name!r}")
    a = substitute_block(a, {x.name: AffineExpr() for x in a.ranged if x.range == 1})
    bind = {x.name: AffineExpr() for x in b.ranged if x.range == 1}
    bind.update({x.name: AffineExpr.var(y.name) for x, y in zip(out_b, out_a)})
    b = substitute_block(b, bind)
    own = set(names)

    fused_idx = tuple(IndexDecl(x.name, range=x.range) for x in out_a)
    fused_idx += a.aliases + tuple(x for x in b.aliases if x.name not in alias_a)
    shell = Block(fused_idx)

    allocs_a = {r.buffer for r in a.refinements if r.is_alloc}
    allocs_b = {r.buffer for r in b.refinements if r.is_alloc}
    refs_a = {r.buffer: r for r in a.refinements if not r.is_alloc}
    refs_b = {r.buffer: r for r in b.refinements if not r.is_alloc}
    if allocs_a & (allocs_b | set(refs_b)) or allocs_b & set(refs_a):
        return Refusal("NameClash", "an allocation shares its name with the other block's buffer")

    merged: dict[str, Refinement] = {}
    delta: dict[tuple[str, str], tuple[int, ...]] = {}
    for buf in list(refs_a) + [x for x in refs_b if x not in refs_a]:
        ra, rb = refs_a.get(buf), refs_b.get(buf)
        if ra is None or rb is None:
            r = ra or rb
            merged[buf] = r
            delta[("a" if ra else "b", buf)] = (0,) * r.rank
            continue
        if (ra.rank, ra.strides, ra.dtype) != (rb.rank, rb.strides, rb.dtype):
            return Refusal("Misaligned", f"{buf}: windows differ in rank, strides or dtype")
        offs, sizes, da, db = [], [], [], []
        for oa, ob, sa, sb in zip(ra.offsets, rb.offsets, ra.sizes, rb.sizes):
            diff = oa - ob
            if not diff.is_constant:
                return Refusal("Misaligned", f"{buf}: offsets {oa} and {ob} move differently")
            lo = oa if diff.constant <= 0 else ob
            offs.append(lo)
            sizes.append(max(diff.constant + sa, sb) if diff.constant >= 0 else max(sa, sb - diff.constant))
            da.append((oa - lo).constant)
            db.append((ob - lo).constant)
        if _conflicts(ra, rb):
            mine_a = [_split_alias(o, own) for o in ra.offsets]
            mine_b = [_split_alias(o, own) for o in rb.offsets]
            ra0 = replace(ra, offsets=tuple(m for m, _ in mine_a))
            rb0 = replace(rb, offsets=tuple(m for m, _ in mine_b))
            alo, ahi = window_boxes(ra0, shell)
            blo, bhi = window_boxes(rb0, shell)
            m = boxes_overlap_matrix(alo, ahi, blo, bhi)
            np.fill_diagonal(m, False)
            if m.any():
                return Refusal("FootprintNotCovered",
                               f"{buf}: a window at one point overlaps the other block's window at another")
        reads, writes = ra.reads or rb.reads, ra.writes or rb.writes
        direction = "inout" if reads and writes else ("out" if writes else "in")
        aggs = {r.agg for r in (ra, rb) if r.writes}
        if len(aggs) > 1:
            return Refusal("AggregationMismatch", f"{buf}: {sorted(aggs)}")
        agg = aggs.pop() if aggs else None
        loc = ra.location if ra.location == rb.location else None
        merged[buf] = replace(ra, direction=direction, offsets=tuple(offs), sizes=tuple(sizes), agg=agg,
                              location=loc, span=None)
        delta[("a", buf)] = tuple(da)
        delta[("b", buf)] = tuple(db)

    body, extra_allocs = [], []
    for side, blk in (("a", a), ("b", b)):
        shifts = {buf: d for (s, buf), d in delta.items() if s == side}
        if all(isinstance(s, Block) for s in blk.statements):
            extra_allocs += [r for r in blk.refinements if r.is_alloc]
            for child in blk.statements:
                refs = []
                for r in child.refinements:
                    if r.buffer in shifts and not r.is_alloc and any(shifts[r.buffer]):
                        r = replace(r, offsets=tuple(o + d for o, d in zip(r.offsets, shifts[r.buffer])))
                    refs.append(r)
                body.append(replace(child, refinements=tuple(refs)))
        else:
            refs = []
            for r in blk.refinements:
                if r.is_alloc:
                    refs.append(r)
                else:
                    refs.append(replace(r, offsets=tuple(AffineExpr.const(d) for d in shifts[r.buffer]),
                                        location=None, span=None))
            body.append(Block((), (), tuple(refs), blk.statements, blk.tags))

    fused = Block(fused_idx, (), tuple(merged.values()) + tuple(extra_allocs), tuple(body),
                  a.tags | b.tags, a.count)
    stmts = list(parent.statements)
    stmts[i] = fused
    del stmts[j]
    return replace(parent, statements=tuple(stmts))
