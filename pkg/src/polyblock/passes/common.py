"""Helpers shared by several passes."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..ir import AffineExpr, Block, Refinement, affine_substitute


def substitute_block(b: Block, bindings: dict[str, AffineExpr]) -> Block:
    """Apply ``bindings`` to the block's own expressions and its children's aliases.

    The block's index declarations are left alone; callers adjust them.
    """
    def sub(e: AffineExpr) -> AffineExpr:
        return affine_substitute(e, bindings)

    cons = tuple(replace(c, expr=sub(c.expr)) for c in b.constraints)
    refs = []
    for r in b.refinements:
        loc = r.location
        if loc is not None:
            loc = replace(loc, bank=sub(loc.bank))
        refs.append(replace(r, offsets=tuple(sub(o) for o in r.offsets), location=loc))
    stmts = []
    for s in b.statements:
        if isinstance(s, Block):
            idx = tuple(replace(i, alias=sub(i.alias)) if i.is_alias else i for i in s.indexes)
            s = replace(s, indexes=idx)
        stmts.append(s)
    return replace(b, constraints=cons, refinements=tuple(refs), statements=tuple(stmts))


def window_boxes(r: Refinement, b: Block, points: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive window corners of ``r`` at every box point of ``b`` (constraints ignored).

    Returns ``(lo, hi)`` of shape (points, rank).  Alias terms must already be
    substituted away.
    """
    names = [i.name for i in b.ranged]
    if points is None:
        ranges = [i.range for i in b.ranged]
        points = (np.indices(ranges, dtype=np.int64).reshape(len(ranges), -1).T
                  if ranges else np.zeros((1, 0), np.int64))
    lo = np.zeros((len(points), r.rank), np.int64)
    for d, off in enumerate(r.offsets):
        lo[:, d] = off.constant
        for n, c in off.terms:
            lo[:, d] += c * points[:, names.index(n)]
    return lo, lo + np.asarray(r.sizes, np.int64) - 1


def boxes_overlap_matrix(alo, ahi, blo, bhi) -> np.ndarray:
    """``m[p, q]`` is true when box ``a[p]`` meets box ``b[q]``."""
    m = np.ones((len(alo), len(blo)), bool)
    for d in range(alo.shape[1]):
        m &= (alo[:, None, d] <= bhi[None, :, d]) & (blo[None, :, d] <= ahi[:, None, d])
    return m


def windows_disjoint(r: Refinement, b: Block, limit: int = 4096) -> bool:
    """True when distinct box points of ``b`` see non-overlapping windows of ``r``."""
    if b.volume > limit:
        return False
    lo, hi = window_boxes(r, b)
    m = boxes_overlap_matrix(lo, hi, lo, hi)
    np.fill_diagonal(m, False)
    return not m.any()


def rename_buffer(b: Block, old: str, new: str, strides=None) -> Block:
    """Rename ``old`` to ``new`` in ``b``'s refinement chain and statements below it."""
    from ..ir import Intrinsic, Special

    refs = []
    for r in b.refinements:
        if r.buffer == old:
            r = replace(r, buffer=new, strides=tuple(strides) if strides is not None else r.strides)
        refs.append(r)
    stmts = []
    for s in b.statements:
        if isinstance(s, Block):
            if s.has_ref(old) and not s.ref(old).is_alloc:
                s = rename_buffer(s, old, new, strides)
        elif isinstance(s, Intrinsic) and s.buffer == old:
            s = replace(s, buffer=new)
        elif isinstance(s, Special):
            s = replace(s, args=tuple(new if a == old else a for a in s.args))
        stmts.append(s)
    return replace(b, refinements=tuple(refs), statements=tuple(stmts))


def restride_chain(b: Block, name: str, strides) -> Block:
    """Set the strides of every non-allocating refinement of ``name`` below ``b``."""
    stmts = []
    for s in b.statements:
        if isinstance(s, Block) and s.has_ref(name) and not s.ref(name).is_alloc:
            refs = tuple(replace(r, strides=tuple(strides)) if r.buffer == name else r for r in s.refinements)
            s = restride_chain(replace(s, refinements=refs), name, strides)
        stmts.append(s)
    return replace(b, statements=tuple(stmts))
