"""Split a block across memory banks along one index."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..ir import AffineExpr, Block, Location
from .common import boxes_overlap_matrix, window_boxes
from .tiling import TileShape, tile_rewrite


class NotPartitionable(ValueError):
    pass


def partition(b: Block, index: str, n: int, unit: str) -> Block:
    """Tile ``index`` into ``n`` contiguous parts and place each part's windows in its own bank.

    Raises :class:`NotPartitionable` when two parts would write overlapping
    output windows (for example when ``index`` is a reduction).
    """
    if n < 1:
        raise ValueError("need at least one bank")
    ix = b.index(index)
    if ix.is_alias:
        raise NotPartitionable(f"{index!r} is an alias")

    def place(r, bank):
        if r.is_alloc:
            return r
        addr = r.location.address if r.location is not None else 0
        return replace(r, location=Location(unit, bank, addr))

    if n == 1:
        return replace(b, refinements=tuple(place(r, AffineExpr()) for r in b.refinements))
    outer = tile_rewrite(b, TileShape({index: math.ceil(ix.range / n)}))
    if outer.index(index).range > 1:
        k = [i.name for i in outer.ranged].index(index)
        for r in outer.refinements:
            if not r.writes or r.is_alloc:
                continue
            if any(a.name in o.names for a in outer.aliases for o in r.offsets):
                raise NotPartitionable(f"{r.buffer!r} window depends on a parent alias")
            lo, hi = window_boxes(r, outer)
            pts = np.indices([i.range for i in outer.ranged]).reshape(len(outer.ranged), -1).T
            bank = pts[:, k]
            m = boxes_overlap_matrix(lo, hi, lo, hi) & (bank[:, None] != bank[None, :])
            if m.any():
                raise NotPartitionable(f"output {r.buffer!r} overlaps across banks of {index!r}")
    return replace(outer, refinements=tuple(place(r, AffineExpr.var(index)) for r in outer.refinements))
