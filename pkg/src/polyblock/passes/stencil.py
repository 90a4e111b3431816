"""Reshape blocks to the exact iteration shape of a specialized compute unit."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..ir import Block
from .tiling import TileShape, output_indexes, tile_rewrite


@dataclass(frozen=True)
class StencilSpec:
    """Required inner shape: sizes for output indexes, then for reduction indexes."""

    name: str
    out_sizes: tuple[int, ...]
    reduce_sizes: tuple[int, ...] = ()
    dtype: str = "i32"
    tag: str = "tensorize"


def _roles(b: Block) -> tuple[list[str], list[str]]:
    outs = set(output_indexes(b))
    live = [i for i in b.ranged if i.range > 1]
    return [i.name for i in live if i.name in outs], [i.name for i in live if i.name not in outs]


def stencil_tiles(b: Block, spec: StencilSpec) -> TileShape | None:
    """The tiling that makes ``b``'s inner block match ``spec``, or None."""
    if any(r.dtype != spec.dtype for r in b.refinements):
        return None
    outs, reds = _roles(b)
    if len(outs) != len(spec.out_sizes) or len(reds) != len(spec.reduce_sizes):
        return None
    tiles = {}
    for name, size in zip(outs + reds, spec.out_sizes + spec.reduce_sizes):
        r = b.index(name).range
        if size > r or r % size:
            return None
        tiles[name] = size
    return TileShape(tiles)


def stencil_match(b: Block, specs: list[StencilSpec]) -> Block:
    """Tile ``b`` for the first spec it can realize and tag the resulting inner block."""
    for spec in specs:
        ts = stencil_tiles(b, spec)
        if ts is None:
            continue
        if all(ts.size(i) == i.range for i in b.ranged):
            return replace(b, tags=b.tags | {spec.tag})
        outer = tile_rewrite(b, ts)
        inner = outer.statements[0]
        return replace(outer, statements=(replace(inner, tags=inner.tags | {spec.tag}),))
    return b
