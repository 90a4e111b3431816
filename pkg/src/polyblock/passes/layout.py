"""Change the memory layout of a block-local allocation."""

from __future__ import annotations

from dataclasses import replace

from ..ir import AffineExpr, Block, IndexDecl, Intrinsic, Refinement, Special, dense_strides, fresh_name, walk
from .common import rename_buffer, restride_chain


class ExternalBufferImmutable(ValueError):
    pass


def _special_writes(b: Block, name: str) -> bool:
    for s in b.statements:
        if isinstance(s, Special) and s.args and s.args[0] == name:
            return True
        if isinstance(s, Block) and s.has_ref(name) and not s.ref(name).is_alloc and _special_writes(s, name):
            return True
    return False


def _copy_block(src: Refinement, dst_name: str, strides) -> Block:
    names = [f"d{k}" for k in range(src.rank)]
    offs = tuple(AffineExpr.var(n) for n in names)
    ones = (1,) * src.rank
    return Block(
        tuple(IndexDecl(n, range=s) for n, s in zip(names, src.sizes)),
        (),
        (
            Refinement("in", src.buffer, offs, ones, src.strides, src.dtype),
            Refinement("out", dst_name, offs, ones, tuple(strides), src.dtype, "assign"),
        ),
        (Intrinsic("load", (), "$v", src.buffer), Intrinsic("store", ("$v",), None, dst_name)),
    )


def transpose_layout(b: Block, buffer: str, order) -> Block:
    """Lay out allocation ``buffer`` of ``b`` with dims ordered outermost-first as ``order``.

    Every refinement of the buffer below ``b`` takes the new strides; logical
    coordinates do not change.  When a special produces the buffer, the
    producer keeps the old layout and a copy block into a transposed twin
    ``<buffer>_t`` is inserted for the statements after it.
    """
    if not b.has_ref(buffer) or not b.ref(buffer).is_alloc:
        raise ExternalBufferImmutable(f"{buffer!r} is not allocated by this block")
    r = b.ref(buffer)
    order = tuple(order)
    if sorted(order) != list(range(r.rank)):
        raise ValueError(f"{order} is not a permutation of {r.rank} dims")
    if order == tuple(range(r.rank)):
        return b
    strides = dense_strides(r.sizes, order)
    producer = next((k for k, s in enumerate(b.statements)
                     if isinstance(s, Special) and s.args and s.args[0] == buffer
                     or isinstance(s, Block) and s.has_ref(buffer) and _special_writes(s, buffer)), None)
    if producer is None:
        refs = tuple(replace(x, strides=strides) if x.buffer == buffer else x for x in b.refinements)
        return restride_chain(replace(b, refinements=refs), buffer, strides)

    taken = {x.buffer for _, blk in walk(b) for x in blk.refinements}
    twin = fresh_name(f"{buffer}_t", taken)
    alloc = replace(r, buffer=twin, strides=strides, location=None, span=None)
    stmts = list(b.statements[: producer + 1])
    stmts.append(_copy_block(replace(r, offsets=tuple(AffineExpr() for _ in r.offsets)), twin, strides))
    for s in b.statements[producer + 1:]:
        if isinstance(s, Block) and s.has_ref(buffer) and not s.ref(buffer).is_alloc:
            s = rename_buffer(s, buffer, twin, strides)
        elif isinstance(s, Intrinsic) and s.buffer == buffer:
            s = replace(s, buffer=twin)
        elif isinstance(s, Special):
            s = replace(s, args=tuple(twin if a == buffer else a for a in s.args))
        stmts.append(s)
    return replace(b, refinements=b.refinements + (alloc,), statements=tuple(stmts))
