"""Statement reordering and first-fit placement of tile windows into memory units."""

from __future__ import annotations

from dataclasses import replace

from ..analysis import build_dependency_dag
from ..ir import Block, Location
from ..validate import Diagnostic


def greedy_order(b: Block) -> list[int]:
    """Topological order that prefers consumers of the most recently emitted statement.

    Ties go to declaration order.
    """
    dag = build_dependency_dag(b)
    preds = {n: dag.preds(n) for n in dag.nodes}
    emitted: dict[int, int] = {}
    order: list[int] = []
    while len(order) < len(dag.nodes):
        ready = [n for n in dag.nodes if n not in emitted and preds[n] <= emitted.keys()]
        best = min(ready, key=lambda n: (-max((emitted[p] for p in preds[n]), default=-1), n))
        emitted[best] = len(order)
        order.append(best)
    return order


def reorder(b: Block) -> Block:
    stmts = [reorder(s) if isinstance(s, Block) else s for s in b.statements]
    b = replace(b, statements=tuple(stmts))
    order = greedy_order(b)
    return replace(b, statements=tuple(b.statements[k] for k in order))


def place(b: Block, unit: str, capacity: int) -> tuple[Block, list[Diagnostic]]:
    """First-fit addresses for the windows of ``b``'s child blocks, over their live ranges.

    A buffer is live from the first to the last child that refines it.
    Windows already carrying a location are left alone.  If anything does not
    fit, nothing is placed and a warning is returned.
    """
    live: dict[str, list] = {}
    for k, s in enumerate(b.statements):
        if not isinstance(s, Block):
            continue
        for r in s.refinements:
            if r.is_alloc or r.location is not None:
                continue
            if r.buffer in live:
                live[r.buffer][1] = k
                live[r.buffer][2] = max(live[r.buffer][2], r.elements)
            else:
                live[r.buffer] = [k, k, r.elements]
    placed: dict[str, tuple[int, int, int, int]] = {}  # buffer -> (start, end, addr, size)
    for buf, (start, end, size) in sorted(live.items(), key=lambda kv: (kv[1][0], kv[0])):
        busy = sorted((a, a + n) for s0, e0, a, n in placed.values() if not (e0 < start or end < s0))
        addr = 0
        for a0, a1 in busy:
            if addr + size <= a0:
                break
            addr = max(addr, a1)
        if addr + size > capacity:
            msg = f"{buf!r} ({size} elements) does not fit in {unit} ({capacity} elements)"
            return b, [Diagnostic("warning", "PlacementFailed", msg, b.span)]
        placed[buf] = (start, end, addr, size)
    stmts = []
    for s in b.statements:
        if isinstance(s, Block):
            refs = tuple(replace(r, location=Location(unit, address=placed[r.buffer][2]))
                         if r.buffer in placed and r.location is None and not r.is_alloc else r
                         for r in s.refinements)
            s = replace(s, refinements=refs)
        stmts.append(s)
    return replace(b, statements=tuple(stmts)), []


def schedule(b: Block, hw=None, mem: str | None = None) -> tuple[Block, list[Diagnostic]]:
    """Reorder every statement list, then place ``b``'s child windows in a memory unit.

    ``mem`` names the unit; by default the smallest one in ``hw``.  Without a
    hardware config only the reordering happens.
    """
    b = reorder(b)
    if hw is None or not hw.memories:
        return b, []
    unit = hw.memory(mem) if mem else min(hw.memories, key=lambda m: (m.capacity, m.name))
    return place(b, unit.name, unit.capacity)
