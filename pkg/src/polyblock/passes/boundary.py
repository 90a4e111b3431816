"""Split a constrained block into a constraint-free interior and boundary slabs."""

from __future__ import annotations

from dataclasses import replace

from ..ir import AffineExpr, Block, IndexDecl
from .common import substitute_block


class NoInteriorRegion(ValueError):
    pass


def interior_box(b: Block) -> dict[str, tuple[int, int]]:
    """Shrink the index box until every alias-free constraint holds on all of it.

    Each violated constraint shrinks the widest index it mentions, from the
    side that raises the constraint's minimum.
    """
    box = {i.name: [0, i.range - 1] for i in b.ranged}
    aliases = {a.name for a in b.aliases}
    cons = [c.expr for c in b.constraints if not set(c.expr.names) & aliases]
    while True:
        bad = None
        for e in cons:
            lo, _ = e.bounds({n: tuple(v) for n, v in box.items()})
            if lo < 0:
                bad = (e, -lo)
                break
        if bad is None:
            return {n: (v[0], v[1]) for n, v in box.items()}
        e, deficit = bad
        movable = [n for n, _ in e.terms]
        if not movable:
            raise NoInteriorRegion("a constraint fails for every point")
        name = max(movable, key=lambda n: (box[n][1] - box[n][0], -[i.name for i in b.ranged].index(n)))
        c = e.coeff(name)
        step = -(-deficit // abs(c))
        if c > 0:
            box[name][0] += step
        else:
            box[name][1] -= step
        if box[name][0] > box[name][1]:
            raise NoInteriorRegion(f"no interior along {name!r}")


def _restrict(b: Block, box: dict[str, tuple[int, int]], keep_constraints: bool, tag: str) -> Block:
    shift = {n: AffineExpr.var(n) + lo for n, (lo, _) in box.items() if lo}
    nb = substitute_block(b, shift)
    idx = tuple(IndexDecl(i.name, range=box[i.name][1] - box[i.name][0] + 1) if not i.is_alias else i
                for i in b.indexes)
    aliases = {a.name for a in b.aliases}
    cons = nb.constraints if keep_constraints else tuple(
        c for c in nb.constraints if set(c.expr.names) & aliases)
    return replace(nb, indexes=idx, constraints=cons, tags=b.tags | {tag})


def separate_boundary(b: Block) -> list[Block]:
    """Replace ``b`` by an interior block tagged ``interior`` plus slabs tagged ``boundary``.

    The interior drops the constraints it provably satisfies; slabs keep the
    original constraints.  Together they cover exactly the original points,
    each exactly once.  A rectilinear block comes back as ``[b]``.
    """
    if not b.constraints:
        return [b]
    inner = interior_box(b)
    full = {i.name: (0, i.range - 1) for i in b.ranged}
    pieces = [_restrict(b, inner, False, "interior")]
    # peel slabs dimension by dimension: dims before d are already clipped to the interior
    cur = dict(full)
    for i in b.ranged:
        lo, hi = inner[i.name]
        flo, fhi = full[i.name]
        for a, z in ((flo, lo - 1), (hi + 1, fhi)):
            if a <= z:
                slab = dict(cur)
                slab[i.name] = (a, z)
                pieces.append(_restrict(b, slab, True, "boundary"))
        cur[i.name] = (lo, hi)
    return pieces
