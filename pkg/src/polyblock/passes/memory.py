"""Scalarization (store-to-load forwarding, dead store removal) and allocation localization."""

from __future__ import annotations

from dataclasses import replace

from ..ir import Block, Intrinsic, Special, dense_strides
from .common import restride_chain, windows_disjoint


# --------------------------------------------------------------------------
# Scalarization
# --------------------------------------------------------------------------


def _touches(s, buffer: str) -> bool:
    if isinstance(s, Intrinsic):
        return s.buffer == buffer
    if isinstance(s, Special):
        return buffer in s.args
    return s.has_ref(buffer)


def _forward(b: Block) -> Block:
    """Replace loads that follow a store to the same refinement with the stored temp."""
    stmts = list(b.statements)
    changed = True
    while changed:
        changed = False
        for k, s in enumerate(stmts):
            if not (isinstance(s, Intrinsic) and s.name == "store"):
                continue
            r = b.ref(s.buffer)
            fresh = r.is_alloc and not any(_touches(t, r.buffer) for t in stmts[:k])
            if r.dtype != "i32" or not ((r.agg or "assign") == "assign" or (r.agg == "add" and fresh)):
                continue
            value = s.operands[0]
            rename: dict[str, str] = {}
            out = stmts[: k + 1]
            ok = True
            for t in stmts[k + 1:]:
                if isinstance(t, Intrinsic):
                    t = replace(t, operands=tuple(rename.get(o, o) for o in t.operands))
                    if t.name == "load" and t.buffer == s.buffer and ok:
                        rename[t.result] = value
                        changed = True
                        continue
                    if t.result == value or t.result in rename.values():
                        ok = False
                    if t.result in rename:
                        # the forwarded temp is redefined; later uses see the new value
                        del rename[t.result]
                    if t.name == "store" and t.buffer == s.buffer:
                        ok = False
                elif _touches(t, s.buffer):
                    ok = False
                out.append(t)
            if changed:
                stmts = out
                break
    return replace(b, statements=tuple(stmts))


def _reads(b: Block, buffer: str) -> bool:
    """Whether anything below ``b`` reads ``buffer`` through its refinement chain."""
    for s in b.statements:
        if isinstance(s, Intrinsic) and s.name == "load" and s.buffer == buffer:
            return True
        if isinstance(s, Special) and buffer in s.args[1:]:
            return True
        if isinstance(s, Special) and s.args and s.args[0] == buffer and b.ref(buffer).agg not in (None, "assign"):
            return True
        if isinstance(s, Block) and s.has_ref(buffer) and not s.ref(buffer).is_alloc and _reads(s, buffer):
            return True
    return False


def _drop_writes(b: Block, buffer: str) -> Block:
    stmts = []
    for s in b.statements:
        if isinstance(s, Intrinsic) and s.name == "store" and s.buffer == buffer:
            continue
        if isinstance(s, Block) and s.has_ref(buffer) and not s.ref(buffer).is_alloc:
            s = _drop_writes(s, buffer)
            s = replace(s, refinements=tuple(r for r in s.refinements if r.buffer != buffer))
        stmts.append(s)
    return replace(b, statements=tuple(stmts))


def _prune(b: Block, root: bool) -> Block:
    """Drop refinements nothing uses and allocations nothing reads."""
    stmts = tuple(_prune(s, False) if isinstance(s, Block) else s for s in b.statements)
    b = replace(b, statements=stmts)
    for r in b.refinements:
        if r.is_alloc and not any(isinstance(s, Special) and r.buffer in s.args for s in b.statements) \
                and not _reads(b, r.buffer):
            b = _drop_writes(b, r.buffer)
    used = set()
    for s in b.statements:
        if isinstance(s, Intrinsic) and s.buffer:
            used.add(s.buffer)
        elif isinstance(s, Special):
            used.update(s.args)
        elif isinstance(s, Block):
            used.update(r.buffer for r in s.refinements if not r.is_alloc)
    if root:
        keep = tuple(r for r in b.refinements if not r.is_alloc or r.buffer in used)
    else:
        keep = tuple(r for r in b.refinements if r.buffer in used)
    return replace(b, refinements=keep)


def _forward_all(b: Block) -> Block:
    stmts = tuple(_forward_all(s) if isinstance(s, Block) else s for s in b.statements)
    return _forward(replace(b, statements=stmts))


def scalarize(b: Block, root: bool = True) -> Block:
    """Forward stored values to later loads in the same statement list, then remove dead stores.

    A store qualifies when its refinement is ``i32`` (so the temp already holds
    the stored bits) and it either assigns or adds into a fresh allocation.
    Stores into allocations that nothing reads are removed, along with any
    refinement left unused.  With ``root`` set, the block's own non-allocating
    refinements are kept since they bind external buffers.
    """
    return _prune(_forward_all(b), root)


# --------------------------------------------------------------------------
# Localization
# --------------------------------------------------------------------------


def _users(b: Block, buffer: str) -> list[int]:
    return [k for k, s in enumerate(b.statements) if _touches(s, buffer)]


def localize(b: Block) -> Block:
    """Move allocations into the only child that uses them, when its iterations use disjoint windows.

    The moved allocation shrinks to that child's window with dense strides, and
    every refinement below it takes the new strides.  Repeats until nothing moves.
    """
    stmts = tuple(localize(s) if isinstance(s, Block) else s for s in b.statements)
    b = replace(b, statements=stmts)
    for r in b.refinements:
        if not r.is_alloc:
            continue
        users = _users(b, r.buffer)
        if len(users) != 1 or not isinstance(b.statements[users[0]], Block):
            continue
        child = b.statements[users[0]]
        cr = child.ref(r.buffer)
        if cr.is_alloc or child.constraints or child.aliases and any(
                n in {a.name for a in child.aliases} for o in cr.offsets for n in o.names):
            continue
        if not windows_disjoint(cr, child):
            continue
        strides = dense_strides(cr.sizes)
        alloc = replace(cr, direction="none", offsets=tuple(0 * o for o in cr.offsets), strides=strides,
                        agg=r.agg, location=None, span=None)
        refs = tuple(alloc if x.buffer == r.buffer else x for x in child.refinements)
        child = restride_chain(replace(child, refinements=refs), r.buffer, strides)
        stmts = list(b.statements)
        stmts[users[0]] = localize(child)
        b = replace(b, refinements=tuple(x for x in b.refinements if x.buffer != r.buffer),
                    statements=tuple(stmts))
        return localize(b)
    return b
