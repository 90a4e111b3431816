"""Static legality checks and the dynamic parallel-semantics checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .ir import (
    DTYPES,
    INTRINSICS,
    SPECIALS,
    AffineExpr,
    Block,
    Intrinsic,
    Program,
    Refinement,
    SourceSpan,
    Special,
    affine_substitute,
    extent,
)
from .interp import BufferStore, VectorExecutor


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # error | warning
    code: str
    message: str
    span: SourceSpan | None = None
    path: tuple[int, ...] = ()

    def render(self, file: str = "<input>") -> str:
        where = f"{file}:{self.span.line}:{self.span.column}" if self.span else f"{file}:?:?"
        return f"{self.severity} {self.code} {where} {self.message}"

    def __str__(self) -> str:
        return self.render()


def errors(diags: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == "error"]


# --------------------------------------------------------------------------
# Static validation
# --------------------------------------------------------------------------


@dataclass
class _Level:
    """One block on the path from the root, with its indexes renamed globally."""

    block: Block
    path: tuple[int, ...]
    subst: dict[str, AffineExpr]  # own index name -> expression over global variables
    box: dict[str, tuple[int, int]]  # global variable -> inclusive range
    constraints: list[AffineExpr]


class _Checker:
    def __init__(self, program: Program):
        self.program = program
        self.diags: list[Diagnostic] = []
        # window -> union of descendant access reach, in the parent window's coordinates
        self.reach: dict[tuple, list[tuple[int, int]]] = {}
        self.windows: list[tuple] = []
        self.blind: list[tuple] = []  # blocks whose containment could not be checked

    def err(self, code, msg, span=None, path=()):
        self.diags.append(Diagnostic("error", code, msg, span, path))

    def run(self) -> list[Diagnostic]:
        root = self.program.root
        for r in root.refinements:
            for o in r.offsets:
                for n in o.names:
                    self.err("UnboundIndex", f"root refinement {r.buffer!r} uses index {n!r}", r.span)
            if r.is_alloc or r.buffer not in self.program.buffers:
                continue
            dt, count = self.program.buffers[r.buffer]
            lo, hi = extent(r.sizes, r.strides)
            base = sum(o.constant * t for o, t in zip(r.offsets, r.strides))
            if base + lo < 0 or base + hi >= count:
                self.err("RefinementOutOfBounds",
                         f"root window of {r.buffer!r} exceeds its {count} elements", r.span)
            if dt != r.dtype:
                self.err("DtypeMismatch", f"{r.buffer!r} declared {r.dtype}, buffer is {dt}", r.span)
        self.block(root, (), None, [])
        self.check_overhang()
        return self.diags

    # ---- scope and shape -------------------------------------------------

    def block(self, b: Block, path, parent: Block | None, levels: list[_Level] | None):
        own = set()
        for i in b.indexes:
            if i.name in own:
                self.err("DuplicateIndex", f"index {i.name!r} declared twice", b.span, path)
            own.add(i.name)
            if not i.is_alias and (i.range is None or i.range < 1):
                self.err("BadRange", f"index {i.name!r} has range {i.range}", b.span, path)
        parent_names = set(parent.index_names) if parent is not None else set()
        for a in b.aliases:
            for n in a.alias.names:
                if n not in parent_names:
                    self.err("UnboundParentIndex" if parent is not None else "UnboundIndex",
                             f"alias {a.name!r} refers to {n!r}, which the parent does not declare",
                             b.span, path)

        def check_expr(e: AffineExpr, span, what):
            for n in e.names:
                if n in own:
                    continue
                # inside a nested block a stray name can only be a parent index
                # that was not passed in
                code = "UnboundParentIndex" if parent is not None else "UnboundIndex"
                hint = " (pass it in as an alias)" if code == "UnboundParentIndex" else ""
                self.err(code, f"{what} uses {n!r}, not declared in this block{hint}", span, path)

        for c in b.constraints:
            check_expr(c.expr, c.span or b.span, "constraint")
        seen_bufs = set()
        for r in b.refinements:
            if r.buffer in seen_bufs:
                self.err("DuplicateRefinement", f"buffer {r.buffer!r} refined twice", r.span, path)
            seen_bufs.add(r.buffer)
            self.refinement(r, b, parent, path, check_expr)

        # a scope error anywhere above disables containment checks below it
        level = self.make_level(b, path, levels) if levels is not None else None
        if levels is not None and level is None:
            self.blind.append(path)
        levels = levels + [level] if level is not None else None
        if levels is not None and parent is not None:
            for r in b.refinements:
                if r.is_alloc or not parent.has_ref(r.buffer) or parent.ref(r.buffer).rank != r.rank:
                    continue
                if any(n not in level.subst for o in r.offsets for n in o.names):
                    continue
                spans = []
                for o, size in zip(r.offsets, r.sizes):
                    lo, hi = affine_substitute(o, level.subst).bounds(level.box)
                    spans.append((lo, hi + size - 1))
                self.windows.append((path, r, spans, parent.ref(r.buffer).sizes))
        temps: set[str] = set()
        for i, s in enumerate(b.statements):
            if isinstance(s, Block):
                self.block(s, path + (i,), b, levels)
            elif isinstance(s, Intrinsic):
                self.intrinsic(s, b, temps, path, levels)
            elif isinstance(s, Special):
                self.special(s, b, path, levels)

    def refinement(self, r: Refinement, b: Block, parent, path, check_expr):
        if parent is not None:
            for o in r.offsets:
                check_expr(o, r.span, f"refinement {r.buffer!r}")
        if r.location is not None:
            check_expr(r.location.bank, r.span, f"location of {r.buffer!r}")
            if r.location.address < 0:
                self.err("BadLocation", f"negative address for {r.buffer!r}", r.span, path)
        if any(s < 1 for s in r.sizes):
            self.err("BadSize", f"refinement {r.buffer!r} has a size below 1", r.span, path)
        if r.dtype not in DTYPES:
            self.err("BadDtype", f"unknown dtype {r.dtype!r}", r.span, path)
        if r.direction in ("out", "inout") and r.agg is None:
            self.err("MissingAggregation", f"{r.direction} refinement {r.buffer!r} needs an aggregation",
                     r.span, path)
        if parent is None or r.is_alloc:
            return
        if not parent.has_ref(r.buffer):
            self.err("UnboundBuffer", f"buffer {r.buffer!r} is not passed in by the parent", r.span, path)
            return
        pr = parent.ref(r.buffer)
        if pr.rank != r.rank:
            self.err("RankMismatch", f"{r.buffer!r} has rank {r.rank}, parent has {pr.rank}", r.span, path)
            return
        if pr.strides != r.strides:
            self.err("StrideMismatch", f"{r.buffer!r} strides {r.strides} differ from parent {pr.strides}",
                     r.span, path)
        if pr.dtype != r.dtype:
            self.err("DtypeMismatch", f"{r.buffer!r} is {r.dtype}, parent is {pr.dtype}", r.span, path)
        if (r.writes and not pr.writes) or (r.reads and not pr.reads):
            self.err("DirectionMismatch",
                     f"{r.direction} refinement of {r.buffer!r} inside a {pr.direction} parent", r.span, path)

    def intrinsic(self, s: Intrinsic, b: Block, temps: set[str], path, levels):
        if s.name not in INTRINSICS:
            self.err("UnknownIntrinsic", f"unknown intrinsic {s.name!r}", s.span, path)
            return
        if s.name in ("load", "store"):
            if not b.has_ref(s.buffer or ""):
                self.err("UnboundBuffer", f"buffer {s.buffer!r} is not declared in this block", s.span, path)
                return
            r = b.ref(s.buffer)
            if s.name == "load" and not r.reads:
                self.err("DirectionMismatch", f"load from {r.direction} refinement {r.buffer!r}", s.span, path)
            if s.name == "store" and not r.writes:
                self.err("DirectionMismatch", f"store to {r.direction} refinement {r.buffer!r}", s.span, path)
            self.containment(levels, r.buffer, [0] * r.rank, s.span, path)
        arity = 0 if s.name in ("load", "constant") else INTRINSICS[s.name]
        if len(s.operands) != arity:
            self.err("BadArity", f"{s.name} takes {arity} operands, got {len(s.operands)}", s.span, path)
        for o in s.operands:
            if o not in temps:
                self.err("UnboundTemp", f"temp {o!r} used before it is defined", s.span, path)
        if s.result is not None:
            temps.add(s.result)

    def special(self, s: Special, b: Block, path, levels):
        if s.name not in SPECIALS:
            self.err("UnknownSpecial", f"unknown special {s.name!r}", s.span, path)
            return
        if len(s.args) != SPECIALS[s.name]:
            self.err("BadArity", f"{s.name} takes {SPECIALS[s.name]} operands", s.span, path)
            return
        for k, a in enumerate(s.args):
            if not b.has_ref(a):
                self.err("UnboundBuffer", f"buffer {a!r} is not declared in this block", s.span, path)
                continue
            r = b.ref(a)
            if (k == 0 and not r.writes) or (k > 0 and not r.reads):
                self.err("DirectionMismatch", f"{s.name} operand {a!r} has direction {r.direction}",
                         s.span, path)
            self.containment(levels, a, [n - 1 for n in r.sizes], s.span, path)

    # ---- containment -------------------------------------------------------

    def make_level(self, b: Block, path, levels: list[_Level]) -> _Level | None:
        parent_subst = levels[-1].subst if levels else {}
        subst, box = {}, {}
        depth = len(levels)
        for i in b.indexes:
            if i.is_alias:
                if any(n not in parent_subst for n in i.alias.names):
                    return None  # already reported as a scope error
                subst[i.name] = affine_substitute(i.alias, parent_subst)
            else:
                g = f"{depth}.{i.name}"
                subst[i.name] = AffineExpr.var(g)
                box[g] = (0, max(i.range or 1, 1) - 1)
        cons = []
        for c in b.constraints:
            if any(n not in subst for n in c.expr.names):
                return None
            cons.append(affine_substitute(c.expr, subst))
        if levels:
            box = {**levels[-1].box, **box}
            cons = levels[-1].constraints + cons
        return _Level(b, path, subst, box, cons)

    def containment(self, levels: list[_Level], buffer: str, extra: list[int], span, path):
        """Check that a leaf access lies inside every enclosing window of ``buffer``."""
        if not levels:
            return
        # the chain of refinements of ``buffer`` from its declaring level down
        chain: list[tuple[_Level, Refinement]] = []
        for lv in reversed(levels):
            if not lv.block.has_ref(buffer):
                return
            r = lv.block.ref(buffer)
            chain.append((lv, r))
            if r.is_alloc or lv.path == ():
                break
        chain.reverse()
        leaf = levels[-1]
        offsets = []
        for lv, r in chain:
            if any(n not in lv.subst for o in r.offsets for n in o.names):
                return
            offsets.append([affine_substitute(o, lv.subst) for o in r.offsets])
        rank = len(extra)
        for k in range(1, len(chain)):
            if any(len(o) != rank for o in offsets[k - 1:]):
                return
            key = (chain[k][0].path, buffer)
            spans = self.reach.setdefault(key, [(None, None)] * rank)
            for d in range(rank):
                coord = AffineExpr()
                for j in range(k, len(chain)):
                    coord = coord + offsets[j][d]
                lo, hi = coord.bounds(leaf.box)
                hi += extra[d]
                plo, phi = spans[d]
                spans[d] = (lo if plo is None else min(lo, plo), hi if phi is None else max(hi, phi))
        for k, (lv, r) in enumerate(chain):
            if len(r.sizes) != rank:
                return
            for d in range(rank):
                coord = AffineExpr()
                for j in range(k + 1, len(chain)):
                    if len(offsets[j]) != rank:
                        return
                    coord = coord + offsets[j][d]
                lo, hi = coord.bounds(leaf.box)
                if lo >= 0 and hi + extra[d] <= r.sizes[d] - 1:
                    continue  # the box already fits; constraints can only shrink it
                lo, hi = _bounds(coord, leaf.box, leaf.constraints)
                if lo is None:
                    return  # empty iteration space
                hi += extra[d]
                if lo < 0 or hi > r.sizes[d] - 1:
                    self.err("RefinementOutOfBounds",
                             f"access to {buffer!r} reaches [{lo}, {hi}] in dim {d} of the window "
                             f"declared at depth {len(lv.path)} (size {r.sizes[d]})", span, path)
                    return

    def check_overhang(self):
        """A window may stick out of its parent only where descendant accesses reach.

        Reach is taken over the full index boxes, ignoring constraints, so halo
        windows whose outer rows are masked off by constraints are fine while a
        window padded beyond anything its body could touch is not.
        """
        for path, r, spans, psizes in self.windows:
            if any(bp[:len(path)] == path for bp in self.blind):
                continue
            reach = self.reach.get((path, r.buffer))
            for d, ((lo, hi), ps) in enumerate(zip(spans, psizes)):
                rlo, rhi = reach[d] if reach else (None, None)
                if lo < 0 and (rlo is None or rlo > lo):
                    self.err("RefinementOutOfBounds",
                             f"{r.buffer!r} dim {d} starts at {lo}, before the parent window", r.span, path)
                elif hi > ps - 1 and (rhi is None or rhi < hi):
                    self.err("RefinementOutOfBounds",
                             f"{r.buffer!r} dim {d} reaches {hi}, past the parent window end {ps - 1}",
                             r.span, path)


def _bounds(e: AffineExpr, box, constraints) -> tuple[int | None, int | None]:
    """Integer-rounded bounds of ``e`` over the box intersected with the constraints.

    Interval arithmetic first; when that is not tight enough, the LP relaxation
    of the constrained region.  The LP region contains every integer point, so
    the result never under-approximates.
    """
    lo, hi = e.bounds(box)
    if not constraints:
        return lo, hi
    names = sorted(box)
    col = {n: k for k, n in enumerate(names)}
    c = np.zeros(len(names))
    for n, v in e.terms:
        c[col[n]] = v
    a_ub = np.zeros((len(constraints), len(names)))
    b_ub = np.zeros(len(constraints))
    for i, g in enumerate(constraints):
        for n, v in g.terms:
            a_ub[i, col[n]] = -v
        b_ub[i] = g.constant
    bounds = [box[n] for n in names]
    out = []
    for sign in (1, -1):
        res = linprog(sign * c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if res.status == 2:
            return None, None
        if res.status != 0:
            return lo, hi
        out.append(sign * res.fun + e.constant)
    return max(lo, math.ceil(out[0] - 1e-7)), min(hi, math.floor(out[1] + 1e-7))


def validate_static(p: Program) -> list[Diagnostic]:
    return _Checker(p).run()


# --------------------------------------------------------------------------
# Dynamic checking
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Conflict:
    code: str  # AssignConflict | ReadWriteConflict
    buffer: str
    element: int
    block: tuple[int, ...]  # statement path of the block whose iterations collide
    writers: int
    readers: int

    def __str__(self) -> str:
        return (f"{self.code} {self.buffer}[{self.element}] in block {list(self.block)}: "
                f"{self.writers} writing iterations, {self.readers} reading iterations")


@dataclass
class ConflictReport:
    conflicts: list[Conflict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.conflicts

    def by_code(self, code: str) -> list[Conflict]:
        return [c for c in self.conflicts if c.code == code]

    def __len__(self) -> int:
        return len(self.conflicts)


def _dense(*cols: np.ndarray) -> np.ndarray:
    """Dense ids ``0..G-1`` for the distinct tuples formed by ``cols``."""
    acc = np.zeros(cols[0].size, np.int64)
    for c in cols:
        _, ci = np.unique(c, return_inverse=True)
        acc = acc * (int(ci.max()) + 1 if ci.size else 1) + ci.reshape(-1)
        _, acc = np.unique(acc, return_inverse=True)
        acc = acc.reshape(-1)
    return acc


def check_parallel_semantics(p: Program, inputs: BufferStore | None = None) -> ConflictReport:
    """Run ``p`` with access tracing and report violations of the block rules.

    For every block instance, an element may not be written by one iteration
    and read by another, and under ``assign`` it may not be written by more
    than one iteration.  The read-modify-write implied by an aggregating store
    does not count as a read.
    """
    ex = VectorExecutor(trace=True)
    ex.run(p, inputs if inputs is not None else BufferStore.zeros(p))
    key_ids: dict[object, int] = {}
    key_names: list[str] = []
    paths: list[tuple[int, ...]] = []
    path_ids: dict[tuple[int, ...], int] = {}
    per_level: dict[int, list[np.ndarray]] = {}
    for a in ex.accesses:
        if a.key not in key_ids:
            key_ids[a.key] = len(key_names)
            key_names.append(a.key if isinstance(a.key, str) else a.key[1])
        n = a.addr.size
        for k in range(a.depth, len(a.lineage)):
            pth = a.paths[k]
            if pth not in path_ids:
                path_ids[pth] = len(paths)
                paths.append(pth)
            inst = a.lineage[k - 1] if k > 0 else np.full(n, -1, np.int64)
            assign = a.aggs[k - a.depth] == "assign"
            cols = np.stack([
                inst,
                np.full(n, key_ids[a.key], np.int64),
                a.addr,
                a.lineage[k],
                np.full(n, a.kind == "w", np.int64),
                np.full(n, assign, np.int64),
                np.full(n, path_ids[pth], np.int64),
            ], axis=1)
            per_level.setdefault(k, []).append(cols)

    report = ConflictReport()
    for k in sorted(per_level):
        rows = np.concatenate(per_level[k])
        elem = _dense(rows[:, 0], rows[:, 6], rows[:, 1], rows[:, 2])
        it = _dense(rows[:, 3])
        g = int(elem.max()) + 1
        n_it = int(it.max()) + 1

        def distinct(mask):
            pairs = np.unique(elem[mask] * n_it + it[mask])
            return np.bincount(pairs // n_it, minlength=g)

        w = rows[:, 4] == 1
        participants = distinct(np.ones(len(rows), bool))
        writers = distinct(w)
        readers = distinct(~w)
        assign_writers = distinct(w & (rows[:, 5] == 1))
        first = np.zeros(g, np.int64)
        first[elem[::-1]] = np.arange(len(rows))[::-1]
        rw = (writers > 0) & (readers > 0) & (participants > 1)
        for code, mask in (("AssignConflict", assign_writers > 1), ("ReadWriteConflict", rw)):
            for gi in np.flatnonzero(mask):
                row = rows[first[gi]]
                report.conflicts.append(Conflict(
                    code, key_names[int(row[1])], int(row[2]), paths[int(row[6])],
                    int(writers[gi]), int(readers[gi])))
    return report
