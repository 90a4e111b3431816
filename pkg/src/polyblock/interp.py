"""Reference interpreter.

Two executors share one semantics:

* ``serial`` walks iteration points one at a time in lexicographic order (or a
  permutation of it) and runs each statement list to completion.  It is the
  literal reading of the block semantics and supports access tracing.
* ``vector`` evaluates each statement for all iteration points of a block at
  once with numpy.  For legal programs (no element written by one iteration and
  read by another) the two agree bit for bit; tests check that they do.

Scalar temporaries are 32-bit and wrap after every intrinsic.  Stores wrap the
incoming value to the destination dtype, combine it with the current element
using the refinement's aggregation, and wrap the result.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .ir import (
    DTYPES,
    SPECIALS,
    TEMP_BITS,
    Block,
    Intrinsic,
    Program,
    Refinement,
    Special,
    affine_eval,
    extent,
)

NP_DTYPES = {"i8": np.int8, "i16": np.int16, "i32": np.int32}
_NAMES_BY_NP = {np.dtype(v): k for k, v in NP_DTYPES.items()}

# Parent rows are processed in chunks so a vectorized batch stays below this.
BATCH_LIMIT = 1 << 21


class ExecutionError(Exception):
    pass


class OutOfBoundsAccess(ExecutionError):
    pass


class UnknownIntrinsic(ExecutionError):
    pass


class UnknownSpecial(ExecutionError):
    pass


class MissingBuffer(ExecutionError):
    pass


def wrap(value, dtype: str | int):
    """Two's-complement wrap of a Python int or int64 array to ``dtype`` bits."""
    bits = dtype if isinstance(dtype, int) else DTYPES[dtype]
    half = 1 << (bits - 1)
    mask = (1 << bits) - 1
    if isinstance(value, np.ndarray):
        return ((value + half) & mask) - half
    return ((int(value) + half) & mask) - half


def dtype_min(dtype: str) -> int:
    return -(1 << (DTYPES[dtype] - 1))


def dtype_max(dtype: str) -> int:
    return (1 << (DTYPES[dtype] - 1)) - 1


def apply_aggregation(op: str, current: int, incoming: int, dtype: str = "i32") -> int:
    incoming = wrap(incoming, dtype)
    if op == "assign":
        out = incoming
    elif op == "add":
        out = current + incoming
    elif op == "mul":
        out = current * incoming
    elif op == "max":
        out = max(current, incoming)
    elif op == "min":
        out = min(current, incoming)
    else:
        raise ValueError(f"unknown aggregation {op!r}")
    return wrap(out, dtype)


_BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "max": max,
    "min": min,
    "cmp_eq": lambda a, b: int(a == b),
    "cmp_ne": lambda a, b: int(a != b),
    "cmp_lt": lambda a, b: int(a < b),
    "cmp_le": lambda a, b: int(a <= b),
    "cmp_gt": lambda a, b: int(a > b),
    "cmp_ge": lambda a, b: int(a >= b),
}

_BINARY_NP = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "max": np.maximum,
    "min": np.minimum,
    "cmp_eq": lambda a, b: (a == b).astype(np.int64),
    "cmp_ne": lambda a, b: (a != b).astype(np.int64),
    "cmp_lt": lambda a, b: (a < b).astype(np.int64),
    "cmp_le": lambda a, b: (a <= b).astype(np.int64),
    "cmp_gt": lambda a, b: (a > b).astype(np.int64),
    "cmp_ge": lambda a, b: (a >= b).astype(np.int64),
}

_AGG_UFUNC = {"add": np.add, "mul": np.multiply, "max": np.maximum, "min": np.minimum}


# --------------------------------------------------------------------------
# Buffer store
# --------------------------------------------------------------------------


@dataclass
class BufferStore:
    """Named dense integer tensors, stored flat."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray):
        self.arrays[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def dtype(self, name: str) -> str:
        return _NAMES_BY_NP[self.arrays[name].dtype]

    def copy(self) -> BufferStore:
        return BufferStore({k: v.copy() for k, v in self.arrays.items()})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BufferStore):
            return NotImplemented
        if self.arrays.keys() != other.arrays.keys():
            return False
        return all(
            self.arrays[k].dtype == other.arrays[k].dtype
            and np.array_equal(self.arrays[k], other.arrays[k])
            for k in self.arrays
        )

    def first_difference(self, other: BufferStore) -> str | None:
        """Describe the first differing element, or None when identical."""
        for name in sorted(set(self.arrays) | set(other.arrays)):
            if name not in self.arrays or name not in other.arrays:
                return f"{name}: present in only one store"
            a, b = self.arrays[name], other.arrays[name]
            if a.shape != b.shape or a.dtype != b.dtype:
                return f"{name}: shape/dtype {a.dtype}[{a.size}] != {b.dtype}[{b.size}]"
            diff = np.flatnonzero(a != b)
            if diff.size:
                i = int(diff[0])
                return f"{name}[{i}]: {int(a[i])} != {int(b[i])}"
        return None

    @classmethod
    def zeros(cls, program: Program) -> BufferStore:
        return cls({n: np.zeros(c, NP_DTYPES[dt]) for n, (dt, c) in program.buffers.items()})

    @classmethod
    def random(cls, program: Program, rng: np.random.Generator, low: int | None = None,
               high: int | None = None) -> BufferStore:
        out = {}
        for n, (dt, c) in program.buffers.items():
            lo = dtype_min(dt) if low is None else low
            hi = dtype_max(dt) if high is None else high
            out[n] = rng.integers(lo, hi, size=c, endpoint=True).astype(NP_DTYPES[dt])
        return cls(out)

    def save(self, directory: str | Path):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, arr in self.arrays.items():
            dt = self.dtype(name)
            arr.astype(arr.dtype.newbyteorder("<")).tofile(d / f"{name}.bin")
            (d / f"{name}.desc").write_text(f"{name} {dt} {arr.size}\n")

    @classmethod
    def load(cls, directory: str | Path) -> BufferStore:
        d = Path(directory)
        out = {}
        for desc in sorted(d.glob("*.desc")):
            fields = desc.read_text().split()
            if len(fields) != 3 or fields[1] not in NP_DTYPES:
                raise ValueError(f"{desc}: expected 'name dtype count'")
            name, dt, count = fields[0], fields[1], int(fields[2])
            np_dt = np.dtype(NP_DTYPES[dt]).newbyteorder("<")
            arr = np.fromfile(d / f"{name}.bin", dtype=np_dt)
            if arr.size != count:
                raise ValueError(f"{name}: descriptor says {count} elements, file has {arr.size}")
            out[name] = arr.astype(NP_DTYPES[dt])
        return cls(out)


def output_aggregations(program: Program) -> dict[str, set[str]]:
    """Aggregations used by the leaf stores that write each root buffer."""
    found: dict[str, set[str]] = {}

    def visit(b: Block, origin: dict[str, str], aggs: dict[str, str]):
        for s in b.statements:
            if isinstance(s, Intrinsic) and s.name == "store" and s.buffer in origin:
                found.setdefault(origin[s.buffer], set()).add(aggs.get(s.buffer) or "assign")
            elif isinstance(s, Special) and s.args and s.args[0] in origin:
                found.setdefault(origin[s.args[0]], set()).add(aggs.get(s.args[0]) or "assign")
            elif isinstance(s, Block):
                o, a = {}, {}
                for r in s.refinements:
                    if r.buffer in origin and not r.is_alloc:
                        o[r.buffer] = origin[r.buffer]
                        a[r.buffer] = r.agg
                visit(s, o, a)

    root = program.root
    origin = {r.buffer: r.buffer for r in root.refinements if not r.is_alloc}
    visit(root, origin, {r.buffer: r.agg for r in root.refinements})
    return found


def init_outputs(program: Program, store: BufferStore) -> BufferStore:
    """Fill every root output with the identity of the aggregation that writes it.

    ``max`` outputs start at the dtype minimum, ``min`` at the maximum, ``mul``
    at one, everything else at zero.
    """
    out = store.copy()
    aggs = output_aggregations(program)
    for r in program.root.refinements:
        if r.direction != "out":
            continue
        dt, count = program.buffers[r.buffer]
        used = aggs.get(r.buffer, set())
        fill = 0
        if used == {"max"}:
            fill = dtype_min(dt)
        elif used == {"min"}:
            fill = dtype_max(dt)
        elif used == {"mul"}:
            fill = 1
        out[r.buffer] = np.full(count, fill, NP_DTYPES[dt])
    return out


# --------------------------------------------------------------------------
# Iteration spaces
# --------------------------------------------------------------------------


def enumerate_points(b: Block, parent_env: Mapping[str, int] | None = None) -> list[dict[str, int]]:
    """Constraint-satisfying points of ``b`` in lexicographic order, aliases included."""
    parent_env = parent_env or {}
    alias_vals = {a.name: affine_eval(a.alias, parent_env) for a in b.aliases}
    names = [i.name for i in b.ranged]
    out = []
    for vals in itertools.product(*(range(i.range) for i in b.ranged)):
        env = dict(zip(names, vals))
        env.update(alias_vals)
        if all(affine_eval(c.expr, env) >= 0 for c in b.constraints):
            out.append(env)
    return out


def point_arrays(b: Block, parent_env: Mapping[str, int] | None = None) -> dict[str, np.ndarray]:
    """Vectorized :func:`enumerate_points`: one int64 array per index name."""
    parent_env = parent_env or {}
    ranges = [i.range for i in b.ranged]
    grids = np.indices(ranges, dtype=np.int64).reshape(len(ranges), -1) if ranges else np.zeros((0, 1), np.int64)
    env = {i.name: grids[k] for k, i in enumerate(b.ranged)}
    n = grids.shape[1]
    for a in b.aliases:
        env[a.name] = np.full(n, affine_eval(a.alias, parent_env), np.int64)
    mask = np.ones(n, bool)
    for c in b.constraints:
        mask &= _eval_vec(c.expr, env, n) >= 0
    return {k: v[mask] for k, v in env.items()}


def _eval_vec(expr, env: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    out = np.full(n, expr.constant, np.int64)
    for name, c in expr.terms:
        out += c * env[name]
    return out


# --------------------------------------------------------------------------
# Serial executor
# --------------------------------------------------------------------------


@dataclass
class _View:
    key: object
    base: int
    sizes: tuple[int, ...]
    strides: tuple[int, ...]
    dtype: str
    agg: str
    lo: int
    hi: int
    chain: tuple  # ((block instance, iteration, agg), ...) from the declaring level down

    def addr(self, coord=None) -> int:
        if coord is None:
            return self.base
        return self.base + sum(c * t for c, t in zip(coord, self.strides))


Tracer = Callable[[str, object, int, tuple, str], None]


class SerialExecutor:
    """Point-at-a-time executor.

    ``order`` is ``None`` (lexicographic), ``"reverse"``, or a ``random.Random``
    used to shuffle every block's points.  ``tracer(kind, key, addr, chain, block_id)``
    is called for every element read (``kind="r"``) and write (``"w"``).
    """

    def __init__(self, order=None, tracer: Tracer | None = None):
        self.order = order
        self.tracer = tracer
        self.mem: dict[object, list[int]] = {}
        self._instances = itertools.count()

    def run(self, program: Program, store: BufferStore) -> BufferStore:
        views = {}
        for name, (dt, count) in program.buffers.items():
            if name not in store:
                raise MissingBuffer(f"no data for buffer {name!r}")
            arr = store[name]
            if arr.size != count:
                raise MissingBuffer(f"buffer {name!r} has {arr.size} elements, program needs {count}")
            self.mem[name] = [int(v) for v in arr]
            views[name] = _View(name, 0, (count,), (1,), dt, "assign", 0, count, ())
        self._block(program.root, {}, views, root=True)
        out = store.copy()
        for name in program.buffers:
            out[name] = np.array(self.mem[name], dtype=np.int64).astype(store[name].dtype)
        return out

    def _points(self, b: Block, env):
        pts = enumerate_points(b, env)
        if self.order == "reverse":
            pts.reverse()
        elif isinstance(self.order, random.Random):
            self.order.shuffle(pts)
        return pts

    def _block(self, b: Block, parent_env, parent_views, root=False):
        inst = next(self._instances)
        for it, env in enumerate(self._points(b, parent_env)):
            views = {}
            for r in b.refinements:
                views[r.buffer] = self._refine(r, env, parent_views, inst, it, root)
            temps: dict[str, int] = {}
            for s in b.statements:
                if isinstance(s, Block):
                    self._block(s, env, views)
                elif isinstance(s, Intrinsic):
                    self._intrinsic(s, temps, views, inst)
                elif isinstance(s, Special):
                    run_special(s, views, self.mem, self._trace, inst)
                else:
                    raise ExecutionError(f"bad statement {s!r}")

    def _refine(self, r: Refinement, env, parent_views, inst, it, root):
        agg = r.agg or "assign"
        if r.is_alloc:
            lo, hi = extent(r.sizes, r.strides)
            key = ("alloc", r.buffer, inst, it)
            self.mem[key] = [0] * (hi - lo + 1)
            base = -lo + sum(affine_eval(o, env) * t for o, t in zip(r.offsets, r.strides))
            return _View(key, base, r.sizes, r.strides, r.dtype, agg, 0, hi - lo + 1, ((inst, it, agg),))
        pv = parent_views[r.buffer]
        if root:
            base = sum(affine_eval(o, env) * t for o, t in zip(r.offsets, r.strides))
        else:
            base = pv.base + sum(affine_eval(o, env) * t for o, t in zip(r.offsets, pv.strides))
        return _View(pv.key, base, r.sizes, r.strides, r.dtype, agg, pv.lo, pv.hi,
                     pv.chain + ((inst, it, agg),))

    def _trace(self, kind, view: _View, addr: int, inst):
        if self.tracer is not None:
            self.tracer(kind, view.key, addr, view.chain, inst)

    def _check(self, view: _View, addr: int, what: str):
        if not view.lo <= addr < view.hi:
            raise OutOfBoundsAccess(f"{what} of {_key_name(view.key)} at element {addr - view.lo} "
                                    f"outside [0, {view.hi - view.lo})")

    def _intrinsic(self, s: Intrinsic, temps, views, inst):
        if s.name == "load":
            v = views[s.buffer]
            self._check(v, v.base, "load")
            self._trace("r", v, v.base, inst)
            temps[s.result] = self.mem[v.key][v.base]
        elif s.name == "store":
            v = views[s.buffer]
            self._check(v, v.base, "store")
            self._trace("w", v, v.base, inst)
            mem = self.mem[v.key]
            mem[v.base] = apply_aggregation(v.agg, mem[v.base], temps[s.operands[0]], v.dtype)
        elif s.name == "constant":
            temps[s.result] = wrap(s.value, TEMP_BITS)
        elif s.name == "neg":
            temps[s.result] = wrap(-temps[s.operands[0]], TEMP_BITS)
        elif s.name == "select":
            c, a, b = (temps[o] for o in s.operands)
            temps[s.result] = a if c != 0 else b
        elif s.name in _BINARY:
            a, b = (temps[o] for o in s.operands)
            temps[s.result] = wrap(_BINARY[s.name](a, b), TEMP_BITS)
        else:
            raise UnknownIntrinsic(s.name)


def _key_name(key) -> str:
    return key if isinstance(key, str) else key[1]


def _coords(sizes):
    return itertools.product(*(range(s) for s in sizes))


def run_special(s: Special, views, mem, trace=None, inst=None):
    """``gather(D, S, X)``: ``D[p, q] = S[X[p], q]``; ``scatter(D, S, X)``: ``D[X[p], q] <agg>= S[p, q]``.

    ``p`` ranges over the index window ``X`` and ``q`` over the trailing dims of
    the data operand.  Operates on logical coordinates, so layout is irrelevant.
    """
    if s.name not in SPECIALS:
        raise UnknownSpecial(s.name)
    if len(s.args) != SPECIALS[s.name]:
        raise ExecutionError(f"special {s.name} takes {SPECIALS[s.name]} operands")
    d, src, x = (views[a] for a in s.args)

    def read(v, coord):
        a = v.addr(coord)
        if not v.lo <= a < v.hi:
            raise OutOfBoundsAccess(f"special {s.name} read of {_key_name(v.key)} out of bounds")
        if trace:
            trace("r", v, a, inst)
        return mem[v.key][a]

    def write(v, coord, value):
        a = v.addr(coord)
        if not v.lo <= a < v.hi:
            raise OutOfBoundsAccess(f"special {s.name} write of {_key_name(v.key)} out of bounds")
        if trace:
            trace("w", v, a, inst)
        mem[v.key][a] = apply_aggregation(v.agg, mem[v.key][a], value, v.dtype)

    if s.name == "gather":
        inner = src.sizes[1:]
        if tuple(d.sizes) != tuple(x.sizes) + tuple(inner):
            raise ExecutionError("gather: destination shape must be index shape + source trailing shape")
        for p in _coords(x.sizes):
            j = read(x, p)
            if not 0 <= j < src.sizes[0]:
                raise OutOfBoundsAccess(f"gather index {j} outside [0, {src.sizes[0]})")
            for q in _coords(inner):
                write(d, p + q, read(src, (j,) + q))
    else:
        inner = d.sizes[1:]
        if tuple(src.sizes) != tuple(x.sizes) + tuple(inner):
            raise ExecutionError("scatter: source shape must be index shape + destination trailing shape")
        for p in _coords(x.sizes):
            j = read(x, p)
            if not 0 <= j < d.sizes[0]:
                raise OutOfBoundsAccess(f"scatter index {j} outside [0, {d.sizes[0]})")
            for q in _coords(inner):
                write(d, (j,) + q, read(src, p + q))


# --------------------------------------------------------------------------
# Vector executor
# --------------------------------------------------------------------------


@dataclass
class _VView:
    key: object
    base: np.ndarray
    sizes: tuple[int, ...]
    strides: tuple[int, ...]
    dtype: str
    agg: str
    lo: np.ndarray
    hi: np.ndarray
    depth: int = 0  # nesting level of the first refinement in the chain
    aggs: tuple[str, ...] = ()  # aggregation at each level from ``depth`` down

    def take(self, rows: np.ndarray) -> _VView:
        return _VView(self.key, self.base[rows], self.sizes, self.strides, self.dtype, self.agg,
                      self.lo[rows], self.hi[rows], self.depth, self.aggs)


@dataclass
class AccessBatch:
    """Element accesses recorded by a tracing :class:`VectorExecutor`.

    ``lineage[k]`` holds, per access, the id of the enclosing iteration at
    nesting level ``k``; ids are unique across the whole run.
    """

    kind: str  # "r" or "w"
    key: object
    addr: np.ndarray
    lineage: list[np.ndarray]
    paths: list[tuple[int, ...]]
    depth: int
    aggs: tuple[str, ...]


class VectorExecutor:
    def __init__(self, batch_limit: int = BATCH_LIMIT, trace: bool = False):
        self.batch_limit = batch_limit
        self.trace = trace
        self.accesses: list[AccessBatch] = []
        self.mem: dict[object, np.ndarray] = {}
        self._allocs = itertools.count()
        self._next_id = 0

    def run(self, program: Program, store: BufferStore) -> BufferStore:
        views = {}
        one = np.zeros(1, np.int64)
        for name, (dt, count) in program.buffers.items():
            if name not in store:
                raise MissingBuffer(f"no data for buffer {name!r}")
            arr = store[name]
            if arr.size != count:
                raise MissingBuffer(f"buffer {name!r} has {arr.size} elements, program needs {count}")
            self.mem[name] = arr.astype(np.int64)
            views[name] = _VView(name, one, (count,), (1,), dt, "assign", one, one + count)
        self._block(program.root, {}, views, 1, root_level=True, lineage=[], paths=[()])
        out = store.copy()
        for name in program.buffers:
            out[name] = self.mem[name].astype(store[name].dtype)
        return out

    def _block(self, b: Block, parent_env, parent_views, n_parent: int, root_level=False,
               lineage=(), paths=()):
        ranges = [i.range for i in b.ranged]
        per = 1
        for r in ranges:
            per *= r
        if per == 0 or n_parent == 0:
            return
        grid = (np.indices(ranges, dtype=np.int64).reshape(len(ranges), -1)
                if ranges else np.zeros((0, 1), np.int64))
        chunk = max(1, self.batch_limit // per)
        for start in range(0, n_parent, chunk):
            stop = min(n_parent, start + chunk)
            prow = np.repeat(np.arange(start, stop, dtype=np.int64), per)
            m = prow.size
            env = {i.name: np.tile(grid[k], stop - start) for k, i in enumerate(b.ranged)}
            penv = {k: v[prow] for k, v in parent_env.items()}
            for a in b.aliases:
                env[a.name] = _eval_vec(a.alias, penv, m)
            mask = np.ones(m, bool)
            for c in b.constraints:
                mask &= _eval_vec(c.expr, env, m) >= 0
            if not mask.all():
                prow = prow[mask]
                env = {k: v[mask] for k, v in env.items()}
            m = prow.size
            if m == 0:
                continue
            level = len(lineage)
            views = {}
            for r in b.refinements:
                views[r.buffer] = self._refine(r, env, parent_views, prow, m, root_level, level)
            rows_lineage = []
            if self.trace:
                ids = np.arange(self._next_id, self._next_id + m, dtype=np.int64)
                self._next_id += m
                rows_lineage = [l[prow] for l in lineage] + [ids]
            self._body(b, env, views, m, rows_lineage, list(paths))

    def _refine(self, r: Refinement, env, parent_views, prow, m, root_level, level):
        agg = r.agg or "assign"
        if r.is_alloc:
            lo, hi = extent(r.sizes, r.strides)
            count = hi - lo + 1
            key = ("alloc", r.buffer, next(self._allocs))
            self.mem[key] = np.zeros(m * count, np.int64)
            rowbase = np.arange(m, dtype=np.int64) * count
            base = rowbase - lo
            for o, t in zip(r.offsets, r.strides):
                base = base + _eval_vec(o, env, m) * t
            return _VView(key, base, r.sizes, r.strides, r.dtype, agg, rowbase, rowbase + count,
                          level, (agg,))
        pv = parent_views[r.buffer].take(prow)
        strides = r.strides if root_level else pv.strides
        base = np.zeros(m, np.int64) if root_level else pv.base.copy()
        for o, t in zip(r.offsets, strides):
            base = base + _eval_vec(o, env, m) * t
        return _VView(pv.key, base, r.sizes, r.strides, r.dtype, agg, pv.lo, pv.hi,
                      pv.depth, pv.aggs + (agg,))

    def _check(self, v: _VView, addr: np.ndarray, what: str):
        bad = (addr < v.lo) | (addr >= v.hi)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise OutOfBoundsAccess(f"{what} of {_key_name(v.key)} at element {int(addr[i] - v.lo[i])} "
                                    f"outside [0, {int(v.hi[i] - v.lo[i])})")

    def _record(self, kind, v: _VView, addr, lineage, paths, rows=None):
        if not self.trace:
            return
        lin = lineage if rows is None else [l[rows] for l in lineage]
        self.accesses.append(AccessBatch(kind, v.key, addr, lin, paths, v.depth, v.aggs))

    def _body(self, b: Block, env, views, m: int, lineage, paths):
        temps: dict[str, np.ndarray] = {}
        for i, s in enumerate(b.statements):
            if isinstance(s, Block):
                self._block(s, env, views, m, lineage=lineage, paths=paths + [paths[-1] + (i,)])
            elif isinstance(s, Intrinsic):
                self._intrinsic(s, temps, views, m, lineage, paths)
            elif isinstance(s, Special):
                self._special(s, views, m, lineage, paths)
            else:
                raise ExecutionError(f"bad statement {s!r}")

    def _intrinsic(self, s: Intrinsic, temps, views, m, lineage=(), paths=()):
        if s.name == "load":
            v = views[s.buffer]
            self._check(v, v.base, "load")
            self._record("r", v, v.base, lineage, paths)
            temps[s.result] = self.mem[v.key][v.base]
        elif s.name == "store":
            v = views[s.buffer]
            self._check(v, v.base, "store")
            self._record("w", v, v.base, lineage, paths)
            mem = self.mem[v.key]
            val = wrap(temps[s.operands[0]], v.dtype)
            if v.agg == "assign":
                mem[v.base] = val
            else:
                _AGG_UFUNC[v.agg].at(mem, v.base, val)
                mem[v.base] = wrap(mem[v.base], v.dtype)
        elif s.name == "constant":
            temps[s.result] = np.full(m, wrap(s.value, TEMP_BITS), np.int64)
        elif s.name == "neg":
            temps[s.result] = wrap(-temps[s.operands[0]], TEMP_BITS)
        elif s.name == "select":
            c, a, b = (temps[o] for o in s.operands)
            temps[s.result] = np.where(c != 0, a, b)
        elif s.name in _BINARY_NP:
            a, b = (temps[o] for o in s.operands)
            temps[s.result] = wrap(_BINARY_NP[s.name](a, b).astype(np.int64), TEMP_BITS)
        else:
            raise UnknownIntrinsic(s.name)

    def _special(self, s: Special, views, m, lineage=(), paths=()):
        if s.name not in SPECIALS:
            raise UnknownSpecial(s.name)
        mem = _ListView(self.mem)
        for row in range(m):
            row_views = {}
            for name in s.args:
                v = views[name]
                row_views[name] = _View(v.key, int(v.base[row]), v.sizes, v.strides, v.dtype, v.agg,
                                        int(v.lo[row]), int(v.hi[row]), ())
            seen: list[tuple[str, str, int]] = []
            run_special(s, row_views, mem, lambda kind, rv, a, _: seen.append((kind, rv.key, a)))
            if self.trace:
                rows = np.array([row], np.int64)
                for kind, key, a in seen:
                    v = next(views[n] for n in s.args if views[n].key == key)
                    self._record(kind, v, np.array([a], np.int64), lineage, paths, rows)


class _ListView:
    """Lets :func:`run_special` index numpy storage with Python ints."""

    def __init__(self, mem):
        self.mem = mem

    def __getitem__(self, key):
        return _Arr(self.mem[key])


class _Arr:
    def __init__(self, arr):
        self.arr = arr

    def __getitem__(self, i):
        return int(self.arr[i])

    def __setitem__(self, i, v):
        self.arr[i] = v


def execute(program: Program, store: BufferStore, mode: str = "vector", order=None) -> BufferStore:
    """Run ``program`` against ``store`` and return the updated copy.

    ``order`` (serial mode only) permutes iteration points; see :class:`SerialExecutor`.
    """
    if mode == "vector":
        if order is not None:
            raise ValueError("iteration order can only be chosen in serial mode")
        return VectorExecutor().run(program, store)
    if mode == "serial":
        return SerialExecutor(order=order).run(program, store)
    raise ValueError(f"unknown mode {mode!r}")
