"""Pass registry and the pipeline driver."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping

from ..analysis import CacheModel
from ..ir import Block, Program, walk
from ..validate import Diagnostic, errors, validate_static
from .boundary import NoInteriorRegion, separate_boundary
from .fusion import fuse
from .layout import transpose_layout
from .memory import localize, scalarize
from .partition import NotPartitionable, partition
from .schedule import schedule
from .stencil import StencilSpec, stencil_match
from .tiling import TileShape, autotile_search


class UnknownPass(KeyError):
    def __str__(self) -> str:
        return f"unknown pass {self.args[0]!r}"


class PassFailed(RuntimeError):
    def __init__(self, name: str, diagnostics: list[Diagnostic]):
        self.name = name
        self.diagnostics = diagnostics
        first = diagnostics[0] if diagnostics else None
        super().__init__(f"pass {name!r} failed" + (f": {first}" if first else ""))


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

# kinds: int, flag, str, mem (memory unit name), unit (compute unit name),
# tiles ("x:3,y:4"), names ("F,G"), ints ("2,0,1")


def parse_param(kind: str, text: str):
    if kind == "int":
        return int(text)
    if kind == "flag":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a flag: {text!r}")
    if kind in ("str", "mem", "unit"):
        if not text:
            raise ValueError("empty value")
        return text
    if kind == "tiles":
        out = {}
        for part in filter(None, text.split(",")):
            name, _, size = part.partition(":")
            if not name or not size:
                raise ValueError(f"tile entry {part!r} is not name:size")
            out[name] = int(size)
        return out
    if kind == "names":
        return tuple(filter(None, text.split(",")))
    if kind == "ints":
        return tuple(int(v) for v in text.split(","))
    raise ValueError(f"unknown parameter kind {kind!r}")


def format_param(kind: str, value) -> str:
    if kind == "flag":
        return "true" if value else "false"
    if kind == "tiles":
        return ",".join(f"{k}:{v}" for k, v in value.items())
    if kind in ("names", "ints"):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Param:
    kind: str
    default: Any = None
    required: bool = False
    doc: str = ""


@dataclass(frozen=True)
class PassInfo:
    name: str
    run: Callable[[Program, dict, Any, list[str]], Program]
    params: Mapping[str, Param]
    doc: str = ""


PASSES: dict[str, PassInfo] = {}


def register_pass(name: str, params: Mapping[str, Param] | None = None):
    def deco(fn):
        PASSES[name] = PassInfo(name, fn, dict(params or {}), (fn.__doc__ or "").strip())
        return fn
    return deco


def get_pass(name: str) -> PassInfo:
    if name not in PASSES:
        raise UnknownPass(name)
    return PASSES[name]


@dataclass(frozen=True)
class PassConfig:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def resolved(self) -> dict:
        """Parameters with defaults filled in."""
        info = get_pass(self.name)
        for k in self.params:
            if k not in info.params:
                raise KeyError(f"pass {self.name!r} has no parameter {k!r}")
        return {k: self.params.get(k, p.default) for k, p in info.params.items()}


@dataclass(frozen=True)
class Pipeline:
    passes: tuple[PassConfig, ...] = ()

    def __iter__(self):
        return iter(self.passes)

    def __len__(self) -> int:
        return len(self.passes)


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------


def _shape(b: Block) -> tuple[int, int]:
    blocks = list(walk(b))
    return len(blocks), sum(len(x.statements) for _, x in blocks)


def apply_pipeline(p: Program, pipeline: Pipeline | Iterable[PassConfig], hw=None,
                   reports: list[str] | None = None) -> Program:
    """Fold the passes over ``p``, validating after each one.

    Report lines of the form ``pass=<name> key=value ...`` are appended to
    ``reports`` when given.
    """
    out = reports if reports is not None else []
    for pc in pipeline:
        info = get_pass(pc.name)
        try:
            params = pc.resolved()
        except KeyError as e:
            raise PassFailed(pc.name, [Diagnostic("error", "BadParameter", str(e.args[0]))]) from None
        for k, spec in info.params.items():
            if spec.required and params[k] is None:
                raise PassFailed(pc.name, [Diagnostic("error", "BadParameter", f"{k}= is required")])
        before = _shape(p.root)
        try:
            q = info.run(p, params, hw, out)
        except ValueError as e:
            raise PassFailed(pc.name, [Diagnostic("error", type(e).__name__, str(e))]) from e
        diags = errors(validate_static(q))
        if diags:
            raise PassFailed(pc.name, diags)
        after = _shape(q.root)
        out.append(f"pass={pc.name} changed={'yes' if q.root != p.root else 'no'} "
                   f"blocks={before[0]}->{after[0]} statements={before[1]}->{after[1]}")
        p = q
    return p


def _with_root(p: Program, root: Block) -> Program:
    return replace(p, root=root)


def _child_blocks(root: Block):
    return [(k, s) for k, s in enumerate(root.statements) if isinstance(s, Block)]


def _memory(hw, name: str | None):
    """The named memory unit, or the smallest one; None without a config."""
    if hw is None or not getattr(hw, "memories", None):
        return None
    if name:
        return hw.memory(name)
    return min(hw.memories, key=lambda m: (m.capacity, m.name))


# --------------------------------------------------------------------------
# Registered passes
# --------------------------------------------------------------------------


@register_pass("autotile", {
    "mem": Param("mem", doc="memory unit giving the cap and line size (default: smallest)"),
    "cap": Param("int", doc="element cap overriding the unit capacity"),
    "line": Param("int", doc="cache-line size overriding the unit's"),
    "tiles": Param("tiles", doc="pin the tile shape instead of searching"),
    "untiled": Param("names", (), doc="buffers kept whole (their indexes are not searched)"),
    "power_of_two": Param("flag", False, doc="search powers of two instead of divisors"),
})
def _autotile(p, params, hw, out):
    """Tile every leaf child of the root for the cache model."""
    mem = _memory(hw, params["mem"])
    line = params["line"] or (mem.line if mem else 8)
    cap = params["cap"] or (mem.capacity if mem else 512)
    cm = CacheModel(line, max(cap, line))
    stmts = list(p.root.statements)
    for k, b in _child_blocks(p.root):
        if not b.is_leaf or b.volume <= 1:
            continue
        pinned = None
        if params["tiles"]:
            names = {i.name for i in b.ranged}
            pinned = TileShape({n: t for n, t in params["tiles"].items() if n in names})
        res = autotile_search(b, cm, cap, params["power_of_two"], params["untiled"], pinned)
        for d in res.diagnostics:
            out.append(f"pass=autotile target={k} {d.severity}={d.code}")
        if res.report is not None:
            out.append(f"pass=autotile target={k} candidates={len(res.candidates)} {res.report.line()}")
        stmts[k] = res.block
    return _with_root(p, replace(p.root, statements=tuple(stmts)))


@register_pass("fuse")
def _fuse(p, params, hw, out):
    """Fuse adjacent children of the root greedily, left to right."""
    root = p.root
    k = 0
    while k + 1 < len(root.statements):
        res = fuse(root, k, k + 1)
        if isinstance(res, Block):
            out.append(f"pass=fuse fused={k},{k + 1}")
            root = res
        else:
            out.append(f"pass=fuse refused={k},{k + 1} reason={res.reason}")
            k += 1
    return _with_root(p, root)


@register_pass("localize")
def _localize(p, params, hw, out):
    """Move temporaries into the single child that uses them."""
    return _with_root(p, localize(p.root))


@register_pass("scalarize")
def _scalarize(p, params, hw, out):
    """Forward stored values to loads and drop dead temporaries."""
    return _with_root(p, scalarize(p.root))


@register_pass("schedule", {
    "mem": Param("mem", doc="memory unit to place child windows in (default: smallest)"),
})
def _schedule(p, params, hw, out):
    """Reorder statements for locality and place child windows."""
    root, diags = schedule(p.root, hw, params["mem"])
    for d in diags:
        out.append(f"pass=schedule {d.severity}={d.code}")
    return _with_root(p, root)


def _stencils(hw, unit: str | None) -> list[StencilSpec]:
    specs = []
    for u in getattr(hw, "units", ()) or ():
        if u.stencil and (unit is None or u.name == unit):
            *outs, red = u.stencil
            specs.append(StencilSpec(u.name, tuple(outs), (red,), tag=u.tag))
    return specs


@register_pass("stencil", {
    "unit": Param("unit", doc="compute unit whose stencil to match (default: all)"),
})
def _stencil(p, params, hw, out):
    """Reshape root children to the stencil of a compute unit and tag them."""
    specs = _stencils(hw, params["unit"])
    stmts = list(p.root.statements)
    for k, b in _child_blocks(p.root):
        nb = stencil_match(b, specs)
        if nb is not b:
            out.append(f"pass=stencil target={k} matched=yes")
        stmts[k] = nb
    return _with_root(p, replace(p.root, statements=tuple(stmts)))


@register_pass("partition", {
    "index": Param("str", required=True, doc="index to split across banks"),
    "n": Param("int", doc="number of banks (default: the unit's bank count)"),
    "mem": Param("mem", doc="memory unit named in the locations (default: smallest)"),
})
def _partition(p, params, hw, out):
    """Split root children across memory banks along one index."""
    mem = _memory(hw, params["mem"])
    n = params["n"] or (mem.banks if mem else 1)
    unit = mem.name if mem else "MEM"
    stmts = list(p.root.statements)
    for k, b in _child_blocks(p.root):
        if params["index"] not in {i.name for i in b.ranged}:
            continue
        try:
            stmts[k] = partition(b, params["index"], n, unit)
            out.append(f"pass=partition target={k} banks={n}")
        except NotPartitionable as e:
            out.append(f"pass=partition target={k} skipped={type(e).__name__}")
    return _with_root(p, replace(p.root, statements=tuple(stmts)))


@register_pass("boundary")
def _boundary(p, params, hw, out):
    """Split constrained root children into an interior and boundary slabs."""
    stmts = []
    for k, s in enumerate(p.root.statements):
        if isinstance(s, Block) and s.constraints:
            try:
                pieces = separate_boundary(s)
            except NoInteriorRegion:
                out.append(f"pass=boundary target={k} skipped=NoInteriorRegion")
                pieces = [s]
            else:
                out.append(f"pass=boundary target={k} pieces={len(pieces)}")
            stmts.extend(pieces)
        else:
            stmts.append(s)
    return _with_root(p, replace(p.root, statements=tuple(stmts)))


@register_pass("transpose", {
    "buffer": Param("str", required=True, doc="temporary declared at the root"),
    "order": Param("ints", required=True, doc="new dimension order, outermost first"),
})
def _transpose(p, params, hw, out):
    """Change the memory layout of a root temporary."""
    return _with_root(p, transpose_layout(p.root, params["buffer"], params["order"]))
