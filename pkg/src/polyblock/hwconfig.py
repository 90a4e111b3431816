"""Hardware description and pass pipeline, read from a line-oriented text format.

::

    # comments run to the end of the line
    mem DRAM cap=1000000 line=8
    mem SRAM cap=512 line=8 banks=4
    unit tensorizer count=1 stencil=4x4x8 tag=tensorize
    pass autotile mem=SRAM untiled=F
    pass schedule mem=DRAM

Leading whitespace is ignored.  ``pass`` lines form the pipeline in order.
"""

from __future__ import annotations

from dataclasses import dataclass

from .passes.pipeline import PASSES, PassConfig, Pipeline, UnknownPass, format_param, parse_param


class ConfigSyntax(ValueError):
    def __init__(self, line: int, msg: str):
        self.line = line
        super().__init__(f"line {line}: {msg}")


class UnknownUnit(ValueError):
    def __init__(self, line: int, msg: str):
        self.line = line
        super().__init__(f"line {line}: {msg}")


@dataclass(frozen=True)
class MemoryUnit:
    name: str
    capacity: int
    line: int = 8
    banks: int = 1


@dataclass(frozen=True)
class ComputeUnit:
    name: str
    count: int = 1
    stencil: tuple[int, ...] | None = None
    tag: str = "tensorize"


@dataclass(frozen=True)
class HardwareConfig:
    memories: tuple[MemoryUnit, ...] = ()
    units: tuple[ComputeUnit, ...] = ()

    def memory(self, name: str) -> MemoryUnit:
        for m in self.memories:
            if m.name == name:
                return m
        raise KeyError(name)

    def unit(self, name: str) -> ComputeUnit:
        for u in self.units:
            if u.name == name:
                return u
        raise KeyError(name)


_MEM_KEYS = {"cap": "capacity", "line": "line", "banks": "banks"}
_UNIT_KEYS = {"count", "stencil", "tag"}


def _pairs(words: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for w in words:
        key, eq, val = w.partition("=")
        if not eq or not key:
            raise ConfigSyntax(lineno, f"expected key=value, got {w!r}")
        if key in out:
            raise ConfigSyntax(lineno, f"{key!r} given twice")
        out[key] = val
    return out


def _int(val: str, key: str, lineno: int, low: int = 1) -> int:
    try:
        n = int(val)
    except ValueError:
        raise ConfigSyntax(lineno, f"{key}= needs an integer, got {val!r}") from None
    if n < low:
        raise ConfigSyntax(lineno, f"{key}= must be at least {low}")
    return n


def load_config(text: str) -> tuple[HardwareConfig, Pipeline]:
    mems: dict[str, MemoryUnit] = {}
    units: dict[str, ComputeUnit] = {}
    passes: list[tuple[int, PassConfig]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        words = raw.split("#", 1)[0].split()
        if not words:
            continue
        kind = words[0]
        if kind not in ("mem", "unit", "pass"):
            raise ConfigSyntax(lineno, f"unknown directive {kind!r}")
        if len(words) < 2 or "=" in words[1]:
            raise ConfigSyntax(lineno, f"{kind} needs a name")
        name = words[1]
        kv = _pairs(words[2:], lineno)
        if kind == "mem":
            if name in mems or name in units:
                raise ConfigSyntax(lineno, f"unit {name!r} declared twice")
            for k in kv:
                if k not in _MEM_KEYS:
                    raise ConfigSyntax(lineno, f"unknown mem key {k!r}")
            if "cap" not in kv:
                raise ConfigSyntax(lineno, "mem needs cap=")
            fields = {_MEM_KEYS[k]: _int(v, k, lineno) for k, v in kv.items()}
            m = MemoryUnit(name, **fields)
            if m.capacity < m.line:
                raise ConfigSyntax(lineno, f"capacity {m.capacity} is below the line size {m.line}")
            mems[name] = m
        elif kind == "unit":
            if name in mems or name in units:
                raise ConfigSyntax(lineno, f"unit {name!r} declared twice")
            for k in kv:
                if k not in _UNIT_KEYS:
                    raise ConfigSyntax(lineno, f"unknown unit key {k!r}")
            stencil = None
            if "stencil" in kv:
                stencil = tuple(_int(v, "stencil", lineno) for v in kv["stencil"].split("x"))
                if len(stencil) < 2:
                    raise ConfigSyntax(lineno, "stencil needs at least two sizes, e.g. 4x4x8")
            units[name] = ComputeUnit(name, _int(kv.get("count", "1"), "count", lineno), stencil,
                                      kv.get("tag", "tensorize"))
        else:
            if name not in PASSES:
                raise UnknownPass(name)
            spec = PASSES[name].params
            params = {}
            for k, v in kv.items():
                if k not in spec:
                    raise ConfigSyntax(lineno, f"pass {name!r} has no parameter {k!r}")
                try:
                    params[k] = parse_param(spec[k].kind, v)
                except ValueError as e:
                    raise ConfigSyntax(lineno, f"{k}=: {e}") from None
            for k, p in spec.items():
                if p.required and k not in params:
                    raise ConfigSyntax(lineno, f"pass {name!r} needs {k}=")
            passes.append((lineno, PassConfig(name, params)))
    # unit references are checked once every declaration is known
    for lineno, pc in passes:
        spec = PASSES[pc.name].params
        for k, v in pc.params.items():
            if spec[k].kind == "mem" and v not in mems:
                raise UnknownUnit(lineno, f"pass {pc.name!r} refers to undeclared memory {v!r}")
            if spec[k].kind == "unit" and v not in units:
                raise UnknownUnit(lineno, f"pass {pc.name!r} refers to undeclared unit {v!r}")
    hw = HardwareConfig(tuple(mems[k] for k in sorted(mems)), tuple(units[k] for k in sorted(units)))
    return hw, Pipeline(tuple(pc for _, pc in passes))


def print_config(hw: HardwareConfig, pipeline: Pipeline) -> str:
    lines = []
    for m in hw.memories:
        lines.append(f"mem {m.name} cap={m.capacity} line={m.line} banks={m.banks}")
    for u in hw.units:
        words = [f"unit {u.name} count={u.count}"]
        if u.stencil:
            words.append("stencil=" + "x".join(map(str, u.stencil)))
        words.append(f"tag={u.tag}")
        lines.append(" ".join(words))
    for pc in pipeline:
        spec = PASSES[pc.name].params
        words = [f"pass {pc.name}"]
        words += [f"{k}={format_param(spec[k].kind, v)}" for k, v in pc.params.items()]
        lines.append(" ".join(words))
    return "\n".join(lines) + "\n"


def load_config_file(path) -> tuple[HardwareConfig, Pipeline]:
    with open(path, encoding="utf-8") as f:
        return load_config(f.read())
