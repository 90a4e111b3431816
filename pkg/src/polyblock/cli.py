"""Command-line driver: parse, validate, run, opt, cost and diff.

Exit codes: 0 success, 1 diagnostics or failed checks, 2 usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .analysis import CacheModel
from .hwconfig import ConfigSyntax, UnknownUnit, load_config_file
from .interp import BufferStore, ExecutionError, execute, init_outputs
from .ir import Block, Program
from .passes.pipeline import PassFailed, UnknownPass, apply_pipeline
from .passes.tiling import InvalidTile, NotTileable, TileShape, tile_cost
from .text import ParseError, parse_program, print_program
from .validate import check_parallel_semantics, errors, validate_static


class _Fail(Exception):
    """Diagnostics were printed; exit with status 1."""


def _read_program(path: str) -> Program:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        print(f"error IOError {path}: {e.strerror}", file=sys.stderr)
        raise _Fail from None
    try:
        return parse_program(text)
    except ParseError as e:
        where = f"{path}:{e.span.line}:{e.span.column}" if e.span else f"{path}:?:?"
        print(f"error {e.code} {where} {e.message}", file=sys.stderr)
        raise _Fail from None


def _check_static(p: Program, path: str) -> None:
    diags = validate_static(p)
    for d in diags:
        print(d.render(path), file=sys.stderr)
    if errors(diags):
        raise _Fail


def _load_data(p: Program, directory: str, init: bool = True) -> BufferStore:
    try:
        store = BufferStore.load(directory)
    except (OSError, ValueError) as e:
        print(f"error BadData {directory}: {e}", file=sys.stderr)
        raise _Fail from None
    return init_outputs(p, store) if init else store


def _execute(p: Program, store: BufferStore, path: str) -> BufferStore:
    try:
        return execute(p, store)
    except ExecutionError as e:
        print(f"error {type(e).__name__} {path}: {e}", file=sys.stderr)
        raise _Fail from None


def _config(path: str):
    try:
        return load_config_file(path)
    except (ConfigSyntax, UnknownUnit, UnknownPass) as e:
        print(f"error {type(e).__name__} {path}: {e}", file=sys.stderr)
        raise _Fail from None
    except OSError as e:
        print(f"error IOError {path}: {e.strerror}", file=sys.stderr)
        raise _Fail from None


def _parse_tiles(text: str) -> dict[str, int]:
    out = {}
    for part in filter(None, text.split(",")):
        for sep in "=:":
            if sep in part:
                name, _, size = part.partition(sep)
                break
        else:
            raise argparse.ArgumentTypeError(f"tile entry {part!r} is not name=size")
        try:
            out[name.strip()] = int(size)
        except ValueError:
            raise argparse.ArgumentTypeError(f"tile size {size!r} is not an integer") from None
    return out


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_parse(args) -> int:
    p = _read_program(args.file)
    sys.stdout.write(print_program(p))
    return 0


def cmd_validate(args) -> int:
    p = _read_program(args.file)
    _check_static(p, args.file)
    if args.dynamic:
        store = _load_data(p, args.data) if args.data else None
        try:
            report = check_parallel_semantics(p, store)
        except ExecutionError as e:
            print(f"error {type(e).__name__} {args.file}: {e}", file=sys.stderr)
            return 1
        limit = 20
        for c in report.conflicts[:limit]:
            print(f"error {c}", file=sys.stderr)
        if len(report) > limit:
            print(f"error ... {len(report) - limit} more conflicts", file=sys.stderr)
        if not report.ok:
            return 1
    print("ok")
    return 0


def cmd_run(args) -> int:
    p = _read_program(args.file)
    _check_static(p, args.file)
    store = _load_data(p, args.data, init=not args.no_zero_init)
    out = _execute(p, store, args.file)
    if args.out:
        out.save(args.out)
    for name in sorted(out.arrays):
        arr = out[name]
        print(f"{name} {out.dtype(name)} {arr.size} sum={int(arr.astype('int64').sum())}")
    return 0


def cmd_opt(args) -> int:
    p = _read_program(args.file)
    _check_static(p, args.file)
    hw, pipeline = _config(args.config)
    reports: list[str] = []
    try:
        q = apply_pipeline(p, pipeline, hw, reports)
    except PassFailed as e:
        for line in reports:
            print(line, file=sys.stderr)
        for d in e.diagnostics:
            print(f"{d.render(args.file)} (after pass {e.name})", file=sys.stderr)
        return 1
    if args.emit_reports:
        for line in reports:
            print(line, file=sys.stderr)
    sys.stdout.write(print_program(q))
    return 0


def _cost_target(root: Block, index: int | None) -> Block | None:
    if index is not None:
        if 0 <= index < len(root.statements) and isinstance(root.statements[index], Block):
            return root.statements[index]
        return None
    for s in root.statements:
        if isinstance(s, Block) and s.is_leaf:
            return s
    return None


def cmd_cost(args) -> int:
    p = _read_program(args.file)
    _check_static(p, args.file)
    hw, pipeline = _config(args.config)
    params = next((pc.params for pc in pipeline if pc.name == "autotile"), {})
    mem = None
    if hw.memories:
        name = params.get("mem")
        mem = hw.memory(name) if name else min(hw.memories, key=lambda m: (m.capacity, m.name))
    line = params.get("line") or (mem.line if mem else 8)
    cap = params.get("cap") or (mem.capacity if mem else 512)
    untiled = tuple(args.untiled.split(",")) if args.untiled is not None else params.get("untiled", ())
    b = _cost_target(p.root, args.block)
    if b is None:
        print(f"error NoTarget {args.file}: no leaf block to cost", file=sys.stderr)
        return 1
    try:
        rep = tile_cost(b, TileShape(args.tiles), CacheModel(line, max(cap, line)), cap, untiled)
    except (InvalidTile, NotTileable) as e:
        print(f"error {type(e).__name__} {args.file}: {e}", file=sys.stderr)
        return 1
    print(rep.line())
    return 0


def cmd_diff(args) -> int:
    a = _read_program(args.a)
    b = _read_program(args.b)
    _check_static(a, args.a)
    _check_static(b, args.b)
    raw = _load_data(a, args.data, init=False)
    ra = _execute(a, init_outputs(a, raw), args.a)
    rb = _execute(b, init_outputs(b, raw), args.b)
    diff = ra.first_difference(rb)
    if diff is None:
        print("identical")
        return 0
    print(f"differ {diff}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polyblock", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("parse", help="parse and print in canonical form")
    s.add_argument("file")
    s.set_defaults(fn=cmd_parse)

    s = sub.add_parser("validate", help="static checks, optionally the dynamic conflict check")
    s.add_argument("file")
    s.add_argument("--dynamic", action="store_true", help="run the instrumented conflict check")
    s.add_argument("--data", help="buffer directory for --dynamic (default: zeros)")
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("run", help="execute and write the buffers")
    s.add_argument("file")
    s.add_argument("--data", required=True, help="buffer directory (.bin + .desc files)")
    s.add_argument("--out", help="directory to write the resulting buffers to")
    s.add_argument("--no-zero-init", action="store_true",
                   help="keep the output buffers' contents instead of resetting them to the aggregation identity")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("opt", help="apply the pipeline from a hardware config")
    s.add_argument("file")
    s.add_argument("--config", required=True)
    s.add_argument("--emit-reports", action="store_true", help="print pass reports on stderr")
    s.set_defaults(fn=cmd_opt)

    s = sub.add_parser("cost", help="cost one tiling of the first leaf block")
    s.add_argument("file")
    s.add_argument("--config", required=True)
    s.add_argument("--tiles", required=True, type=_parse_tiles, help="e.g. x=3,y=4")
    s.add_argument("--untiled", help="comma-separated buffers kept whole (default: from the config)")
    s.add_argument("--block", type=int, help="root statement index of the block to cost")
    s.set_defaults(fn=cmd_cost)

    s = sub.add_parser("diff", help="run two programs on the same data and compare")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--data", required=True)
    s.set_defaults(fn=cmd_diff)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        return args.fn(args)
    except _Fail:
        return 1


if __name__ == "__main__":
    sys.exit(main())
