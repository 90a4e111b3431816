"""Cost every tiling candidate of a program's first leaf block.

Prints one report line per candidate, cheapest first, plus the per-tile ratio
(lines of the tiled windows for one tile) / (points of the searched indexes
per tile), which is a second way of normalizing the same cache-line counts.
"""

from __future__ import annotations

import argparse
from fractions import Fraction
from pathlib import Path

from polyblock.analysis import CacheModel
from polyblock.passes.tiling import _window_lines, search_indexes, search_space, tile_cost, tile_rewrite
from polyblock.text import parse_program


def lines_per_point(b, ts, cm: CacheModel, untiled=()) -> Fraction:
    """Lines of one line-aligned tile's windows over its searched-index points."""
    outer = tile_rewrite(b, ts)
    lines = sum(_window_lines(r, cm, 0) for r in outer.refinements
                if not r.is_alloc and r.buffer not in untiled)
    points = 1
    for n in search_indexes(b, untiled):
        points *= ts.tiles.get(n, b.index(n).range)
    return Fraction(lines, points)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("program")
    ap.add_argument("--line", type=int, default=8)
    ap.add_argument("--cap", type=int, default=512)
    ap.add_argument("--untiled", default="F", help="comma-separated buffers kept whole")
    ap.add_argument("--power-of-two", action="store_true")
    args = ap.parse_args(argv)
    p = parse_program(Path(args.program).read_text())
    b = next(s for s in p.root.statements if hasattr(s, "is_leaf") and s.is_leaf)
    untiled = tuple(filter(None, args.untiled.split(",")))
    cm = CacheModel(args.line, max(args.cap, args.line))
    rows = []
    for ts in search_space(b, untiled, args.power_of_two):
        rep = tile_cost(b, ts, cm, args.cap, untiled)
        per = lines_per_point(b, ts, cm, untiled)
        key = (rep.cost is None, rep.cost or 0, ts.vector(b))
        rows.append((key, f"{rep.line()} lines_per_point={float(per):.4f}"))
    for _, line in sorted(rows):
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
