"""Write random buffers for a program into a directory the CLI can read."""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from polyblock.interp import BufferStore
from polyblock.text import parse_program


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("program")
    ap.add_argument("out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--low", type=int, default=-8)
    ap.add_argument("--high", type=int, default=8)
    args = ap.parse_args(argv)
    p = parse_program(Path(args.program).read_text())
    store = BufferStore.random(p, np.random.default_rng(args.seed), args.low, args.high)
    store.save(args.out)
    for name in sorted(store.arrays):
        print(f"{name} {store.dtype(name)} {store[name].size}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
