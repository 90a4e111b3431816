import numpy as np
import pytest

from polyblock.hwconfig import HardwareConfig, MemoryUnit
from polyblock.interp import enumerate_points
from polyblock.ir import Block, Intrinsic, Special, dense_strides, walk
from polyblock.passes import (
    ExternalBufferImmutable,
    NoInteriorRegion,
    NotPartitionable,
    StencilSpec,
    TileShape,
    fuse,
    greedy_order,
    interior_box,
    localize,
    partition,
    scalarize,
    schedule,
    separate_boundary,
    stencil_match,
    tile_rewrite,
    transpose_layout,
)
from polyblock.passes.fusion import Refusal
from polyblock.text import parse_program
from polyblock.validate import errors, validate_static

from gen import conv_text, copy_text, load_fixture, matmul_text, random_store, run, with_child


def same(p, q, seed=0, store=None):
    assert not errors(validate_static(q)), validate_static(q)
    s = store if store is not None else random_store(p, seed)
    assert run(p, s) == run(q, s)


def elementwise(n=8, shift=0):
    """A -> T (doubled) -> B, with T a root temporary; ``shift`` offsets the second read."""
    m = n - shift
    return parse_program(f"""block []:1 (
	in A[0] i32({n}):(1)
	out B[0]:assign i32({n}):(1)
	none T[0] i32({n}):(1)
) {{
	0:
	block [x:{n}] (
		in A[x] i32(1):(1)
		out T[x]:assign i32(1):(1)
	) {{
		0: $a = load(A)
		1: $b = add($a, $a)
		2: T = store($b)
	}}
	1:
	block [x:{m}] (
		in T[x + {shift}] i32(1):(1)
		out B[x]:assign i32(1):(1)
	) {{
		0: $t = load(T)
		1: B = store($t)
	}}
}}
""")


# ---- fuse ---------------------------------------------------------------------


def test_fuse_elementwise_pair():
    p = elementwise()
    q = with_root(p, fuse(p.root, 0, 1))
    assert len(q.root.statements) == 1
    fused = q.root.statements[0]
    assert [i.range for i in fused.ranged] == [8]
    assert len(fused.statements) == 2
    same(p, q)


def with_root(p, root):
    from dataclasses import replace
    assert isinstance(root, Block), root
    return replace(p, root=root)


def test_fuse_refuses_mismatched_ranges():
    p = load_fixture("conv_relu")
    res = fuse(p.root, 0, 1)
    assert isinstance(res, Refusal) and not res
    assert res.reason == "ConstrainedOuter"


def test_fuse_refuses_cross_iteration_reads():
    p = elementwise(8, shift=1)
    # ranges differ first
    assert fuse(p.root, 0, 1).reason == "IndexMismatch"
    text = """block []:1 (
	in A[0] i32(9):(1)
	out B[0]:assign i32(8):(1)
	none T[0] i32(9):(1)
) {
	0:
	block [x:8] (
		in A[x] i32(1):(1)
		out T[x]:assign i32(1):(1)
	) {
		0: $a = load(A)
		1: T = store($a)
	}
	1:
	block [x:8] (
		in T[x + 1] i32(1):(1)
		out B[x]:assign i32(1):(1)
	) {
		0: $t = load(T)
		1: B = store($t)
	}
}
"""
    res = fuse(parse_program(text).root, 0, 1)
    assert res.reason == "FootprintNotCovered"


def test_fuse_refuses_constrained_outer():
    p = parse_program(conv_text(4, 4, 3, 3, 2, 2))
    two = with_child(p, 0, [p.root.statements[0], p.root.statements[0]])
    assert fuse(two.root, 0, 1).reason == "ConstrainedOuter"


def test_fuse_rejects_bad_indexes():
    p = elementwise()
    assert fuse(p.root, 1, 0).reason == "BadStatements"


# ---- scalarize and localize -----------------------------------------------------


def test_localize_then_scalarize_removes_the_temporary():
    p = elementwise()
    fused = with_root(p, fuse(p.root, 0, 1))
    loc = with_root(p, localize(fused.root))
    assert not loc.root.has_ref("T")
    inner = loc.root.statements[0]
    assert inner.ref("T").is_alloc and inner.ref("T").sizes == (1,)
    same(p, loc)
    # forwarding stays inside one statement list, so the temporary crossing two blocks remains
    sc = with_root(p, scalarize(loc.root))
    assert sc.root.statements[0].ref("T").is_alloc
    same(p, sc)


def test_scalarize_forwards_within_a_block():
    p = parse_program("""block []:1 (
	in A[0] i32(8):(1)
	out B[0]:assign i32(8):(1)
) {
	0:
	block [x:8] (
		in A[x] i32(1):(1)
		none T[0] i32(1):(1)
		out B[x]:assign i32(1):(1)
	) {
		0: $a = load(A)
		1: $b = add($a, $a)
		2: T = store($b)
		3: $t = load(T)
		4: B = store($t)
	}
}
""")
    root = scalarize(p.root)
    inner = root.statements[0]
    assert not inner.has_ref("T")
    assert [s.name for s in inner.statements] == ["load", "add", "store"]
    assert inner.statements[-1].operands == ("$b",)
    same(p, with_root(p, root))


def test_localize_keeps_shared_temporaries():
    p = elementwise()
    assert localize(p.root) == p.root       # T is used by both children


def test_scalarize_leaves_outputs_alone():
    p = parse_program(matmul_text(3, 4, 5))
    assert scalarize(p.root) == p.root


def test_scalarize_is_idempotent_on_conv_relu():
    p = load_fixture("conv_relu")
    once = scalarize(p.root)
    assert scalarize(once) == once
    same(p, with_root(p, once))


# ---- stencil ------------------------------------------------------------------


def test_stencil_reshapes_and_tags():
    p = parse_program(matmul_text(8, 8, 16))
    b = p.root.statements[0]
    out = stencil_match(b, [StencilSpec("mxu", (4, 4), (8,), tag="tensorize")])
    assert [(i.name, i.range) for i in out.ranged] == [("i", 2), ("j", 2), ("k", 2)]
    inner = out.statements[0]
    assert [(i.name, i.range) for i in inner.ranged] == [("i", 4), ("j", 4), ("k", 8)]
    assert "tensorize" in inner.tags and "tensorize" not in out.tags
    same(p, with_child(p, 0, out))


def test_stencil_skips_non_divisible_and_wrong_dtype():
    p = parse_program(matmul_text(6, 8, 16))
    b = p.root.statements[0]
    assert stencil_match(b, [StencilSpec("mxu", (4, 4), (8,))]) is b
    assert stencil_match(b, [StencilSpec("mxu", (2, 4), (8,), dtype="i8")]) is b


def test_stencil_exact_fit_only_tags():
    p = parse_program(matmul_text(4, 4, 8))
    b = p.root.statements[0]
    out = stencil_match(b, [StencilSpec("mxu", (4, 4), (8,))])
    assert out.indexes == b.indexes and "tensorize" in out.tags


# ---- partition ----------------------------------------------------------------


def test_partition_places_disjoint_banks():
    p = load_fixture("conv3x3", "i32")
    b = p.root.statements[0]
    out = partition(b, "x", 4, "SRAM")
    assert out.index("x").range == 4
    for r in out.refinements:
        assert r.location.unit == "SRAM" and str(r.location.bank) == "x"
    # each bank writes its own rows of O
    rows = [{env["x"] * 3 + e["x"] for e in enumerate_points(out.statements[0], env)}
            for env in enumerate_points(out)]
    banks = {}
    for env, rs in zip(enumerate_points(out), rows):
        banks.setdefault(env["x"], set()).update(rs)
    assert all(banks[a].isdisjoint(banks[c]) for a in banks for c in banks if a != c)
    same(p, with_child(p, 0, out))


def test_partition_rejects_reduction_index():
    b = load_fixture("conv3x3", "i32").root.statements[0]
    with pytest.raises(NotPartitionable):
        partition(b, "c", 2, "SRAM")


def test_partition_single_bank_only_places():
    p = load_fixture("conv3x3", "i32")
    b = p.root.statements[0]
    out = partition(b, "x", 1, "SRAM")
    assert out.indexes == b.indexes
    assert all(r.location is not None for r in out.refinements)
    same(p, with_child(p, 0, out))


# ---- schedule -----------------------------------------------------------------


def three_stage():
    return parse_program("""block []:1 (
	in A[0] i32(4):(1)
	out B[0]:assign i32(4):(1)
	out C[0]:assign i32(4):(1)
	none T[0] i32(4):(1)
) {
	0:
	block [x:4] (
		in A[x] i32(1):(1)
		out T[x]:assign i32(1):(1)
	) {
		0: $a = load(A)
		1: T = store($a)
	}
	1:
	block [x:4] (
		in A[x] i32(1):(1)
		out C[x]:assign i32(1):(1)
	) {
		0: $a = load(A)
		1: C = store($a)
	}
	2:
	block [x:4] (
		in T[x] i32(1):(1)
		out B[x]:assign i32(1):(1)
	) {
		0: $t = load(T)
		1: B = store($t)
	}
}
""")


def test_schedule_puts_consumer_next_to_producer():
    p = three_stage()
    assert greedy_order(p.root) == [0, 2, 1]
    root, diags = schedule(p.root)
    assert diags == []
    assert [s.refinements[1].buffer for s in root.statements] == ["T", "B", "C"]
    same(p, with_root(p, root))
    assert schedule(root)[0] == root


def chain_480():
    text = """block []:1 (
	in A[0] i32(480):(1)
	out B[0]:assign i32(480):(1)
	none T[0] i32(480):(1)
) {
	0:
	block [x:480] (
		in A[x] i32(1):(1)
		out T[x]:assign i32(1):(1)
	) {
		0: $a = load(A)
		1: T = store($a)
	}
	1:
	block [x:480] (
		in T[x] i32(1):(1)
		out B[x]:assign i32(1):(1)
	) {
		0: $t = load(T)
		1: B = store($t)
	}
}
"""
    p = parse_program(text)
    tiled = [tile_rewrite(s, TileShape({"x": 240})) for s in p.root.statements]
    return p, with_root(p, p.root.__class__(p.root.indexes, p.root.constraints, p.root.refinements,
                                             tuple(tiled), p.root.tags, p.root.count))


def test_schedule_places_live_windows_apart():
    p, q = chain_480()
    hw = HardwareConfig((MemoryUnit("SRAM", 512),))
    root, diags = schedule(q.root, hw)
    assert diags == []
    addr = {r.buffer: (k, r.location.address) for k, s in enumerate(root.statements) for r in s.refinements}
    first = {r.buffer: r.location.address for r in root.statements[0].refinements}
    second = {r.buffer: r.location.address for r in root.statements[1].refinements}
    assert first == {"A": 0, "T": 240}
    assert second == {"T": 240, "B": 0}
    assert addr
    same(p, with_root(p, root))
    assert schedule(root, hw)[0] == root


def test_schedule_warns_when_nothing_fits():
    p, q = chain_480()
    root, diags = schedule(q.root, HardwareConfig((MemoryUnit("SRAM", 400),)))
    assert [d.code for d in diags] == ["PlacementFailed"]
    assert all(r.location is None for s in root.statements for r in s.refinements)


# ---- boundary -----------------------------------------------------------------


def test_boundary_split_covers_each_point_once():
    p = load_fixture("conv3x3", "i32")
    b = p.root.statements[0]
    assert interior_box(b) == {"x": (1, 10), "y": (1, 14), "i": (0, 2), "j": (0, 2), "c": (0, 7), "k": (0, 15)}
    pieces = separate_boundary(b)
    assert "interior" in pieces[0].tags and not pieces[0].constraints
    assert all("boundary" in x.tags for x in pieces[1:])
    assert len(enumerate_points(pieces[0])) == 10 * 14 * 9 * 8 * 16 == 161280
    assert sum(len(enumerate_points(x)) for x in pieces) == len(enumerate_points(b))
    same(p, with_child(p, 0, pieces))


def test_boundary_leaves_rectilinear_blocks():
    b = parse_program(matmul_text(2, 3, 4)).root.statements[0]
    assert separate_boundary(b) == [b]


def test_boundary_without_interior():
    text = """block []:1 (
	out B[0]:assign i32(4):(1)
) {
	0:
	block [x:4] (
		-1 >= 0
		out B[x]:assign i32(1):(1)
	) {
		0: $c = constant(1)
		1: B = store($c)
	}
}
"""
    with pytest.raises(NoInteriorRegion):
        separate_boundary(parse_program(text).root.statements[0])


# ---- transpose ----------------------------------------------------------------


def transposable():
    return parse_program("""block []:1 (
	in A[0, 0] i32(4, 6):(6, 1)
	out B[0, 0]:assign i32(4, 6):(6, 1)
	none T[0, 0] i32(4, 6):(6, 1)
) {
	0:
	block [x:4, y:6] (
		in A[x, y] i32(1, 1):(6, 1)
		out T[x, y]:assign i32(1, 1):(6, 1)
	) {
		0: $a = load(A)
		1: T = store($a)
	}
	1:
	block [x:4, y:6] (
		in T[x, y] i32(1, 1):(6, 1)
		out B[x, y]:assign i32(1, 1):(6, 1)
	) {
		0: $t = load(T)
		1: B = store($t)
	}
}
""")


def test_transpose_restrides_every_use():
    p = transposable()
    root = transpose_layout(p.root, "T", (1, 0))
    want = dense_strides((4, 6), (1, 0))
    assert want == (1, 4)
    assert all(r.strides == want for _, b in walk(root) for r in b.refinements if r.buffer == "T")
    same(p, with_root(p, root))


def test_transpose_identity_and_external():
    p = transposable()
    assert transpose_layout(p.root, "T", (0, 1)) is p.root
    with pytest.raises(ExternalBufferImmutable):
        transpose_layout(p.root, "A", (1, 0))
    with pytest.raises(ValueError):
        transpose_layout(p.root, "T", (0, 0))


def test_transpose_after_special_inserts_copy():
    p = parse_program("""block []:1 (
	in S[0, 0] i32(4, 3):(3, 1)
	in X[0] i32(4):(1)
	out B[0, 0]:assign i32(4, 3):(3, 1)
	none T[0, 0]:assign i32(4, 3):(3, 1)
) {
	0: special gather(T, S, X)
	1:
	block [x:4, y:3] (
		in T[x, y] i32(1, 1):(3, 1)
		out B[x, y]:assign i32(1, 1):(3, 1)
	) {
		0: $t = load(T)
		1: B = store($t)
	}
}
""")
    root = transpose_layout(p.root, "T", (1, 0))
    assert isinstance(root.statements[0], Special)
    assert root.ref("T").strides == (3, 1)
    assert root.ref("T_t").strides == (1, 4)
    assert len(root.statements) == 3
    assert root.statements[2].ref("T_t").strides == (1, 4)
    s = random_store(p, 3)
    s["X"] = np.array([2, 0, 3, 1], dtype=np.int32)
    same(p, with_root(p, root), store=s)
