from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyblock.interp import ExecutionError, OutOfBoundsAccess, SerialExecutor, init_outputs
from polyblock.text import parse_program
from polyblock.validate import Diagnostic, check_parallel_semantics, errors, validate_static

from gen import conv_text, copy_text, fixture_text, load_fixture, pool_text, programs, random_store, run


def codes(text, check_scopes=True):
    return [d.code for d in validate_static(parse_program(text, check_scopes=check_scopes))]


@pytest.mark.parametrize("name", ["conv3x3", "conv3x3_y12", "conv3x3_tiled", "conv_relu"])
def test_fixtures_are_clean(name):
    assert validate_static(load_fixture(name)) == []


def test_missing_alias_flags_the_constraint():
    text = fixture_text("conv3x3_tiled").replace(", xo=3*x", "")
    diags = validate_static(parse_program(text, check_scopes=False))
    assert {d.code for d in diags} == {"UnboundParentIndex"}
    first = diags[0]
    assert first.span.line == 14          # "-1 + xo + x + i >= 0"
    assert "xo" in first.message


def test_oversized_window_is_out_of_bounds():
    text = fixture_text("conv3x3_tiled").replace("i8(5, 6, 8)", "i8(50, 6, 8)")
    diags = validate_static(parse_program(text))
    assert [d.code for d in diags] == ["RefinementOutOfBounds"]
    # the window 3*x - 1 + [0, 50) reaches element 57 at x = 3, past the parent's 11
    assert "57" in diags[0].message and "11" in diags[0].message


def test_shifted_leaf_access_is_out_of_bounds():
    text = fixture_text("conv3x3_tiled").replace("in I[x + i, y + j, c]", "in I[x + i + 1, y + j, c]")
    assert "RefinementOutOfBounds" in codes(text)


def test_halo_window_past_parent_is_fine_when_masked():
    # an untiled x keeps a 14-wide halo window around a 12-wide input; constraints mask the rows
    text = fixture_text("conv3x3_tiled").replace("block [x:4, y:4", "block [x:1, y:4").replace(
        "in I[3*x - 1, 4*y - 1, 0] i8(5, 6, 8)", "in I[12*x - 1, 4*y - 1, 0] i8(14, 6, 8)").replace(
        "out O[3*x, 4*y, 0]:add i8(3, 4, 16)", "out O[12*x, 4*y, 0]:add i8(12, 4, 16)").replace(
        "block [x:3, y:4, i:3, j:3, c:8, k:16, xo=3*x", "block [x:12, y:4, i:3, j:3, c:8, k:16, xo=12*x")
    assert codes(text) == []


def test_root_window_past_buffer():
    text = fixture_text("conv3x3").replace("in I[0, 0, 0] i8(12, 16, 8)", "in I[1, 0, 0] i8(12, 16, 8)")
    p = parse_program(text, check_scopes=False)
    # buffer size comes from the root window itself, so shifting it overruns
    assert "RefinementOutOfBounds" in [d.code for d in validate_static(
        type(p)(p.root, {"I": ("i8", 1536), "F": ("i8", 1152), "O": ("i8", 3072)}))]


@pytest.mark.parametrize("old,new,code", [
    ("out O[x, y, k]:add i8", "out O[x, y, k] i8", "MissingAggregation"),
    ("in F[i, j, k, c] i8(1, 1, 1, 1):(384, 128, 8, 1)", "in G[i, j, k, c] i8(1, 1, 1, 1):(384, 128, 8, 1)",
     "UnboundBuffer"),
    ("in F[i, j, k, c] i8(1, 1, 1, 1):(384, 128, 8, 1)", "in F[i, j, k] i8(1, 1, 1):(384, 128, 8)",
     "RankMismatch"),
    ("in F[i, j, k, c] i8(1, 1, 1, 1)", "in F[i, j, k, c] i16(1, 1, 1, 1)", "DtypeMismatch"),
    ("in F[i, j, k, c] i8(1, 1, 1, 1):(384, 128, 8, 1)", "in F[i, j, k, c] i8(1, 1, 1, 1):(1, 1, 1, 1)",
     "StrideMismatch"),
    ("2: $O = mul($I, $F)", "2: $O = mul($I, $Q)", "UnboundTemp"),
    ("2: $O = mul($I, $F)", "2: $O = neg($I, $F)", "BadArity"),
    ("out O[x, y, k]:add", "in O[x, y, k]", "DirectionMismatch"),
    ("block [x:12, y:16", "block [x:12, x:16", "DuplicateIndex"),
    ("block [x:12", "block [x:0", "BadRange"),
])
def test_static_error_codes(old, new, code):
    text = fixture_text("conv3x3")
    assert old in text
    assert code in codes(text.replace(old, new), check_scopes=False)


def test_unknown_intrinsic_is_a_parse_error():
    from polyblock.text import IRSyntaxError
    with pytest.raises(IRSyntaxError, match="unknown intrinsic"):
        parse_program(fixture_text("conv3x3").replace("mul($I, $F)", "frobnicate($I, $F)"))


def test_root_stray_index_is_unbound_index():
    text = fixture_text("conv3x3").replace("in I[0, 0, 0] i8", "in I[q, 0, 0] i8")
    assert "UnboundIndex" in codes(text, check_scopes=False)


def test_diagnostic_render():
    d = Diagnostic("error", "UnboundBuffer", "buffer 'G' is not passed in", None)
    assert d.render("a.stripe") == "error UnboundBuffer a.stripe:?:? buffer 'G' is not passed in"
    text = fixture_text("conv3x3").replace("out O[x, y, k]:add i8", "out O[x, y, k] i8")
    (diag,) = errors(validate_static(parse_program(text)))
    assert diag.render("f.stripe").startswith("error MissingAggregation f.stripe:14:3 ")


# ---- static containment is conservative ----------------------------------


@settings(max_examples=60)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(-2, 2), st.integers(-1, 1), st.integers(0, 999))
def test_static_clean_never_faults(h, w, shift, grow, seed):
    off = shift - 1
    new = "x + i" + (f" + {off}" if off > 0 else f" - {-off}" if off < 0 else "")
    text = conv_text(h, w, 3, 3, 2, 2).replace("in I[x + i - 1,", f"in I[{new},")
    if grow:
        # widen or shrink the root window of the output
        text = text.replace(f"out O[0, 0, 0]:assign i32({h}, ", f"out O[0, 0, 0]:assign i32({max(1, h + grow)}, ")
    p = parse_program(text)
    try:
        clean = not errors(validate_static(p))
    except Exception:
        clean = False
    if clean:
        run(p, random_store(p, seed))


# ---- dynamic checks -----------------------------------------------------


def test_conv_add_has_no_conflicts():
    p = load_fixture("conv3x3")
    assert check_parallel_semantics(p).ok


def test_conv_assign_conflicts_on_every_output():
    p = parse_program(fixture_text("conv3x3").replace("out O[x, y, k]:add", "out O[x, y, k]:assign"))
    rep = check_parallel_semantics(p)
    assign = rep.by_code("AssignConflict")
    assert len(assign) == 12 * 16 * 16 == len(rep)
    writers = np.array([c.writers for c in assign]).reshape(12, 16, 16)
    assert writers.max() == 3 * 3 * 8 == 72
    assert writers[1:11, 1:15].min() == 72
    assert writers[0, 0, 0] == 2 * 2 * 8 and writers[0, 5, 0] == 2 * 3 * 8


NEIGHBOUR = """block []:1 (
	inout A[0]:add i32(5):(1)
) {
	0:
	block [x:4] (
		inout A[x]:add i32(2):(1)
	) {
		0:
		block [] (
			in A[1] i32(1):(1)
		) {
			0: $a = load(A)
		}
		1:
		block [] (
			out A[0]:add i32(1):(1)
		) {
			0: $one = constant(1)
			1: A = store($one)
		}
	}
}
"""


def test_cross_iteration_write_then_read():
    # iteration x writes A[x] and reads A[x + 1], which iteration x + 1 writes
    p = parse_program(NEIGHBOUR)
    assert validate_static(p) == []
    rep = check_parallel_semantics(p)
    assert sorted(c.element for c in rep.by_code("ReadWriteConflict")) == [1, 2, 3]
    assert rep.by_code("AssignConflict") == []


def test_same_iteration_read_after_write_is_fine():
    text = NEIGHBOUR.replace("in A[1] i32(1)", "in A[0] i32(1)")
    assert check_parallel_semantics(parse_program(text)).ok


def test_single_iteration_assign_is_fine():
    text = copy_text(1)
    assert check_parallel_semantics(parse_program(text)).ok


# ---- oracle: the vector checker agrees with a serial trace ----------------


def serial_conflicts(p, store):
    """Brute-force conflict set from a serial run's access trace."""
    groups = defaultdict(lambda: {"w": set(), "r": set(), "aw": set()})
    roots = set(p.buffers)

    def tracer(kind, key, addr, chain, inst):
        if key not in roots:
            return
        for k in range(1, len(chain)):
            parent_inst = chain[k - 1][0], chain[k - 1][1]
            g = groups[(parent_inst, chain[k][0], key, addr)]
            it = chain[k][1]
            if kind == "w":
                g["w"].add(it)
                if chain[k][2] == "assign":
                    g["aw"].add(it)
            else:
                g["r"].add(it)

    SerialExecutor(tracer=tracer).run(p, store)
    out = set()
    for (_, _, key, addr), g in groups.items():
        if len(g["aw"]) > 1:
            out.add(("AssignConflict", key, addr))
        if g["w"] and g["r"] and len(g["w"] | g["r"]) > 1:
            out.add(("ReadWriteConflict", key, addr))
    return out


@settings(max_examples=30)
@given(st.sampled_from(["add", "assign", "max"]), st.integers(1, 4), st.integers(1, 4), st.integers(0, 99))
def test_checker_matches_serial_oracle(agg, h, kh, seed):
    text = pool_text(h, 2, 2, kh, 1, "max").replace("out O[x, y, c]:max", f"out O[x, y, c]:{agg}")
    p = parse_program(text)
    store = random_store(p, seed)
    got = {(c.code, c.buffer, c.element) for c in check_parallel_semantics(p, store).conflicts}
    assert got == serial_conflicts(p, store)


def test_oracle_on_neighbour_conflict():
    text = NEIGHBOUR
    p = parse_program(text)
    store = init_outputs(p, random_store(p))
    got = {(c.code, c.buffer, c.element) for c in check_parallel_semantics(p, store).conflicts}
    assert got == serial_conflicts(p, store)


@settings(max_examples=25)
@given(programs(), st.integers(0, 999))
def test_generated_programs_have_no_conflicts(text, seed):
    p = parse_program(text)
    assert validate_static(p) == []
    assert check_parallel_semantics(p, random_store(p, seed)).ok
