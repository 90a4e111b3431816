import pytest
from hypothesis import given, settings

from polyblock.ir import structural_equal
from polyblock.text import ParseError, ScopeError, IRSyntaxError, parse_program, print_program

from gen import fixture_text, load_fixture, programs

FIXTURES = ["conv3x3", "conv3x3_y12", "conv3x3_tiled", "conv_relu"]


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_round_trip(name):
    p = parse_program(fixture_text(name))
    text = print_program(p)
    q = parse_program(text)
    assert structural_equal(p, q)
    assert print_program(q) == text


def test_verbatim_fixture_keeps_its_constraint():
    # the transcription keeps 12 in the y constraint, where 16 would be expected
    inner = load_fixture("conv3x3_y12").root.statements[0]
    assert "12 - y - j >= 0" in fixture_text("conv3x3_y12")
    assert inner != load_fixture("conv3x3").root.statements[0]


def test_tiled_fixture_shape():
    mid = load_fixture("conv3x3_tiled").root.statements[0]
    assert [(i.name, i.range) for i in mid.ranged] == [("x", 4), ("y", 4), ("i", 1), ("j", 1), ("c", 1), ("k", 1)]
    assert mid.ref("I").sizes == (5, 6, 8)
    assert [str(o) for o in mid.ref("I").offsets] == ["3*x - 1", "4*y - 1", "0"]
    inner = mid.statements[0]
    assert [(a.name, str(a.alias)) for a in inner.aliases] == [("xo", "3*x"), ("yo", "4*y")]
    assert len(inner.constraints) == 4


def test_tags_round_trip():
    text = fixture_text("conv3x3").replace("block [x:12", "block [x:12", 1)
    text = text.replace("\t\t-1 + x + i >= 0", "\t\t#tensorize\n\t\t#hot\n\t\t-1 + x + i >= 0", 1)
    p = parse_program(text)
    assert p.root.statements[0].tags == {"tensorize", "hot"}
    assert parse_program(print_program(p)) == p


def test_syntax_error_has_position():
    with pytest.raises(IRSyntaxError) as e:
        parse_program("block []:1 (\n\tin I[0] i32(4):(1)\n) {\n\t0: $x = load(I\n}\n")
    assert e.value.span is not None
    assert e.value.span.line == 5


def test_garbage_is_a_syntax_error():
    with pytest.raises(IRSyntaxError) as e:
        parse_program("garbage")
    assert (e.value.span.line, e.value.span.column) == (1, 1)


def test_unknown_direction_rejected():
    with pytest.raises(ParseError):
        parse_program(fixture_text("conv3x3").replace("in F[0, 0, 0, 0]", "sideways F[0, 0, 0, 0]"))


def test_scope_check_at_parse_time():
    text = fixture_text("conv3x3_tiled").replace(", xo=3*x", "")
    with pytest.raises(ScopeError):
        parse_program(text)
    # the validator reports the same problem when parsing is lenient
    parse_program(text, check_scopes=False)


def test_labels_are_printed_as_ordinals():
    text = print_program(load_fixture("conv3x3_tiled"))
    assert "\t\t\t0: $I = load(I)" in text
    assert "\t0:\n\tblock [x:4" in text


@settings(max_examples=60)
@given(programs())
def test_generated_programs_round_trip(text):
    p = parse_program(text)
    out = print_program(p)
    assert parse_program(out) == p
    assert print_program(parse_program(out)) == out
