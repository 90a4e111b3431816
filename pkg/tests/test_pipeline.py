from dataclasses import replace

import pytest

from polyblock.hwconfig import load_config
from polyblock.ir import walk
from polyblock.passes import (
    PASSES,
    PassConfig,
    PassFailed,
    Pipeline,
    UnknownPass,
    apply_pipeline,
    get_pass,
    register_pass,
)
from polyblock.passes.pipeline import format_param, parse_param
from polyblock.validate import errors, validate_static

from gen import DATA, load_fixture, matmul_text, random_store, run
from polyblock.text import parse_program


def same(p, q, seed=0):
    assert not errors(validate_static(q))
    s = random_store(p, seed)
    assert run(p, s) == run(q, s)


def test_empty_pipeline_is_identity():
    p = load_fixture("conv3x3", "i32")
    reports = []
    assert apply_pipeline(p, Pipeline(), reports=reports) is p
    assert reports == []


def test_five_pass_pipeline_on_conv_relu():
    p = load_fixture("conv_relu")
    hw, pipe = load_config("mem SRAM cap=512 line=8\n"
                           "pass autotile mem=SRAM untiled=F\npass fuse\npass localize\npass scalarize\npass schedule\n")
    reports = []
    q = apply_pipeline(p, pipe, hw, reports)
    same(p, q)
    assert "pass=autotile target=1 candidates=" in "\n".join(reports)
    assert any("tiles=x:1,y:1,k:8 " in r for r in reports)
    assert any(r.startswith("pass=fuse refused=0,1 reason=") for r in reports)
    assert [r.split()[0] for r in reports if " changed=" in r] == [
        "pass=autotile", "pass=fuse", "pass=localize", "pass=scalarize", "pass=schedule"]


def test_accelerator_pipeline():
    p = load_fixture("conv3x3", "i32")
    hw, pipe = load_config((DATA / "accel_2level.hwcfg").read_text())
    q = apply_pipeline(p, pipe, hw)
    same(p, q)
    assert all(r.location is not None for r in q.root.statements[0].refinements)


def test_pinned_config_reproduces_tiled_fixture():
    p = load_fixture("conv3x3")
    hw, pipe = load_config((DATA / "autotile_pinned.hwcfg").read_text())
    q = apply_pipeline(p, pipe, hw)
    assert q.root.statements[0] == load_fixture("conv3x3_tiled").root.statements[0]


def test_structural_passes_through_the_driver():
    p = load_fixture("conv3x3", "i32")
    hw, pipe = load_config("mem SRAM cap=512 line=8 banks=2\nunit mxu stencil=4x4x8\n"
                           "pass boundary\npass partition index=k\npass stencil\n")
    reports = []
    q = apply_pipeline(p, pipe, hw, reports)
    same(p, q)
    assert any("pieces=" in r for r in reports)
    assert any("banks=2" in r for r in reports)


def test_unknown_pass():
    with pytest.raises(UnknownPass):
        get_pass("nope")
    with pytest.raises(UnknownPass):
        apply_pipeline(load_fixture("conv3x3"), [PassConfig("nope")])


def test_missing_and_unknown_parameters():
    p = load_fixture("conv3x3")
    with pytest.raises(PassFailed) as e:
        apply_pipeline(p, [PassConfig("partition")])
    assert e.value.diagnostics[0].code == "BadParameter"
    with pytest.raises(PassFailed) as e:
        apply_pipeline(p, [PassConfig("fuse", {"depth": 2})])
    assert e.value.diagnostics[0].code == "BadParameter"


def test_pass_errors_become_failures():
    p = load_fixture("conv3x3")
    with pytest.raises(PassFailed) as e:
        apply_pipeline(p, [PassConfig("transpose", {"buffer": "I", "order": (2, 1, 0)})])
    assert e.value.name == "transpose"
    assert e.value.diagnostics[0].code == "ExternalBufferImmutable"


@pytest.fixture
def broken_pass():
    @register_pass("grow_window")
    def _grow(p, params, hw, out):
        b = p.root.statements[0]
        refs = tuple(replace(r, sizes=tuple(s + 100 for s in r.sizes)) for r in b.refinements)
        return replace(p, root=replace(p.root, statements=(replace(b, refinements=refs),)))
    yield "grow_window"
    del PASSES["grow_window"]


def test_invalid_output_is_caught(broken_pass):
    p = parse_program(matmul_text(2, 2, 2))
    reports = []
    with pytest.raises(PassFailed) as e:
        apply_pipeline(p, [PassConfig("fuse"), PassConfig(broken_pass)], reports=reports)
    assert e.value.name == broken_pass
    assert e.value.diagnostics and all(d.severity == "error" for d in e.value.diagnostics)
    assert len(reports) == 1 and reports[0].startswith("pass=fuse")


@pytest.mark.parametrize("kind,text,value", [
    ("int", "7", 7), ("flag", "yes", True), ("flag", "false", False), ("str", "x", "x"),
    ("tiles", "x:3,y:4", {"x": 3, "y": 4}), ("names", "F,G", ("F", "G")), ("ints", "2,0,1", (2, 0, 1)),
])
def test_param_round_trip(kind, text, value):
    assert parse_param(kind, text) == value
    assert parse_param(kind, format_param(kind, value)) == value


@pytest.mark.parametrize("kind,text", [("int", "x"), ("flag", "maybe"), ("tiles", "x3"), ("str", "")])
def test_bad_params(kind, text):
    with pytest.raises(ValueError):
        parse_param(kind, text)


def test_every_pass_is_documented():
    assert set(PASSES) >= {"autotile", "fuse", "localize", "scalarize", "schedule", "stencil",
                           "partition", "boundary", "transpose"}
    for info in PASSES.values():
        assert info.doc
        for prm in info.params.values():
            assert prm.doc
