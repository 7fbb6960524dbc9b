import json
import math

import pytest

from dagkernel.registry import (
    BehaviorFailure,
    DuplicateName,
    InvalidDescriptor,
    InvalidResult,
    MissingInput,
    ModuleDescriptor,
    ModuleResult,
    Registry,
    RegistryFrozen,
    UnknownModule,
)


def _echo(inputs):
    return {"seeds": inputs.get("papers", [])}


def test_register_then_lookup_and_invoke():
    reg = Registry()
    desc = ModuleDescriptor("idea_extractor", "prompt", {"papers": "paper-list"}, {"seeds": "seed-list"})
    reg.register(desc, _echo)
    assert reg.lookup("idea_extractor") == desc
    result = reg.invoke("idea_extractor", {"papers": ["p1"]})
    assert result.outputs == {"seeds": ["p1"]}
    assert result.route is None and result.routes is None and result.score is None


def test_duplicate_name_rejected():
    reg = Registry()
    reg.register(ModuleDescriptor("a"), _echo)
    with pytest.raises(DuplicateName):
        reg.register(ModuleDescriptor("a"), _echo)


@pytest.mark.parametrize(
    "desc",
    [
        ModuleDescriptor(""),
        ModuleDescriptor("x", kind="agentic"),
        ModuleDescriptor("x", input_spec={"_route": "label"}),
        ModuleDescriptor("x", output_spec={"_metadata": "map"}),
        ModuleDescriptor("x", input_spec={"a": ""}),
    ],
)
def test_invalid_descriptors(desc):
    with pytest.raises(InvalidDescriptor):
        Registry().register(desc, _echo)


def test_object_with_execute_method_is_accepted():
    class Agent:
        def execute(self, inputs):
            return {"out": 1, "_route": "go"}

    reg = Registry()
    reg.register(ModuleDescriptor("agent", output_spec={"out": "n"}), Agent())
    assert reg.invoke("agent", {}).route == "go"


def test_unknown_module():
    with pytest.raises(UnknownModule):
        Registry().lookup("ghost")
    with pytest.raises(UnknownModule):
        Registry().invoke("ghost", {})


def test_missing_required_input_but_optional_is_fine():
    reg = Registry()
    reg.register(ModuleDescriptor("m", input_spec={"need": "t", "maybe": "t?"}), lambda i: {})
    with pytest.raises(MissingInput) as info:
        reg.invoke("m", {})
    assert info.value.field == "need"
    reg.invoke("m", {"need": 1})


def test_behavior_exception_wrapped():
    reg = Registry()

    @reg.module("boom")
    def boom(inputs):
        raise ValueError("nope")

    with pytest.raises(BehaviorFailure) as info:
        reg.invoke("boom", {})
    assert "ValueError" in str(info.value) and "nope" in str(info.value)


def test_registry_freezes_after_first_invoke():
    reg = Registry()
    reg.register(ModuleDescriptor("a"), lambda i: {})
    reg.invoke("a", {})
    with pytest.raises(RegistryFrozen):
        reg.register(ModuleDescriptor("b"), lambda i: {})


def test_async_behavior():
    reg = Registry()

    async def later(inputs):
        return {"x": 2, "_score": 1}

    reg.register(ModuleDescriptor("later"), later)
    res = reg.invoke("later", {})
    assert res.outputs == {"x": 2} and res.score == 1.0


def test_result_split_and_roundtrip():
    raw = {"ideas": [1], "_route": "stop", "_score": 0.5, "_metadata": {"m": 1}}
    res = ModuleResult.from_dict(raw)
    assert res.outputs == {"ideas": [1]}
    assert (res.route, res.score, res.metadata) == ("stop", 0.5, {"m": 1})
    assert res.to_dict() == raw


@pytest.mark.parametrize(
    "raw",
    [
        {"_route": 3},
        {"_routes": "abc"},
        {"_score": math.nan},
        {"_score": math.inf},
        {"_score": "high"},
        {"_score": True},
        {"_metadata": ["x"]},
        ["not", "a", "mapping"],
    ],
)
def test_invalid_results(raw):
    with pytest.raises(InvalidResult):
        ModuleResult.from_dict(raw)


def test_emit_schemas_sorted_and_deterministic():
    reg = Registry()
    reg.register(ModuleDescriptor("zeta", output_spec={"b": "t", "a": "t"}), _echo)
    reg.register(ModuleDescriptor("alpha", "prompt", {"x": "seed-list?"}), _echo)
    text = reg.emit_schemas()
    assert text == reg.emit_schemas()
    doc = json.loads(text)
    assert [m["name"] for m in doc["modules"]] == ["alpha", "zeta"]
    assert list(doc["modules"][1]["output_spec"]) == ["a", "b"]
    assert doc["modules"][0]["input_spec"] == {"x": "seed-list?"}
