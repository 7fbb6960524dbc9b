import json
from collections import Counter

import pytest

from dagkernel.dsl import NodeSpec, PipelineDoc
from dagkernel.registry import ModuleResult
from dagkernel.runner import (
    AmbiguousRouting,
    CloneCollision,
    NodeFailure,
    NodeTimeout,
    PipelineInvalid,
    RoundsExhausted,
    RunState,
    UnknownRouteLabel,
    apply_routing,
    clone_subdag,
    execute,
    record_key,
)
from dagkernel.store import RecordStores

from helpers import doc, fan_doc, scripted_registry

LINEAR = """
nodes:
  - id: a
    module: source
    params: {value: 7}
    output_mapping: {value: a.value}
  - id: b
    module: passthrough
    input_mapping: {value: a.value}
    output_mapping: {value: writing_store.values}
"""

BRANCH = """
nodes:
  - id: src
    module: source
  - id: pick
    module: router
    depends_on: [src]
    params: {route: right}
    routes: {left: l, right: r}
  - id: l
    module: source
    output_mapping: {value: writing_store.left}
  - id: r
    module: source
    output_mapping: {value: writing_store.right}
  - id: after
    module: passthrough
    depends_on: [r]
    output_mapping: {value: writing_store.after}
"""

LOOP = """
nodes:
  - id: start
    module: source
  - id: body
    module: passthrough
    depends_on: [start]
  - id: gate
    module: scripted_gate
    depends_on: [body]
    routes: {again: body, done: finish}
  - id: finish
    module: source
    output_mapping: {value: writing_store.done}
config:
  max_rounds: %d
"""


def outcomes(state):
    return Counter(r.node for r in state.trace if r.outcome == "ok")


def test_linear_run_publishes_and_persists():
    stores = RecordStores()
    state = execute(doc(LINEAR), scripted_registry(), stores, retry_delay=0)
    assert state.context.get("a.value") == 7 and state.context.get("b.value") == 7
    assert state.executed() == ["a", "b"]
    assert stores.count("writing", "values") == 1


def test_route_runs_only_the_chosen_branch():
    state = execute(doc(BRANCH), scripted_registry(), RecordStores(), retry_delay=0)
    assert state.executed() == ["src", "pick", "r", "after"]
    assert [r.route_taken for r in state.trace if r.node == "pick"] == ["right"]


def test_loop_reruns_body_until_stop():
    reg = scripted_registry(["again", "again", "again", "done"])
    state = execute(doc(LOOP % 100), reg, RecordStores(), retry_delay=0)
    counts = outcomes(state)
    assert counts == Counter({"start": 1, "body": 4, "gate": 4, "finish": 1})
    assert state.loop_traversals == {"gate->body": 3}
    # old values kept in history, context holds only the last round
    assert len([k for k, _ in state.context.history if k == "body.value"]) == 3
    assert state.score_history == [("gate", 0.5)] * 4


@pytest.mark.parametrize("rounds", [1, 5, 100])
def test_rounds_exhausted_at_exact_bound(rounds):
    reg = scripted_registry(["again"])
    with pytest.raises(RoundsExhausted) as info:
        execute(doc(LOOP % rounds), reg, RecordStores(), retry_delay=0)
    state = info.value.state
    assert state.loop_traversals["gate->body"] == rounds
    assert outcomes(state)["body"] == rounds + 1
    assert state.trace[-1].outcome == "rounds_exhausted"
    assert outcomes(state)["finish"] == 0


def test_unknown_route_label():
    text = BRANCH.replace("route: right", "route: middle")
    with pytest.raises(UnknownRouteLabel):
        execute(doc(text), scripted_registry(), retry_delay=0)


def test_both_route_fields_is_ambiguous():
    state = RunState.start(doc(BRANCH))
    with pytest.raises(AmbiguousRouting):
        apply_routing("src", ModuleResult({}, route="left", routes=["x"]), state)


def test_no_route_activates_every_dependency_successor():
    state = RunState.start(doc(BRANCH))
    state.runnable()
    assert apply_routing("src", ModuleResult({"value": 1}), state) == ["pick"]


@pytest.mark.parametrize("k", [1, 3, 7])
def test_fanout_clones_k_times_m_and_joins_once(k):
    state = execute(fan_doc(k), scripted_registry(), RecordStores(), retry_delay=0)
    counts = outcomes(state)
    cloned = [n for n in counts if "#" in n]
    assert len(cloned) == 3 * k
    assert sorted(cloned) == sorted(f"{m}#{j}" for m in "abc" for j in range(k))
    assert counts["join"] == 1 and counts["fan"] == 1
    joined = state.context.get("join.value")
    assert joined == [[None, [None, [f"w{j}", None]]] for j in range(k)]
    assert [r.route_taken for r in state.trace if r.node == "fan"] == [f"fanout:{k}"]


def test_empty_fanout_skips_branch_but_runs_join():
    state = execute(fan_doc(0), scripted_registry(), retry_delay=0)
    assert outcomes(state) == Counter({"fan": 1, "join": 1})
    assert state.context.get("join.value") == []


def test_fanout_inside_loop_reexpands():
    extra = """  - id: gate
    module: scripted_gate
    depends_on: [join]
    routes: {again: fan, done: end}
  - id: end
    module: source
    output_mapping: {value: writing_store.end}
"""
    reg = scripted_registry(["again", "done"])
    state = execute(fan_doc(2, extra), reg, retry_delay=0)
    counts = outcomes(state)
    assert counts["fan"] == 2 and counts["join"] == 2 and counts["a#0"] == 2 and counts["c#1"] == 2
    assert counts["end"] == 1


def test_clone_collision():
    d = fan_doc(2)
    d.nodes.append(NodeSpec("a#1", "source"))
    with pytest.raises(CloneCollision):
        execute(d, scripted_registry(), validate=False, retry_delay=0)


def test_clone_subdag_static_view():
    sets = clone_subdag(fan_doc(3), "fan", 3)
    assert [[s.id for s in cs.specs] for cs in sets] == [["a#0", "b#0", "c#0"], ["a#1", "b#1", "c#1"], ["a#2", "b#2", "c#2"]]
    assert sets[1].specs[0].input_mapping == {"item": "fan.item#1"}
    assert sets[1].specs[1].input_mapping == {"value": "a#1.value"}
    assert sets[2].instances[0].effective_id == "a#2"


def test_retry_then_success(tmp_path):
    text = f"""
nodes:
  - id: f
    module: flaky
    retry: 2
    params: {{marker: "{tmp_path / 'm'}", failures: 2}}
    output_mapping: {{value: writing_store.v}}
"""
    state = execute(doc(text), scripted_registry(), retry_delay=0)
    assert [(r.attempt, r.outcome) for r in state.trace] == [(1, "failed"), (2, "failed"), (3, "ok")]
    assert state.context.get("f.value") == 3


def test_failure_after_retries_exhausted():
    text = "nodes:\n  - id: x\n    module: fail\n    retry: 1\n"
    with pytest.raises(NodeFailure) as info:
        execute(doc(text), scripted_registry(), retry_delay=0)
    assert info.value.attempts == 2
    assert [r.outcome for r in info.value.state.trace] == ["failed", "failed"]


@pytest.mark.parametrize("backend", ["inline", "isolated"])
def test_timeout(backend, tmp_path):
    text = "nodes:\n  - id: s\n    module: sleepy\n    timeout: 0.1\n    params: {seconds: 2}\n"
    with pytest.raises(NodeTimeout) as info:
        execute(doc(text), scripted_registry(), RecordStores(tmp_path), backend, retry_delay=0)
    assert info.value.state.trace[-1].outcome == "timeout"
    assert info.value.state.trace[-1].duration_ms < 1500


def test_timeout_zero_means_unbounded():
    text = "nodes:\n  - id: s\n    module: sleepy\n    timeout: 0\n    params: {seconds: 0.05}\n"
    assert execute(doc(text), scripted_registry(), retry_delay=0).executed() == ["s"]


def test_invalid_pipeline_never_runs():
    text = "nodes:\n  - id: a\n    module: ghost\n"
    with pytest.raises(PipelineInvalid) as info:
        execute(doc(text), scripted_registry())
    assert "type.unknown_module" in info.value.report.codes()


def test_reserved_fields_stay_out_of_context():
    text = "nodes:\n  - id: r\n    module: reserved_echo\n    output_mapping: {value: writing_store.v}\n"
    state = execute(doc(text), scripted_registry(), RecordStores(), retry_delay=0)
    assert json.loads(state.context.to_json()) == {"r.value": "v"}
    assert state.scores == {"r": 0.9}
    assert state.trace[0].score == 0.9


PARALLEL = """
nodes:
  - id: root
    module: source
%s
  - id: sink
    module: join
    depends_on: [root, %s]
    input_mapping: {values: root.value}
    output_mapping: {value: writing_store.sink}
config:
  max_parallel: %d
"""


def parallel_doc(width, limit):
    branches = "\n".join(
        f"  - id: s{i}\n    module: sleepy\n    depends_on: [root]\n    params: {{seconds: 0.2}}" for i in range(width)
    )
    return doc(PARALLEL % (branches, ", ".join(f"s{i}" for i in range(width)), limit))


def test_isolated_respects_max_parallel(tmp_path):
    state = execute(parallel_doc(4, 2), scripted_registry(), RecordStores(tmp_path), "isolated", retry_delay=0)
    assert state.peak_parallel == 2
    workers = [r.worker for r in state.trace]
    assert len(set(workers)) == len(workers)


def test_isolated_unbounded_runs_branches_together(tmp_path):
    state = execute(parallel_doc(3, 0), scripted_registry(), RecordStores(tmp_path), "isolated", retry_delay=0)
    assert state.peak_parallel == 3


def test_isolated_retry_uses_fresh_worker(tmp_path):
    text = f"""
nodes:
  - id: f
    module: flaky
    retry: 1
    params: {{marker: "{tmp_path / 'm'}", failures: 1}}
"""
    state = execute(doc(text), scripted_registry(), RecordStores(tmp_path), "isolated", retry_delay=0)
    assert [r.outcome for r in state.trace] == ["failed", "ok"]
    assert state.trace[0].worker != state.trace[1].worker


@pytest.mark.parametrize("text", [LINEAR, BRANCH])
def test_backends_agree_on_scripted_pipelines(text, tmp_path):
    a = execute(doc(text), scripted_registry(), RecordStores(tmp_path / "a"), "inline", retry_delay=0)
    b = execute(doc(text), scripted_registry(), RecordStores(tmp_path / "b"), "isolated", retry_delay=0)
    assert a.context.to_json() == b.context.to_json()
    assert outcomes(a) == outcomes(b)


def test_isolated_fanout_matches_inline(tmp_path):
    a = execute(fan_doc(3), scripted_registry(), RecordStores(tmp_path / "a"), "inline", retry_delay=0)
    b = execute(fan_doc(3), scripted_registry(), RecordStores(tmp_path / "b"), "isolated", retry_delay=0)
    assert a.context.to_json() == b.context.to_json()
    assert outcomes(a) == outcomes(b)


def test_unknown_backend():
    with pytest.raises(ValueError):
        execute(doc(LINEAR), scripted_registry(), backend="threads")


def test_trace_jsonl_fields():
    state = execute(doc(LINEAR), scripted_registry(), retry_delay=0)
    rows = [json.loads(line) for line in state.trace_jsonl().splitlines()]
    assert set(rows[0]) == {"node", "attempt", "outcome", "duration_ms", "route_taken", "worker", "score", "error"}


@pytest.mark.parametrize(
    "item, key",
    [("Seed", "Seed"), ({"seed": "s", "title": "t"}, "s"), ({"title": "t"}, "t"), (3, "3"), ({"n": 1}, None), (None, None)],
)
def test_record_key(item, key):
    assert record_key(item) == key


def test_doc_built_in_code_runs():
    d = PipelineDoc([NodeSpec("a", "source", params={"value": 2})])
    assert execute(d, scripted_registry(), retry_delay=0).context.get("a.value") == 2
