import json

import pytest

from dagkernel.dsl import parse_pipeline
from dagkernel.library import build_default_registry
from dagkernel.validator import (
    PASSES,
    validate_all,
    validate_contract,
    validate_schema,
    validate_topology,
    validate_types,
)
from dagkernel.dsl import load_raw

from helpers import CORPUS, PIPELINES, scripted_registry

REG = build_default_registry()


def _expectation(path):
    header = path.read_text().splitlines()[0]
    assert header.startswith("# expect:"), path.name
    pass_, code = header.split(":", 1)[1].split()
    return pass_, code


CORPUS_FILES = sorted(CORPUS.glob("*.yaml"))


def test_corpus_has_at_least_four_files_per_pass():
    per_pass = {p: 0 for p in PASSES}
    for path in CORPUS_FILES:
        per_pass[_expectation(path)[0]] += 1
    assert all(n >= 4 for n in per_pass.values()), per_pass


@pytest.mark.parametrize("path", CORPUS_FILES, ids=lambda p: p.stem)
def test_corpus_file_fires_its_pass_only(path):
    pass_, code = _expectation(path)
    report = validate_all(path.read_text(), REG)
    assert code in report.codes(pass_)
    earlier = PASSES[: PASSES.index(pass_)]
    assert not [d for d in report.diagnostics if d.pass_ in earlier]
    # errors, if any, all come from the intended pass
    assert {d.pass_ for d in report.errors()} <= {pass_}
    for d in report.diagnostics:
        assert d.line is not None and d.line >= 1


@pytest.mark.parametrize("path", sorted(PIPELINES.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_pipelines_are_clean(path):
    report = validate_all(path.read_text(), REG)
    assert report.passed and report.diagnostics == []


def test_missing_module_points_at_node_line():
    text = (CORPUS / "schema_missing_module.yaml").read_text()
    (diag,) = validate_all(text, REG).diagnostics
    assert text.splitlines()[diag.line - 1].strip() == "- id: parse"


def test_type_mismatch_line_and_message():
    text = (CORPUS / "type_mismatch.yaml").read_text()
    (diag,) = validate_all(text, REG).diagnostics
    assert text.splitlines()[diag.line - 1].strip() == "papers: seed.seeds"
    assert "paper-list" in diag.message and "seed-list" in diag.message


def test_unmatched_output_names_key_and_dependency():
    text = (CORPUS / "contract_unmatched_output.yaml").read_text()
    (diag,) = validate_all(text, REG).errors()
    assert "'y'" in diag.message and "depends_on" in diag.message


def test_negative_max_rounds_is_one_schema_error():
    out = validate_schema({"nodes": [], "config": {"max_rounds": -3}})
    assert [d.code for d in out] == ["schema.out_of_range"]


def test_idea_loop_schema_clean():
    raw = load_raw((PIPELINES / "idea_loop.yaml").read_text())
    assert validate_schema(raw.tree, raw.source_map) == []


def test_contract_infers_implicit_edges():
    doc = parse_pipeline((PIPELINES / "idea_loop.yaml").read_text())
    diags, inferred = validate_contract(doc)
    assert diags == []
    assert inferred == [("extract", "generate"), ("gate", "export"), ("generate", "gate")]


def test_every_inferred_edge_is_a_literal_reference():
    for path in PIPELINES.glob("*.yaml"):
        doc = parse_pipeline(path.read_text())
        _, inferred = validate_contract(doc)
        literal = {
            (ref.split(".")[0], n.id) for n in doc.nodes for ref in n.input_mapping.values()
        }
        assert set(inferred) <= literal


def test_loop_route_is_not_a_cycle():
    doc = parse_pipeline((PIPELINES / "ml_loop.yaml").read_text())
    assert validate_topology(doc, validate_contract(doc)[1]) == []


def test_schema_errors_skip_later_passes():
    report = validate_all("nodes:\n  - id: a\n    module: ghost\n    depends_on: [a, b]\n    bogus: 1\n", REG)
    assert {d.pass_ for d in report.diagnostics} == {"schema"}


def test_contract_errors_skip_types_but_not_topology():
    text = """
nodes:
  - id: a
    module: ghost
    depends_on: [b]
  - id: b
    module: ghost
    depends_on: [a, missing]
"""
    report = validate_all(text, REG)
    passes = {d.pass_ for d in report.diagnostics}
    assert passes == {"contract", "topology"}
    assert "topology.cycle" in report.codes("topology")


def test_optional_inputs_need_no_wire():
    doc = parse_pipeline("nodes:\n  - id: g\n    module: quality_scorer\n    routes:\n      stop: x\n  - id: x\n    module: exporter\n    output_mapping:\n      summary: writing_store.s\n")
    assert validate_types(doc, REG) == []


def test_param_satisfies_required_input():
    reg = scripted_registry()
    doc = parse_pipeline("nodes:\n  - id: j\n    module: join\n    params:\n      values: [1, 2]\n")
    assert validate_types(doc, reg) == []


def test_edges_block_is_cross_checked_as_warnings():
    text = """
nodes:
  - id: a
    module: source
  - id: b
    module: passthrough
    depends_on: [a]
edges:
  - {from: a, to: b}
  - {from: b, to: a}
"""
    report = validate_all(text, scripted_registry())
    assert report.passed
    assert report.codes("contract") == ["contract.edge_not_in_graph"]


def test_report_json_shape_and_determinism():
    text = (CORPUS / "contract_foreign_output.yaml").read_text()
    a = validate_all(text, REG).dumps()
    assert a == validate_all(text, REG).dumps()
    body = json.loads(a)
    assert body["passed"] is False
    assert set(body["diagnostics"][0]) == {"pass", "severity", "code", "message", "line"}


def test_empty_pipeline_passes_with_warning():
    report = validate_all("nodes: []\n", REG)
    assert report.passed and report.codes() == ["topology.empty_pipeline"]
