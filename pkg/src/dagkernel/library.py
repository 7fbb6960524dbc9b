"""Mock research modules used by the shipped pipelines.

Everything here runs offline: prompt modules ask the completion provider
(the rule-based mock by default) and combine its canned answer with their
inputs, functional modules are plain Python.
"""

from __future__ import annotations

import hashlib
import json
import re
from importlib import resources
from typing import Any

from .kg.index import EmptyIndex, KgIndex, KgItem, KgRef, ProviderRelationJudge
from .provider import LLMProvider, make_provider
from .registry import Registry
from .store import RecordStores

ROLE_PRESETS = {
    "Reader": "similar",
    "Analyst": "similar",
    "Connector": "cross_domain",
    "Contrarian": "opposite",
    "Synthesizer": "counter_intuitive",
    "Critic": "opposite",
}
ROLES = tuple(ROLE_PRESETS)


def load_corpus() -> list[dict[str, Any]]:
    return json.loads(resources.files("dagkernel").joinpath("data/corpus.json").read_text("utf-8"))


def _digest(*parts: Any) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    return hashlib.blake2b(blob, digest_size=6).hexdigest()


def _sentences(text: str) -> list[str]:
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+", text) if s.strip()]


def _ask(provider: LLMProvider, prompt: str) -> Any:
    raw = provider.complete(prompt)
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def build_default_registry(
    provider: LLMProvider | None = None,
    stores: RecordStores | None = None,
    kg: KgIndex | None = None,
) -> Registry:
    """Registry holding the mock module library bound to ``provider`` and ``kg``."""
    provider = provider or make_provider("mock")
    kg = kg if kg is not None else KgIndex()
    reg = Registry()

    @reg.module("paper_crawler", outputs={"papers": "paper-list"}, doc="Emit the bundled paper corpus.")
    def paper_crawler(inputs):
        limit = inputs.get("limit")
        papers = load_corpus()
        return {"papers": papers[:limit] if limit else papers}

    @reg.module(
        "paper_parser",
        inputs={"papers": "paper-list"},
        outputs={"insights": "insight-list"},
        doc="Split each abstract into one insight per sentence.",
    )
    def paper_parser(inputs):
        insights = []
        for paper in inputs["papers"]:
            for sentence in _sentences(paper.get("abstract", "")):
                insights.append({"text": sentence, "paper": paper["id"], "key": f"{paper['id']}:{sentence}"})
        return {"insights": insights}

    @reg.module(
        "kg_ingest",
        inputs={"papers": "paper-list", "insights": "insight-list?"},
        outputs={"report": "kg-report"},
        doc="Index papers, their insights and linked code in the knowledge graph.",
    )
    def kg_ingest(inputs):
        items = []
        for paper in inputs["papers"]:
            items.append(KgItem("paper", paper["title"], key=paper["id"], id=f"paper:{paper['id']}"))
            if paper.get("code"):
                items.append(
                    KgItem(
                        "code",
                        f"code for {paper['title']}",
                        key=paper["code"],
                        refs=[KgRef(node=f"paper:{paper['id']}", label="derives")],
                    )
                )
        for insight in inputs.get("insights") or []:
            items.append(
                KgItem(
                    "idea",
                    insight["text"],
                    key=insight["key"],
                    refs=[KgRef(node=f"paper:{insight['paper']}")],
                    provenance=(insight["paper"], 1, None),
                )
            )
        report = kg.ingest_batch(items, relation=ProviderRelationJudge(provider))
        nodes, edges = kg.counts()
        return {"report": {"counts": report.counts, "skipped": report.skipped, "nodes": nodes, "edges": edges}}

    @reg.module(
        "idea_extractor",
        kind="prompt",
        inputs={"papers": "paper-list?"},
        outputs={"seeds": "seed-list"},
        doc="Turn papers into research seeds. Falls back to the bundled corpus when given none.",
    )
    def idea_extractor(inputs):
        papers = inputs.get("papers") or load_corpus()
        seeds = []
        for paper in papers:
            answer = _ask(provider, f"extract seeds\ntitle: {paper['title']}")
            for angle in answer["angles"]:
                seeds.append({"seed": f"{angle} of {paper['title'].lower()}", "paper": paper["id"]})
        return {"seeds": seeds[: inputs.get("max_seeds") or len(seeds)]}

    @reg.module(
        "idea_generator",
        kind="prompt",
        inputs={"seeds": "seed-list"},
        outputs={"ideas": "idea-list"},
    )
    def idea_generator(inputs):
        ideas = []
        for seed in inputs["seeds"]:
            answer = _ask(provider, f"generate idea\nseed: {seed['seed']}")
            text = answer["template"].format(seed=seed["seed"])
            ideas.append({"key": _digest(text), "text": text, "seed": seed["seed"]})
        return {"ideas": ideas}

    @reg.module(
        "role_dispatcher",
        inputs={"roles": "role-list?"},
        outputs={"item": "role", "roles": "role-list"},
        doc="Fan out one branch per cognitive role.",
    )
    def role_dispatcher(inputs):
        roles = list(inputs.get("roles") or ROLES)
        return {"roles": roles, "_routes": roles}

    @reg.module(
        "cognitive_role",
        kind="prompt",
        inputs={"item": "role", "seeds": "seed-list?"},
        outputs={"idea": "idea"},
        doc="Draft one idea from the first seed, grounded by the role's retrieval scenario.",
    )
    def cognitive_role(inputs):
        role = inputs["item"]
        preset = ROLE_PRESETS.get(role, "similar")
        seeds = inputs.get("seeds") or [{"seed": "open problems"}]
        seed = seeds[0]["seed"]
        try:
            grounding = [hit.id for hit in kg.scenario_retrieve(seed, preset, k=3)]
        except EmptyIndex:
            grounding = []
        answer = _ask(provider, f"adopt role: {role}\nseed: {seed}")
        text = f"{seed}, {answer['twist']}"
        return {"idea": {"key": f"{role}:{_digest(text)}", "role": role, "text": text, "grounding": grounding}}

    @reg.module(
        "result_aggregator",
        inputs={"ideas": "idea"},
        outputs={"ideas": "idea-list"},
        doc="Collect fanned-in ideas into one list ordered by role.",
    )
    def result_aggregator(inputs):
        ideas = inputs["ideas"]
        ideas = ideas if isinstance(ideas, list) else [ideas]
        return {"ideas": sorted(ideas, key=lambda i: (i.get("role", ""), i["key"]))}

    @reg.module(
        "quality_scorer",
        kind="prompt",
        inputs={"ideas": "idea-list?", "threshold": "number?", "above": "label?", "below": "label?"},
        outputs={"ideas": "idea-list", "rating": "number"},
        doc="Score ideas and gate on the threshold (default 0.7).",
    )
    def quality_scorer(inputs):
        ideas = inputs.get("ideas") or []
        listing = "\n".join(i["text"] for i in ideas)
        score = float(_ask(provider, f"score this idea\n{listing}")["score"])
        passed = score >= float(inputs.get("threshold", 0.7))
        route = inputs.get("above", "stop") if passed else inputs.get("below", "continue")
        return {"ideas": ideas, "rating": score, "_score": score, "_route": route}

    @reg.module(
        "evaluator",
        kind="prompt",
        inputs={"ideas": "idea-list?", "route": "label?"},
        outputs={"evaluation": "evaluation"},
    )
    def evaluator(inputs):
        answer = _ask(provider, "evaluate idea")
        out: dict[str, Any] = {"evaluation": {"feasibility": answer["feasibility"]}}
        if inputs.get("route"):
            out["_route"] = inputs["route"]
        return out

    @reg.module(
        "idea_reviewer",
        kind="prompt",
        inputs={"ideas": "idea-list?"},
        outputs={"reviews": "review-list"},
    )
    def idea_reviewer(inputs):
        reviews = []
        for idea in inputs.get("ideas") or []:
            answer = _ask(provider, f"review ideas\n{idea['text']}")
            reviews.append({"key": f"review:{idea['key']}", "idea": idea["key"], "text": answer["review"]})
        return {"reviews": reviews}

    @reg.module(
        "paper_writer",
        kind="prompt",
        inputs={"ideas": "idea-list?", "reviews": "review-list?"},
        outputs={"draft": "draft"},
    )
    def paper_writer(inputs):
        answer = _ask(provider, "write draft")
        ideas = inputs.get("ideas") or []
        sections = [f"- {i['text']}" for i in ideas]
        body = answer["body"] + ("\n" + "\n".join(sections) if sections else "")
        return {"draft": {"title": answer["title"], "body": body, "key": _digest(answer["title"], body)}}

    @reg.module(
        "exporter",
        inputs={"draft": "draft?", "ideas": "idea-list?", "reviews": "review-list?", "evaluation": "evaluation?"},
        outputs={"summary": "summary"},
        doc="Summarise whatever reached the end of the pipeline.",
    )
    def exporter(inputs):
        summary = {
            "ideas": len(inputs.get("ideas") or []),
            "reviews": len(inputs.get("reviews") or []),
            "draft": (inputs.get("draft") or {}).get("title"),
        }
        summary["key"] = "summary:" + _digest(summary)
        return {"summary": summary}

    return reg
