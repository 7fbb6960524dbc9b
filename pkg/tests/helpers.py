"""Small scripted modules for runner and validator tests."""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

from dagkernel.dsl import parse_pipeline
from dagkernel.registry import Registry

ROOT = Path(__file__).resolve().parents[1]
PIPELINES = ROOT / "pipelines"
CORPUS = Path(__file__).resolve().parent / "corpus"


def scripted_registry(script: list[str] | None = None) -> Registry:
    """Generic modules whose behaviour is driven by params.

    ``script`` feeds the ``scripted_gate`` module one route label per call
    (the last label repeats). State lives in this process only.
    """
    reg = Registry()
    calls = {"gate": 0}
    labels = list(script or ["stop"])

    @reg.module("source", outputs={"value": "any"})
    def source(inputs):
        return {"value": inputs.get("value", 1)}

    @reg.module("passthrough", inputs={"value": "any?"}, outputs={"value": "any"})
    def passthrough(inputs):
        return {"value": inputs.get("value")}

    @reg.module("router", inputs={"value": "any?"}, outputs={"value": "any"})
    def router(inputs):
        out = {"value": inputs.get("value")}
        if "route" in inputs:
            out["_route"] = inputs["route"]
        return out

    @reg.module("scripted_gate", inputs={"value": "any?"}, outputs={"value": "any"})
    def scripted_gate(inputs):
        label = labels[min(calls["gate"], len(labels) - 1)]
        calls["gate"] += 1
        return {"value": inputs.get("value"), "_route": label, "_score": 0.5}

    @reg.module("fan", outputs={"item": "any", "count": "any"})
    def fan(inputs):
        items = list(inputs.get("items", []))
        return {"count": len(items), "_routes": items}

    @reg.module("work", inputs={"item": "any?", "value": "any?"}, outputs={"value": "any"})
    def work(inputs):
        return {"value": [inputs.get("item"), inputs.get("value")]}

    @reg.module("join", inputs={"values": "any"}, outputs={"value": "any"})
    def join(inputs):
        return {"value": inputs["values"]}

    @reg.module("fail", outputs={"value": "any"})
    def fail(inputs):
        raise RuntimeError(inputs.get("message", "boom"))

    @reg.module("flaky", outputs={"value": "any"})
    def flaky(inputs):
        # counts attempts in a file so forked workers share it
        marker = Path(inputs["marker"])
        n = int(marker.read_text()) if marker.exists() else 0
        marker.write_text(str(n + 1))
        if n < inputs.get("failures", 1):
            raise RuntimeError(f"attempt {n + 1} fails")
        return {"value": n + 1}

    @reg.module("sleepy", outputs={"value": "any"})
    def sleepy(inputs):
        time.sleep(inputs.get("seconds", 0.05))
        return {"value": os.getpid()}

    @reg.module("reserved_echo", outputs={"value": "any"})
    def reserved_echo(inputs):
        return {"value": "v", "_score": 0.9, "_metadata": {"model": "mock"}}

    return reg


def doc(text: str):
    return parse_pipeline(text)


def fan_doc(k, extra=""):
    """``fan`` spreads k items over the chain a -> b -> c; ``join`` gathers c."""
    items = json.dumps([f"w{i}" for i in range(k)])
    return doc(
        f"""
nodes:
  - id: fan
    module: fan
    params: {{items: {items}}}
  - id: a
    module: work
    depends_on: [fan]
    input_mapping: {{item: fan.item}}
  - id: b
    module: work
    depends_on: [a]
    input_mapping: {{value: a.value}}
  - id: c
    module: work
    depends_on: [b]
    input_mapping: {{value: b.value}}
  - id: join
    module: join
    depends_on: [fan, c]
    input_mapping: {{values: c.value}}
    output_mapping: {{value: writing_store.joined}}
{extra}"""
    )
