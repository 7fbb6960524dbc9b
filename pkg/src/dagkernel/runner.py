"""Graph runner: schedules node instances, applies routing, retries, fans out.

Execution model
---------------
Every node starts as one instance. An instance becomes *ready* once all of
its predecessors (dependency edges plus forward route edges) are resolved.
A ready instance runs if some predecessor activated it, otherwise it is
skipped. When an instance completes:

* ``_route`` activates only ``routes[label]``. If that route is a loop
  edge the target's downstream body is reset and re-run.
* ``_routes`` clones the downstream branch once per element and activates
  the clones plus the node's other dependency successors.
* neither activates every dependency successor.

Loop edges are bounded per edge by ``config.max_rounds``.
"""

from __future__ import annotations

import logging
import multiprocessing
import multiprocessing.connection
import os
import sys
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

from .dsl import NodeSpec, PipelineDoc, rename_node, resolve_reference
from .registry import ModuleResult, Registry
from .store import STORE_ALIASES, ExecutionContext, RecordStores
from .topology import (
    CycleDetected,
    DepGraph,
    execution_graph,
    fanout_extent,
    infer_dependencies,
    kahn_schedule,
)

log = logging.getLogger(__name__)

FANOUT_FIELD = "item"
BACKENDS = ("inline", "isolated")

PENDING, RUNNING, DONE, SKIPPED, EXPANDED = "pending", "running", "done", "skipped", "expanded"

__all__ = [
    "AmbiguousRouting",
    "CloneCollision",
    "CycleDetected",
    "NodeFailure",
    "NodeInstance",
    "NodeTimeout",
    "PipelineInvalid",
    "RoundsExhausted",
    "RunError",
    "RunState",
    "TraceRecord",
    "UnknownRouteLabel",
    "apply_routing",
    "clone_subdag",
    "execute",
    "infer_dependencies",
    "kahn_schedule",
]


class RunError(Exception):
    outcome = "failed"
    state: "RunState | None" = None


class NodeFailure(RunError):
    def __init__(self, node: str, attempts: int, cause: str = ""):
        super().__init__(f"node {node!r} failed after {attempts} attempt(s): {cause}")
        self.node, self.attempts, self.cause = node, attempts, cause


class NodeTimeout(RunError):
    outcome = "timeout"

    def __init__(self, node: str, timeout: float, attempts: int = 1):
        super().__init__(f"node {node!r} timed out after {timeout}s ({attempts} attempt(s))")
        self.node, self.timeout, self.attempts = node, timeout, attempts


class RoundsExhausted(RunError):
    outcome = "rounds_exhausted"

    def __init__(self, edge: str, rounds: int):
        super().__init__(f"loop edge {edge} exceeded max_rounds={rounds}")
        self.edge, self.rounds = edge, rounds


class UnknownRouteLabel(RunError):
    outcome = "routing_error"

    def __init__(self, node: str, label: str):
        super().__init__(f"node {node!r} returned unknown route label {label!r}")
        self.node, self.label = node, label


class AmbiguousRouting(RunError):
    outcome = "routing_error"


class CloneCollision(RunError):
    outcome = "routing_error"


class PipelineInvalid(RunError):
    outcome = "invalid"

    def __init__(self, report):
        codes = ", ".join(d.code for d in report.errors())
        super().__init__(f"pipeline failed validation: {codes}")
        self.report = report


@dataclass(frozen=True)
class NodeInstance:
    base: str
    suffix: str | None = None

    @property
    def effective_id(self) -> str:
        return self.base if self.suffix is None else f"{self.base}#{self.suffix}"


@dataclass
class TraceRecord:
    node: str
    attempt: int
    outcome: str
    duration_ms: float
    route_taken: str | None = None
    worker: int | None = None
    score: float | None = None
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class _Inst:
    eid: str
    base: str
    spec: NodeSpec
    dep_preds: set[str]
    route_preds: set[str]
    status: str = PENDING
    activated_by: set[str] = field(default_factory=set)
    generation: int = 0

    @property
    def preds(self) -> set[str]:
        return self.dep_preds | self.route_preds


@dataclass
class _Expansion:
    members: list[str]
    clones: dict[str, list[str]]  # member eid -> clone eids by index
    rewired: dict[str, tuple[set[str], set[str]]]  # outside eid -> original (dep, route) preds


@dataclass
class RunState:
    """Mutable state of one run. The scheduler is its only writer."""

    doc: PipelineDoc
    context: ExecutionContext
    stores: RecordStores | None = None
    node_exec_counts: Counter = field(default_factory=Counter)
    loop_traversals: dict[str, int] = field(default_factory=dict)
    frontier: set[str] = field(default_factory=set)
    scores: dict[str, float] = field(default_factory=dict)
    score_history: list[tuple[str, float]] = field(default_factory=list)
    trace: list[TraceRecord] = field(default_factory=list)
    peak_parallel: int = 0
    instances: dict[str, _Inst] = field(default_factory=dict, repr=False)
    expansions: dict[str, _Expansion] = field(default_factory=dict, repr=False)
    loop_edges: set[tuple[str, str]] = field(default_factory=set, repr=False)

    @classmethod
    def start(
        cls,
        doc: PipelineDoc,
        stores: RecordStores | None = None,
        run_id: str | None = None,
    ) -> "RunState":
        state = cls(doc, ExecutionContext(run_id, stores), stores)
        graph, routes = execution_graph(doc)
        kahn_schedule(graph)  # raises CycleDetected
        base = infer_dependencies(doc)
        for spec in doc.nodes:
            state.instances[spec.id] = _Inst(
                spec.id,
                spec.id,
                spec,
                base.preds(spec.id),
                {r.src for r in routes if r.dst == spec.id and not r.loop},
            )
        state.loop_edges = {(r.src, r.label) for r in routes if r.loop}
        return state

    # -- scheduling ---------------------------------------------------------

    def runnable(self) -> list[str]:
        """Resolve skips to a fixpoint and return ready, activated instances sorted by id."""
        while True:
            ready, changed = [], False
            for eid, inst in self.instances.items():
                if inst.status != PENDING:
                    continue
                if any(self.instances[p].status in (PENDING, RUNNING) for p in inst.preds):
                    continue
                if inst.preds and not inst.activated_by:
                    inst.status = SKIPPED
                    changed = True
                else:
                    ready.append(eid)
            if not changed:
                self.frontier = set(ready)
                return sorted(ready)

    def succs(self, eid: str) -> list[str]:
        return sorted(e for e, inst in self.instances.items() if eid in inst.preds)

    def descendants(self, eid: str) -> set[str]:
        succ: dict[str, set[str]] = {}
        for e, inst in self.instances.items():
            for p in inst.preds:
                succ.setdefault(p, set()).add(e)
        seen, todo = set(), [eid]
        while todo:
            for nxt in succ.get(todo.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        return seen

    # -- data flow ----------------------------------------------------------

    def _lookup(self, source: str, name: str) -> tuple[bool, Any]:
        ref = f"{source}.{name}"
        inst = self.instances.get(source)
        if inst is not None and inst.status == EXPANDED:
            values = []
            for clone in self.expansions_by_member().get(source, []):
                found, value = self._lookup(clone, name)
                if found:
                    values.append(value)
            return True, values
        if ref in self.context:
            return True, self.context.get(ref)
        if source in STORE_ALIASES and self.context.stores is not None:
            return True, self.context.get(ref)
        return False, None

    def expansions_by_member(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for exp in self.expansions.values():
            out.update(exp.clones)
        return out

    def inputs_for(self, eid: str) -> dict[str, Any]:
        spec = self.instances[eid].spec
        inputs = dict(spec.params)
        for local, ref in spec.input_mapping.items():
            source, name = resolve_reference(ref)
            found, value = self._lookup(source, name)
            if found:
                inputs[local] = value
        return inputs

    def _publish(self, inst: _Inst, result: ModuleResult) -> None:
        eid = inst.eid
        for name, value in result.outputs.items():
            self.context.put(f"{eid}.{name}", value)
        for local, ref in inst.spec.output_mapping.items():
            if local not in result.outputs:
                log.warning("%s: output_mapping names %r but the module did not return it", eid, local)
                continue
            source, name = resolve_reference(ref)
            value = result.outputs[local]
            if source == eid:
                if name != local:
                    self.context.put(f"{eid}.{name}", value)
            elif source in STORE_ALIASES and self.stores is not None:
                self._persist(source, name, value)

    def _persist(self, alias: str, record_type: str, value: Any) -> None:
        items = value if isinstance(value, list) else [value]
        for item in items:
            key = record_key(item)
            if key is None or not key.strip():
                log.warning("skipping %s.%s record without a usable key: %r", alias, record_type, item)
                continue
            self.stores.persist_record(alias, record_type, key, item, self.context.run_id)

    # -- routing ------------------------------------------------------------

    def apply_routing(self, eid: str, result: ModuleResult) -> list[str]:
        """Record ``result`` for instance ``eid`` and return the instances it activated."""
        inst = self.instances[eid]
        if result.route is not None and result.routes is not None:
            raise AmbiguousRouting(f"node {eid!r} returned both _route and _routes")
        if result.route is not None and result.route not in inst.spec.routes:
            raise UnknownRouteLabel(eid, result.route)
        self._publish(inst, result)
        if result.score is not None:
            self.scores[inst.base] = result.score
            self.score_history.append((eid, result.score))
        inst.status = DONE
        self.node_exec_counts[eid] += 1
        if result.route is not None:
            target = inst.spec.routes[result.route]
            if (inst.base, result.route) in self.loop_edges:
                self._traverse_loop(inst, target)
                return [target]
            self._activate(target, eid)
            return [target]
        if result.routes is not None:
            return self._fan_out(inst, list(result.routes))
        activated = [s for s in self.succs(eid) if eid in self.instances[s].dep_preds]
        for s in activated:
            self._activate(s, eid)
        return activated

    def _activate(self, target: str, source: str) -> None:
        inst = self.instances.get(target)
        if inst is None:
            raise UnknownRouteLabel(source, target)
        if inst.status == EXPANDED:
            for clone in self.expansions_by_member().get(target, []):
                self._activate(clone, source)
            return
        inst.activated_by.add(source)

    def _traverse_loop(self, router: _Inst, target: str) -> None:
        edge = f"{router.base}->{self.instances[target].base}"
        done = self.loop_traversals.get(edge, 0)
        if done >= self.doc.config.max_rounds:
            raise RoundsExhausted(edge, self.doc.config.max_rounds)
        self.loop_traversals[edge] = done + 1
        body = {target} | self.descendants(target)
        for anchor in sorted(a for a in self.expansions if a in body):
            self._collapse(anchor)
        body = {target} | self.descendants(target)
        self.context.reopen(body)
        for eid in body:
            inst = self.instances[eid]
            inst.status = PENDING
            inst.activated_by -= body
            inst.generation += 1
        self.instances[target].activated_by.add(f"loop:{router.eid}")

    def _fan_out(self, anchor: _Inst, elements: list[Any]) -> list[str]:
        aid = anchor.eid
        pred = {e: set(i.preds) for e, i in self.instances.items() if i.status != EXPANDED}
        members = fanout_extent(aid, pred)
        others = [s for s in self.succs(aid) if s not in members and aid in self.instances[s].dep_preds]
        if not members:
            for s in others:
                self._activate(s, aid)
            return others
        clones: dict[str, list[str]] = {m: [] for m in members}
        activated = []
        for j, element in enumerate(elements):
            mapping = {m: f"{m}#{j}" for m in members}
            for new in mapping.values():
                if new in self.instances:
                    raise CloneCollision(f"effective id {new!r} already exists")
            item_ref = f"{aid}.{FANOUT_FIELD}"
            self.context.put(f"{item_ref}#{j}", element)
            for m in members:
                src = self.instances[m]
                new = mapping[m]
                spec = rename_node(src.spec, new, mapping, {item_ref: f"{item_ref}#{j}"})
                clone = _Inst(
                    new,
                    src.base,
                    spec,
                    {mapping.get(p, p) for p in src.dep_preds},
                    {mapping.get(p, p) for p in src.route_preds},
                )
                if aid in clone.dep_preds:
                    clone.activated_by.add(aid)
                    activated.append(new)
                self.instances[new] = clone
                clones[m].append(new)
        rewired: dict[str, tuple[set[str], set[str]]] = {}
        for eid, inst in self.instances.items():
            if eid in members or any(eid in c for c in clones.values()):
                continue
            if inst.preds & set(members):
                rewired[eid] = (set(inst.dep_preds), set(inst.route_preds))
                inst.dep_preds = _expand(inst.dep_preds, clones)
                inst.route_preds = _expand(inst.route_preds, clones)
        for m in members:
            self.instances[m].status = EXPANDED
        self.expansions[aid] = _Expansion(members, clones, rewired)
        for s in others:
            self._activate(s, aid)
        return activated + others

    def _collapse(self, anchor: str) -> None:
        exp = self.expansions.pop(anchor)
        for nested in [a for a in self.expansions if any(a in c for c in exp.clones.values())]:
            self._collapse(nested)
        for eids in exp.clones.values():
            for eid in eids:
                del self.instances[eid]
            self.context.reopen(eids)
        for eid, (dep, route) in exp.rewired.items():
            if eid in self.instances:
                self.instances[eid].dep_preds, self.instances[eid].route_preds = dep, route
        for m in exp.members:
            self.instances[m].status = PENDING

    # -- reporting ----------------------------------------------------------

    def executed(self) -> list[str]:
        """Effective ids of successful attempts, in trace order."""
        return [r.node for r in self.trace if r.outcome == "ok"]

    def trace_jsonl(self) -> str:
        import json

        return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in self.trace)


def _expand(preds: set[str], clones: dict[str, list[str]]) -> set[str]:
    out = set()
    for p in preds:
        out.update(clones.get(p, [p]))
    return out


def record_key(item: Any) -> str | None:
    """Dedup key for a value persisted through an output_mapping into a store."""
    if isinstance(item, str):
        return item
    if isinstance(item, dict):
        for name in ("key", "seed", "title", "text", "name", "id"):
            if isinstance(item.get(name), str):
                return item[name]
    if isinstance(item, (int, float)) and not isinstance(item, bool):
        return str(item)
    return None


def apply_routing(node: NodeSpec | str, result: ModuleResult, state: RunState) -> list[str]:
    """Apply one result to ``state``. ``node`` is a node spec or an effective id."""
    eid = node if isinstance(node, str) else node.id
    return state.apply_routing(eid, result)


@dataclass
class CloneSet:
    index: int
    instances: list[NodeInstance]
    specs: list[NodeSpec]


def clone_subdag(doc: PipelineDoc, anchor: str, k: int) -> list[CloneSet]:
    """Static view of a fan-out of ``k`` at ``anchor``: the renamed specs for each copy."""
    if k < 1:
        raise ValueError("fan-out count must be positive")
    graph, _ = execution_graph(doc)
    members = fanout_extent(anchor, graph.pred_map())
    ids = set(doc.ids)
    item_ref = f"{anchor}.{FANOUT_FIELD}"
    out = []
    for j in range(k):
        mapping = {m: f"{m}#{j}" for m in members}
        for new in mapping.values():
            if new in ids:
                raise CloneCollision(f"effective id {new!r} already exists")
        specs = [rename_node(doc.node(m), mapping[m], mapping, {item_ref: f"{item_ref}#{j}"}) for m in members]
        out.append(CloneSet(j, [NodeInstance(m, str(j)) for m in members], specs))
    return out


# -- backends ---------------------------------------------------------------


class _Timeout(Exception):
    pass


def _call_with_timeout(fn: Callable[[], Any], timeout: float) -> Any:
    if not timeout:
        return fn()
    box: dict[str, Any] = {}

    def target():
        try:
            box["value"] = fn()
        except BaseException as exc:  # noqa: BLE001 - re-raised in caller
            box["error"] = exc

    worker = threading.Thread(target=target, daemon=True)
    worker.start()
    worker.join(timeout)
    if worker.is_alive():
        raise _Timeout()
    if "error" in box:
        raise box["error"]
    return box["value"]


def _describe(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


class _Runner:
    def __init__(self, state: RunState, registry: Registry, retry_delay: float):
        self.state = state
        self.registry = registry
        self.retry_delay = retry_delay

    def finish(self, eid: str, attempt: int, result: ModuleResult, started: float, worker: int) -> None:
        record = TraceRecord(
            eid,
            attempt,
            "ok",
            round((time.perf_counter() - started) * 1000, 3),
            result.route,
            worker,
            result.score,
        )
        if result.routes is not None and result.route is None:
            record.route_taken = f"fanout:{len(result.routes)}"
        try:
            self.state.apply_routing(eid, result)
        except RunError as exc:
            record.outcome = exc.outcome
            record.error = str(exc)
            raise
        finally:
            self.state.trace.append(record)

    def failed(self, eid: str, attempt: int, outcome: str, started: float, worker: int | None, error: str) -> None:
        self.state.trace.append(
            TraceRecord(eid, attempt, outcome, round((time.perf_counter() - started) * 1000, 3), None, worker, None, error)
        )

    def give_up(self, eid: str, attempt: int, outcome: str, error: str) -> RunError:
        spec = self.state.instances[eid].spec
        if outcome == "timeout":
            return NodeTimeout(eid, spec.timeout, attempt)
        return NodeFailure(eid, attempt, error)


class InlineRunner(_Runner):
    """Strictly sequential, in-process. Timeouts use a watchdog thread per attempt."""

    def run(self) -> None:
        state = self.state
        while True:
            wave = state.runnable()
            if not wave:
                return
            for eid in wave:
                if eid not in state.runnable():
                    continue
                self.run_instance(eid)

    def run_instance(self, eid: str) -> None:
        inst = self.state.instances[eid]
        spec = inst.spec
        inputs = self.state.inputs_for(eid)
        inst.status = RUNNING
        self.state.peak_parallel = max(self.state.peak_parallel, 1)
        pid = os.getpid()
        for attempt in range(1, spec.retry + 2):
            started = time.perf_counter()
            try:
                result = _call_with_timeout(lambda: self.registry.invoke(spec.module, inputs), spec.timeout)
            except _Timeout:
                outcome, error = "timeout", f"exceeded {spec.timeout}s"
            except Exception as exc:
                outcome, error = "failed", _describe(exc)
            else:
                self.finish(eid, attempt, result, started, pid)
                return
            self.failed(eid, attempt, outcome, started, pid, error)
            if attempt <= spec.retry:
                time.sleep(self.retry_delay)
        raise self.give_up(eid, spec.retry + 1, outcome, error)


def _worker_main(conn, registry: Registry, module: str, inputs: dict[str, Any]) -> None:
    pid = os.getpid()
    try:
        try:
            message = (pid, "ok", registry.invoke(module, inputs).to_dict())
        except BaseException as exc:  # noqa: BLE001 - shipped to the parent
            message = (pid, "error", _describe(exc))
        try:
            conn.send(message)
        except Exception as exc:  # unpicklable result
            conn.send((pid, "error", f"result could not be sent: {_describe(exc)}"))
        conn.close()
    finally:
        sys.stdout.flush()
        sys.stderr.flush()
        # hard teardown: nothing allocated by the module outlives the node
        os._exit(0)


@dataclass
class _Slot:
    eid: str
    attempt: int
    generation: int
    process: Any
    conn: Any
    started: float
    deadline: float | None


class IsolatedRunner(_Runner):
    """One forked worker process per attempt, torn down with ``os._exit`` when done."""

    def __init__(self, state: RunState, registry: Registry, retry_delay: float, max_parallel: int):
        super().__init__(state, registry, retry_delay)
        self.max_parallel = max_parallel
        self.mp = multiprocessing.get_context("fork")
        self.running: dict[str, _Slot] = {}
        self.retrying: dict[str, tuple[float, int]] = {}

    def _room(self) -> bool:
        return not self.max_parallel or len(self.running) < self.max_parallel

    def launch(self, eid: str, attempt: int) -> None:
        inst = self.state.instances[eid]
        inputs = self.state.inputs_for(eid)
        parent, child = self.mp.Pipe(duplex=False)
        proc = self.mp.Process(target=_worker_main, args=(child, self.registry, inst.spec.module, inputs), daemon=True)
        proc.start()
        child.close()
        now = time.perf_counter()
        deadline = now + inst.spec.timeout if inst.spec.timeout else None
        inst.status = RUNNING
        self.running[eid] = _Slot(eid, attempt, inst.generation, proc, parent, now, deadline)
        self.state.peak_parallel = max(self.state.peak_parallel, len(self.running))

    def _stop(self, slot: _Slot) -> None:
        if slot.process.is_alive():
            slot.process.kill()
        slot.process.join()
        slot.conn.close()

    def shutdown(self) -> None:
        for slot in list(self.running.values()):
            self._stop(slot)
        self.running.clear()

    def run(self) -> None:
        try:
            self._loop()
        finally:
            self.shutdown()

    def _loop(self) -> None:
        state = self.state
        while True:
            now = time.perf_counter()
            for eid in sorted(self.retrying):
                ready_at, attempt = self.retrying[eid]
                if ready_at <= now and self._room():
                    del self.retrying[eid]
                    self.launch(eid, attempt)
            for eid in state.runnable():
                if not self._room():
                    break
                if eid not in self.retrying:
                    self.launch(eid, 1)
            if not self.running and not self.retrying:
                return
            waits = [s.deadline for s in self.running.values() if s.deadline is not None]
            waits += [t for t, _ in self.retrying.values()]
            timeout = max(0.0, min(waits) - time.perf_counter()) if waits else None
            if self.running:
                ready = multiprocessing.connection.wait([s.conn for s in self.running.values()], timeout)
            else:
                time.sleep(timeout or 0)
                ready = []
            by_conn = {id(s.conn): s for s in self.running.values()}
            for slot in sorted((by_conn[id(c)] for c in ready), key=lambda s: s.eid):
                self._collect(slot)
            now = time.perf_counter()
            for slot in sorted(self.running.values(), key=lambda s: s.eid):
                if slot.deadline is not None and now >= slot.deadline:
                    self._stop(slot)
                    del self.running[slot.eid]
                    self._attempt_failed(slot, "timeout", f"exceeded {state.instances[slot.eid].spec.timeout}s", None)

    def _collect(self, slot: _Slot) -> None:
        try:
            pid, status, payload = slot.conn.recv()
        except EOFError:
            pid, status, payload = slot.process.pid, "error", "worker exited without a result"
        self._stop(slot)
        del self.running[slot.eid]
        inst = self.state.instances.get(slot.eid)
        if inst is None or inst.generation != slot.generation:
            return  # instance was reset by a loop while this attempt ran
        if status == "ok":
            try:
                result = ModuleResult.from_dict(payload)
            except Exception as exc:
                self._attempt_failed(slot, "failed", _describe(exc), pid)
                return
            self.finish(slot.eid, slot.attempt, result, slot.started, pid)
            for other in list(self.running.values()):
                current = self.state.instances.get(other.eid)
                if current is None or current.generation != other.generation:
                    self._stop(other)
                    del self.running[other.eid]
            for eid in list(self.retrying):
                current = self.state.instances.get(eid)
                if current is None or current.status != RUNNING:
                    del self.retrying[eid]
        else:
            self._attempt_failed(slot, "failed", payload, pid)

    def _attempt_failed(self, slot: _Slot, outcome: str, error: str, pid: int | None) -> None:
        self.failed(slot.eid, slot.attempt, outcome, slot.started, pid, error)
        spec = self.state.instances[slot.eid].spec
        if slot.attempt <= spec.retry:
            self.retrying[slot.eid] = (time.perf_counter() + self.retry_delay, slot.attempt + 1)
            return
        raise self.give_up(slot.eid, slot.attempt, outcome, error)


def execute(
    doc: PipelineDoc,
    registry: Registry,
    stores: RecordStores | None = None,
    backend: str = "inline",
    *,
    max_parallel: int | None = None,
    retry_delay: float = 1.0,
    run_id: str | None = None,
    validate: bool = True,
) -> RunState:
    """Run ``doc`` to completion and return the final :class:`RunState`.

    Raises :class:`NodeFailure`, :class:`NodeTimeout`, :class:`RoundsExhausted`
    or a routing error; the partial state is attached as ``exc.state``.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if validate:
        from .validator import validate_all

        report = validate_all(doc, registry)
        if not report.passed:
            raise PipelineInvalid(report)
    state = RunState.start(doc, stores, run_id)
    limit = doc.config.max_parallel if max_parallel is None else max_parallel
    if backend == "inline":
        runner: _Runner = InlineRunner(state, registry, retry_delay)
    else:
        runner = IsolatedRunner(state, registry, retry_delay, limit)
    try:
        runner.run()
    except RunError as exc:
        exc.state = state
        raise
    return state


__all__ += ["CloneSet", "DepGraph", "InlineRunner", "IsolatedRunner", "record_key"]
