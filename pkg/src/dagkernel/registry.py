"""Module registry: descriptors, the four-field result contract, schema export."""

from __future__ import annotations

import asyncio
import inspect
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

RESERVED_FIELDS = ("_route", "_routes", "_score", "_metadata")
MODULE_KINDS = ("prompt", "functional")


class RegistryError(Exception):
    pass


class DuplicateName(RegistryError):
    pass


class InvalidDescriptor(RegistryError):
    pass


class UnknownModule(RegistryError, KeyError):
    def __str__(self) -> str:
        return f"unknown module: {self.args[0]!r}"


class MissingInput(RegistryError):
    def __init__(self, field: str):
        super().__init__(field)
        self.field = field

    def __str__(self) -> str:
        return f"missing required input: {self.field!r}"


class BehaviorFailure(RegistryError):
    def __init__(self, module: str, cause: BaseException | str):
        super().__init__(module, cause)
        self.module = module
        self.cause = cause

    def __str__(self) -> str:
        cause = self.cause
        if isinstance(cause, BaseException):
            cause = f"{type(cause).__name__}: {cause}"
        return f"module {self.module!r} failed: {cause}"


class InvalidResult(RegistryError):
    pass


class RegistryFrozen(RegistryError):
    pass


def base_tag(tag: str) -> str:
    """Strip the optional marker from a semantic-type tag (``"seed-list?"`` -> ``"seed-list"``)."""
    return tag[:-1] if tag.endswith("?") else tag


def is_optional(tag: str) -> bool:
    return tag.endswith("?")


@dataclass(frozen=True)
class ModuleDescriptor:
    """Static description of a module.

    ``input_spec`` and ``output_spec`` map field names to semantic-type tags.
    An input tag ending in ``?`` marks the input optional.
    """

    name: str
    kind: str = "functional"
    input_spec: Mapping[str, str] = field(default_factory=dict)
    output_spec: Mapping[str, str] = field(default_factory=dict)
    doc: str = ""

    def check(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise InvalidDescriptor("descriptor name must be a non-empty string")
        if self.kind not in MODULE_KINDS:
            raise InvalidDescriptor(f"{self.name}: kind must be one of {MODULE_KINDS}")
        for label, spec in (("input_spec", self.input_spec), ("output_spec", self.output_spec)):
            for key, tag in spec.items():
                if key in RESERVED_FIELDS:
                    raise InvalidDescriptor(f"{self.name}: {label} uses reserved field {key!r}")
                if not isinstance(key, str) or not key:
                    raise InvalidDescriptor(f"{self.name}: {label} has an empty field name")
                if not isinstance(tag, str) or not base_tag(tag):
                    raise InvalidDescriptor(f"{self.name}: {label}[{key!r}] needs a type tag")

    @property
    def required_inputs(self) -> list[str]:
        return [k for k, tag in self.input_spec.items() if not is_optional(tag)]

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "input_spec": dict(sorted(self.input_spec.items())),
            "output_spec": dict(sorted(self.output_spec.items())),
            "doc": self.doc,
        }


@dataclass
class ModuleResult:
    """A module's return value split into domain outputs and routing fields."""

    outputs: dict[str, Any] = field(default_factory=dict)
    route: str | None = None
    routes: list[Any] | None = None
    score: float | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ModuleResult":
        if not isinstance(raw, Mapping):
            raise InvalidResult(f"module returned {type(raw).__name__}, expected a mapping")
        route = raw.get("_route")
        routes = raw.get("_routes")
        score = raw.get("_score")
        metadata = raw.get("_metadata") or {}
        if route is not None and not isinstance(route, str):
            raise InvalidResult("_route must be a string")
        if routes is not None:
            if isinstance(routes, (str, bytes)) or not isinstance(routes, (list, tuple)):
                raise InvalidResult("_routes must be a list")
            routes = list(routes)
        if score is not None:
            if isinstance(score, bool) or not isinstance(score, (int, float)):
                raise InvalidResult("_score must be a number")
            if not math.isfinite(score):
                raise InvalidResult("_score must be finite")
            score = float(score)
        if not isinstance(metadata, Mapping):
            raise InvalidResult("_metadata must be a mapping")
        outputs = {k: v for k, v in raw.items() if k not in RESERVED_FIELDS}
        return cls(outputs, route, routes, score, dict(metadata))

    def to_dict(self) -> dict[str, Any]:
        """Inverse of :meth:`from_dict`: outputs plus whichever reserved fields are set."""
        raw = dict(self.outputs)
        if self.route is not None:
            raw["_route"] = self.route
        if self.routes is not None:
            raw["_routes"] = list(self.routes)
        if self.score is not None:
            raw["_score"] = self.score
        if self.metadata:
            raw["_metadata"] = dict(self.metadata)
        return raw


Behavior = Callable[[dict[str, Any]], Any]


class Registry:
    """Name -> (descriptor, behavior). Populate at startup, then read only."""

    def __init__(self) -> None:
        self._entries: dict[str, tuple[ModuleDescriptor, Behavior]] = {}
        self._frozen = False

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def register(self, descriptor: ModuleDescriptor, behavior: Behavior) -> ModuleDescriptor:
        if self._frozen:
            raise RegistryFrozen("registry is read-only once a module has been invoked")
        descriptor.check()
        if descriptor.name in self._entries:
            raise DuplicateName(descriptor.name)
        if hasattr(behavior, "execute") and not callable(behavior):
            behavior = behavior.execute
        if not callable(behavior):
            raise InvalidDescriptor(f"{descriptor.name}: behavior is not callable")
        self._entries[descriptor.name] = (descriptor, behavior)
        return descriptor

    def module(
        self,
        name: str,
        *,
        kind: str = "functional",
        inputs: Mapping[str, str] | None = None,
        outputs: Mapping[str, str] | None = None,
        doc: str = "",
    ) -> Callable[[Behavior], Behavior]:
        """Decorator form of :meth:`register`."""

        def wrap(fn: Behavior) -> Behavior:
            self.register(
                ModuleDescriptor(name, kind, dict(inputs or {}), dict(outputs or {}), doc or (fn.__doc__ or "").strip()),
                fn,
            )
            return fn

        return wrap

    def lookup(self, name: str) -> ModuleDescriptor:
        try:
            return self._entries[name][0]
        except KeyError:
            raise UnknownModule(name) from None

    def invoke(self, name: str, inputs: Mapping[str, Any]) -> ModuleResult:
        try:
            descriptor, behavior = self._entries[name]
        except KeyError:
            raise UnknownModule(name) from None
        self._frozen = True
        for key in descriptor.required_inputs:
            if key not in inputs:
                raise MissingInput(key)
        try:
            raw = behavior(dict(inputs))
            if inspect.isawaitable(raw):
                raw = asyncio.run(_await(raw))
        except Exception as exc:
            raise BehaviorFailure(name, exc) from exc
        if isinstance(raw, ModuleResult):
            return raw
        return ModuleResult.from_dict(raw)

    def emit_schemas(self) -> str:
        doc = {"modules": [self._entries[n][0].to_json() for n in sorted(self._entries)]}
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


async def _await(awaitable):
    return await awaitable
