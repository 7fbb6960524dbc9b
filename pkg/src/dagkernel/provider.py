"""Completion-provider port and the rule-based mock behind it."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

PROVIDER_ENV = "DAGKERNEL_PROVIDER"
RULES_ENV = "DAGKERNEL_RULES"


class ProviderError(Exception):
    pass


class NoRuleMatched(ProviderError):
    pass


class UnknownProvider(ProviderError, KeyError):
    def __str__(self) -> str:
        return f"unknown provider: {self.args[0]!r}"


class ProviderUnavailable(ProviderError):
    pass


class LLMProvider(Protocol):
    name: str

    def complete(self, prompt: str, params: Mapping[str, Any] | None = None) -> str: ...


@dataclass(frozen=True)
class ProviderRule:
    """``pattern`` is a substring, or an anchored regex when it starts with ``^``."""

    pattern: str
    response: str
    priority: int = 0

    def matches(self, prompt: str) -> bool:
        if self.pattern.startswith("^"):
            return re.match(self.pattern, prompt, re.DOTALL) is not None
        return self.pattern in prompt


def load_rules(source: str | os.PathLike | list | None) -> list[ProviderRule]:
    """Rules from a JSON file path, an already-parsed list, or the packaged default table."""
    if source is None:
        data = json.loads(resources.files("dagkernel").joinpath("data/mock_rules.json").read_text("utf-8"))
    elif isinstance(source, (str, os.PathLike)):
        data = json.loads(Path(source).read_text("utf-8"))
    else:
        data = source
    rules = []
    for i, entry in enumerate(data):
        if isinstance(entry, ProviderRule):
            rules.append(entry)
            continue
        if not isinstance(entry, Mapping) or "pattern" not in entry or "response" not in entry:
            raise ProviderError(f"rule {i} needs 'pattern' and 'response'")
        response = entry["response"]
        if not isinstance(response, str):
            response = json.dumps(response, sort_keys=True)
        rules.append(ProviderRule(str(entry["pattern"]), response, int(entry.get("priority", 0))))
    return rules


class MockProvider:
    """Returns the response of the first matching rule.

    Rules are tried by ascending ``priority``, ties in table order. A prompt
    that matches nothing raises :class:`NoRuleMatched`.
    """

    name = "mock"

    def __init__(self, rules: list[ProviderRule] | None = None):
        table = list(rules) if rules is not None else load_rules(None)
        self.rules = tuple(r for _, r in sorted(enumerate(table), key=lambda p: (p[1].priority, p[0])))

    def complete(self, prompt: str, params: Mapping[str, Any] | None = None) -> str:
        for rule in self.rules:
            if rule.matches(prompt):
                return rule.response
        raise NoRuleMatched(f"no mock rule matches prompt starting {prompt[:60]!r}")

    def complete_json(self, prompt: str, params: Mapping[str, Any] | None = None) -> Any:
        return json.loads(self.complete(prompt, params))


def _make_mock(config: Mapping[str, Any]) -> MockProvider:
    rules = config.get("rules", os.environ.get(RULES_ENV) or None)
    return MockProvider(load_rules(rules))


_FACTORIES: dict[str, Callable[[Mapping[str, Any]], LLMProvider]] = {"mock": _make_mock}


def register_provider(name: str, factory: Callable[[Mapping[str, Any]], LLMProvider]) -> None:
    _FACTORIES[name] = factory


def provider_names() -> list[str]:
    return sorted(_FACTORIES)


def make_provider(name: str | None = None, config: Mapping[str, Any] | None = None) -> LLMProvider:
    """Build a provider by name; ``None`` reads the default from ``$DAGKERNEL_PROVIDER`` (else ``mock``)."""
    name = name or os.environ.get(PROVIDER_ENV) or "mock"
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise UnknownProvider(name) from None
    return factory(dict(config or {}))
