"""Per-run execution context and durable, deduplicating record stores.

Each logical store is one SQLite file. A ``UNIQUE(record_type, norm_key)``
constraint does the dedup, so concurrent writers race safely inside SQLite.
"""

from __future__ import annotations

import json
import os
import sqlite3
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from ._sqlite import Database

STORES = ("papers", "knowledge", "evaluations", "writing", "experiments")

# YAML-facing alias -> logical store
STORE_ALIASES = {
    "paper_store": "papers",
    "knowledge_store": "knowledge",
    "evaluation_store": "evaluations",
    "writing_store": "writing",
    "experiment_store": "experiments",
}


class StoreError(Exception):
    pass


class UnknownStore(StoreError, KeyError):
    def __str__(self) -> str:
        return f"unknown store: {self.args[0]!r}"


class EmptyKey(StoreError, ValueError):
    pass


class MissingKey(StoreError, KeyError):
    def __str__(self) -> str:
        return f"no context entry for {self.args[0]!r}"


class DuplicateWrite(StoreError):
    pass


class MalformedKey(StoreError, ValueError):
    pass


def normalize_key(raw: str) -> str:
    return str(raw).strip().lower()


def split_key(key: str) -> tuple[str, str]:
    """Split ``"node.field"`` on the first dot."""
    head, sep, tail = key.partition(".")
    if not sep or not head or not tail:
        raise MalformedKey(f"context key {key!r} is not '<namespace>.<field>'")
    return head, tail


@dataclass(frozen=True)
class StoreRecord:
    store: str
    record_type: str
    key: str
    raw_key: str
    payload: Any
    run_id: str
    created_at: float

    def to_json(self) -> dict[str, Any]:
        return {
            "store": self.store,
            "record_type": self.record_type,
            "key": self.key,
            "raw_key": self.raw_key,
            "payload": self.payload,
            "run_id": self.run_id,
            "created_at": self.created_at,
        }


_SCHEMA = """
CREATE TABLE IF NOT EXISTS records (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    record_type TEXT NOT NULL,
    norm_key    TEXT NOT NULL,
    raw_key     TEXT NOT NULL,
    payload     TEXT NOT NULL,
    run_id      TEXT NOT NULL,
    created_at  REAL NOT NULL,
    UNIQUE (record_type, norm_key)
)
"""


class RecordStores:
    """The five logical stores, one SQLite file each under ``root``.

    ``root=None`` keeps them in memory; such stores are not visible to
    forked workers.
    """

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self._dbs = {
            name: Database(self.root / f"{name}.db" if self.root else None, name, _SCHEMA) for name in STORES
        }

    def _conn(self, store: str) -> sqlite3.Connection:
        return self._dbs[store].conn()

    @staticmethod
    def resolve(store: str) -> str:
        """Accept either a logical store name or its YAML alias."""
        if store in STORES:
            return store
        if store in STORE_ALIASES:
            return STORE_ALIASES[store]
        raise UnknownStore(store)

    def persist_record(
        self, store: str, record_type: str, raw_key: str, payload: Any, run_id: str = ""
    ) -> str:
        """Insert unless an equal normalized key exists. Returns ``"inserted"`` or ``"deduplicated"``."""
        store = self.resolve(store)
        key = normalize_key(raw_key)
        if not key:
            raise EmptyKey(f"key {raw_key!r} is empty after normalization")
        conn = self._conn(store)
        with conn:
            cur = conn.execute(
                "INSERT OR IGNORE INTO records (record_type, norm_key, raw_key, payload, run_id, created_at)"
                " VALUES (?, ?, ?, ?, ?, ?)",
                (record_type, key, str(raw_key), json.dumps(payload, sort_keys=True), run_id, time.time()),
            )
        return "inserted" if cur.rowcount == 1 else "deduplicated"

    def query_records(
        self,
        store: str,
        record_type: str | None = None,
        *,
        run_id: str | None = None,
        key: str | None = None,
    ) -> list[StoreRecord]:
        """Records across all runs, newest first."""
        store = self.resolve(store)
        sql = "SELECT record_type, norm_key, raw_key, payload, run_id, created_at FROM records"
        where, args = [], []
        if record_type is not None:
            where.append("record_type = ?")
            args.append(record_type)
        if run_id is not None:
            where.append("run_id = ?")
            args.append(run_id)
        if key is not None:
            where.append("norm_key = ?")
            args.append(normalize_key(key))
        if where:
            sql += " WHERE " + " AND ".join(where)
        sql += " ORDER BY created_at DESC, id DESC"
        rows = self._conn(store).execute(sql, args).fetchall()
        return [StoreRecord(store, t, k, r, json.loads(p), run, ts) for t, k, r, p, run, ts in rows]

    def count(self, store: str, record_type: str | None = None) -> int:
        store = self.resolve(store)
        if record_type is None:
            row = self._conn(store).execute("SELECT COUNT(*) FROM records").fetchone()
        else:
            row = self._conn(store).execute(
                "SELECT COUNT(*) FROM records WHERE record_type = ?", (record_type,)
            ).fetchone()
        return row[0]

    def counts(self) -> dict[str, int]:
        return {name: self.count(name) for name in STORES}

    def export_json(self, store: str) -> str:
        records = sorted(self.query_records(store), key=lambda r: (r.record_type, r.key))
        return json.dumps([r.to_json() for r in records], indent=2, sort_keys=True) + "\n"


class ExecutionContext:
    """Flat ``namespace.field -> value`` mapping for one run.

    Keys are write-once. Store aliases (``paper_store.papers``) are read
    through to :class:`RecordStores` and return payloads newest first.
    """

    def __init__(self, run_id: str | None = None, stores: RecordStores | None = None):
        self.run_id = run_id or uuid.uuid4().hex[:12]
        self.stores = stores
        self.entries: dict[str, Any] = {}
        # values displaced when a loop body re-runs: (key, value)
        self.history: list[tuple[str, Any]] = []

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def put(self, key: str, value: Any) -> None:
        split_key(key)
        if key in self.entries:
            raise DuplicateWrite(key)
        self.entries[key] = value

    def get(self, key: str) -> Any:
        namespace, field = split_key(key)
        if key in self.entries:
            return self.entries[key]
        if namespace in STORE_ALIASES and self.stores is not None:
            return [r.payload for r in self.stores.query_records(namespace, field)]
        raise MissingKey(key)

    def reopen(self, namespaces: Iterable[str]) -> None:
        """Retire every key under ``namespaces`` so a loop body may write them again."""
        prefixes = tuple(f"{ns}." for ns in namespaces)
        if not prefixes:
            return
        for key in [k for k in self.entries if k.startswith(prefixes)]:
            self.history.append((key, self.entries.pop(key)))

    def to_json(self) -> str:
        return json.dumps(self.entries, sort_keys=True, default=str)


def put_context(ctx: ExecutionContext, key: str, value: Any) -> None:
    ctx.put(key, value)


def get_context(ctx: ExecutionContext, key: str) -> Any:
    return ctx.get(key)
