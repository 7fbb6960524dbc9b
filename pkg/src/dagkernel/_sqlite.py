from __future__ import annotations

import os
import sqlite3
import threading
import uuid
from pathlib import Path


class Database:
    """One SQLite database, with a connection per thread and per process.

    ``path=None`` gives a shared-cache in-memory database kept alive by this
    object. Connections are never carried across ``fork``.
    """

    def __init__(self, path: str | os.PathLike | None, name: str, schema: str):
        if path is None:
            self.uri = f"file:dagkernel-{uuid.uuid4().hex}-{name}?mode=memory&cache=shared"
        else:
            target = Path(path).resolve()
            target.parent.mkdir(parents=True, exist_ok=True)
            # as_uri percent-encodes '?' and '#', which a bare file: URI would misparse
            self.uri = target.as_uri()
        self._local = threading.local()
        self._keepalive = self._open() if path is None else None
        with self.conn() as conn:
            conn.executescript(schema)

    def _open(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.uri, uri=True, timeout=30, check_same_thread=False)
        conn.execute("PRAGMA busy_timeout = 30000")
        return conn

    def conn(self) -> sqlite3.Connection:
        if getattr(self._local, "pid", None) != os.getpid():
            self._local.pid = os.getpid()
            self._local.conn = self._open()
        return self._local.conn
