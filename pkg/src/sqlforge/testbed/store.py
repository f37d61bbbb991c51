"""Seeded SQLite store backing the testbed.

The fixture tables live in an attached in-memory database named ``ecom`` so
the engine's own catalog reports that name, the same way a MySQL server lists
its schemas. After seeding the connection is switched to ``query_only``; no
request, injected or not, can modify the data.
"""
from __future__ import annotations

import hashlib
import sqlite3
import threading
import time
from dataclasses import dataclass
from importlib import resources

from ..errors import ConfigurationError

DATABASE_NAME = "ecom"
RESERVED_SEPARATOR = "\x1f|\x1f"
KNOWN_PROFILES = ("ecom-v1",)


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[str, ...]
    types: tuple[str, ...]
    rows: tuple[tuple, ...]


@dataclass(frozen=True)
class TestbedSchema:
    __test__ = False
    database_name: str
    tables: tuple[TableDef, ...]

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def table_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tables)


_CASTS = {"INTEGER": int, "REAL": float, "TEXT": str}


def parse_seed(text: str) -> TestbedSchema:
    tables: list[TableDef] = []
    name = None
    header = None
    rows: list[tuple] = []

    def flush():
        if name is not None:
            if header is None:
                raise ConfigurationError(f"seed section [{name}] has no column header")
            cols, types = zip(*header)
            tables.append(TableDef(name, cols, types, tuple(rows)))

    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            flush()
            name, header, rows = line[1:-1], None, []
            continue
        if name is None:
            raise ConfigurationError(f"seed line {lineno}: row outside of a table section")
        fields = line.split("\t")
        if header is None:
            header = []
            for f in fields:
                col, _, typ = f.partition(":")
                typ = typ or "TEXT"
                if typ not in _CASTS:
                    raise ConfigurationError(f"seed line {lineno}: unknown type {typ}")
                header.append((col, typ))
            continue
        if len(fields) != len(header):
            raise ConfigurationError(f"seed line {lineno}: expected {len(header)} fields")
        if any(RESERVED_SEPARATOR in f for f in fields):
            raise ConfigurationError(f"seed line {lineno}: value contains the reserved separator")
        rows.append(tuple(_CASTS[typ](v) for v, (_, typ) in zip(fields, header)))
    flush()
    for t in tables:
        ids = [r[0] for r in t.rows]
        if t.columns[0] != "id" or len(set(ids)) != len(ids) or any(i <= 0 for i in ids):
            raise ConfigurationError(f"table {t.name}: ids must be positive and unique")
    return TestbedSchema(DATABASE_NAME, tuple(tables))


def load_schema(profile: str) -> TestbedSchema:
    if profile not in KNOWN_PROFILES:
        raise ConfigurationError(f"unknown seed profile {profile!r}")
    text = resources.files("sqlforge.testbed").joinpath(f"data/{profile}.tsv").read_text("utf-8")
    return parse_seed(text)


def _sleep(seconds):
    try:
        seconds = float(seconds)
    except (TypeError, ValueError):
        return 0
    time.sleep(min(max(seconds, 0.0), 30.0))
    return 0


class Store:
    """Thread-safe wrapper over one sqlite3 connection; every call is serialized."""

    def __init__(self, schema: TestbedSchema):
        self.schema = schema
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(":memory:", check_same_thread=False, isolation_level=None)
        # the testbed engine's delay primitive
        self._conn.create_function("sleep", 1, _sleep)
        self._conn.execute(f"ATTACH DATABASE ':memory:' AS {schema.database_name}")
        for t in schema.tables:
            cols = ", ".join(
                f"{c} {typ}{' PRIMARY KEY' if c == 'id' else ''}" for c, typ in zip(t.columns, t.types))
            self._conn.execute(f"CREATE TABLE {schema.database_name}.{t.name} ({cols})")
            marks = ",".join("?" * len(t.columns))
            self._conn.executemany(
                f"INSERT INTO {schema.database_name}.{t.name} VALUES ({marks})", t.rows)
        self._conn.execute("PRAGMA query_only = ON")

    def execute(self, sql: str, params: tuple = ()) -> list[tuple]:
        with self._lock:
            return self._conn.execute(sql, params).fetchall()

    def rows_as_text(self, table: str) -> list[tuple[str, ...]]:
        """Every row of ``table`` with each cell rendered as engine text, in scan order."""
        t = self.schema.table(table)
        cols = ",".join(f"COALESCE(CAST({c} AS TEXT),'')" for c in t.columns)
        return self.execute(f"SELECT {cols} FROM {self.schema.database_name}.{table}")

    def checksum(self) -> str:
        h = hashlib.sha256()
        for t in sorted(self.schema.tables, key=lambda t: t.name):
            h.update(t.name.encode())
            for row in self.execute(f"SELECT * FROM {self.schema.database_name}.{t.name} ORDER BY id"):
                h.update(repr(row).encode())
                h.update(b"\n")
        return h.hexdigest()

    def close(self):
        with self._lock:
            self._conn.close()


def seed_store(profile: str = "ecom-v1") -> Store:
    return Store(load_schema(profile))
