"""SQL dialect descriptors.

A dialect bundles what the scanner needs to know about one database engine:
error strings it leaks, catalog queries, and small expression templates used
to build blind and UNION payloads. Built-ins ship in ``data/dialects.json``;
a user file with the same layout can add or replace entries by name.
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError

# response header a grey-box target uses to announce its engine
DIALECT_HEADER = "X-Backend-Dialect"

COMMENT_TOKENS = {"dash_dash": "-- ", "hash": "#"}

# placeholders each template may use
TEMPLATE_FIELDS = {
    "catalog_databases_query": set(),
    "catalog_tables_query": {"database"},
    "catalog_columns_query": {"database", "table"},
    "delay_expression": {"seconds"},
    "string_slice": {"expr", "index"},
    "char_code": {"char"},
    "length": {"expr"},
    "cast_text": {"expr"},
    "coalesce": {"expr"},
    "chr": {"code"},
    "concat": {"items"},
}


def template_placeholders(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}


@dataclass(frozen=True)
class SqlDialect:
    name: str
    error_signatures: tuple[str, ...]
    catalog_databases_query: str
    catalog_tables_query: str
    catalog_columns_query: str
    string_slice: str
    char_code: str
    length: str
    cast_text: str
    coalesce: str
    chr: str
    concat: str
    concat_joiner: str
    delay_expression: str | None = None
    current_database: str | None = None
    comment_styles: tuple[str, ...] = ("dash_dash",)
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.name:
            raise ConfigurationError("dialect needs a name")
        for style in self.comment_styles:
            if style not in COMMENT_TOKENS:
                raise ConfigurationError(f"{self.name}: unknown comment style {style!r}")
        for attr, allowed in TEMPLATE_FIELDS.items():
            value = getattr(self, attr)
            if value is None:
                continue
            extra = template_placeholders(value) - allowed
            if extra:
                raise ConfigurationError(
                    f"{self.name}.{attr} uses undeclared placeholders {sorted(extra)}")

    @property
    def supports_delay(self) -> bool:
        return bool(self.delay_expression)

    def match_signature(self, body: str) -> str | None:
        for sig in self.error_signatures:
            if sig in body:
                return sig
        return None

    # expression helpers

    def char_at(self, expr: str, index: int) -> str:
        return self.char_code.format(char=self.string_slice.format(expr=expr, index=index))

    def length_of(self, expr: str) -> str:
        return self.length.format(expr=expr)

    def text(self, expr: str) -> str:
        return self.coalesce.format(expr=self.cast_text.format(expr=expr))

    def join(self, parts: list[str]) -> str:
        return self.concat.format(items=self.concat_joiner.join(parts))

    def literal_chars(self, s: str) -> str:
        """Spell ``s`` with the engine's chr() so it never needs quoting."""
        return self.join([self.chr.format(code=ord(c)) for c in s])

    def delay(self, seconds: float) -> str:
        if not self.delay_expression:
            raise ConfigurationError(f"{self.name} has no delay primitive")
        return self.delay_expression.format(seconds=_fmt_seconds(seconds))


def _fmt_seconds(seconds: float) -> str:
    return str(int(seconds)) if float(seconds).is_integer() else repr(float(seconds))


def dialect_from_dict(data: dict) -> SqlDialect:
    known = {f for f in SqlDialect.__dataclass_fields__ if f != "extra"}
    missing = {"name", "error_signatures", "catalog_tables_query", "catalog_columns_query",
               "string_slice", "char_code"} - data.keys()
    if missing:
        raise ConfigurationError(f"dialect entry missing fields: {sorted(missing)}")
    kwargs = {k: v for k, v in data.items() if k in known}
    kwargs.setdefault("catalog_databases_query", "")
    kwargs.setdefault("length", "length({expr})")
    kwargs.setdefault("cast_text", "{expr}")
    kwargs.setdefault("coalesce", "COALESCE({expr},'')")
    kwargs.setdefault("chr", "CHAR({code})")
    kwargs.setdefault("concat", "CONCAT({items})")
    kwargs.setdefault("concat_joiner", ",")
    kwargs["error_signatures"] = tuple(kwargs["error_signatures"])
    kwargs["comment_styles"] = tuple(kwargs.get("comment_styles", ("dash_dash",)))
    return SqlDialect(**kwargs, extra={k: v for k, v in data.items() if k not in known})


def _parse_document(doc) -> list[SqlDialect]:
    if isinstance(doc, dict):
        entries = doc.get("dialects")
    else:
        entries = doc
    if not isinstance(entries, list):
        raise ConfigurationError("dialect file must hold a list under 'dialects'")
    return [dialect_from_dict(e) for e in entries]


@lru_cache(maxsize=1)
def _builtin() -> tuple[SqlDialect, ...]:
    raw = resources.files("sqlforge").joinpath("data/dialects.json").read_text("utf-8")
    return tuple(_parse_document(json.loads(raw)))


def builtin_dialects() -> dict[str, SqlDialect]:
    return {d.name: d for d in _builtin()}


def load_dialects(path: str | Path | None = None) -> dict[str, SqlDialect]:
    """Built-in dialects, overridden/extended by entries from ``path``."""
    dialects = builtin_dialects()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read dialect file {path}: {exc}") from exc
        for d in _parse_document(doc):
            dialects[d.name] = d
    return dialects


MYSQL = "mysql-family"
SQLITE_TESTBED = "sqlite-testbed"


def get_dialect(name: str) -> SqlDialect:
    try:
        return builtin_dialects()[name]
    except KeyError:
        raise ConfigurationError(f"unknown dialect {name!r}") from None
