"""Route queries in their vulnerable and remediated forms, plus input validation."""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum


class Mode(str, Enum):
    VULNERABLE = "vulnerable"
    PATCHED = "patched"


DETAIL_COLUMNS = ("id", "name", "description", "price")
LOGIN_COLUMNS = ("id", "username", "password")

_VULNERABLE = {
    "detail": "SELECT id,name,description,price FROM products WHERE id = {0}",
    "login": "SELECT id,username,password FROM admins WHERE username = '{0}' AND password = '{1}'",
}
_PATCHED = {
    "detail": "SELECT id,name,description,price FROM products WHERE id = ?",
    "login": "SELECT id,username,password FROM admins WHERE username = ? AND password = ?",
}
_ARITY = {"detail": 1, "login": 2}

MAX_PRODUCT_ID = 10**9
MAX_LOGIN_LENGTH = 64
_INTEGER = re.compile(r"[+-]?[0-9]+")
_TERMINATORS = set(";\x00")


@dataclass(frozen=True)
class Query:
    text: str
    params: tuple = ()


def _inputs(route: str, raw_input) -> tuple[str, ...]:
    if route not in _ARITY:
        raise KeyError(f"unknown route {route!r}")
    values = (raw_input,) if isinstance(raw_input, str) else tuple(raw_input)
    if len(values) != _ARITY[route]:
        raise ValueError(f"route {route} takes {_ARITY[route]} input(s)")
    return values


def build_query(mode: Mode | str, route: str, raw_input) -> Query:
    """Vulnerable mode splices input into the SQL text; patched mode binds it."""
    values = _inputs(route, raw_input)
    if Mode(mode) is Mode.VULNERABLE:
        return Query(_VULNERABLE[route].format(*values))
    return Query(_PATCHED[route], values)


@dataclass(frozen=True)
class Validation:
    ok: bool
    reason: str | None = None

    def __bool__(self):
        return self.ok


ACCEPT = Validation(True)


def validate_input(route: str, raw_input: str) -> Validation:
    if route == "detail":
        if not _INTEGER.fullmatch(raw_input):
            return Validation(False, "not-an-integer")
        if not 1 <= int(raw_input) <= MAX_PRODUCT_ID:
            return Validation(False, "out-of-range")
        return ACCEPT
    if route == "login":
        if len(raw_input) > MAX_LOGIN_LENGTH:
            return Validation(False, "too-long")
        if any(c in _TERMINATORS for c in raw_input):
            return Validation(False, "statement-terminator")
        if not (raw_input.isascii() and raw_input.isprintable()):
            return Validation(False, "non-printable")
        return ACCEPT
    raise KeyError(f"unknown route {route!r}")
