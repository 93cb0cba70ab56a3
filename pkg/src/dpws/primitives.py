"""Lexical codec for the four primitive value types.

Service type maps bind element names to one of int, float, bool or
string; this module defines the text form each uses on the wire and the
Python types accepted at the API boundary.

int    decimal integer text, 64-bit signed range
float  decimal or scientific notation
bool   "true" / "false"
string text content verbatim
"""
from __future__ import annotations

import math
import re

from .errors import TypeMismatch

PRIMITIVES = ("int", "float", "bool", "string")

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1

# ASCII-only lexical forms; int() and float() alone are too permissive
# (underscores, unicode digits, nan/inf).
_INT_TEXT = re.compile(r"^[+-]?[0-9]+$")
_FLOAT_TEXT = re.compile(r"^[+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?$")


def is_primitive(name: str) -> bool:
    return name in PRIMITIVES


def check_value(primitive: str, value, where: str = "value"):
    """Reject Python values that do not belong to the primitive's type.
    bool is not an int here, whatever isinstance may say."""
    if primitive == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatch(f"{where} must be int, got {type(value).__name__}")
        if not (INT64_MIN <= value <= INT64_MAX):
            raise TypeMismatch(f"{where} {value} outside the 64-bit signed range")
    elif primitive == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatch(f"{where} must be float, got {type(value).__name__}")
        if not math.isfinite(value):
            raise TypeMismatch(f"{where} must be finite, got {value!r}")
    elif primitive == "bool":
        if not isinstance(value, bool):
            raise TypeMismatch(f"{where} must be bool, got {type(value).__name__}")
    elif primitive == "string":
        if not isinstance(value, str):
            raise TypeMismatch(f"{where} must be str, got {type(value).__name__}")
    else:
        raise TypeMismatch(f"unknown primitive type {primitive!r}")


def encode_value(primitive: str, value, where: str = "value") -> str:
    """Python value -> wire text. repr keeps floats round-trippable."""
    check_value(primitive, value, where)
    if primitive == "bool":
        return "true" if value else "false"
    if primitive == "float":
        return repr(float(value))
    return str(value)


def decode_value(primitive: str, text: str, where: str = "value"):
    """Wire text -> Python value; TypeMismatch names the offending spot."""
    if primitive == "int":
        stripped = text.strip()
        if not _INT_TEXT.match(stripped):
            raise TypeMismatch(f"{where}: {stripped!r} is not a decimal integer")
        value = int(stripped, 10)
        if not (INT64_MIN <= value <= INT64_MAX):
            raise TypeMismatch(f"{where}: {value} outside the 64-bit signed range")
        return value
    if primitive == "float":
        stripped = text.strip()
        if not _FLOAT_TEXT.match(stripped):
            raise TypeMismatch(f"{where}: {stripped!r} is not a number")
        value = float(stripped)
        if not math.isfinite(value):
            raise TypeMismatch(f"{where}: {stripped!r} overflows to non-finite")
        return value
    if primitive == "bool":
        stripped = text.strip()
        if stripped == "true":
            return True
        if stripped == "false":
            return False
        raise TypeMismatch(f"{where}: {stripped!r} is not 'true' or 'false'")
    if primitive == "string":
        return text
    raise TypeMismatch(f"unknown primitive type {primitive!r}")
