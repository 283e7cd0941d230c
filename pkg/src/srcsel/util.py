"""Small shared helpers: seed derivation and stable float formatting."""

from __future__ import annotations

import zlib


def derive_seed(base: int, *context: object) -> int:
    """Mix a base seed with string context into a new non-negative seed.

    Uses crc32 rather than hash() so results do not depend on
    PYTHONHASHSEED and are stable across processes.
    """
    tag = "|".join(str(part) for part in context)
    return (int(base) ^ zlib.crc32(tag.encode("utf-8"))) & 0x7FFFFFFF


def round_sig(value: float, digits: int = 12) -> float:
    """Round to a fixed number of significant digits (for stored weights)."""
    return float(f"{float(value):.{digits}g}")


def fmt_sig(value: float, digits: int = 12) -> str:
    """Format to a fixed number of significant digits."""
    return f"{float(value):.{digits}g}"
