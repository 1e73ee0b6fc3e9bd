"""
Utility functions for WFEN

Contains the shared logger, environment helpers, seeding and small reporting helpers
"""

import hashlib
import os
import sys
from typing import Any, Iterable, List, Sequence, Tuple

import numpy as np
from loguru import logger

_TRUE_VALUES = {"1", "true", "yes", "on"}
_FALSE_VALUES = {"0", "false", "no", "off"}


def get_env_value(env_key: str, default: Any, value_type: type = str) -> Any:
    """
    Read a typed value from the environment

    Args:
        env_key: Environment variable name
        default: Value returned when the variable is unset or empty
        value_type: Target type (str, int, float or bool)

    Returns:
        The converted value, or default when the variable is missing or unparsable
    """
    value = os.getenv(env_key)
    if value is None or value.strip() == "":
        return default

    if value_type is bool:
        lowered = value.strip().lower()
        if lowered in _TRUE_VALUES:
            return True
        if lowered in _FALSE_VALUES:
            return False
        logger.warning(f"Ignoring non-boolean value for {env_key}: {value!r}")
        return default

    try:
        return value_type(value)
    except (TypeError, ValueError):
        logger.warning(
            f"Ignoring value for {env_key}: {value!r} is not a valid {value_type.__name__}"
        )
        return default


def configure_logging(level: str = "INFO") -> None:
    """Route the package logger to stderr at the given level"""
    logger.remove()
    logger.add(
        sys.stderr,
        level=level.upper(),
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {message}",
    )


def batch_digest(indices: Sequence[int], arrays: Iterable[np.ndarray] = ()) -> str:
    """
    Hash a batch so identical data order can be verified across runs

    Args:
        indices: Sample indices in batch order
        arrays: Optional arrays whose raw bytes are folded into the digest

    Returns:
        Hex sha256 digest
    """
    h = hashlib.sha256()
    h.update(np.asarray(indices, dtype="<i8").tobytes())
    for arr in arrays:
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def format_table(headers: Sequence[str], rows: List[Tuple[Any, ...]]) -> str:
    """Render rows as a left-aligned plain-text table"""
    cells = [[str(h) for h in headers]] + [[_fmt(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4e}" if (value != 0 and abs(value) < 1e-3) else f"{value:.4f}"
    return str(value)
