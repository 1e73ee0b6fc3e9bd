"""
Exception hierarchy for WFEN

Every error raised by the package derives from WFENError so callers (and the CLI)
can catch package failures without swallowing programming errors.
"""

from typing import Dict, List, Optional


class WFENError(Exception):
    """Base class for all WFEN errors"""


class ShapeError(WFENError, ValueError):
    """Tensor extents, axes or divisibility constraints do not match"""


class GraphError(WFENError, RuntimeError):
    """Differentiation graph misuse (released graph, non-scalar loss)"""


class NumericalError(WFENError, FloatingPointError):
    """Non-finite values or an invalid numerical state"""


class FormatError(WFENError, ValueError):
    """Malformed PPM image or checkpoint payload"""


class ConfigError(WFENError, ValueError):
    """One or more configuration constraints are violated"""

    def __init__(self, violations: List[str]):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        message = "Invalid configuration:\n" + "\n".join(
            f"  - {v}" for v in self.violations
        )
        super().__init__(message)


class TrainingDivergedError(NumericalError):
    """Loss or parameters became non-finite during training"""

    def __init__(
        self,
        step: int,
        reason: str,
        parameter_stats: Optional[Dict[str, Dict[str, float]]] = None,
    ):
        self.step = step
        self.parameter_stats = parameter_stats or {}
        lines = [f"Training diverged at step {step}: {reason}"]
        for name, stats in self.parameter_stats.items():
            rendered = ", ".join(f"{k}={v:.4g}" for k, v in stats.items())
            lines.append(f"  {name}: {rendered}")
        super().__init__("\n".join(lines))
