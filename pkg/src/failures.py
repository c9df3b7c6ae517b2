"""
Failure tracking for minmix runs

Exception hierarchy with CLI exit codes, a thread-safe failure monitor that
records every error raised at a stage boundary, and a resource check used by
the dense-work guards.
"""

import datetime
import logging
import threading
import traceback
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import psutil

logger = logging.getLogger(__name__)


class FailureSeverity(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class Stage(Enum):
    CONFIG = "config"
    GRID = "grid"
    ASSEMBLY = "assembly"
    SOLVER = "solver"
    VERIFY = "verify"
    OUTPUT = "output"


class MinmixError(Exception):
    """Base class for all minmix errors."""
    exit_code = 1


class GridError(MinmixError, ValueError):
    """Invalid grid dimensions, cell or entity indices."""


class MaterialError(MinmixError, ValueError):
    """Inadmissible Lame parameters."""


class QuadratureError(MinmixError, ValueError):
    """Unsupported quadrature order."""


class ProblemError(MinmixError, ValueError):
    """Problem kind incompatible with the grid or material."""


class LayoutError(MinmixError, ValueError):
    """Fields or vectors that do not match their layout."""


class DenseSizeError(MinmixError):
    """Dense verification requested on a system that is too large."""


class SolverError(MinmixError):
    """Linear solve failed to reach its tolerance."""
    exit_code = 2

    def __init__(self, message: str, report: Any = None, best: Any = None):
        super().__init__(message)
        self.report = report
        self.best = best
        self.partial = None


class VerificationError(MinmixError):
    """One or more verification checks failed."""
    exit_code = 3

    def __init__(self, message: str, failed: Optional[List[str]] = None):
        super().__init__(message)
        self.failed = failed or []


class OutputError(MinmixError):
    """Writing an artifact failed."""
    exit_code = 4


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the process exit status."""
    if isinstance(error, MinmixError):
        return error.exit_code
    if isinstance(error, OSError):
        return OutputError.exit_code
    return 1


@dataclass
class FailureEvent:
    """A failure recorded at a stage boundary"""
    timestamp: str
    stage: Stage
    severity: FailureSeverity
    error_type: str
    message: str
    stack_trace: Optional[str]
    context: Dict[str, Any] = field(default_factory=dict)


class FailureMonitor:
    """Collects failure events across a run"""

    def __init__(self, max_history: int = 200):
        self.history: List[FailureEvent] = []
        self.max_history = max_history
        self.lock = threading.Lock()

    def register(self, stage: Stage, error: BaseException,
                 context: Optional[Dict[str, Any]] = None) -> FailureEvent:
        """Record an error raised while running a stage.

        The stack trace comes from the error itself; errors that were never
        raised carry none.
        """
        stack_trace = None
        if error.__traceback__ is not None:
            stack_trace = "".join(traceback.format_exception(type(error), error, error.__traceback__))
        event = FailureEvent(
            timestamp=datetime.datetime.now().isoformat(),
            stage=stage,
            severity=self._assess_severity(stage, error),
            error_type=type(error).__name__,
            message=str(error),
            stack_trace=stack_trace,
            context=dict(context or {}),
        )

        with self.lock:
            self.history.append(event)
            if len(self.history) > self.max_history:
                self.history = self.history[-self.max_history:]

        logger.error(f"Failure registered: {stage.value} - {error}")
        return event

    def _assess_severity(self, stage: Stage, error: BaseException) -> FailureSeverity:
        if isinstance(error, (SolverError, VerificationError)):
            return FailureSeverity.HIGH
        if isinstance(error, (OutputError, OSError)):
            return FailureSeverity.CRITICAL
        if isinstance(error, ValueError) or stage == Stage.CONFIG:
            return FailureSeverity.LOW
        return FailureSeverity.MEDIUM

    def summary(self) -> Dict[str, Any]:
        """Counts of recorded failures per stage and severity."""
        with self.lock:
            events = list(self.history)

        by_stage: Dict[str, int] = {}
        by_severity: Dict[str, int] = {}
        for event in events:
            by_stage[event.stage.value] = by_stage.get(event.stage.value, 0) + 1
            by_severity[event.severity.value] = by_severity.get(event.severity.value, 0) + 1

        return {
            "failures": len(events),
            "by_stage": by_stage,
            "by_severity": by_severity,
            "last": events[-1].message if events else None,
        }


@contextmanager
def failure_context(stage: Stage, monitor: Optional[FailureMonitor] = None, **context):
    """Record any exception escaping the block, then re-raise it."""
    try:
        yield
    except Exception as e:
        if monitor is not None:
            monitor.register(stage, e, context)
        else:
            logger.error(f"{stage.value} failed: {e}")
        raise


def check_system_resources() -> Dict[str, float]:
    """Snapshot of memory and CPU availability."""
    memory = psutil.virtual_memory()
    return {
        "available_memory_mb": memory.available / (1024 * 1024),
        "memory_percent": memory.percent,
        "cpu_count": float(psutil.cpu_count(logical=False) or 1),
    }


def ensure_dense_fits(rows: int, limit: int, matrices: int = 4) -> None:
    """Refuse dense work beyond `limit` rows or half the available memory."""
    if rows > limit:
        raise DenseSizeError(f"Dense work on {rows} unknowns exceeds the limit of {limit}")

    needed_mb = matrices * rows * rows * 8 / (1024 * 1024)
    available_mb = check_system_resources()["available_memory_mb"]
    if needed_mb > 0.5 * available_mb:
        raise DenseSizeError(
            f"Dense work on {rows} unknowns needs {needed_mb:.0f} MB, "
            f"only {available_mb:.0f} MB available"
        )
