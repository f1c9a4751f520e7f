"""Run log shared by the pipeline stages.

Every stage reports conditioning numbers as table rows and reports
suspicious ones as events.  In strict mode an event raises its associated
exception immediately; otherwise the run continues and the caller can
inspect the log afterwards.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Any, Type

from .errors import MixmomError


@dataclass
class DiagnosticEvent:
    step: str
    kind: str  # exception class name, or "info"
    message: str
    data: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "kind": self.kind,
            "message": self.message,
            "data": self.data,
        }


class RunLog:
    def __init__(self, strict: bool = False):
        self.strict = strict
        self.events: list[DiagnosticEvent] = []
        self.tables: dict[str, list[dict[str, Any]]] = {}
        self.timings: dict[str, float] = {}

    def info(self, step: str, message: str, **data: Any) -> None:
        self.events.append(DiagnosticEvent(step, "info", message, data))

    def problem(
        self, exc: Type[MixmomError], step: str, message: str, **data: Any
    ) -> None:
        self.events.append(DiagnosticEvent(step, exc.__name__, message, data))
        if self.strict:
            raise exc(f"{step}: {message}")

    def add_row(self, table: str, row: dict[str, Any]) -> None:
        self.tables.setdefault(table, []).append(dict(row))

    def has_problem(self, kind: str | None = None) -> bool:
        for ev in self.events:
            if ev.kind == "info":
                continue
            if kind is None or ev.kind == kind:
                return True
        return False

    def timed(self, name: str):
        return _Timer(self, name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "events": [ev.to_dict() for ev in self.events],
            "tables": self.tables,
            "timings": self.timings,
        }


class _Timer:
    def __init__(self, log: RunLog, name: str):
        self.log = log
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.log.timings[self.name] = (
            self.log.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        )
        return False


@dataclass
class SpanDiagnostics:
    """Headline conditioning numbers of the span-finding stage.

    sigma_qs / sigma_qus are minima over the two index-set runs; the other
    two come from the merge.
    """

    sigma_qs: float
    sigma_qus: float
    sigma_s1s2: float
    sigma_proj_b3: float

    def to_dict(self) -> dict[str, float]:
        return {
            "sigma_qs": self.sigma_qs,
            "sigma_qus": self.sigma_qus,
            "sigma_s1s2": self.sigma_s1s2,
            "sigma_proj_b3": self.sigma_proj_b3,
        }


def spectrum_row(
    step: str, rank_target: int, sigmas, rank_tol: float
) -> dict[str, Any]:
    """CSV row summarizing one factorization: the retained singular value,
    the first discarded one, and the spread of the retained block."""
    import numpy as np

    s = np.asarray(sigmas, dtype=float)
    smax = float(s[0]) if s.size else 0.0
    sr = float(s[rank_target - 1]) if s.size >= rank_target else 0.0
    snext = float(s[rank_target]) if s.size > rank_target else 0.0
    return {
        "step": step,
        "rank_target": int(rank_target),
        "sigma_r": sr,
        "sigma_next": snext,
        "cond_ratio": smax / sr if sr > 0 else float("inf"),
    }


def config_digest(obj: Any) -> str:
    """Stable hash of a JSON-serializable configuration mapping."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
