"""Age-estimation metrics: MAE, cumulative score and the sigma-normalised error."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError

CS_THRESHOLDS = tuple(range(11))


@dataclass(frozen=True)
class EvalRecord:
    predicted: float
    true: float
    sigma: Optional[float] = None


def _errors(records: Sequence[EvalRecord]) -> np.ndarray:
    if len(records) == 0:
        raise InputError("metrics need at least one record")
    return np.array([abs(r.true - r.predicted) for r in records], dtype=np.float64)


def mae(records: Sequence[EvalRecord]) -> float:
    return float(np.mean(_errors(records)))


def cumulative_score(records: Sequence[EvalRecord], j: float) -> float:
    """Percentage of records whose absolute error is at most ``j`` years."""
    if j < 0:
        raise InputError("cumulative score threshold must be >= 0")
    err = _errors(records)
    return 100.0 * np.count_nonzero(err <= j) / err.size


def epsilon_error(records: Sequence[EvalRecord], normalized: bool = True) -> float:
    """Mean of ``1 - exp(-(y - y_hat)^2 / (2 sigma^2))``.

    ``normalized=False`` evaluates ``1 - sum(exp(...))`` over the records
    instead; that form is unbounded below and is only kept for auditing.
    """
    if len(records) == 0:
        raise InputError("metrics need at least one record")
    terms = []
    for r in records:
        if r.sigma is None or not r.sigma > 0:
            raise InputError("epsilon-error requires sigma > 0 on every record")
        terms.append(math.exp(-((r.true - r.predicted) ** 2) / (2.0 * r.sigma ** 2)))
    terms = np.array(terms)
    if normalized:
        return float(np.mean(1.0 - terms))
    return float(1.0 - terms.sum())


def group_mae(records: Sequence[EvalRecord]) -> list[Optional[float]]:
    """MAE per true decade 0..9; ``None`` where a decade has no records."""
    buckets: list[list[EvalRecord]] = [[] for _ in range(10)]
    for r in records:
        buckets[min(int(r.true), 99) // 10].append(r)
    return [mae(b) if b else None for b in buckets]


@dataclass
class MetricsReport:
    mae: float
    cs_curve: dict
    epsilon_error: Optional[float]
    group_mae: list
    n: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cs_curve"] = {str(k): v for k, v in self.cs_curve.items()}
        return d

    def to_text(self, title: str = "metrics") -> str:
        lines = [f"[{title}]", f"samples        {self.n}", f"mae            {self.mae:.6f}"]
        if self.epsilon_error is not None:
            lines.append(f"epsilon_error  {self.epsilon_error:.6f}")
        lines.append("cs_curve")
        for j, pct in self.cs_curve.items():
            lines.append(f"  j={j:<3} {pct:7.3f}%")
        lines.append("group_mae")
        for g, v in enumerate(self.group_mae):
            lines.append(f"  {10 * g:2d}-{10 * g + 9:2d}  " + ("-" if v is None else f"{v:.6f}"))
        return "\n".join(lines) + "\n"

    def cs_table(self) -> str:
        return "j\tcs_percent\n" + "".join(f"{j}\t{p:.6f}\n" for j, p in self.cs_curve.items())


def build_report(records: Sequence[EvalRecord], thresholds: Sequence[int] = CS_THRESHOLDS,
                 diagnostics: Optional[dict] = None) -> MetricsReport:
    has_sigma = all(r.sigma is not None and r.sigma > 0 for r in records)
    return MetricsReport(
        mae=mae(records),
        cs_curve={int(j): cumulative_score(records, j) for j in thresholds},
        epsilon_error=epsilon_error(records) if has_sigma else None,
        group_mae=group_mae(records),
        n=len(records),
        diagnostics=diagnostics or {},
    )


def dumps_json(obj) -> str:
    """JSON that refuses NaN/Inf, so reports can never carry them silently."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
