# ============================================================================
# core/orchestrator/metrics.py - Accuracy Reports
# ============================================================================

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from core.heads.losses import LossBreakdown

logger = logging.getLogger(__name__)

UNDEFINED = "n/a"
TABLE_COLUMNS = ("acc_open", "acc_closed", "acc_overall")


def _ratio(correct: int, total: int) -> Optional[float]:
    return correct / total if total else None


@dataclass
class MetricsReport:
    """Accuracy per answer type; a subset with no samples reports None (undefined)"""

    acc_open: Optional[float]
    acc_closed: Optional[float]
    acc_overall: Optional[float]
    open_count: int = 0
    closed_count: int = 0
    loss_trace: List[LossBreakdown] = field(default_factory=list)

    @classmethod
    def from_outcomes(cls, correct: Sequence[bool], is_open: Sequence[bool]) -> "MetricsReport":
        pairs = list(zip(correct, is_open))
        open_hits = [c for c, o in pairs if o]
        closed_hits = [c for c, o in pairs if not o]
        return cls(
            acc_open=_ratio(sum(open_hits), len(open_hits)),
            acc_closed=_ratio(sum(closed_hits), len(closed_hits)),
            acc_overall=_ratio(sum(c for c, _ in pairs), len(pairs)),
            open_count=len(open_hits),
            closed_count=len(closed_hits),
        )

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["loss_trace"] = [b.to_dict() for b in self.loss_trace]
        return data

    def to_key_values(self) -> List[str]:
        return [f"{name}={format_accuracy(getattr(self, name))}" for name in TABLE_COLUMNS] + [
            f"open_count={self.open_count}",
            f"closed_count={self.closed_count}",
        ]


def format_accuracy(value: Optional[float]) -> str:
    return UNDEFINED if value is None else f"{100.0 * value:.2f}"


def parse_accuracy(text: str) -> Optional[float]:
    text = text.strip()
    return None if text == UNDEFINED else float(text) / 100.0


def format_table(rows: Sequence[Tuple[str, MetricsReport]], label_header: str = "method") -> str:
    """Fixed-width table, one row per labelled report; accuracies in percent"""
    width = max([len(label_header)] + [len(label) for label, _ in rows])
    header = f"{label_header:<{width}} | " + " | ".join(f"{c:>11}" for c in TABLE_COLUMNS)
    lines = [header, "-" * len(header)]
    for label, report in rows:
        cells = " | ".join(f"{format_accuracy(getattr(report, c)):>11}" for c in TABLE_COLUMNS)
        lines.append(f"{label:<{width}} | {cells}")
    return "\n".join(lines)


def parse_table(text: str) -> Dict[str, Dict[str, Optional[float]]]:
    """Inverse of format_table: label -> column -> accuracy in [0, 1] (None when undefined)"""
    lines = [line for line in text.strip().splitlines() if line.strip()]
    parsed: Dict[str, Dict[str, Optional[float]]] = {}
    for line in lines[2:]:
        label, *cells = [part.strip() for part in line.split("|")]
        if len(cells) != len(TABLE_COLUMNS):
            raise ValueError(f"malformed table row: {line!r}")
        parsed[label] = {c: parse_accuracy(v) for c, v in zip(TABLE_COLUMNS, cells)}
    return parsed


def epoch_mean(trace: Sequence[LossBreakdown]) -> Dict[str, float]:
    if not trace:
        return {"l_cls": math.nan, "l_vtc": math.nan, "l_aux": math.nan, "total": math.nan}
    count = len(trace)
    return {
        term: sum(getattr(b, term) for b in trace) / count
        for term in ("l_cls", "l_vtc", "l_aux", "total")
    }
