from core.orchestrator.ablation import ABLATION_ROWS, AblationRow, SweepRow, run_ablation, run_sweep
from core.orchestrator.engine import EvaluationResult, TrainingEngine, TrainResult, evaluate
from core.orchestrator.metrics import MetricsReport, format_table, parse_table

__all__ = [
    "ABLATION_ROWS",
    "AblationRow",
    "EvaluationResult",
    "MetricsReport",
    "SweepRow",
    "TrainResult",
    "TrainingEngine",
    "evaluate",
    "format_table",
    "parse_table",
    "run_ablation",
    "run_sweep",
]
