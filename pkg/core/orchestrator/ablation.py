# ============================================================================
# core/orchestrator/ablation.py - Ablation and Loss-Weight Sweeps
# ============================================================================

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from core.config import TrainConfig
from core.orchestrator.engine import TrainingEngine, evaluate
from core.orchestrator.metrics import MetricsReport, format_table
from ingestion.dataset_loader.loader import VqaDataset

logger = logging.getLogger(__name__)

_ALL_OFF = {"use_qqformer": False, "use_cmcl": False, "use_cmm": False, "use_ahead": False}

# label -> module toggles switched on over the bare baseline; labels follow TrainConfig.toggle_label
ABLATION_ROWS: List[tuple] = [
    ("none", {}),
    ("QQ-Former", {"use_qqformer": True}),
    ("CMCL", {"use_cmcl": True}),
    ("CMM", {"use_cmm": True}),
    ("AHead", {"use_ahead": True}),
    ("QQ-Former+CMCL+CMM+AHead", {k: True for k in _ALL_OFF}),
]

ALPHA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)
BETA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class AblationRow:
    label: str
    config_hash: str
    num_parameters: int
    report: MetricsReport


@dataclass
class SweepRow:
    alpha: float
    beta: float
    config_hash: str
    report: MetricsReport

    @property
    def label(self) -> str:
        return f"alpha={self.alpha:g} beta={self.beta:g}"


def _train_and_test(config: TrainConfig, dataset: VqaDataset, run_dir: Optional[Path]) -> tuple:
    result = TrainingEngine(config, dataset, run_dir=run_dir).train()
    report = evaluate(result.model, dataset.split("test"), result.vocab, result.answers).report
    return result, report


def run_ablation(
    config: TrainConfig,
    dataset: VqaDataset,
    rows: Sequence[tuple] = ABLATION_ROWS,
    run_dir: Optional[Union[str, Path]] = None,
) -> List[AblationRow]:
    """Same data and seed for every row; configurations differ only in module toggles"""
    results = []
    for label, toggles in rows:
        variant = config.model_copy(update={**_ALL_OFF, **toggles})
        sub_dir = Path(run_dir) / f"ablation-{len(results)}" if run_dir is not None else None
        trained, report = _train_and_test(variant, dataset, sub_dir)
        logger.info(f"Ablation {label}: config {variant.config_hash()} test acc {report.acc_overall}")
        results.append(AblationRow(label, variant.config_hash(), trained.model.num_parameters(), report))
    return results


def run_sweep(
    config: TrainConfig,
    dataset: VqaDataset,
    alphas: Sequence[float] = ALPHA_GRID,
    betas: Sequence[float] = BETA_GRID,
    fixed_alpha: float = 0.2,
    fixed_beta: float = 0.3,
) -> Dict[str, List[SweepRow]]:
    """alpha varied at beta=fixed_beta, then beta varied at alpha=fixed_alpha"""
    grids: Dict[str, List[SweepRow]] = {"alpha": [], "beta": []}
    plan = [("alpha", a, fixed_beta) for a in alphas] + [("beta", fixed_alpha, b) for b in betas]
    for axis, alpha, beta in plan:
        variant = config.model_copy(update={"alpha": alpha, "beta": beta})
        _, report = _train_and_test(variant, dataset, None)
        grids[axis].append(SweepRow(alpha, beta, variant.config_hash(), report))
    return grids


def format_ablation(rows: Sequence[AblationRow]) -> str:
    return format_table([(row.label, row.report) for row in rows])


def format_sweep(grids: Dict[str, List[SweepRow]]) -> str:
    sections = []
    for axis, rows in grids.items():
        sections.append(format_table([(row.label, row.report) for row in rows], label_header=f"{axis} sweep"))
    return "\n\n".join(sections)
