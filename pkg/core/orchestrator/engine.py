# ============================================================================
# core/orchestrator/engine.py - Training and Evaluation Engine
# ============================================================================

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from core.checkpoint import save_checkpoint
from core.config import TrainConfig, settings
from core.encoders.vocabulary import Vocabulary
from core.errors import ContractError, NumericalError
from core.heads.answers import OUT_OF_SET, AnswerVocab
from core.heads.losses import LossBreakdown, first_non_finite
from core.models import VqaModel
from core.numcore import AdamW, backward, default_dtype, detect_anomaly, new_tape
from core.orchestrator.metrics import MetricsReport, epoch_mean, format_accuracy
from ingestion.dataset_loader.loader import VqaDataset, VqaSample, batch_iter, collate

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    steps: int
    mean_losses: Dict[str, float]
    val_accuracy: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "steps": self.steps,
            "mean_losses": self.mean_losses,
            "val_accuracy": self.val_accuracy,
        }


@dataclass
class Prediction:
    sample_id: str
    question: str
    gold: str
    predicted: str
    correct: bool
    is_open: bool
    generated: Optional[str] = None


@dataclass
class EvaluationResult:
    report: MetricsReport
    predictions: List[Prediction] = field(default_factory=list)


@dataclass
class TrainResult:
    model: VqaModel
    answers: AnswerVocab
    vocab: Vocabulary
    best_epoch: int
    train_report: MetricsReport
    val_report: Optional[MetricsReport]
    loss_trace: List[LossBreakdown]
    epochs: List[EpochRecord]
    checkpoint_path: Optional[Path] = None


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(
    model: VqaModel,
    samples: List[VqaSample],
    vocab: Vocabulary,
    answers: AnswerVocab,
    batch_size: int = 32,
    generate: bool = False,
) -> EvaluationResult:
    """Classifier accuracy; answers missing from the training set always count as wrong"""
    dtype = model.classifier.out.weight.dtype
    predictions: List[Prediction] = []
    for chunk in batch_iter(samples, batch_size, shuffle=False):
        batch = collate(chunk, vocab, answers, model.config.model, dtype=dtype)
        predicted = model.predict(batch.images, batch.question_ids)
        generated = model.generate(batch.images, batch.question_ids) if generate else None
        for row, sample in enumerate(chunk):
            gold = int(batch.answer_classes[row])
            predictions.append(Prediction(
                sample_id=sample.sample_id,
                question=sample.question,
                gold=sample.answer,
                predicted=answers.decode(int(predicted[row])),
                correct=gold != OUT_OF_SET and gold == int(predicted[row]),
                is_open=sample.is_open,
                generated=vocab.detokenize(generated[row]) if generated is not None else None,
            ))
    report = MetricsReport.from_outcomes([p.correct for p in predictions], [p.is_open for p in predictions])
    return EvaluationResult(report=report, predictions=predictions)


def write_predictions(path: Union[str, Path], result: EvaluationResult) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["id\tquestion\tgold\tpredicted\tcorrect\tis_open"]
    lines += [
        f"{p.sample_id}\t{p.question}\t{p.gold}\t{p.predicted}\t{int(p.correct)}\t{int(p.is_open)}"
        for p in result.predictions
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_generations(path: Union[str, Path], result: EvaluationResult) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["id\tquestion\tgold\tgenerated"]
    lines += [
        f"{p.sample_id}\t{p.question}\t{p.gold}\t{p.generated or ''}"
        for p in result.predictions if p.is_open
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Training Engine (MAIN CLASS)
# ---------------------------------------------------------------------------

class TrainingEngine:
    """Trains one configuration on one dataset and keeps the best validation state"""

    def __init__(
        self,
        config: TrainConfig,
        dataset: VqaDataset,
        run_dir: Optional[Union[str, Path]] = None,
        anomaly_checks: Optional[bool] = None,
    ):
        self.config = config
        self.dataset = dataset
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.anomaly_checks = settings.DETECT_ANOMALY if anomaly_checks is None else anomaly_checks
        self.answers = dataset.answer_vocab()
        self.vocab = dataset.vocab

    def build_model(self) -> VqaModel:
        return VqaModel(self.config, vocab_size=len(self.vocab), num_classes=len(self.answers))

    # ---------------------------------------------------------------------

    def train(self) -> TrainResult:
        config = self.config
        train_samples = self.dataset.split("train")
        if not train_samples:
            raise ContractError("training split is empty")
        val_samples = self.dataset.splits.get("val", [])
        logger.info(
            f"Training {config.toggle_label()} (config {config.config_hash()}) on "
            f"{len(train_samples)} samples for {config.epochs} epochs"
        )

        with default_dtype(config.precision), detect_anomaly(self.anomaly_checks):
            model = self.build_model()
            optimizer = AdamW(
                model.parameters(),
                lr=config.learning_rate,
                betas=(config.adam_beta1, config.adam_beta2),
                eps=config.adam_eps,
                weight_decay=config.weight_decay,
            )
            trace: List[LossBreakdown] = []
            epochs: List[EpochRecord] = []
            best_state, best_epoch, best_acc = model.state_dict(), 0, -math.inf
            step = 0
            for epoch in range(config.epochs):
                epoch_trace: List[LossBreakdown] = []
                for chunk in batch_iter(train_samples, config.batch_size, seed=config.seed, epoch=epoch):
                    batch = collate(chunk, self.vocab, self.answers, config.model, dtype=model.classifier.out.weight.dtype)
                    epoch_trace.append(self._step(model, optimizer, batch, step))
                    step += 1
                trace.extend(epoch_trace)

                val_acc = None
                if val_samples:
                    val_acc = evaluate(model, val_samples, self.vocab, self.answers).report.acc_overall
                record = EpochRecord(epoch, len(epoch_trace), epoch_mean(epoch_trace), val_acc)
                epochs.append(record)
                logger.info(
                    f"Epoch {epoch + 1}/{config.epochs}: loss={record.mean_losses['total']:.4f} "
                    f"val_acc={format_accuracy(val_acc)}"
                )
                # without a validation split the last epoch wins
                score = val_acc if val_acc is not None else float(epoch)
                if score > best_acc:
                    best_state, best_epoch, best_acc = model.state_dict(), epoch, score

            model.load_state_dict(best_state)
            train_report = evaluate(model, train_samples, self.vocab, self.answers).report
            train_report.loss_trace = trace
            val_report = evaluate(model, val_samples, self.vocab, self.answers).report if val_samples else None

        checkpoint_path = None
        if self.run_dir is not None:
            checkpoint_path = save_checkpoint(
                self.run_dir / CHECKPOINT_NAME,
                model,
                self.vocab,
                self.answers,
                metadata={"best_epoch": best_epoch, "config_hash": config.config_hash(), "steps": step},
            )
        return TrainResult(
            model=model,
            answers=self.answers,
            vocab=self.vocab,
            best_epoch=best_epoch,
            train_report=train_report,
            val_report=val_report,
            loss_trace=trace,
            epochs=epochs,
            checkpoint_path=checkpoint_path,
        )

    # ---------------------------------------------------------------------

    def _step(self, model: VqaModel, optimizer: AdamW, batch, step: int) -> LossBreakdown:
        new_tape()
        try:
            output = model(batch.images, batch.question_ids)
            losses = model.losses(batch, output)
        except NumericalError as e:
            if e.step is None:
                raise NumericalError("non-finite value in forward pass", step=step, term=e.term) from e
            raise

        bad_term = first_non_finite(losses.breakdown)
        if bad_term is not None:
            raise NumericalError("non-finite loss", step=step, term=bad_term)

        backward(losses.total)
        for name, param in model.named_parameters():
            if param.grad is not None and not np.all(np.isfinite(param.grad)):
                raise NumericalError("non-finite gradient", step=step, term=f"grad:{name}")
        optimizer.step()
        optimizer.zero_grad()
        return losses.breakdown
