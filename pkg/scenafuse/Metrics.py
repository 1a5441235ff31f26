"""
Classification metrics over the three NLI labels.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .Errors import DimensionError

LABELS = ("entailment", "neutral", "contradiction")
ENTAILMENT, NEUTRAL, CONTRADICTION = 0, 1, 2


def _ratio(numerator, denominator) -> float:
    return float(numerator) / float(denominator)


@dataclass
class Metrics:
    """
    Confusion counts (rows gold, columns predicted) and the scores derived from them

    Macro averages run over the classes whose denominator is non-zero.
    """
    confusion : np.ndarray
    accuracy : float
    micro_precision : float
    micro_recall : float
    macro_precision : float
    macro_recall : float
    ambiguous_accuracy : float | None = None
    unambiguous_accuracy : float | None = None
    loss : float | None = None

    @classmethod
    def from_confusion(cls, confusion, ambiguous_accuracy=None, unambiguous_accuracy=None, loss=None):
        confusion = np.asarray(confusion, dtype=np.int64)
        if confusion.shape != (len(LABELS), len(LABELS)):
            raise DimensionError(f"confusion matrix must be {len(LABELS)}x{len(LABELS)}, got {confusion.shape}")
        total = int(confusion.sum())
        if total == 0:
            raise DimensionError("cannot score an empty split")
        true_positives = np.diag(confusion)
        predicted = confusion.sum(axis=0)
        gold = confusion.sum(axis=1)

        precisions = [_ratio(tp, p) for tp, p in zip(true_positives, predicted) if p > 0]
        recalls = [_ratio(tp, g) for tp, g in zip(true_positives, gold) if g > 0]
        return cls(
            confusion=confusion,
            accuracy=_ratio(true_positives.sum(), total),
            # every example is predicted exactly once: TP+FP and TP+FN both sum to the total
            micro_precision=_ratio(true_positives.sum(), predicted.sum()),
            micro_recall=_ratio(true_positives.sum(), gold.sum()),
            macro_precision=float(np.mean(precisions)),
            macro_recall=float(np.mean(recalls)),
            ambiguous_accuracy=ambiguous_accuracy,
            unambiguous_accuracy=unambiguous_accuracy,
            loss=loss,
        )

    @classmethod
    def from_predictions(cls, gold, predicted, ambiguous=None, loss : float | None = None):
        """
        Score predicted class ids against gold ones

        :param gold: Gold label per example
        :param predicted: Argmax prediction per example
        :param ambiguous: Optional per-example flags for the subset accuracies
        :param loss: Optional mean loss over the split
        """
        gold = np.asarray(gold, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        if gold.shape != predicted.shape:
            raise DimensionError(f"{gold.shape[0]} gold labels against {predicted.shape[0]} predictions")
        for name, ids in (("gold", gold), ("predicted", predicted)):
            if ids.size and (ids.min() < 0 or ids.max() >= len(LABELS)):
                raise DimensionError(f"{name} class ids must lie in [0, {len(LABELS)}), got {ids.min()}..{ids.max()}")
        confusion = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
        np.add.at(confusion, (gold, predicted), 1)

        subsets = [None, None]
        if ambiguous is not None:
            ambiguous = np.asarray(ambiguous, dtype=bool)
            for i, chosen in enumerate((ambiguous, ~ambiguous)):
                if chosen.any():
                    subsets[i] = float(np.mean(gold[chosen] == predicted[chosen]))
        return cls.from_confusion(confusion, subsets[0], subsets[1], loss)

    def as_record(self, variant : str, split : str, epoch : int | None) -> dict:
        return {
            "variant": variant, "split": split, "epoch": epoch,
            "acc": self.accuracy, "micro_p": self.micro_precision, "micro_r": self.micro_recall,
            "macro_p": self.macro_precision, "macro_r": self.macro_recall,
            "acc_ambiguous": self.ambiguous_accuracy, "acc_unambiguous": self.unambiguous_accuracy,
            "loss": self.loss,
        }

    def __str__(self):
        return (f"acc {self.accuracy:.4f}  P {self.micro_precision:.4f}  R {self.micro_recall:.4f}  "
                f"macro-P {self.macro_precision:.4f}  macro-R {self.macro_recall:.4f}")


def write_metric_records(path, records : list[dict], append : bool = False):
    """
    Line-delimited JSON, one record per (variant, split, epoch)
    """
    with open(Path(path), "a" if append else "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_metric_records(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
