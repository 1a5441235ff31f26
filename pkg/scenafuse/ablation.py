"""
Ablation driver: train every model variant with one seed and one recipe,
score each on the test split and lay the results out as a table.
"""
import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from .Config import ModelConfig, TrainConfig
from .Metrics import Metrics, write_metric_records
from .Model import ScenaFuseModel
from .Trainer import PreparedExample, TrainResult, evaluate, train
from .Variants import Variant, ordered_variants

logger = logging.getLogger(__name__)

# an ablation may beat the full model by at most this much accuracy
DIRECTION_TOLERANCE = 0.01


@dataclass
class AblationRow:
    """Outcome of one variant"""
    variant : str
    test : Metrics
    training : TrainResult
    execution_time : float  # seconds

    @property
    def columns(self) -> tuple[float, float, float]:
        """Test accuracy on all, ambiguous and unambiguous examples"""
        return self.test.accuracy, self.test.ambiguous_accuracy, self.test.unambiguous_accuracy


def run_variant(v : Variant, splits : dict[str, list[PreparedExample]], model_config : ModelConfig,
                train_config : TrainConfig, workers : int = 1) -> AblationRow:
    start = time.perf_counter()
    model = ScenaFuseModel.initialize(model_config, v.ablation, train_config.seed)
    result = train(model, splits["train"], splits["dev"], train_config, workers)
    test = evaluate(model, splits["test"], workers)
    row = AblationRow(v.name, test, result, time.perf_counter() - start)
    logger.info("%s: test %s (best epoch %d, %.1fs)", v.name, test, result.best_epoch, row.execution_time)
    return row


def run_ablation(splits : dict[str, list[PreparedExample]], model_config : ModelConfig, train_config : TrainConfig,
                 variants : list[Variant] | None = None, workers : int = 1) -> list[AblationRow]:
    """
    Train and test each variant under identical seed and configuration

    :param splits: Prepared "train", "dev" and "test" examples
    :param model_config: Shared model shape
    :param train_config: Shared optimisation recipe
    :param variants: Variants to run in table order (default: every registered one)
    :param workers: Evaluation threads
    """
    variants = sorted(variants) if variants is not None else ordered_variants()
    return [run_variant(v, splits, model_config, train_config, workers) for v in variants]


def direction_violations(rows : list[AblationRow], tolerance : float = DIRECTION_TOLERANCE) -> list[str]:
    """
    Variants whose test accuracy exceeds the full model's by more than tolerance
    """
    full = next((r for r in rows if r.variant == "full"), None)
    if full is None:
        return []
    return [r.variant for r in rows if r.variant != "full" and r.test.accuracy > full.test.accuracy + tolerance]


def _percent(value) -> str:
    return "-" if value is None else f"{100 * value:.2f}"


def print_summary(rows : list[AblationRow]):
    """Print the ablation table to stdout"""
    print("\n")
    print("=" * 90)
    print("ABLATION SUMMARY (test split, %)")
    print("=" * 90)
    header = f"{'Variant':<12} | {'Acc':>7} | {'Acc amb':>7} | {'Acc unamb':>9} | {'P':>7} | {'R':>7} | {'Epoch':>5} | {'Time (s)':>9}"
    print(header)
    print("-" * 90)
    for r in rows:
        acc, amb, unamb = r.columns
        print(f"{r.variant:<12} | {_percent(acc):>7} | {_percent(amb):>7} | {_percent(unamb):>9} | "
              f"{_percent(r.test.micro_precision):>7} | {_percent(r.test.micro_recall):>7} | "
              f"{r.training.best_epoch:>5} | {r.execution_time:>9.1f}")
    print("=" * 90)


def export_records(rows : list[AblationRow], path):
    """
    Line-delimited JSON: the dev record of every epoch and the final test record per variant
    """
    records = []
    for r in rows:
        for epoch in r.training.history:
            if epoch.dev is not None:
                records.append(epoch.dev.as_record(r.variant, "dev", epoch.epoch))
        records.append(r.test.as_record(r.variant, "test", r.training.best_epoch))
    write_metric_records(path, records)


def export_csv(rows : list[AblationRow], path):
    with open(Path(path), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "acc", "acc_ambiguous", "acc_unambiguous",
                         "micro_p", "micro_r", "macro_p", "macro_r", "best_epoch", "time_s"])
        for r in rows:
            t = r.test
            writer.writerow([r.variant, f"{t.accuracy:.4f}", _csv_value(t.ambiguous_accuracy),
                             _csv_value(t.unambiguous_accuracy), f"{t.micro_precision:.4f}",
                             f"{t.micro_recall:.4f}", f"{t.macro_precision:.4f}", f"{t.macro_recall:.4f}",
                             r.training.best_epoch, f"{r.execution_time:.2f}"])


def _csv_value(value) -> str:
    return "" if value is None else f"{value:.4f}"


def export_latex(rows : list[AblationRow], path):
    """
    The ablation table as a LaTeX tabular (accuracies in percent)
    """
    latex = r"""\begin{table}[h]
\centering
\caption{Ablation study on the synthetic scenario benchmark}
\label{tab:ablation}
\begin{tabular}{l|c|c|c}
\hline
\textbf{Variant} & \textbf{Acc} & \textbf{Acc (ambiguous)} & \textbf{Acc (unambiguous)} \\
\hline
"""
    for r in rows:
        acc, amb, unamb = r.columns
        name = r.variant.replace("_", r"\_")
        latex += f"{name} & {_percent(acc)} & {_percent(amb)} & {_percent(unamb)} \\\\\n"
    latex += r"""\hline
\end{tabular}
\end{table}
"""
    Path(path).write_text(latex, encoding="utf-8")
