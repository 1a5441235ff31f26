import csv

import numpy as np
import pytest

from scenafuse.ablation import (AblationRow, direction_violations, export_csv, export_latex, export_records,
                                print_summary, run_ablation)
from scenafuse.Config import ModelConfig, desk_train_config
from scenafuse.dataset_generator import GeneratorConfig, build_vocabulary, generate_dataset, split_examples
from scenafuse.Metrics import Metrics, read_metric_records
from scenafuse.Model import ScenaFuseModel
from scenafuse.Trainer import EpochRecord, TrainResult, evaluate, prepare_examples, train
from scenafuse.Variants import get_variant, ordered_variants


def row(name, gold, predicted, ambiguous=None):
    test = Metrics.from_predictions(gold, predicted, ambiguous)
    history = [EpochRecord(1, 0.9, test)]
    return AblationRow(name, test, TrainResult(history, 1, test), 1.5)


def test_direction_violations():
    rows = [row("full", [0, 1, 2, 0], [0, 1, 2, 1]),
            row("w/o GM", [0, 1, 2, 0], [0, 1, 2, 0]),
            row("w/o FM", [0, 1, 2, 0], [0, 1, 0, 1])]
    assert direction_violations(rows) == ["w/o GM"]
    assert direction_violations(rows, tolerance=0.5) == []
    assert direction_violations(rows[1:]) == []


def test_exports(tmp_path, capsys):
    rows = [row("full", [0, 1, 2, 0], [0, 1, 2, 1], [True, True, False, False]),
            row("w/o ISI", [0, 1, 2, 0], [0, 1, 1, 1])]
    print_summary(rows)
    out = capsys.readouterr().out
    assert "ABLATION SUMMARY" in out and "w/o ISI" in out

    export_records(rows, tmp_path / "ablation.jsonl")
    records = read_metric_records(tmp_path / "ablation.jsonl")
    assert [(r["variant"], r["split"]) for r in records] == [("full", "dev"), ("full", "test"),
                                                            ("w/o ISI", "dev"), ("w/o ISI", "test")]

    export_csv(rows, tmp_path / "ablation.csv")
    with open(tmp_path / "ablation.csv", newline="") as f:
        table = list(csv.DictReader(f))
    assert table[0]["acc"] == "0.7500" and table[1]["acc_ambiguous"] == ""

    export_latex(rows, tmp_path / "ablation.tex")
    latex = (tmp_path / "ablation.tex").read_text()
    assert "full & 75.00 & 100.00 & 50.00" in latex
    assert r"\end{tabular}" in latex


def test_variants_share_seed_and_data(tiny_dataset, tiny_vocab, tiny_model_config, tiny_train_config):
    splits = {s: prepare_examples(split_examples(tiny_dataset, s), tiny_vocab, tiny_model_config)
              for s in ("train", "dev", "test")}
    variants = [get_variant("w/o FM"), get_variant("full"), get_variant("w/o ISI")]
    rows = run_ablation(splits, tiny_model_config, tiny_train_config, variants)
    assert [r.variant for r in rows] == ["full", "w/o ISI", "w/o FM"]
    for r in rows:
        assert r.test.confusion.sum() == len(splits["test"])
        assert r.execution_time > 0
    assert rows[1].columns[1] <= 0.5


def test_without_interaction_is_the_text_only_baseline(tiny_dataset, tiny_vocab, tiny_model_config,
                                                       tiny_train_config):
    splits = {s: prepare_examples(split_examples(tiny_dataset, s), tiny_vocab, tiny_model_config)
              for s in ("train", "dev", "test")}
    ablated, = run_ablation(splits, tiny_model_config, tiny_train_config, [get_variant("w/o ISI")])

    baseline = ScenaFuseModel.text_only(tiny_model_config, tiny_train_config.seed)
    result = train(baseline, splits["train"], splits["dev"], tiny_train_config)
    test = evaluate(baseline, splits["test"])

    np.testing.assert_array_equal(ablated.test.confusion, test.confusion)
    assert ablated.test.loss == test.loss
    assert [e.train_loss for e in ablated.training.history] == [e.train_loss for e in result.history]


@pytest.mark.slow
def test_no_ablation_beats_the_full_model():
    dataset = generate_dataset(GeneratorConfig())
    vocab = build_vocabulary(dataset)
    config = ModelConfig()
    splits = {s: prepare_examples(split_examples(dataset, s), vocab, config) for s in ("train", "dev", "test")}
    rows = run_ablation(splits, config, desk_train_config(), ordered_variants(), workers=4)
    assert [r.variant for r in rows] == [v.name for v in ordered_variants()]
    assert direction_violations(rows) == []
