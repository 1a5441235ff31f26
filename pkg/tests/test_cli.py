import json

import pytest

from scenafuse.cli import build_parser, dispatch
from scenafuse.render import main as render_main, render_run

DATA_CONFIG = "train=24\ndev=12\ntest=12\ngrid_size=2\n"
RUN_CONFIG = ("vocab_size=40\nhidden=8\nheads=2\nadapter_heads=2\nmax_len=12\nd_prime=8\ngrid_size=2\n"
              "epochs=1\nbatch_size=8\n")


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    config = out / "gen.cfg"
    config.write_text(DATA_CONFIG)
    assert dispatch(["gen-data", "--out", str(out), "--config", str(config), "--seed", "5"]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    config = out / "run.cfg"
    config.write_text(RUN_CONFIG)
    code = dispatch(["train", "--out", str(out), "--data", str(data_dir), "--config", str(config), "--seed", "1"])
    assert code == 0
    return out


def test_gen_data_is_reproducible(data_dir, tmp_path):
    config = tmp_path / "gen.cfg"
    config.write_text(DATA_CONFIG)
    assert dispatch(["gen-data", "--out", str(tmp_path), "--config", str(config), "--seed", "5"]) == 0
    assert (tmp_path / "dataset.jsonl").read_bytes() == (data_dir / "dataset.jsonl").read_bytes()
    record = manifest(data_dir)
    assert record["command"] == "gen-data" and record["exit_code"] == 0 and record["seed"] == 5
    assert {"dataset.jsonl", "vocab.txt", "generator.cfg"} <= set(record["outputs"])


def test_train_writes_its_artifacts(run_dir):
    for name in ("checkpoint.scnf", "model.cfg", "train.cfg", "vocab.txt", "metrics.jsonl", "run.log"):
        assert (run_dir / name).exists(), name
    record = manifest(run_dir)
    assert record["config"]["variant"] == "full" and record["config"]["model"]["hidden"] == 8
    assert record["finished"] is not None


def test_eval_of_a_checkpoint(run_dir, data_dir, tmp_path, capsys):
    code = dispatch(["eval", "--out", str(tmp_path), "--data", str(data_dir),
                     "--checkpoint", str(run_dir / "checkpoint.scnf"), "--split", "dev"])
    assert code == 0
    (record,) = [json.loads(line) for line in (tmp_path / "eval_dev.jsonl").read_text().splitlines()]
    assert record["split"] == "dev" and record["variant"] == "full" and 0.0 <= record["acc"] <= 1.0
    assert "confusion" in capsys.readouterr().out


def test_eval_names_the_checkpoint_variant(data_dir, tmp_path):
    run = tmp_path / "text"
    config = tmp_path / "run.cfg"
    config.write_text(RUN_CONFIG)
    assert dispatch(["train", "--out", str(run), "--data", str(data_dir), "--config", str(config), "--text-only"]) == 0
    out = tmp_path / "eval"
    assert dispatch(["eval", "--out", str(out), "--data", str(data_dir),
                     "--checkpoint", str(run / "checkpoint.scnf"), "--split", "test"]) == 0
    (record,) = [json.loads(line) for line in (out / "eval_test.jsonl").read_text().splitlines()]
    assert record["variant"] == "w/o ISI"


def test_inspect_attention(run_dir, data_dir, tmp_path):
    code = dispatch(["inspect-attention", "--out", str(tmp_path), "--data", str(data_dir),
                     "--checkpoint", str(run_dir / "checkpoint.scnf"), "--index", "0"])
    assert code == 0
    report = json.loads((tmp_path / "attention.json").read_text())
    observed = report["observed"]
    assert len(observed["tokens"]) == 12 and len(observed["probabilities"]) == 3
    assert len(observed["gate"]) == 12
    assert observed["scenario"]["location"] != report["counterfactual"]["scenario"]["location"]
    assert not list(tmp_path.glob("*.png"))
    assert render_main([str(tmp_path)]) == 0
    assert (tmp_path / "attention.png").exists() and (tmp_path / "attention.html").exists()


def test_inspect_index_out_of_range(run_dir, data_dir, tmp_path):
    code = dispatch(["inspect-attention", "--out", str(tmp_path), "--data", str(data_dir),
                     "--checkpoint", str(run_dir / "checkpoint.scnf"), "--index", "999"])
    assert code == 2
    assert manifest(tmp_path)["exit_code"] == 2


def test_single_variant_ablation(data_dir, tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text(RUN_CONFIG)
    code = dispatch(["ablate", "--out", str(tmp_path), "--data", str(data_dir), "--config", str(config),
                     "--only", "--variant", "w/o GM"])
    assert code == 0
    assert manifest(tmp_path)["config"]["variants"] == ["w/o GM"]
    for name in ("ablation.jsonl", "ablation.csv", "ablation.tex"):
        assert (tmp_path / name).exists(), name


def test_usage_and_input_errors(data_dir, tmp_path):
    assert dispatch(["train", "--variant", "w/o everything"]) == 2
    assert dispatch([]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs 3\n")
    assert dispatch(["train", "--out", str(tmp_path), "--data", str(data_dir), "--config", str(bad)]) == 2
    bad.write_text("learning_rate=1e-3\nunsafe=false\n")
    assert dispatch(["train", "--out", str(tmp_path), "--data", str(data_dir), "--config", str(bad)]) == 2


def test_parser_lists_every_command():
    commands = build_parser()._subparsers._group_actions[0].choices
    assert set(commands) == {"gen-data", "train", "eval", "ablate", "grad-check", "inspect-attention",
                             "bench-complexity"}


@pytest.mark.slow
def test_grad_check_command(tmp_path, capsys):
    assert dispatch(["grad-check", "--out", str(tmp_path), "--variant", "w/o ISF"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_training_curves_from_the_metrics_file(run_dir):
    assert render_run(run_dir) == ["training_curves.png"]
    assert (run_dir / "training_curves.png").read_bytes().startswith(b"\x89PNG")


def test_render_with_nothing_to_draw(tmp_path):
    assert render_main([str(tmp_path)]) == 1
