import numpy as np
import pytest

from scenafuse.Config import ModelConfig, desk_train_config
from scenafuse.dataset_generator import (GeneratorConfig, build_vocabulary, generate_dataset, split_examples,
                                        text_only_bayes_accuracy)
from scenafuse.Errors import ConfigurationError, DimensionError, DivergenceError
from scenafuse.Model import ScenaFuseModel
from scenafuse.Trainer import Trainer, evaluate, prepare_examples, train
from scenafuse.Vocabulary import Vocabulary


@pytest.fixture
def splits(tiny_dataset, tiny_vocab, tiny_model_config):
    return {split: prepare_examples(split_examples(tiny_dataset, split), tiny_vocab, tiny_model_config)
            for split in ("train", "dev", "test")}


def test_vocabulary_must_fit_the_embeddings(tiny_dataset, tiny_model_config):
    vocab = Vocabulary.build(f"w{i}" for i in range(tiny_model_config.vocab_size))
    with pytest.raises(ConfigurationError):
        prepare_examples(tiny_dataset, vocab, tiny_model_config)


def test_evaluate(splits, tiny_model_config):
    model = ScenaFuseModel.initialize(tiny_model_config)
    serial = evaluate(model, splits["dev"])
    threaded = evaluate(model, splits["dev"], workers=3)
    np.testing.assert_array_equal(serial.confusion, threaded.confusion)
    assert serial.loss == pytest.approx(threaded.loss)
    assert serial.confusion.sum() == len(splits["dev"])
    with pytest.raises(DimensionError):
        evaluate(model, [])


def test_zero_epochs_keep_the_initial_model(splits, tiny_model_config):
    model = ScenaFuseModel.initialize(tiny_model_config)
    before = model.state()
    result = train(model, splits["train"], splits["dev"], desk_train_config(epochs=0))
    assert result.best_epoch == 0 and result.history == []
    for name, value in model.state().items():
        np.testing.assert_array_equal(value, before[name])


def test_same_seed_same_parameters(splits, tiny_model_config, tiny_train_config):
    states = []
    for _ in range(2):
        model = ScenaFuseModel.initialize(tiny_model_config, seed=tiny_train_config.seed)
        train(model, splits["train"], splits["dev"], tiny_train_config)
        states.append(model.state())
    for name in states[0]:
        np.testing.assert_array_equal(states[0][name], states[1][name])


def test_history_and_selection(splits, tiny_model_config):
    model = ScenaFuseModel.initialize(tiny_model_config)
    result = train(model, splits["train"], splits["dev"], desk_train_config(epochs=3, batch_size=8))
    assert [e.epoch for e in result.history] == [1, 2, 3]
    best = max(result.history, key=lambda e: (e.dev.accuracy, -e.dev.loss))
    assert result.best_epoch == best.epoch
    assert evaluate(model, splits["dev"]).accuracy == pytest.approx(best.dev.accuracy)


def test_repeated_batch_is_memorised(splits, tiny_model_config):
    model = ScenaFuseModel.initialize(tiny_model_config)
    trainer = Trainer(model, desk_train_config(dropout=0.0, learning_rate=5e-3))
    batch = splits["train"][:8]
    trainer.total_steps = 100
    losses = [trainer.train_step(batch) for _ in range(100)]
    assert losses[-1] < 0.5 * losses[0]


def test_divergence_is_reported(splits, tiny_model_config):
    model = ScenaFuseModel.initialize(tiny_model_config)
    model.encoder.classifier.data[...] = np.nan
    trainer = Trainer(model, desk_train_config())
    trainer.total_steps = 1
    with pytest.raises(DivergenceError):
        trainer.train_step(splits["train"][:4])


def test_empty_training_split(tiny_model_config, splits):
    with pytest.raises(ConfigurationError):
        train(ScenaFuseModel.initialize(tiny_model_config), [], splits["dev"], desk_train_config())


def test_text_only_is_capped_on_ambiguous_pairs(splits, tiny_model_config, tiny_train_config):
    model = ScenaFuseModel.text_only(tiny_model_config)
    train(model, splits["train"], splits["dev"], tiny_train_config)
    # both members of a pair share their text, so at most one of them is right
    assert evaluate(model, splits["test"]).ambiguous_accuracy <= 0.5


@pytest.mark.slow
def test_scenario_resolves_ambiguity():
    dataset = generate_dataset(GeneratorConfig())
    config = ModelConfig()
    vocab = build_vocabulary(dataset)
    prepared = {s: prepare_examples(split_examples(dataset, s), vocab, config) for s in ("train", "dev", "test")}
    recipe = desk_train_config()

    text_only = ScenaFuseModel.text_only(config, recipe.seed)
    train(text_only, prepared["train"], prepared["dev"], recipe, workers=4)
    full = ScenaFuseModel.initialize(config, seed=recipe.seed)
    train(full, prepared["train"], prepared["dev"], recipe, workers=4)

    plain, fused = evaluate(text_only, prepared["test"], 4), evaluate(full, prepared["test"], 4)
    ceiling = text_only_bayes_accuracy(split_examples(dataset, "test"))
    assert plain.accuracy <= ceiling + 0.03
    assert plain.ambiguous_accuracy <= 0.5
    assert fused.accuracy >= 0.90
    assert fused.accuracy - plain.accuracy >= 0.10
