import numpy as np
import pytest

from scenafuse.Adapter import AblationConfig
from scenafuse.dataset_generator import flip_location
from scenafuse.Errors import DimensionError, FormatError
from scenafuse.Model import ADAPTER_PREFIX, ScenaFuseModel, ablation_from_names
from scenafuse.Scenario import encode_scenario
from scenafuse.Tensor import no_grad
from scenafuse.Variants import ordered_variants
from scenafuse.Vocabulary import encode_pair


@pytest.fixture
def example(tiny_dataset, tiny_vocab, tiny_model_config):
    e = next(e for e in tiny_dataset if e.ambiguous)
    return (encode_pair(e.premise, e.hypothesis, tiny_vocab, tiny_model_config.max_len),
            e.scenario)


def test_adapter_tensors_are_prefixed(tiny_model_config):
    model = ScenaFuseModel.initialize(tiny_model_config)
    names = model.named_tensors()
    assert "adapter/vesr/w_query" in names and "adapter/phi_int" in names
    assert names["adapter/phi_int"].shape == (tiny_model_config.k + tiny_model_config.max_len,
                                              tiny_model_config.max_len)
    assert all(p.requires_grad for p in model.parameters())


def test_text_only_shares_the_encoder_draws(tiny_model_config):
    full = ScenaFuseModel.initialize(tiny_model_config, seed=4)
    plain = ScenaFuseModel.text_only(tiny_model_config, seed=4)
    assert not plain.uses_adapter
    assert not any(name.startswith(ADAPTER_PREFIX) for name in plain.named_tensors())
    for name, tensor in plain.named_tensors().items():
        np.testing.assert_array_equal(tensor.data, full.named_tensors()[name].data)


def test_scenario_reaches_the_prediction(tiny_model_config, example):
    enc, grid = example
    full = ScenaFuseModel.initialize(tiny_model_config, seed=1)
    plain = ScenaFuseModel.text_only(tiny_model_config, seed=1)
    for p in full.adapter.named_tensors().values():
        p.data[...] = np.random.default_rng(0).normal(0.0, 0.5, p.shape)
    observed = encode_scenario(grid, tiny_model_config.d_prime)
    flipped = encode_scenario(flip_location(grid), tiny_model_config.d_prime)
    assert not np.allclose(full.probabilities(enc, observed), full.probabilities(enc, flipped))
    np.testing.assert_array_equal(plain.probabilities(enc, observed), plain.probabilities(enc, flipped))
    assert full.probabilities(enc, observed).sum() == pytest.approx(1.0)


def test_forward_records_traces_and_attention(tiny_model_config, example):
    enc, grid = example
    model = ScenaFuseModel.initialize(tiny_model_config)
    attention, traces = [], []
    with no_grad():
        logits = model.forward(enc, encode_scenario(grid, tiny_model_config.d_prime),
                               attention_sink=attention, trace_sink=traces)
    assert logits.shape == (3,)
    assert len(traces) == 1 and traces[0].r.shape == (tiny_model_config.max_len, tiny_model_config.hidden)
    assert len(attention) == tiny_model_config.blocks - 1


def test_forward_checks_inputs(tiny_model_config, example, tiny_vocab):
    enc, grid = example
    model = ScenaFuseModel.initialize(tiny_model_config)
    with pytest.raises(DimensionError):
        model.forward(enc, encode_scenario(grid, tiny_model_config.d_prime + 1))
    with pytest.raises(DimensionError):
        model.forward(enc, None)
    short = encode_pair(["people"], ["people"], tiny_vocab, tiny_model_config.max_len - 1)
    with pytest.raises(DimensionError):
        model.forward(short, encode_scenario(grid, tiny_model_config.d_prime))


@pytest.mark.parametrize("v", ordered_variants(), ids=lambda v: v.name)
def test_checkpoint_round_trip_per_variant(tmp_path, tiny_model_config, example, v):
    enc, grid = example
    visual = encode_scenario(grid, tiny_model_config.d_prime)
    model = ScenaFuseModel.initialize(tiny_model_config, v.ablation, seed=2)
    model.save(tmp_path / "model.scnf")
    loaded = ScenaFuseModel.load(tmp_path / "model.scnf", tiny_model_config)
    assert loaded.ablation == v.ablation
    np.testing.assert_array_equal(loaded.probabilities(enc, visual), model.probabilities(enc, visual))


def test_ablation_inference():
    assert ablation_from_names(["word_embeddings"]) == AblationConfig(disable_isi=True)
    assert ablation_from_names(["adapter/phi", "adapter/srvr/w_key", "adapter/w_fuse"]) == \
        AblationConfig(disable_vesr=True, disable_isf=True)


def test_mismatched_checkpoint(tmp_path, tiny_model_config):
    ScenaFuseModel.initialize(tiny_model_config).save(tmp_path / "model.scnf")
    with pytest.raises(FormatError):
        ScenaFuseModel.load(tmp_path / "model.scnf", tiny_model_config, AblationConfig(disable_gm=True))
    model = ScenaFuseModel.initialize(tiny_model_config)
    state = model.state()
    state["classifier"] = np.zeros((2, 2))
    with pytest.raises(FormatError):
        model.load_state(state)
