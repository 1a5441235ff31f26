"""
The host encoder with the adapter plugged into its bottom block.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .Adapter import AblationConfig, AdapterParams, AdapterTrace, init_adapter_params, trace_adapter
from .Checkpoint import load_checkpoint, save_checkpoint
from .Config import ModelConfig
from .Encoder import EncoderParams, classify, encoder_forward
from .Errors import DimensionError, FormatError
from .Scenario import VisualFeatures
from .Tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

ADAPTER_PREFIX = "adapter/"

# independent random streams per concern, so dropping the adapter leaves
# every other draw untouched
ENCODER_STREAM, ADAPTER_STREAM, SHUFFLE_STREAM, DROPOUT_STREAM = range(4)


def stream(seed : int, purpose : int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose])


@dataclass
class ScenaFuseModel:
    """
    Encoder parameters, optional adapter parameters and the switches that shaped them
    """
    config : ModelConfig
    ablation : AblationConfig
    encoder : EncoderParams
    adapter : AdapterParams | None = None

    @classmethod
    def initialize(cls, config : ModelConfig, ablation : AblationConfig = AblationConfig(), seed : int = 0):
        """
        Fresh model; encoder draws do not depend on whether the adapter exists

        :param config: Model shape
        :param ablation: Component switches (disable_isi gives the plain encoder)
        :param seed: Run seed
        """
        encoder = EncoderParams.initialize(config.vocab_size, config.hidden, config.heads, config.blocks,
                                           config.max_len, stream(seed, ENCODER_STREAM))
        adapter = init_adapter_params(config.k, config.max_len, config.hidden, config.d_prime, config.hidden,
                                      config.adapter_heads, stream(seed, ADAPTER_STREAM), ablation)
        return cls(config, ablation, encoder, adapter)

    @classmethod
    def text_only(cls, config : ModelConfig, seed : int = 0):
        return cls.initialize(config, AblationConfig(disable_isi=True), seed)

    @property
    def uses_adapter(self) -> bool:
        return self.adapter is not None

    def named_tensors(self) -> dict[str, Tensor]:
        tensors = self.encoder.named_tensors()
        if self.adapter is not None:
            tensors.update({ADAPTER_PREFIX + name: value for name, value in self.adapter.named_tensors().items()})
        return tensors

    def parameters(self) -> list[Tensor]:
        return list(self.named_tensors().values())

    def _check_visual(self, visual : VisualFeatures):
        if visual.k != self.config.k or visual.d_prime != self.config.d_prime:
            raise DimensionError(f"visual features {visual.k}x{visual.d_prime} do not fit "
                                 f"{self.config.k}x{self.config.d_prime}")

    def forward(self, enc, visual : VisualFeatures | None = None, dropout : float = 0.0,
                rng : np.random.Generator | None = None, attention_sink : list | None = None,
                trace_sink : list | None = None) -> Tensor:
        """
        Logits (3,) of one encoded pair under its scenario

        :param enc: Padded pair encoding
        :type enc: InputEncoding
        :param visual: Scenario features (ignored without adapter)
        :param dropout: Dropout rate inside the encoder blocks
        :param rng: Dropout stream
        :param attention_sink: Receives the self-attention weights of every block that computes them
        :param trace_sink: Receives the AdapterTrace of the forward
        """
        if enc.length != self.config.max_len:
            raise DimensionError(f"encoding of length {enc.length} does not fit max_len {self.config.max_len}")
        override = None
        if self.adapter is not None:
            if visual is None:
                raise DimensionError("the adapter needs scenario features")
            self._check_visual(visual)

            def override(x : Tensor) -> Tensor:
                trace : AdapterTrace = trace_adapter(x, visual, self.adapter, self.ablation, enc.attention_mask,
                                                     self.config.softmax_axis)
                if trace_sink is not None:
                    trace_sink.append(trace)
                return trace.r
        hidden = encoder_forward(enc, self.encoder, override, dropout, rng, attention_sink)
        return classify(hidden, self.encoder.classifier)

    def probabilities(self, enc, visual : VisualFeatures | None = None) -> np.ndarray:
        with no_grad():
            logits = self.forward(enc, visual).data
        shifted = np.exp(logits - logits.max())
        return shifted / shifted.sum()

    def state(self) -> dict[str, np.ndarray]:
        return {name: value.data.copy() for name, value in self.named_tensors().items()}

    def load_state(self, arrays : dict[str, np.ndarray]):
        """
        Copy named arrays into the parameters; names and shapes must match exactly
        """
        tensors = self.named_tensors()
        missing = sorted(set(tensors) - set(arrays))
        unexpected = sorted(set(arrays) - set(tensors))
        if missing or unexpected:
            raise FormatError(f"checkpoint does not fit the model: missing {missing}, unexpected {unexpected}")
        for name, tensor in tensors.items():
            if arrays[name].shape != tensor.shape:
                raise FormatError(f"{name}: checkpoint shape {arrays[name].shape} against model shape {tensor.shape}")
            tensor.data[...] = arrays[name]

    def save(self, path):
        save_checkpoint(path, self.named_tensors())

    @classmethod
    def load(cls, path, config : ModelConfig, ablation : AblationConfig | None = None):
        """
        Model read from a checkpoint; the ablation is inferred from the stored names when not given
        """
        arrays = load_checkpoint(path)
        model = cls.initialize(config, ablation if ablation is not None else ablation_from_names(arrays))
        model.load_state(arrays)
        logger.info("loaded %d tensors from %s", len(model.named_tensors()), path)
        return model


def ablation_from_names(names) -> AblationConfig:
    """
    Component switches implied by the parameter names of a checkpoint
    """
    adapter = {name[len(ADAPTER_PREFIX):] for name in names if name.startswith(ADAPTER_PREFIX)}
    if not adapter:
        return AblationConfig(disable_isi=True)
    fused = "w_fuse" in adapter
    return AblationConfig(
        disable_vesr=not any(name.startswith("vesr/") for name in adapter),
        disable_srvr=not any(name.startswith("srvr/") for name in adapter),
        disable_isf=fused,
        disable_gm=not fused and "w_g" not in adapter,
        disable_fm=not fused and "w_h" not in adapter,
    )
