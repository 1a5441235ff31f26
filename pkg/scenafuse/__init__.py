"""
scenafuse - Scenario-guided adapter for natural language inference
A numpy transformer encoder whose bottom block takes its attention output
from an image-sentence interaction and fusion adapter, plus a synthetic
benchmark where only the scenario settles the label.
"""
__version__ = "0.1.0"

from .Tensor import Tensor, no_grad, grad_check
from .Vocabulary import Vocabulary, encode_pair
from .Scenario import ScenarioGrid, VisualFeatures, encode_scenario
from .Adapter import AblationConfig, AdapterParams, adapter_forward, trace_adapter
from .Model import ScenaFuseModel
from .Config import ModelConfig, TrainConfig
from .Metrics import Metrics
from .Trainer import Trainer, evaluate, train
from .dataset_generator import GeneratorConfig, generate_dataset, text_only_bayes_accuracy
from .Variants import variants, variant
