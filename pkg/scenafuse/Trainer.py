"""
Training and evaluation of ScenaFuse models on the scenario-NLI benchmark.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .Config import ModelConfig, TrainConfig
from .Errors import ConfigurationError, DimensionError, DivergenceError
from .Metrics import Metrics
from .Model import DROPOUT_STREAM, SHUFFLE_STREAM, ScenaFuseModel, stream
from .Optimizer import AdamWState, adamw_step, clip_gradients, lr_at_step
from .Scenario import VisualFeatures, encode_scenario
from .Tensor import backward, cross_entropy, no_grad, stack, zero_grad
from .Vocabulary import InputEncoding, Vocabulary, encode_pair

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PreparedExample:
    """
    An example turned into model inputs
    """
    encoding : InputEncoding
    visual : VisualFeatures
    label : int
    ambiguous : bool


def prepare_examples(examples, vocab : Vocabulary, config : ModelConfig) -> list[PreparedExample]:
    """
    Encode text pairs and scenarios of dataset examples

    :param examples: ScenarioNLIExample records
    :param vocab: Token ids
    :param config: Model shape (max_len, d')
    """
    if vocab.size > config.vocab_size:
        raise ConfigurationError(f"vocabulary of {vocab.size} tokens exceeds the {config.vocab_size} embedding rows")
    return [PreparedExample(encode_pair(e.premise, e.hypothesis, vocab, config.max_len),
                            encode_scenario(e.scenario, config.d_prime), e.label, e.ambiguous)
            for e in examples]


def _log_softmax_loss(logits : np.ndarray, label : int) -> float:
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def evaluate(model : ScenaFuseModel, examples : list[PreparedExample], workers : int = 1) -> Metrics:
    """
    Argmax predictions, confusion counts, micro / macro scores and the mean loss

    Worker threads only read the parameters; results keep example order.

    :param model: Model to score
    :param examples: Prepared split
    :param workers: Evaluation threads
    """
    if not examples:
        raise DimensionError("cannot evaluate an empty split")

    def score(example : PreparedExample) -> np.ndarray:
        # recording switches are per thread
        with no_grad():
            return model.forward(example.encoding, example.visual).data

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            logits = list(pool.map(score, examples))
    else:
        logits = [score(e) for e in examples]

    labels = [e.label for e in examples]
    loss = float(np.mean([_log_softmax_loss(l, y) for l, y in zip(logits, labels)]))
    metrics = Metrics.from_predictions(labels, [int(np.argmax(l)) for l in logits],
                                       [e.ambiguous for e in examples], loss)
    if not metrics.micro_precision == metrics.micro_recall == metrics.accuracy:
        raise ArithmeticError(f"micro scores drifted from accuracy: {metrics}")
    return metrics


@dataclass
class EpochRecord:
    epoch : int
    train_loss : float
    dev : Metrics | None


@dataclass
class TrainResult:
    """
    Per-epoch history plus the selected (best dev) epoch; epoch 0 is the initial model
    """
    history : list[EpochRecord] = field(default_factory=list)
    best_epoch : int = 0
    best_dev : Metrics | None = None


class Trainer:
    """
    Owns a model for the duration of a run and applies the optimisation recipe
    """
    def __init__(self, model : ScenaFuseModel, config : TrainConfig, workers : int = 1):
        """
        :param model: Model to train, mutated in place
        :type model: ScenaFuseModel
        :param config: Optimisation recipe
        :type config: TrainConfig
        :param workers: Evaluation threads
        """
        self.model = model
        self.config = config
        self.workers = workers
        self.params = model.parameters()
        self.state = AdamWState.for_params(self.params)
        self.shuffle_rng = stream(config.seed, SHUFFLE_STREAM)
        self.dropout_rng = stream(config.seed, DROPOUT_STREAM)
        self.step = 0
        self.total_steps = 0

    def _batch_loss(self, batch : list[PreparedExample]):
        logits = [self.model.forward(e.encoding, e.visual, self.config.dropout, self.dropout_rng) for e in batch]
        return cross_entropy(stack(logits), [e.label for e in batch])

    def train_step(self, batch : list[PreparedExample]) -> float:
        """
        Forward, backward, clip and one AdamW update on a single batch
        """
        zero_grad(self.params)
        loss = self._batch_loss(batch)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"loss became {value} at step {self.step}; "
                                  f"try a lower learning rate than {self.config.learning_rate}")
        backward(loss)
        grads = [p.grad for p in self.params]
        clip_gradients(grads, self.config.grad_clip)
        lr = lr_at_step(self.step, self.total_steps, self.config.learning_rate, self.config.warmup_fraction)
        adamw_step(self.params, grads, self.state, lr, self.config.weight_decay)
        self.step += 1
        return value

    def train_epoch(self, examples : list[PreparedExample]) -> float:
        order = self.shuffle_rng.permutation(len(examples))
        size = self.config.batch_size
        total = 0.0
        for start in range(0, len(examples), size):
            batch = [examples[i] for i in order[start:start + size]]
            total += self.train_step(batch) * len(batch)
        return total / len(examples)

    def fit(self, train : list[PreparedExample], dev : list[PreparedExample]) -> TrainResult:
        """
        Train for the configured epochs and restore the best dev epoch

        Selection prefers higher dev accuracy, then lower dev loss. With zero
        epochs the initial parameters are kept untouched.

        :param train: Prepared training split
        :param dev: Prepared development split (may be empty: the last epoch is kept)
        """
        if not train:
            raise ConfigurationError("the training split is empty")
        self.total_steps = self.config.epochs * math.ceil(len(train) / self.config.batch_size)
        result = TrainResult()
        best_state = self.model.state()
        best_key = None

        for epoch in range(1, self.config.epochs + 1):
            train_loss = self.train_epoch(train)
            dev_metrics = evaluate(self.model, dev, self.workers) if dev else None
            result.history.append(EpochRecord(epoch, train_loss, dev_metrics))
            logger.info("epoch %d/%d  train loss %.4f  dev %s", epoch, self.config.epochs, train_loss,
                        dev_metrics if dev_metrics is not None else "-")

            key = (dev_metrics.accuracy, -dev_metrics.loss) if dev_metrics is not None else (epoch, 0.0)
            if best_key is None or key > best_key:
                best_key = key
                best_state = self.model.state()
                result.best_epoch, result.best_dev = epoch, dev_metrics

        self.model.load_state(best_state)
        return result


def train(model : ScenaFuseModel, train_examples : list[PreparedExample], dev_examples : list[PreparedExample],
          config : TrainConfig, workers : int = 1) -> TrainResult:
    """
    Train model in place and leave it at its best dev epoch
    """
    return Trainer(model, config, workers).fit(train_examples, dev_examples)
