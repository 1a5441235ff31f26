"""
Checks run outside training: finite-difference gradient verification of the
whole model, adapter timing against the shared width t, and attention
inspection of single examples.
"""
import logging
import math
import random
import time
from dataclasses import dataclass

import numpy as np

from .Adapter import AblationConfig, adapter_forward, init_adapter_params
from .Config import ModelConfig
from .dataset_generator import flip_location, random_grid
from .Model import ScenaFuseModel
from .Scenario import VisualFeatures, encode_scenario
from .Tensor import Tensor, count_multiply_adds, cross_entropy, grad_check, no_grad, stack
from .Vocabulary import Vocabulary, encode_pair

logger = logging.getLogger(__name__)

GRAD_CHECK_TOLERANCE = 1e-4
GRAD_CHECK_EPS = 1e-5
# the 2-block, d=8, l=6 geometry; one pair is shorter than l so padding is covered
GRAD_CHECK_CONFIG = ModelConfig(vocab_size=16, hidden=8, heads=2, blocks=2, max_len=6, d_prime=8,
                                grid_size=2, adapter_heads=2)
# check-time scales; weight matrices get N(0, 1/fan_in) so pre-activations stay near unit variance
GRAD_CHECK_EMBEDDING_STD = 0.6
GRAD_CHECK_BIAS_STD = 0.1

BENCH_WIDTHS = (32, 48, 64, 96, 128, 192, 256)
BENCH_LOOP = 5
BENCH_BLOCKS = 9
BENCH_LENGTH = 24
BENCH_VISUAL_WIDTH = 32
SLOPE_RANGE = (1.6, 2.4)


@dataclass
class GradCheckReport:
    max_relative_error : float
    tensors : int
    coordinates : int
    tolerance : float = GRAD_CHECK_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"max relative error {self.max_relative_error:.3e} over {self.tensors} tensors "
                f"({self.coordinates} coordinates), tolerance {self.tolerance:g}: {verdict}")


def _grad_check_batch(config : ModelConfig, seed : int):
    vocab = Vocabulary.build(["people", "play", "ball", "outside", "inside", "children", "read", "books"])
    grid = random_grid(random.Random(seed), config.grid_size, "outdoor")
    pairs = [
        (["people", "play"], ["outside"], grid, 0),
        (["children"], ["inside"], flip_location(grid), 0),
        (["people", "play"], ["inside"], grid, 2),
    ]
    return [(encode_pair(p, h, vocab, config.max_len), encode_scenario(g, config.d_prime), y) for p, h, g, y in pairs]


def _check_scale(name : str, shape : tuple) -> float:
    leaf = name.rsplit("/", 1)[-1]
    if leaf.endswith("embeddings"):
        return GRAD_CHECK_EMBEDDING_STD
    if leaf.startswith("b_") or leaf.endswith(("bias", "gain")):
        return GRAD_CHECK_BIAS_STD
    return 1.0 / math.sqrt(shape[0])


def run_grad_check(config : ModelConfig = GRAD_CHECK_CONFIG, ablation : AblationConfig = AblationConfig(),
                   seed : int = 0, eps : float = GRAD_CHECK_EPS) -> GradCheckReport:
    """
    Central finite differences against backpropagation over every encoder and adapter tensor

    :param config: Model shape (toy dimensions by default)
    :param ablation: Variant to check
    :param seed: Seed of parameters and inputs
    :param eps: Finite-difference step
    """
    model = ScenaFuseModel.initialize(config, ablation, seed)
    rng = np.random.default_rng([seed, 7])
    for name, p in model.named_tensors().items():
        p.data[...] = rng.normal(0.0, 1.0, p.shape) * _check_scale(name, p.shape)
        if name.endswith("gain"):
            p.data += 1.0
    batch = _grad_check_batch(config, seed)

    def loss() -> Tensor:
        return cross_entropy(stack([model.forward(enc, visual) for enc, visual, _ in batch]), [y for _, _, y in batch])

    params = model.parameters()
    error = grad_check(loss, params, eps)
    report = GradCheckReport(error, len(params), sum(p.size for p in params))
    logger.info("grad-check: %s", report)
    return report


@dataclass
class BenchReport:
    widths : tuple
    seconds : list[float]
    multiply_adds : list[int]
    overhead : float
    slope : float
    multiply_add_slope : float

    @property
    def passed(self) -> bool:
        return SLOPE_RANGE[0] <= self.slope <= SLOPE_RANGE[1]

    def __str__(self):
        lines = [f"{'t':>5} | {'time (ms)':>10} | {'mult-adds':>12}", "-" * 34]
        lines += [f"{t:>5} | {1e3 * s:>10.3f} | {m:>12}" for t, s, m in zip(self.widths, self.seconds, self.multiply_adds)]
        lines.append(f"time = {1e3 * self.overhead:.3f} ms + c * t^p, p = {self.slope:.3f} "
                     f"(multiply-adds: log-log slope {self.multiply_add_slope:.3f}); "
                     f"expected p within {SLOPE_RANGE}: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def fit_slope(xs, ys) -> float:
    """Least-squares slope of log y against log x"""
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)[0])


def fit_power_law(xs, ys, exponents=np.linspace(0.5, 3.5, 3001)) -> tuple[float, float, float]:
    """
    Fit y = c0 + c * x^p with c0, c >= 0, minimising relative residuals

    The exponent is searched on a grid; for each candidate the two
    coefficients come from a linear least-squares solve.

    :return: (c0, c, p)
    """
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    best = (math.inf, 0.0, 0.0, 0.0)
    for p in exponents:
        powers = xs ** p
        design = np.stack([1.0 / ys, powers / ys], axis=1)
        (c0, c), *_ = np.linalg.lstsq(design, np.ones_like(ys), rcond=None)
        if c0 < 0.0:
            c0, c = 0.0, float(np.dot(powers / ys, np.ones_like(ys)) / np.dot(powers / ys, powers / ys))
        if c <= 0.0:
            continue
        residual = float(np.sum(((c0 + c * powers) / ys - 1.0) ** 2))
        if residual < best[0]:
            best = (residual, float(c0), float(c), float(p))
    return best[1], best[2], best[3]


def _time_adapter(t : int, k : int, l : int, d_prime : int, heads : int, repeats : int, seed : int):
    rng = np.random.default_rng([seed, t])
    params = init_adapter_params(k, l, t, d_prime, t, heads, rng)
    x = Tensor(rng.normal(size=(l, t)))
    visual = VisualFeatures(Tensor(rng.normal(size=(k, d_prime))))
    mask = np.ones(l, dtype=np.int64)
    best = math.inf
    with no_grad():
        with count_multiply_adds() as counter:
            adapter_forward(x, visual, params, text_mask=mask)
        for _ in range(repeats):
            start = time.perf_counter()
            for _ in range(BENCH_LOOP):
                adapter_forward(x, visual, params, text_mask=mask)
            best = min(best, (time.perf_counter() - start) / BENCH_LOOP)
    return best, counter.total


def bench_complexity(widths : tuple = BENCH_WIDTHS, k : int = BENCH_BLOCKS, l : int = BENCH_LENGTH,
                     d_prime : int = BENCH_VISUAL_WIDTH, heads : int = 4, repeats : int = 15,
                     seed : int = 0) -> BenchReport:
    """
    Time adapter forwards across widths t with k and l fixed and fit the growth exponent

    Time per forward is fitted as c0 + c * t^p; the constant c0 absorbs the
    per-call overhead, and p is the reported growth exponent.

    :param widths: Widths t, each divisible by heads
    :param k: Visual blocks
    :param l: Text length
    :param repeats: Timed loops per width (the fastest is kept)
    """
    seconds, counts = [], []
    for t in widths:
        s, c = _time_adapter(t, k, l, d_prime, heads, repeats, seed)
        seconds.append(s)
        counts.append(c)
        logger.debug("t=%d: %.3f ms, %d multiply-adds", t, 1e3 * s, c)

    overhead, _, exponent = fit_power_law(widths, seconds)
    return BenchReport(tuple(widths), seconds, counts, overhead, exponent, fit_slope(widths, counts))


def _tolist(tensor : Tensor | None):
    return None if tensor is None else np.asarray(tensor.data).tolist()


def inspect_example(model : ScenaFuseModel, premise, hypothesis, grid, vocab : Vocabulary) -> dict:
    """
    Prediction, encoder self-attention and adapter attentions / gates of one example

    :return: JSON-ready mapping
    """
    enc = encode_pair(list(premise), list(hypothesis), vocab, model.config.max_len)
    visual = encode_scenario(grid, model.config.d_prime)
    attention, traces = [], []
    with no_grad():
        logits = model.forward(enc, visual, attention_sink=attention, trace_sink=traces).data
    probabilities = np.exp(logits - logits.max())
    probabilities /= probabilities.sum()
    report = {
        "tokens": [vocab.token(int(i)) for i in enc.token_ids],
        "attention_mask": enc.attention_mask.tolist(),
        "scenario": {"location": grid.location, "cells": [list(c) for c in grid.cells]},
        "probabilities": probabilities.tolist(),
        "prediction": int(np.argmax(probabilities)),
        "encoder_attention": [w.tolist() for w in attention],
    }
    if traces:
        trace = traces[0]
        report.update({
            "visual_enhanced_attention": _tolist(trace.vesr_weights),
            "sentence_rectified_attention": _tolist(trace.srvr_weights),
            "gate": _tolist(trace.gate),
            "filter_gate": _tolist(trace.filter_gate),
        })
    return report
