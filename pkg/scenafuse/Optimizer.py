"""
AdamW with decoupled weight decay, the warm-up / linear-decay learning rate
schedule and global-norm gradient clipping.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .Errors import ConfigurationError
from .Tensor import Tensor

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class AdamWState:
    """
    First and second moment estimates per parameter plus the step counter
    """
    step : int = 0
    first : list = field(default_factory=list)
    second : list = field(default_factory=list)

    @classmethod
    def for_params(cls, params : list[Tensor]):
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adamw_step(params : list[Tensor], grads : list[np.ndarray], state : AdamWState, lr : float,
               weight_decay : float, betas : tuple[float, float] = (BETA1, BETA2), eps : float = EPSILON):
    """
    One in-place AdamW update

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)

    :param params: Parameters, updated in place
    :param grads: Gradient per parameter (same order)
    :param state: Moments, advanced in place
    :param lr: Learning rate of this step
    :param weight_decay: Decoupled decay coefficient
    """
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.first, state.second):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * ((m / correction1) / (np.sqrt(v / correction2) + eps) + weight_decay * p.data)


def lr_at_step(step : int, total_steps : int, base_lr : float, warmup_fraction : float) -> float:
    """
    Linear ramp from 0 to base_lr over warmup_fraction of the run, then linear decay to 0

    :param step: Current step in [0, total_steps]
    :param total_steps: Steps in the whole run
    :param base_lr: Peak learning rate
    :param warmup_fraction: Share of the run spent warming up
    """
    if total_steps <= 0:
        raise ConfigurationError("the learning rate schedule needs at least one step")
    if not 0 <= step <= total_steps:
        raise ConfigurationError(f"step {step} lies outside [0, {total_steps}]")
    warmup = warmup_fraction * total_steps
    if step < warmup:
        return base_lr * step / warmup
    if warmup >= total_steps:
        return base_lr
    return base_lr * (total_steps - step) / (total_steps - warmup)


def global_norm(grads : list[np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads))


def clip_gradients(grads : list[np.ndarray], max_norm : float) -> float:
    """
    Rescale all gradients in place so that their joint L2 norm is at most max_norm

    :return: The factor applied (1.0 when nothing was clipped)
    """
    if max_norm <= 0:
        raise ConfigurationError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for g in grads:
        g *= factor
    logger.debug("clipped gradient norm %.4g to %.4g", norm, max_norm)
    return factor
