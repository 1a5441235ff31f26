"""
Numerical precision settings shared by every module.

Everything runs in 64-bit floats: the gradient checks rest on it.
"""

import numpy as np

DTYPE = np.float64

# additive bias put on masked attention keys before the softmax
MASK_VALUE = -1e9
# epsilon inside the layer-norm variance square root
LAYER_NORM_EPS = 1e-5
# probabilities are clamped here before taking the log in the cross-entropy
LOG_CLAMP = 1e-12


def to_float64(value) -> np.ndarray:
    """
    Return value as a C-contiguous float64 array (copied when it is not one already)

    :param value: Anything numpy can turn into an array
    """
    return np.ascontiguousarray(value, dtype=DTYPE)
