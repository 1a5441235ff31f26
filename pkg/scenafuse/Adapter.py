"""
The scenario-guided adapter.

Image-sentence interaction projects text and visual blocks into one space,
lets each modality attend over the other and mixes both results across the
sequence axis. Image-sentence fusion then rectifies the text and interaction
features against each other, merges them through a gate and filters the
merged result. The output R has the shape of the text input and replaces
the attention output of the bottom transformer block.
"""
import logging
from dataclasses import dataclass, fields

import numpy as np

from .Encoder import attention
from .Errors import ConfigurationError, DimensionError, ScenaFuseError
from .Scenario import VisualFeatures
from .Tensor import Tensor, add, concat, matmul, mul, scale, sigmoid, softmax, tanh, transpose

logger = logging.getLogger(__name__)

ADAPTER_STD = 0.02
FILTER_STD = 0.001

SOFTMAX_AXES = {"feature": 1, "sequence": 0}


@dataclass(frozen=True)
class AblationConfig:
    """
    Component switches; disable_isi removes the adapter entirely and makes
    every other switch irrelevant
    """
    disable_isi : bool = False
    disable_vesr : bool = False
    disable_srvr : bool = False
    disable_isf : bool = False
    disable_gm : bool = False
    disable_fm : bool = False

    def __post_init__(self):
        if not self.disable_isi and self.disable_vesr and self.disable_srvr:
            raise ConfigurationError("disable_vesr and disable_srvr cannot both be set")

    @property
    def uses_adapter(self) -> bool:
        return not self.disable_isi

    def flags(self) -> dict[str, bool]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class AttentionParams:
    """Query / key / value / output projections of one interaction attention"""
    heads : int
    w_query : Tensor
    w_key : Tensor
    w_value : Tensor
    w_output : Tensor

    @classmethod
    def initialize(cls, width : int, heads : int, rng : np.random.Generator):
        if width % heads:
            raise DimensionError(f"{heads} adapter heads do not divide width {width}")
        return cls(heads, *(_weight(rng, (width, width)) for _ in range(4)))


@dataclass
class AdapterParams:
    """
    Trainable adapter tensors; components switched off by the ablation
    configuration are None

    The interaction projection phi_int is (k+l)×l, l×l without the
    visual-enhanced attention and k×l without the sentence-rectified one.
    """
    phi : Tensor
    psi : Tensor
    vesr : AttentionParams | None = None
    srvr : AttentionParams | None = None
    phi_int : Tensor | None = None
    w_alpha : Tensor | None = None
    b_alpha : Tensor | None = None
    w_z : Tensor | None = None
    b_z : Tensor | None = None
    w_beta : Tensor | None = None
    b_beta : Tensor | None = None
    w_x : Tensor | None = None
    b_x : Tensor | None = None
    w_g : Tensor | None = None
    b_g : Tensor | None = None
    w_h : Tensor | None = None
    b_h : Tensor | None = None
    w_r : Tensor | None = None
    b_r : Tensor | None = None
    w_fuse : Tensor | None = None
    b_fuse : Tensor | None = None

    @property
    def width(self) -> int:
        return self.phi.shape[1]

    def named_tensors(self) -> dict[str, Tensor]:
        tensors = dict()
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Tensor):
                tensors[f.name] = value
            elif isinstance(value, AttentionParams):
                for name in ("w_query", "w_key", "w_value", "w_output"):
                    tensors[f"{f.name}/{name}"] = getattr(value, name)
        return tensors


@dataclass
class AdapterTrace:
    """
    Every intermediate of one adapter forward; None where an ablation skips the step
    """
    x_tex : Tensor
    x_vis : Tensor
    z_tex : Tensor | None
    z_vis : Tensor | None
    z_int : Tensor
    vesr_weights : Tensor | None
    srvr_weights : Tensor | None
    z_factor : Tensor | None
    x_factor : Tensor | None
    z_int_hat : Tensor | None
    x_tex_hat : Tensor | None
    gate : Tensor | None
    u : Tensor | None
    filter_gate : Tensor | None
    r : Tensor


def _weight(rng : np.random.Generator, shape : tuple, std : float = ADAPTER_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _bias(shape : tuple) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_adapter_params(k : int, l : int, d : int, d_prime : int, t : int, heads : int,
                        rng : np.random.Generator, ablation : AblationConfig = AblationConfig()) -> AdapterParams | None:
    """
    Fresh adapter tensors for the components the ablation keeps

    W_r starts near zero (normal, std 0.001) so R is small early in training;
    every other weight is normal(0, 0.02) and every bias zero.

    :param k: Visual blocks
    :param l: Padded text length
    :param d: Text input width
    :param d_prime: Visual block width
    :param t: Shared adapter width
    :param heads: Interaction attention heads
    :param rng: Random stream
    :param ablation: Component switches
    :return: None when the adapter is bypassed
    """
    if not ablation.uses_adapter:
        return None
    if k < 1 or l < 1:
        raise DimensionError(f"adapter needs k >= 1 and l >= 1, got k={k}, l={l}")
    params = AdapterParams(phi=_weight(rng, (d, t)), psi=_weight(rng, (d_prime, t)))
    if not ablation.disable_vesr:
        params.vesr = AttentionParams.initialize(t, heads, rng)
    if not ablation.disable_srvr:
        params.srvr = AttentionParams.initialize(t, heads, rng)
    rows = (0 if ablation.disable_vesr else k) + (0 if ablation.disable_srvr else l)
    params.phi_int = _weight(rng, (rows, l))

    if ablation.disable_isf:
        params.w_fuse, params.b_fuse = _weight(rng, (2 * t, t)), _bias((1, t))
        return params

    params.w_alpha, params.b_alpha = _weight(rng, (2 * t, 1)), _bias((1, 1))
    params.w_z, params.b_z = _weight(rng, (1, t)), _bias((1, t))
    params.w_beta, params.b_beta = _weight(rng, (2 * t, 1)), _bias((1, 1))
    params.w_x, params.b_x = _weight(rng, (1, t)), _bias((1, t))
    if not ablation.disable_gm:
        params.w_g, params.b_g = _weight(rng, (2 * t, 1)), _bias((1, 1))
    if not ablation.disable_fm:
        params.w_h, params.b_h = _weight(rng, (2 * t, 1)), _bias((1, 1))
        params.w_r, params.b_r = _weight(rng, (t, t), FILTER_STD), _bias((1, t))
    return params


def _expect(tensor : Tensor, shape : tuple, name : str):
    if tensor.shape != shape:
        raise DimensionError(f"{name} has shape {tensor.shape}, expected {shape}")


def _affine(x : Tensor, weight : Tensor, bias : Tensor) -> Tensor:
    return add(matmul(x, weight), bias)


def _text_mask(text_mask, length : int) -> np.ndarray:
    if text_mask is None:
        return np.ones(length, dtype=np.int64)
    text_mask = np.asarray(text_mask)
    if text_mask.shape != (length,):
        raise DimensionError(f"text mask of shape {text_mask.shape} does not fit {length} text positions")
    return text_mask


# ---------------------------------------------------------------------------
# Image-sentence interaction
# ---------------------------------------------------------------------------

def project_modalities(x_tex : Tensor, x_vis : Tensor, params : AdapterParams) -> tuple[Tensor, Tensor]:
    """
    Map l×d text and k×d' visual rows into the shared width t (no bias)
    """
    if x_tex.ndim != 2 or x_tex.shape[1] != params.phi.shape[0]:
        raise DimensionError(f"text input {x_tex.shape} does not fit phi {params.phi.shape}")
    if x_vis.ndim != 2 or x_vis.shape[1] != params.psi.shape[0]:
        raise DimensionError(f"visual input {x_vis.shape} does not fit psi {params.psi.shape}")
    return matmul(x_tex, params.phi), matmul(x_vis, params.psi)


def _visual_enhanced(x_tex : Tensor, x_vis : Tensor, params : AdapterParams, text_mask) -> tuple[Tensor, Tensor]:
    mask = _text_mask(text_mask, x_tex.shape[0])
    if not mask.any():
        raise ScenaFuseError("every text position is masked; visual queries have nothing to attend to")
    a = params.vesr
    return attention(x_vis, x_tex, a.w_query, a.w_key, a.w_value, a.w_output, a.heads, key_mask=mask)


def _sentence_rectified(x_tex : Tensor, x_vis : Tensor, params : AdapterParams) -> tuple[Tensor, Tensor]:
    if x_vis.shape[0] == 0:
        raise DimensionError("no visual blocks to attend to")
    a = params.srvr
    return attention(x_tex, x_vis, a.w_query, a.w_key, a.w_value, a.w_output, a.heads)


def visual_enhanced_attention(x_tex : Tensor, x_vis : Tensor, params : AdapterParams, text_mask=None) -> Tensor:
    """
    Visual queries over text keys and values; padded text keys get no weight

    :param x_tex: Projected text, l×t
    :param x_vis: Projected visual blocks, k×t
    :param text_mask: Length-l 1/0 mask (None: all real)
    :return: Z_tex, k×t
    """
    return _visual_enhanced(x_tex, x_vis, params, text_mask)[0]


def sentence_rectified_attention(x_tex : Tensor, x_vis : Tensor, params : AdapterParams) -> Tensor:
    """
    Text queries over visual keys and values

    :return: Z_vis, l×t
    """
    return _sentence_rectified(x_tex, x_vis, params)[0]


def interact(z_tex : Tensor | None, z_vis : Tensor | None, params : AdapterParams) -> Tensor:
    """
    Z_int = phi_intᵀ · (Z_tex || Z_vis), stacking along the sequence axis

    Either input may be None when its attention is ablated; phi_int then
    only spans the remaining rows.
    """
    if z_tex is None and z_vis is None:
        raise ConfigurationError("interaction needs at least one attention output")
    if z_tex is None:
        joined = z_vis
    elif z_vis is None:
        joined = z_tex
    else:
        joined = concat(z_tex, z_vis, axis=0)
    if joined.shape[0] != params.phi_int.shape[0]:
        raise DimensionError(f"{joined.shape[0]} interaction rows do not fit phi_int {params.phi_int.shape}")
    return matmul(transpose(params.phi_int), joined)


# ---------------------------------------------------------------------------
# Image-sentence fusion
# ---------------------------------------------------------------------------

def _rectify(x_tex : Tensor, z_int : Tensor, params : AdapterParams, softmax_axis : str):
    if x_tex.shape != z_int.shape:
        raise DimensionError(f"rectification needs equal shapes, got {x_tex.shape} and {z_int.shape}")
    if softmax_axis not in SOFTMAX_AXES:
        raise ConfigurationError(f"softmax axis must be one of {sorted(SOFTMAX_AXES)}, got {softmax_axis!r}")
    axis = SOFTMAX_AXES[softmax_axis]

    alpha = tanh(_affine(concat(x_tex, z_int, axis=1), params.w_alpha, params.b_alpha))
    z_factor = softmax(_affine(alpha, params.w_z, params.b_z), axis=axis)
    z_int_hat = mul(z_int, z_factor)

    beta = tanh(_affine(concat(z_int_hat, x_tex, axis=1), params.w_beta, params.b_beta))
    x_factor = softmax(_affine(beta, params.w_x, params.b_x), axis=axis)
    return mul(x_tex, x_factor), z_int_hat, x_factor, z_factor


def rectify_representations(x_tex : Tensor, z_int : Tensor, params : AdapterParams,
                            softmax_axis : str = "feature") -> tuple[Tensor, Tensor]:
    """
    Reweight interaction features by coefficients computed from text and
    interaction together, then the text features by the rectified interaction

    :param softmax_axis: "feature" (each row sums to 1) or "sequence"
    :return: (X̂_tex, Ẑ_int)
    """
    x_tex_hat, z_int_hat, _, _ = _rectify(x_tex, z_int, params, softmax_axis)
    return x_tex_hat, z_int_hat


def _gate(x_tex_hat : Tensor, z_int_hat : Tensor, params : AdapterParams) -> tuple[Tensor, Tensor]:
    g = sigmoid(_affine(concat(x_tex_hat, z_int_hat, axis=1), params.w_g, params.b_g))
    # g·X̂ + (1 - g)·Ẑ
    return add(mul(g, x_tex_hat), mul(1.0 - g, z_int_hat)), g


def gate_merge(x_tex_hat : Tensor, z_int_hat : Tensor, params : AdapterParams) -> Tensor:
    """U = g·X̂_tex + (1 - g)·Ẑ_int with one gate value per position"""
    return _gate(x_tex_hat, z_int_hat, params)[0]


def _filter(u : Tensor, x_tex : Tensor, params : AdapterParams) -> tuple[Tensor, Tensor]:
    h = sigmoid(_affine(concat(u, x_tex, axis=1), params.w_h, params.b_h))
    return mul(h, tanh(_affine(u, params.w_r, params.b_r))), h


def filter_fuse(u : Tensor, x_tex : Tensor, params : AdapterParams) -> Tensor:
    """R = h ⊙ tanh(U·W_r + b_r) with one filter value per position"""
    return _filter(u, x_tex, params)[0]


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

def trace_adapter(x_embeddings : Tensor, visual : VisualFeatures | Tensor, params : AdapterParams,
                  ablation : AblationConfig = AblationConfig(), text_mask=None,
                  softmax_axis : str = "feature") -> AdapterTrace:
    """
    Run the adapter and keep every intermediate

    :param x_embeddings: l×d input of the bottom block
    :param visual: k×d' visual blocks
    :param params: Adapter tensors matching the ablation
    :param ablation: Component switches
    :param text_mask: Length-l 1/0 mask of real text positions
    :param softmax_axis: Axis of the rectification softmax
    """
    if not ablation.uses_adapter:
        raise ConfigurationError("the adapter is bypassed when interaction is disabled")
    x_vis_raw = visual.blocks if isinstance(visual, VisualFeatures) else visual
    l, k, t = x_embeddings.shape[0], x_vis_raw.shape[0], params.width
    mask = _text_mask(text_mask, l)

    x_tex, x_vis = project_modalities(x_embeddings, x_vis_raw, params)
    _expect(x_tex, (l, t), "projected text")
    _expect(x_vis, (k, t), "projected visual blocks")

    z_tex = z_vis = vesr_weights = srvr_weights = None
    if not ablation.disable_vesr:
        z_tex, vesr_weights = _visual_enhanced(x_tex, x_vis, params, mask)
        _expect(z_tex, (k, t), "Z_tex")
    if not ablation.disable_srvr:
        z_vis, srvr_weights = _sentence_rectified(x_tex, x_vis, params)
        _expect(z_vis, (l, t), "Z_vis")
        # padded positions must not leak into the interaction
        z_vis = mul(z_vis, Tensor(mask.reshape(l, 1)))
    z_int = interact(z_tex, z_vis, params)
    _expect(z_int, (l, t), "Z_int")

    trace = AdapterTrace(x_tex, x_vis, z_tex, z_vis, z_int, vesr_weights, srvr_weights,
                         None, None, None, None, None, None, None, None)
    if ablation.disable_isf:
        trace.r = _affine(concat(x_tex, z_int, axis=1), params.w_fuse, params.b_fuse)
        _expect(trace.r, (l, t), "R")
        return trace

    trace.x_tex_hat, trace.z_int_hat, trace.x_factor, trace.z_factor = _rectify(x_tex, z_int, params, softmax_axis)
    if ablation.disable_gm:
        trace.u = scale(add(trace.x_tex_hat, trace.z_int_hat), 0.5)
    else:
        trace.u, trace.gate = _gate(trace.x_tex_hat, trace.z_int_hat, params)
    _expect(trace.u, (l, t), "U")

    if ablation.disable_fm:
        trace.r = scale(add(trace.u, x_tex), 0.5)
    else:
        trace.r, trace.filter_gate = _filter(trace.u, x_tex, params)
    _expect(trace.r, (l, t), "R")
    return trace


def adapter_forward(x_embeddings : Tensor, visual : VisualFeatures | Tensor, params : AdapterParams,
                    ablation : AblationConfig = AblationConfig(), text_mask=None,
                    softmax_axis : str = "feature") -> Tensor:
    """
    The filtered representation R (l×t) that replaces the bottom block's attention output
    """
    return trace_adapter(x_embeddings, visual, params, ablation, text_mask, softmax_axis).r
