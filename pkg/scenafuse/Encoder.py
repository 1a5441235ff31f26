"""
A small post-LN transformer encoder: the host model the adapter plugs into.
"""
from dataclasses import dataclass, field

import numpy as np

from .Errors import DimensionError
from .Tensor import (Tensor, add, dropout as apply_dropout, layer_norm, mask_keys, matmul, merge_heads,
                     relu, reshape, scale, slice_axis, softmax, split_heads, take, transpose)
from .Vocabulary import InputEncoding

INIT_STD = 0.02


def truncated_normal(rng : np.random.Generator, shape : tuple, std : float = INIT_STD) -> np.ndarray:
    """
    Normal(0, std) samples redrawn until they all lie within two standard deviations
    """
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2 * std
    while outside.any():
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2 * std
    return values


def _param(values) -> Tensor:
    return Tensor(values, requires_grad=True)


@dataclass
class BlockParams:
    """
    One transformer block: attention projections (heads stacked along the
    columns of each d×d matrix), feed-forward layer and two layer norms
    """
    heads : int
    w_query : Tensor
    w_key : Tensor
    w_value : Tensor
    w_output : Tensor
    w_ffn_in : Tensor
    b_ffn_in : Tensor
    w_ffn_out : Tensor
    b_ffn_out : Tensor
    ln1_gain : Tensor
    ln1_bias : Tensor
    ln2_gain : Tensor
    ln2_bias : Tensor

    @classmethod
    def initialize(cls, hidden : int, heads : int, rng : np.random.Generator):
        if hidden % heads:
            raise DimensionError(f"{heads} heads do not divide hidden size {hidden}")
        return cls(
            heads=heads,
            w_query=_param(truncated_normal(rng, (hidden, hidden))),
            w_key=_param(truncated_normal(rng, (hidden, hidden))),
            w_value=_param(truncated_normal(rng, (hidden, hidden))),
            w_output=_param(truncated_normal(rng, (hidden, hidden))),
            w_ffn_in=_param(truncated_normal(rng, (hidden, 4 * hidden))),
            b_ffn_in=_param(np.zeros((1, 4 * hidden))),
            w_ffn_out=_param(truncated_normal(rng, (4 * hidden, hidden))),
            b_ffn_out=_param(np.zeros((1, hidden))),
            ln1_gain=_param(np.ones(hidden)),
            ln1_bias=_param(np.zeros(hidden)),
            ln2_gain=_param(np.ones(hidden)),
            ln2_bias=_param(np.zeros(hidden)),
        )

    def named_tensors(self) -> dict[str, Tensor]:
        return {name: value for name, value in vars(self).items() if isinstance(value, Tensor)}


@dataclass
class EncoderParams:
    """
    Embedding tables, transformer blocks and the 3-way classifier W_f
    """
    word_embeddings : Tensor
    segment_embeddings : Tensor
    position_embeddings : Tensor
    classifier : Tensor
    blocks : list[BlockParams] = field(default_factory=list)

    @classmethod
    def initialize(cls, vocab_size : int, hidden : int, heads : int, blocks : int, max_len : int,
                   rng : np.random.Generator, classes : int = 3):
        """
        Fresh parameters: truncated normal(0, 0.02) weights, zero biases, unit gains

        :param vocab_size: Rows of the word table (V)
        :param hidden: Model width d (= adapter width t)
        :param heads: Attention heads per block
        :param blocks: Number of transformer blocks
        :param max_len: Rows of the position table (l)
        :param rng: Random stream used for every draw
        """
        return cls(
            word_embeddings=_param(truncated_normal(rng, (vocab_size, hidden))),
            segment_embeddings=_param(truncated_normal(rng, (2, hidden))),
            position_embeddings=_param(truncated_normal(rng, (max_len, hidden))),
            blocks=[BlockParams.initialize(hidden, heads, rng) for _ in range(blocks)],
            classifier=_param(truncated_normal(rng, (hidden, classes))),
        )

    @property
    def hidden(self) -> int:
        return self.word_embeddings.shape[1]

    def named_tensors(self) -> dict[str, Tensor]:
        tensors = {
            "word_embeddings": self.word_embeddings,
            "segment_embeddings": self.segment_embeddings,
            "position_embeddings": self.position_embeddings,
        }
        for i, block in enumerate(self.blocks):
            for name, value in block.named_tensors().items():
                tensors[f"block{i}/{name}"] = value
        tensors["classifier"] = self.classifier
        return tensors


def embed_inputs(enc : InputEncoding, params : EncoderParams) -> Tensor:
    """
    Row i = word[token_ids[i]] + segment[segment_ids[i]] + position[i]
    """
    return add(add(take(params.word_embeddings, enc.token_ids),
                   take(params.segment_embeddings, enc.segment_ids)),
               take(params.position_embeddings, enc.position_ids))


def attention(query_source : Tensor, key_source : Tensor, w_query : Tensor, w_key : Tensor, w_value : Tensor,
              w_output : Tensor, heads : int, key_mask=None) -> tuple[Tensor, Tensor]:
    """
    Multi-head scaled dot-product attention of one sequence over another

    Queries come from query_source, keys and values from key_source; each head
    scales its scores by 1/sqrt(width/heads), the heads are concatenated and
    output-projected.

    :param query_source: q×w rows producing queries
    :param key_source: n×w rows producing keys and values
    :param heads: Number of heads (must divide the projected width)
    :param key_mask: Optional length-n 1/0 mask; 0 keys receive no attention
    :return: (q×w output, heads×q×n attention weights)
    """
    queries = split_heads(matmul(query_source, w_query), heads)
    keys = split_heads(matmul(key_source, w_key), heads)
    values = split_heads(matmul(key_source, w_value), heads)

    scores = scale(matmul(queries, transpose(keys, (0, 2, 1))), 1.0 / np.sqrt(queries.shape[-1]))
    if key_mask is not None:
        scores = mask_keys(scores, key_mask)
    weights = softmax(scores, axis=-1)
    return matmul(merge_heads(matmul(weights, values)), w_output), weights


def multi_head_attention(x : Tensor, block : BlockParams, mask) -> tuple[Tensor, Tensor]:
    """
    Self-attention of one block; padded keys are masked out

    :return: (l×d output, heads×l×l weights)
    """
    return attention(x, x, block.w_query, block.w_key, block.w_value, block.w_output, block.heads, key_mask=mask)


def feed_forward(x : Tensor, block : BlockParams) -> Tensor:
    hidden = relu(add(matmul(x, block.w_ffn_in), block.b_ffn_in))
    return add(matmul(hidden, block.w_ffn_out), block.b_ffn_out)


def transformer_block_forward(x : Tensor, block : BlockParams, mask, attention_override : Tensor | None = None,
                              dropout : float = 0.0, rng : np.random.Generator | None = None,
                              attention_sink : list | None = None) -> Tensor:
    """
    y = LN(x + attn(x)); out = LN(y + FFN(y))

    :param attention_override: Replaces attn(x) before the residual connection when given
    :param dropout: Dropout rate after both sublayers
    :param rng: Dropout stream (None disables dropout)
    :param attention_sink: Receives the self-attention weights when the block computes them
    """
    if attention_override is None:
        attended, weights = multi_head_attention(x, block, mask)
        if attention_sink is not None:
            attention_sink.append(weights.data)
    else:
        if attention_override.shape != x.shape:
            raise DimensionError(f"attention override {attention_override.shape} does not match input {x.shape}")
        attended = attention_override
    y = layer_norm(add(x, apply_dropout(attended, dropout, rng)), block.ln1_gain, block.ln1_bias)
    return layer_norm(add(y, apply_dropout(feed_forward(y, block), dropout, rng)), block.ln2_gain, block.ln2_bias)


def classify(hidden : Tensor, classifier : Tensor) -> Tensor:
    """
    Logits of the [CLS] row: hidden[0] · W_f, shape (3,)
    """
    return reshape(matmul(slice_axis(hidden, 0, 1, axis=0), classifier), (classifier.shape[1],))


def encoder_forward(enc : InputEncoding, params : EncoderParams, override=None, dropout : float = 0.0,
                    rng : np.random.Generator | None = None, attention_sink : list | None = None) -> Tensor:
    """
    Embeddings through every block; returns the final l×d hidden states

    :param override: Optional callable embeddings -> l×d tensor replacing the
                     attention output of the bottom block
    """
    x = embed_inputs(enc, params)
    for i, block in enumerate(params.blocks):
        replacement = override(x) if (i == 0 and override is not None) else None
        x = transformer_block_forward(x, block, enc.attention_mask, replacement, dropout, rng, attention_sink)
    return x
