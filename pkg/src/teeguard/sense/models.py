"""Binary sensitivity classifiers built from scratch: a 1-D text CNN, a
single-head self-attention encoder, and a hybrid of the two (CNN features in,
attention classifier out).

All forward passes are pure float64 numpy; gradients are derived analytically
and exposed through the batch helpers the trainer and the finite-difference
checks share.  Batches hold same-length token rows, so no masking is needed
and batched math is exactly the per-example math.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .text import UNKNOWN_INDEX


def sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))


def pad_tokens(tokens: Sequence[int], min_len: int) -> list[int]:
    """Right-pad with the unknown index up to `min_len`."""
    padded = list(tokens)
    if len(padded) < min_len:
        padded.extend([UNKNOWN_INDEX] * (min_len - len(padded)))
    return padded


@dataclass
class CnnModel:
    embedding: np.ndarray  # (V, d)
    conv_filters: np.ndarray  # (F, w, d)
    fc_weights: np.ndarray  # (F,)
    fc_bias: np.ndarray  # ()

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def filters(self) -> int:
        return self.conv_filters.shape[0]

    @property
    def width(self) -> int:
        return self.conv_filters.shape[1]


@dataclass
class AttentionEncoder:
    embedding: np.ndarray  # (V, d)
    query: np.ndarray  # (d, d)
    key: np.ndarray  # (d, d)
    value: np.ndarray  # (d, d)
    head: np.ndarray  # (d,)
    head_bias: np.ndarray  # ()

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]


@dataclass
class HybridModel:
    """CNN feature extractor feeding the attention encoder's classifier.

    The CNN's fully connected head and the encoder's embedding table are
    bypassed; the projection maps F-dim feature maps into the encoder's
    d-dim input space.
    """

    cnn: CnnModel
    encoder: AttentionEncoder
    proj: np.ndarray  # (F, d)


Model = CnnModel | AttentionEncoder | HybridModel


def init_cnn(
    vocab_size: int, dim: int, filters: int, width: int, rng: np.random.Generator
) -> CnnModel:
    return CnnModel(
        embedding=rng.normal(0.0, 0.1, (vocab_size, dim)),
        conv_filters=rng.normal(0.0, 0.1, (filters, width, dim)),
        fc_weights=rng.normal(0.0, 0.1, filters),
        fc_bias=np.zeros(()),
    )


def init_attention(vocab_size: int, dim: int, rng: np.random.Generator) -> AttentionEncoder:
    return AttentionEncoder(
        embedding=rng.normal(0.0, 0.1, (vocab_size, dim)),
        query=rng.normal(0.0, 0.1, (dim, dim)),
        key=rng.normal(0.0, 0.1, (dim, dim)),
        value=rng.normal(0.0, 0.1, (dim, dim)),
        head=rng.normal(0.0, 0.1, dim),
        head_bias=np.zeros(()),
    )


def init_hybrid(
    vocab_size: int, dim: int, filters: int, width: int, rng: np.random.Generator
) -> HybridModel:
    cnn = init_cnn(vocab_size, dim, filters, width, rng)
    encoder = init_attention(vocab_size, dim, rng)
    proj = rng.normal(0.0, 0.1, (filters, dim))
    return HybridModel(cnn=cnn, encoder=encoder, proj=proj)


def trainable_params(model: Model) -> dict[str, np.ndarray]:
    """Parameters the trainer updates, keyed for gradient bookkeeping."""
    if isinstance(model, CnnModel):
        return {
            "embedding": model.embedding,
            "conv_filters": model.conv_filters,
            "fc_weights": model.fc_weights,
            "fc_bias": model.fc_bias,
        }
    if isinstance(model, AttentionEncoder):
        return {
            "embedding": model.embedding,
            "query": model.query,
            "key": model.key,
            "value": model.value,
            "head": model.head,
            "head_bias": model.head_bias,
        }
    return {
        "embedding": model.cnn.embedding,
        "conv_filters": model.cnn.conv_filters,
        "proj": model.proj,
        "query": model.encoder.query,
        "key": model.encoder.key,
        "value": model.encoder.value,
        "head": model.encoder.head,
        "head_bias": model.encoder.head_bias,
    }


def _validate_tokens(tokens: Sequence[int], vocab_size: int) -> None:
    if any(t < 0 or t >= vocab_size for t in tokens):
        raise ValueError(f"token index outside [0, {vocab_size})")


# ---------------------------------------------------------------------------
# CNN
# ---------------------------------------------------------------------------


def _conv_relu(model: CnnModel, token_rows: np.ndarray) -> dict:
    """Shared CNN front end: embed, valid-padding convolution, ReLU."""
    x = model.embedding[token_rows]  # (B, n, d)
    windows = sliding_window_view(x, model.width, axis=1)  # (B, P, d, w)
    conv = np.einsum("bpji,fij->bpf", windows, model.conv_filters)
    feats = np.maximum(conv, 0.0)
    return {"tokens": token_rows, "x": x, "windows": windows, "conv": conv, "feats": feats}


def _conv_relu_backward(
    model: CnnModel, cache: dict, dfeats: np.ndarray
) -> dict[str, np.ndarray]:
    dconv = dfeats * (cache["conv"] > 0.0)
    dfilters = np.einsum("bpf,bpji->fij", dconv, cache["windows"])
    spread = np.einsum("bpf,fij->bpij", dconv, model.conv_filters)  # (B, P, w, d)
    dx = np.zeros_like(cache["x"])
    positions = spread.shape[1]
    for i in range(model.width):
        dx[:, i : i + positions, :] += spread[:, :, i, :]
    dembedding = np.zeros_like(model.embedding)
    np.add.at(dembedding, cache["tokens"].reshape(-1), dx.reshape(-1, model.dim))
    return {"embedding": dembedding, "conv_filters": dfilters}


def cnn_batch_forward(model: CnnModel, token_rows: np.ndarray) -> tuple[np.ndarray, dict]:
    cache = _conv_relu(model, token_rows)
    pooled = cache["feats"].max(axis=1)  # (B, F)
    cache["argmax"] = cache["feats"].argmax(axis=1)  # (B, F)
    cache["pooled"] = pooled
    cache["logits"] = pooled @ model.fc_weights + model.fc_bias
    return sigmoid(cache["logits"]), cache


def cnn_batch_backward(
    model: CnnModel, cache: dict, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    dfc = cache["pooled"].T @ dlogits
    dbias = np.asarray(dlogits.sum())
    dpooled = dlogits[:, None] * model.fc_weights[None, :]
    dfeats = np.zeros_like(cache["feats"])
    np.put_along_axis(dfeats, cache["argmax"][:, None, :], dpooled[:, None, :], axis=1)
    grads = _conv_relu_backward(model, cache, dfeats)
    grads["fc_weights"] = dfc
    grads["fc_bias"] = dbias
    return grads


def cnn_forward(model: CnnModel, tokens: Sequence[int]) -> float:
    """Embed, convolve (valid padding, ReLU), max-pool, dot with the FC head,
    squash to [0, 1].  Short inputs are padded with unknown tokens."""
    padded = pad_tokens(tokens, model.width)
    _validate_tokens(padded, model.vocab_size)
    scores, _ = cnn_batch_forward(model, np.array([padded]))
    return float(scores[0])


# ---------------------------------------------------------------------------
# Self-attention encoder
# ---------------------------------------------------------------------------


def _attend(encoder: AttentionEncoder, x: np.ndarray) -> dict:
    """Scaled dot-product self-attention (single head) over input rows x."""
    scale = 1.0 / np.sqrt(encoder.dim)
    q = x @ encoder.query
    k = x @ encoder.key
    v = x @ encoder.value
    scores = np.einsum("bnd,bmd->bnm", q, k) * scale
    shifted = scores - scores.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    attn = expd / expd.sum(axis=-1, keepdims=True)  # rows sum to 1
    context = np.einsum("bnm,bmd->bnd", attn, v)
    pooled = context.mean(axis=1)
    logits = pooled @ encoder.head + encoder.head_bias
    return {
        "x": x, "q": q, "k": k, "v": v, "attn": attn,
        "context": context, "pooled": pooled, "logits": logits,
    }


def _attend_backward(
    encoder: AttentionEncoder, cache: dict, dlogits: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Returns (parameter grads, gradient w.r.t. the input rows x)."""
    x, q, k, v, attn = cache["x"], cache["q"], cache["k"], cache["v"], cache["attn"]
    n = x.shape[1]
    scale = 1.0 / np.sqrt(encoder.dim)
    dhead = cache["pooled"].T @ dlogits
    dbias = np.asarray(dlogits.sum())
    dpooled = dlogits[:, None] * encoder.head[None, :]  # (B, d)
    dcontext = np.repeat(dpooled[:, None, :], n, axis=1) / n
    dattn = np.einsum("bnd,bmd->bnm", dcontext, v)
    dv = np.einsum("bnm,bnd->bmd", attn, dcontext)
    # softmax backward, rowwise
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dq = np.einsum("bnm,bmd->bnd", dscores, k) * scale
    dk = np.einsum("bnm,bnd->bmd", dscores, q) * scale
    grads = {
        "query": np.einsum("bni,bnj->ij", x, dq),
        "key": np.einsum("bni,bnj->ij", x, dk),
        "value": np.einsum("bni,bnj->ij", x, dv),
        "head": dhead,
        "head_bias": dbias,
    }
    dx = dq @ encoder.query.T + dk @ encoder.key.T + dv @ encoder.value.T
    return grads, dx


def attention_batch_forward(
    encoder: AttentionEncoder, token_rows: np.ndarray
) -> tuple[np.ndarray, dict]:
    x = encoder.embedding[token_rows]
    cache = _attend(encoder, x)
    cache["tokens"] = token_rows
    return sigmoid(cache["logits"]), cache


def attention_batch_backward(
    encoder: AttentionEncoder, cache: dict, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    grads, dx = _attend_backward(encoder, cache, dlogits)
    dembedding = np.zeros_like(encoder.embedding)
    np.add.at(dembedding, cache["tokens"].reshape(-1), dx.reshape(-1, encoder.dim))
    grads["embedding"] = dembedding
    return grads


def attention_forward(encoder: AttentionEncoder, tokens: Sequence[int]) -> float:
    """Embed, self-attend, mean-pool, dot with the head, squash to [0, 1]."""
    padded = pad_tokens(tokens, 1)
    _validate_tokens(padded, encoder.vocab_size)
    scores, _ = attention_batch_forward(encoder, np.array([padded]))
    return float(scores[0])


def attention_weights(encoder: AttentionEncoder, tokens: Sequence[int]) -> np.ndarray:
    """Post-softmax attention matrix for one input (rows sum to 1)."""
    padded = pad_tokens(tokens, 1)
    _validate_tokens(padded, encoder.vocab_size)
    x = encoder.embedding[np.array([padded])]
    return _attend(encoder, x)["attn"][0]


# ---------------------------------------------------------------------------
# Hybrid: CNN features -> attention classifier
# ---------------------------------------------------------------------------


def hybrid_batch_forward(model: HybridModel, token_rows: np.ndarray) -> tuple[np.ndarray, dict]:
    cnn_cache = _conv_relu(model.cnn, token_rows)
    projected = cnn_cache["feats"] @ model.proj  # (B, P, d)
    attn_cache = _attend(model.encoder, projected)
    cache = {"cnn": cnn_cache, "attn": attn_cache}
    return sigmoid(attn_cache["logits"]), cache


def hybrid_batch_backward(
    model: HybridModel, cache: dict, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    grads, dprojected = _attend_backward(model.encoder, cache["attn"], dlogits)
    feats = cache["cnn"]["feats"]
    grads["proj"] = np.einsum("bpf,bpd->fd", feats, dprojected)
    dfeats = dprojected @ model.proj.T
    grads.update(_conv_relu_backward(model.cnn, cache["cnn"], dfeats))
    return grads


def hybrid_forward(model: HybridModel, tokens: Sequence[int]) -> float:
    """CNN conv+ReLU feature maps (no pooling), projected to the encoder
    dimension and classified by the attention head."""
    padded = pad_tokens(tokens, model.cnn.width)
    _validate_tokens(padded, model.cnn.vocab_size)
    scores, _ = hybrid_batch_forward(model, np.array([padded]))
    return float(scores[0])


FORWARD = {
    CnnModel: cnn_forward,
    AttentionEncoder: attention_forward,
    HybridModel: hybrid_forward,
}

BATCH_FORWARD = {
    CnnModel: cnn_batch_forward,
    AttentionEncoder: attention_batch_forward,
    HybridModel: hybrid_batch_forward,
}

BATCH_BACKWARD = {
    CnnModel: cnn_batch_backward,
    AttentionEncoder: attention_batch_backward,
    HybridModel: hybrid_batch_backward,
}


def score(model: Model, tokens: Sequence[int]) -> float:
    return FORWARD[type(model)](model, tokens)
