"""Hashed n-gram memory layer with gated residual fusion.

Per position t the layer looks up two table rows keyed by the bigram
(x_{t-1}, x_t) and the trigram (x_{t-2}, x_{t-1}, x_t), normalizes them,
scores each against a query projected from the hidden state, mixes the two
pathways with a softmax over their scores, scales the mix with per-head
sigmoid gates, and adds the projected result back onto the hidden stream:

    h' = h + W_o . concat_heads( gate_h * (a2 * e2_h + a3 * e3_h) )

The table is zero-initialized, so at construction the layer is exactly the
identity and the augmented model matches a plain backbone bit for bit.
Positions without enough left context use a reserved pad id in the key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .hashing import hash_bigram, hash_trigram
from .nn_ops import rmsnorm, rmsnorm_backward, sigmoid, softmax, softmax_backward

RMS_EPS_DEFAULT = 1e-6


@dataclass
class EngramConfig:
    table_size: int = 64
    d_embed: int = 8
    n_heads: int = 2
    insert_after_block: int = 1
    bos_pad_id: int = 2
    rms_eps: float = RMS_EPS_DEFAULT

    def validate(self) -> None:
        if self.table_size < 1:
            raise ShapeError(f"table_size must be >= 1, got {self.table_size}")
        if self.d_embed % self.n_heads != 0:
            raise ShapeError(
                f"d_embed={self.d_embed} not divisible by n_heads={self.n_heads}"
            )
        if self.rms_eps <= 0:
            raise ShapeError("rms_eps must be positive")


def init_engram_params(cfg: EngramConfig, d_model: int, rng: np.random.Generator, dtype) -> dict:
    """Fresh parameter arrays. The table starts at zero; the gate map starts
    at zero so every gate opens at 0.5."""
    de = cfg.d_embed
    return {
        "engram.table": np.zeros((cfg.table_size, de), dtype=dtype),
        "engram.w_q": (rng.standard_normal((d_model, de)) / np.sqrt(d_model)).astype(dtype),
        "engram.w_o": (rng.standard_normal((de, d_model)) / np.sqrt(de)).astype(dtype),
        "engram.w_g": np.zeros((d_model, cfg.n_heads), dtype=dtype),
        "engram.rms_gain": np.ones(de, dtype=dtype),
    }


def ngram_indices(tokens: np.ndarray, cfg: EngramConfig) -> tuple[np.ndarray, np.ndarray]:
    """(bigram, trigram) table rows for every position of a (B, S) id array."""
    pad = cfg.bos_pad_id
    prev1 = np.concatenate(
        [np.full((tokens.shape[0], 1), pad, dtype=tokens.dtype), tokens[:, :-1]], axis=1
    )
    prev2 = np.concatenate(
        [np.full((tokens.shape[0], 2), pad, dtype=tokens.dtype), tokens[:, :-2]], axis=1
    )
    idx2 = hash_bigram(prev1, tokens, cfg.table_size)
    idx3 = hash_trigram(prev2, prev1, tokens, cfg.table_size)
    return idx2, idx3


def lookup_bigram(tokens: np.ndarray, t: int, table: np.ndarray, cfg: EngramConfig) -> np.ndarray:
    """Table row for the bigram ending at position t of a 1-D id sequence."""
    tokens = np.asarray(tokens)
    a = int(tokens[t - 1]) if t >= 1 else cfg.bos_pad_id
    return table[hash_bigram(a, int(tokens[t]), cfg.table_size)]


def lookup_trigram(tokens: np.ndarray, t: int, table: np.ndarray, cfg: EngramConfig) -> np.ndarray:
    """Table row for the trigram ending at position t of a 1-D id sequence."""
    tokens = np.asarray(tokens)
    a = int(tokens[t - 2]) if t >= 2 else cfg.bos_pad_id
    b = int(tokens[t - 1]) if t >= 1 else cfg.bos_pad_id
    return table[hash_trigram(a, b, int(tokens[t]), cfg.table_size)]


def relevance_score(q: np.ndarray, e: np.ndarray) -> float:
    """Scaled dot product (q . e) / sqrt(d) of two same-length vectors."""
    q = np.asarray(q, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if q.shape != e.shape or q.ndim != 1:
        raise ShapeError(f"mismatched score operands {q.shape} vs {e.shape}")
    return float(q @ e / np.sqrt(q.shape[0]))


def gate(h: np.ndarray, w_g: np.ndarray) -> np.ndarray:
    """Per-head sigmoid gates in (0, 1) from a linear map of the hidden state."""
    h = np.asarray(h)
    if h.shape[-1] != w_g.shape[0]:
        raise ShapeError(f"gate input dim {h.shape[-1]} != map rows {w_g.shape[0]}")
    return sigmoid(h @ w_g)


def engram_forward(h: np.ndarray, tokens: np.ndarray, params: dict, cfg: EngramConfig):
    """Apply the memory layer to a (B, S, d_model) hidden state.

    Returns (h', cache); the cache carries every intermediate needed by
    engram_backward.
    """
    table = params["engram.table"]
    w_q, w_o, w_g = params["engram.w_q"], params["engram.w_o"], params["engram.w_g"]
    gain = params["engram.rms_gain"]
    B, S, d_model = h.shape
    de = table.shape[1]
    H = cfg.n_heads
    dh = de // H
    if w_q.shape != (d_model, de) or w_o.shape != (de, d_model) or w_g.shape != (d_model, H):
        raise ShapeError("engram parameter shapes inconsistent with config")

    idx2, idx3 = ngram_indices(tokens, cfg)
    e2 = table[idx2]
    e3 = table[idx3]
    eh2 = rmsnorm(e2, gain, cfg.rms_eps)
    eh3 = rmsnorm(e3, gain, cfg.rms_eps)

    q = h @ w_q
    qh = q.reshape(B, S, H, dh)
    eh2h = eh2.reshape(B, S, H, dh)
    eh3h = eh3.reshape(B, S, H, dh)
    scale = 1.0 / np.sqrt(dh)
    s2 = np.sum(qh * eh2h, axis=-1) * scale
    s3 = np.sum(qh * eh3h, axis=-1) * scale
    alpha = softmax(np.stack([s2, s3], axis=-1), axis=-1)  # (B, S, H, 2)

    m = alpha[..., 0:1] * eh2h + alpha[..., 1:2] * eh3h
    g = sigmoid(h @ w_g)  # (B, S, H)
    u = (g[..., None] * m).reshape(B, S, de)
    out = u @ w_o

    cache = {
        "h": h, "tokens": tokens, "idx2": idx2, "idx3": idx3,
        "e2": e2, "e3": e3, "eh2h": eh2h, "eh3h": eh3h,
        "qh": qh, "alpha": alpha, "m": m, "g": g, "u": u, "scale": scale,
    }
    return h + out, cache


def engram_backward(d_out: np.ndarray, cache: dict, params: dict, cfg: EngramConfig):
    """Gradients of the layer output w.r.t. input and every engram parameter.

    Table gradients are dense (table_size, d_embed) but nonzero only on rows
    addressed by the batch; d_out flows to dh through the residual, the gate
    pre-activation, and the query projection.
    """
    table = params["engram.table"]
    w_q, w_o, w_g = params["engram.w_q"], params["engram.w_o"], params["engram.w_g"]
    gain = params["engram.rms_gain"]
    h, g, m, u = cache["h"], cache["g"], cache["m"], cache["u"]
    alpha, qh = cache["alpha"], cache["qh"]
    eh2h, eh3h = cache["eh2h"], cache["eh3h"]
    idx2, idx3 = cache["idx2"], cache["idx3"]
    scale = cache["scale"]
    B, S, d_model = h.shape
    de = table.shape[1]
    H = cfg.n_heads
    dh = de // H

    du = (d_out @ w_o.T).reshape(B, S, H, dh)
    dw_o = np.einsum("bse,bsd->ed", u, d_out)

    dg = np.sum(du * m, axis=-1)
    dm = g[..., None] * du
    dz = dg * g * (1.0 - g)
    dw_g = np.einsum("bsd,bsh->dh", h, dz)
    dh_acc = d_out + dz @ w_g.T

    dalpha2 = np.sum(dm * eh2h, axis=-1)
    dalpha3 = np.sum(dm * eh3h, axis=-1)
    deh2h = alpha[..., 0:1] * dm
    deh3h = alpha[..., 1:2] * dm

    dalpha = np.stack([dalpha2, dalpha3], axis=-1)
    ds = softmax_backward(dalpha, alpha, axis=-1)
    ds2 = ds[..., 0:1] * scale
    ds3 = ds[..., 1:2] * scale
    dqh = ds2 * eh2h + ds3 * eh3h
    deh2h = deh2h + ds2 * qh
    deh3h = deh3h + ds3 * qh

    dq = dqh.reshape(B, S, de)
    dw_q = np.einsum("bsd,bse->de", h, dq)
    dh_acc = dh_acc + dq @ w_q.T

    de2, dgain2 = rmsnorm_backward(deh2h.reshape(B, S, de), cache["e2"], gain, cfg.rms_eps)
    de3, dgain3 = rmsnorm_backward(deh3h.reshape(B, S, de), cache["e3"], gain, cfg.rms_eps)

    dtable = np.zeros_like(table)
    np.add.at(dtable, idx2.reshape(-1), de2.reshape(-1, de))
    np.add.at(dtable, idx3.reshape(-1), de3.reshape(-1, de))

    grads = {
        "engram.table": dtable,
        "engram.w_q": dw_q,
        "engram.w_o": dw_o,
        "engram.w_g": dw_g,
        "engram.rms_gain": dgain2 + dgain3,
    }
    return dh_acc, grads


def touched_rows(tokens: np.ndarray, cfg: EngramConfig) -> np.ndarray:
    """Sorted unique table rows addressed by a batch of token ids."""
    idx2, idx3 = ngram_indices(np.atleast_2d(tokens), cfg)
    return np.unique(np.concatenate([idx2.reshape(-1), idx3.reshape(-1)]))
