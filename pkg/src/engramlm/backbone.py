"""Decoder-only transformer with an optional n-gram memory layer.

Pre-norm residual blocks (RMS-style norms), causal multi-head attention,
GELU MLPs with a 4x expansion, learned absolute positional embeddings, and
a bias-free output head that is zero-initialized so the first-step loss of a
fresh model is exactly ln(vocab_size).

Forward and backward passes are written out by hand on numpy arrays; the
explicit activation caches make the analytic gradients independently
checkable against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .engram import EngramConfig, engram_forward, engram_backward, init_engram_params
from .errors import ConfigError, DegenerateBatchError, OutOfRangeError, ShapeError
from .nn_ops import gelu, gelu_backward, rmsnorm, rmsnorm_backward, softmax, softmax_backward

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    n_blocks: int = 2
    d_model: int = 16
    n_heads: int = 2
    context_len: int = 32
    vocab_size: int = 69
    mlp_ratio: int = 4
    precision: str = "float64"
    tie_output: bool = False
    engram: EngramConfig | None = field(default_factory=EngramConfig)

    def __post_init__(self):
        if isinstance(self.engram, dict):
            self.engram = EngramConfig(**self.engram)
        self.validate()

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.context_len < 3:
            raise ConfigError("context_len must be >= 3 (trigram window)")
        if self.precision not in DTYPES:
            raise ConfigError(f"unknown precision preset {self.precision!r}")
        if self.engram is not None:
            self.engram.validate()
            if not 0 <= self.engram.insert_after_block <= self.n_blocks:
                raise ConfigError(
                    f"insert_after_block={self.engram.insert_after_block} outside [0, {self.n_blocks}]"
                )

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        if preset is not None:
            base = PRESETS.get(preset)
            if base is None:
                raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
            cfg = base()
            eng_over = d.pop("engram", None)
            cfg = replace(cfg, **d)
            if eng_over is not None:
                if cfg.engram is None:
                    cfg.engram = EngramConfig(**eng_over)
                else:
                    cfg.engram = replace(cfg.engram, **eng_over)
            cfg.validate()
            return cfg
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def desk_config(**overrides) -> ModelConfig:
    """Small configuration every test runs on."""
    cfg = ModelConfig(
        n_blocks=2,
        d_model=16,
        n_heads=2,
        context_len=32,
        vocab_size=69,
        engram=EngramConfig(table_size=64, d_embed=8, n_heads=2, insert_after_block=1),
    )
    return replace(cfg, **overrides) if overrides else cfg


def full_1p2b_config() -> ModelConfig:
    """Full-scale configuration, kept for documentation.

    Constructible, but not trainable on a desk machine; nominal capacity is
    around 1.2B parameters (1.1B by some counts; the exact number depends on
    head tying and vocabulary). The published batch sizing for this scale
    (36 x 4, quoted effective 128 although 36*4=144) lives in the training
    harness docs, not here.
    """
    return ModelConfig(
        n_blocks=36,
        d_model=1280,
        n_heads=20,
        context_len=1024,
        vocab_size=2843,
        precision="float32",
        engram=EngramConfig(table_size=500_000, d_embed=768, n_heads=8, insert_after_block=3),
    )


PRESETS = {"desk": desk_config, "full-1p2b": full_1p2b_config}


class ModelParams:
    """Named parameter arrays plus the configuration that shaped them."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> list[str]:
        return sorted(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, precision: str) -> "ModelParams":
        dt = DTYPES[precision]
        cfg = replace(self.config, precision=precision)
        return ModelParams(cfg, {k: v.astype(dt) for k, v in self.arrays.items()})

    def n_parameters(self) -> int:
        return sum(int(a.size) for a in self.arrays.values())

    def assert_finite(self) -> None:
        for name, a in self.arrays.items():
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite values in parameter {name}")


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Seeded initialization.

    Backbone arrays are drawn first in a fixed order, so a memory-augmented
    model and a plain one share bit-identical backbone weights for the same
    seed. The output head starts at zero (uniform first-step predictions);
    the memory table starts at zero (layer is the identity).
    """
    rng = np.random.default_rng(seed)
    dt = config.dtype
    d, V, L = config.d_model, config.vocab_size, config.context_len
    hidden = config.mlp_ratio * d
    arrays: dict[str, np.ndarray] = {
        "tok_emb": (0.02 * rng.standard_normal((V, d))).astype(dt),
        "pos_emb": (0.01 * rng.standard_normal((L, d))).astype(dt),
    }
    for i in range(config.n_blocks):
        p = f"blocks.{i}."
        arrays[p + "ln1_gain"] = np.ones(d, dtype=dt)
        for w in ("wq", "wk", "wv", "wo"):
            arrays[p + "attn." + w] = (rng.standard_normal((d, d)) / np.sqrt(d)).astype(dt)
        arrays[p + "ln2_gain"] = np.ones(d, dtype=dt)
        arrays[p + "mlp.w1"] = (rng.standard_normal((d, hidden)) / np.sqrt(d)).astype(dt)
        arrays[p + "mlp.w2"] = (rng.standard_normal((hidden, d)) / np.sqrt(hidden)).astype(dt)
    arrays["final_gain"] = np.ones(d, dtype=dt)
    if not config.tie_output:
        arrays["w_out"] = np.zeros((d, V), dtype=dt)
    if config.engram is not None:
        arrays.update(init_engram_params(config.engram, d, rng, dt))
    return ModelParams(config, arrays)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, causal: bool = True) -> np.ndarray:
    """Scaled dot-product attention over (seq, d_k) operands."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    if causal:
        S, T = scores.shape[-2], scores.shape[-1]
        scores = np.where(np.tril(np.ones((S, T), dtype=bool)), scores, -np.inf)
    return softmax(scores, axis=-1) @ v


def _mha_forward(x: np.ndarray, w: dict, n_heads: int):
    B, S, d = x.shape
    dh = d // n_heads
    q = (x @ w["wq"]).reshape(B, S, n_heads, dh).transpose(0, 2, 1, 3)
    k = (x @ w["wk"]).reshape(B, S, n_heads, dh).transpose(0, 2, 1, 3)
    v = (x @ w["wv"]).reshape(B, S, n_heads, dh).transpose(0, 2, 1, 3)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    mask = np.tril(np.ones((S, S), dtype=bool))
    scores = np.where(mask, scores, np.array(-np.inf, dtype=x.dtype))
    att = softmax(scores, axis=-1)
    ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, S, d)
    out = ctx @ w["wo"]
    cache = {"x": x, "q": q, "k": k, "v": v, "att": att, "ctx": ctx}
    return out, cache


def _mha_backward(dout: np.ndarray, cache: dict, w: dict, n_heads: int):
    x, q, k, v, att, ctx = (cache[n] for n in ("x", "q", "k", "v", "att", "ctx"))
    B, S, d = x.shape
    dh = d // n_heads
    dctx = (dout @ w["wo"].T).reshape(B, S, n_heads, dh).transpose(0, 2, 1, 3)
    dwo = np.einsum("bsd,bse->de", ctx, dout)
    datt = dctx @ v.transpose(0, 1, 3, 2)
    dv = att.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_backward(datt, att, axis=-1) / np.sqrt(dh)
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dq = dq.transpose(0, 2, 1, 3).reshape(B, S, d)
    dk = dk.transpose(0, 2, 1, 3).reshape(B, S, d)
    dv = dv.transpose(0, 2, 1, 3).reshape(B, S, d)
    dwq = np.einsum("bsd,bse->de", x, dq)
    dwk = np.einsum("bsd,bse->de", x, dk)
    dwv = np.einsum("bsd,bse->de", x, dv)
    dx = dq @ w["wq"].T + dk @ w["wk"].T + dv @ w["wv"].T
    return dx, {"wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo}


def multi_head_attention(x: np.ndarray, weights: dict, n_heads: int) -> np.ndarray:
    """Concat-of-heads attention through the output projection.

    ``weights`` maps wq/wk/wv/wo to (d_model, d_model) arrays; the residual
    add is the caller's job.
    """
    if x.shape[-1] % n_heads != 0:
        raise ShapeError(f"d_model={x.shape[-1]} not divisible by {n_heads} heads")
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    out, _ = _mha_forward(x, weights, n_heads)
    return out[0] if squeeze else out


def mlp_forward(x: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Two-layer GELU MLP, shape-preserving."""
    if x.shape[-1] != w1.shape[0] or w1.shape[1] != w2.shape[0] or w2.shape[1] != x.shape[-1]:
        raise ShapeError(f"mlp shapes disagree: {x.shape}, {w1.shape}, {w2.shape}")
    return gelu(x @ w1) @ w2


def _block_forward(x: np.ndarray, params: ModelParams, i: int, n_heads: int):
    p = f"blocks.{i}."
    w_attn = {k: params[p + "attn." + k] for k in ("wq", "wk", "wv", "wo")}
    a_in = rmsnorm(x, params[p + "ln1_gain"])
    attn_out, attn_cache = _mha_forward(a_in, w_attn, n_heads)
    x1 = x + attn_out
    m_in = rmsnorm(x1, params[p + "ln2_gain"])
    h1 = m_in @ params[p + "mlp.w1"]
    a1 = gelu(h1)
    x2 = x1 + a1 @ params[p + "mlp.w2"]
    cache = {"x": x, "a_in": a_in, "attn": attn_cache, "x1": x1, "m_in": m_in, "h1": h1, "a1": a1}
    return x2, cache


def _block_backward(dx2: np.ndarray, cache: dict, params: ModelParams, i: int, n_heads: int, grads: dict):
    p = f"blocks.{i}."
    w_attn = {k: params[p + "attn." + k] for k in ("wq", "wk", "wv", "wo")}
    a1, h1, m_in, x1 = cache["a1"], cache["h1"], cache["m_in"], cache["x1"]
    grads[p + "mlp.w2"] = np.einsum("bsh,bsd->hd", a1, dx2)
    da1 = dx2 @ params[p + "mlp.w2"].T
    dh1 = gelu_backward(da1, h1)
    grads[p + "mlp.w1"] = np.einsum("bsd,bsh->dh", m_in, dh1)
    dm_in = dh1 @ params[p + "mlp.w1"].T
    dx1_norm, dg2 = rmsnorm_backward(dm_in, x1, params[p + "ln2_gain"])
    grads[p + "ln2_gain"] = dg2
    dx1 = dx2 + dx1_norm
    da_in, dw_attn = _mha_backward(dx1, cache["attn"], w_attn, n_heads)
    for k, v in dw_attn.items():
        grads[p + "attn." + k] = v
    dx_norm, dg1 = rmsnorm_backward(da_in, cache["x"], params[p + "ln1_gain"])
    grads[p + "ln1_gain"] = dg1
    return dx1 + dx_norm


def block_forward(x: np.ndarray, params: ModelParams, i: int, tokens: np.ndarray | None = None) -> np.ndarray:
    """One pre-norm block; applies the memory layer afterwards when this is
    its configured slot and tokens are supplied."""
    cfg = params.config
    out, _ = _block_forward(x, params, i, cfg.n_heads)
    eng = cfg.engram
    if eng is not None and tokens is not None and eng.insert_after_block == i + 1:
        out, _ = engram_forward(out, tokens, params.arrays, eng)
    return out


def model_forward(tokens: np.ndarray, params: ModelParams, want_cache: bool = False):
    """Logits (B, S, vocab) for a (B, S) or (S,) batch of token ids."""
    cfg = params.config
    tokens = np.atleast_2d(np.asarray(tokens))
    B, S = tokens.shape
    if S > cfg.context_len:
        raise ShapeError(f"sequence length {S} exceeds context_len {cfg.context_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise OutOfRangeError(
            f"token ids must lie in [0, {cfg.vocab_size}), got [{tokens.min()}, {tokens.max()}]"
        )
    eng = cfg.engram

    x = params["tok_emb"][tokens] + params["pos_emb"][:S]
    caches: dict = {"tokens": tokens, "blocks": [], "engram": None, "emb_x": x}
    if eng is not None and eng.insert_after_block == 0:
        x, ecache = engram_forward(x, tokens, params.arrays, eng)
        caches["engram"] = ecache
    for i in range(cfg.n_blocks):
        x, bcache = _block_forward(x, params, i, cfg.n_heads)
        caches["blocks"].append(bcache)
        if eng is not None and eng.insert_after_block == i + 1:
            x, ecache = engram_forward(x, tokens, params.arrays, eng)
            caches["engram"] = ecache
    caches["pre_final"] = x
    fin = rmsnorm(x, params["final_gain"])
    caches["fin"] = fin
    w_out = params["tok_emb"].T if cfg.tie_output else params["w_out"]
    logits = fin @ w_out
    if want_cache:
        return logits, caches
    return logits


def nll_loss(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None):
    """Mean negative log-likelihood over unmasked positions.

    Returns (loss, dlogits); dlogits is the gradient of the mean loss and is
    zero wherever the mask is False.
    """
    logits = np.atleast_3d(logits)
    targets = np.atleast_2d(targets)
    if logits.shape[:2] != targets.shape:
        raise ShapeError(f"logits {logits.shape} do not match targets {targets.shape}")
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise DegenerateBatchError("all positions masked out of the loss")
    zmax = logits.max(axis=-1, keepdims=True)
    z = logits - zmax
    lse = np.log(np.sum(np.exp(z), axis=-1)) + zmax[..., 0]
    picked = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
    loss = float(np.sum((lse - picked) * mask) / n)

    p = softmax(logits, axis=-1)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    dlogits = (p - onehot) * mask[..., None] / n
    return loss, dlogits


def loss_and_grads(params: ModelParams, tokens: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None):
    """One forward/backward pass: (loss, grads dict keyed like the params)."""
    cfg = params.config
    logits, caches = model_forward(tokens, params, want_cache=True)
    loss, dlogits = nll_loss(logits, np.atleast_2d(targets), mask)

    grads: dict[str, np.ndarray] = {}
    fin = caches["fin"]
    if cfg.tie_output:
        dfin = dlogits @ params["tok_emb"]
        dtok_head = np.einsum("bsd,bsv->vd", fin, dlogits)
    else:
        grads["w_out"] = np.einsum("bsd,bsv->dv", fin, dlogits)
        dfin = dlogits @ params["w_out"].T
        dtok_head = None
    dx, dgf = rmsnorm_backward(dfin, caches["pre_final"], params["final_gain"])
    grads["final_gain"] = dgf

    eng = cfg.engram
    tokens2d = caches["tokens"]
    for i in reversed(range(cfg.n_blocks)):
        if eng is not None and eng.insert_after_block == i + 1:
            dx, eg = engram_backward(dx, caches["engram"], params.arrays, eng)
            grads.update(eg)
        dx = _block_backward(dx, caches["blocks"][i], params, i, cfg.n_heads, grads)
    if eng is not None and eng.insert_after_block == 0:
        dx, eg = engram_backward(dx, caches["engram"], params.arrays, eng)
        grads.update(eg)

    dtok = np.zeros_like(params["tok_emb"])
    np.add.at(dtok, tokens2d.reshape(-1), dx.reshape(-1, cfg.d_model))
    if dtok_head is not None:
        dtok += dtok_head
    grads["tok_emb"] = dtok
    dpos = np.zeros_like(params["pos_emb"])
    dpos[: tokens2d.shape[1]] = dx.sum(axis=0)
    grads["pos_emb"] = dpos
    return loss, grads


def generate(params: ModelParams, prompt: np.ndarray, max_new_tokens: int, temperature: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Greedy (temperature 0) or softmax-sampled continuation; smoke-test use."""
    cfg = params.config
    ids = list(np.asarray(prompt, dtype=np.int64).reshape(-1))
    for _ in range(max_new_tokens):
        window = np.array(ids[-cfg.context_len :], dtype=np.int64)
        logits = model_forward(window[None], params)[0, -1]
        if temperature <= 0.0:
            ids.append(int(np.argmax(logits)))
        else:
            p = softmax(logits / temperature)
            ids.append(int((rng or np.random.default_rng()).choice(cfg.vocab_size, p=p)))
    return np.array(ids, dtype=np.int64)
