"""Deterministic training loop with split learning rates and gradient-norm
instrumentation.

Two optimizer groups: parameters named "engram.*" train at
base_lr * engram_lr_multiplier (default 5x) while everything else uses
base_lr. Each step logs one JSON record; given the same seed, config, and
data the record stream is bit-identical at float64 except for the
wallclock_ms field, which is wall time and is excluded from determinism
comparisons (see canonical_log_lines).
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .backbone import ModelConfig, ModelParams, init_params, loss_and_grads
from .checkpoint import read_checkpoint, write_checkpoint
from .data import BatchSchedule, load_token_docs, pack_blocks
from .errors import ConfigError, NumericalDivergence, ParseError

LOG_FORMAT = "trainlog-v1"
RECORD_FIELDS = (
    "step",
    "loss",
    "lr_backbone",
    "lr_engram",
    "grad_norm_engram",
    "grad_norm_backbone",
    "wallclock_ms",
)


@dataclass
class TrainConfig:
    base_lr: float = 3e-3
    engram_lr_multiplier: float = 5.0
    batch_size: int = 16
    grad_accum_steps: int = 1
    max_steps: int = 500
    seed: int = 0
    warmup_steps: int = 20
    clip_norm: float | None = None
    log_every: int = 1
    checkpoint_every: int = 0
    precision: str | None = None
    optimizer: str = "adamw"
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    lr_schedule: str = "warmup_cosine"
    doc_sep_id: int = 3

    def __post_init__(self):
        if self.base_lr <= 0 or self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ConfigError("base_lr, batch_size, grad_accum_steps must be positive")
        if self.max_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("step counts must be nonnegative")
        if self.engram_lr_multiplier < 1:
            raise ConfigError("engram_lr_multiplier must be >= 1")
        if self.optimizer not in ("adamw", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("warmup_cosine", "constant"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Closed-form schedule; logged values match this function exactly.

    warmup_cosine: base * (step+1)/warmup for step < warmup, then
    base * 0.5 * (1 + cos(pi * (step-warmup)/(max_steps-warmup))).
    """
    if cfg.lr_schedule == "constant":
        return cfg.base_lr
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.base_lr * (step + 1) / cfg.warmup_steps
    span = cfg.max_steps - cfg.warmup_steps
    if span <= 0:
        return cfg.base_lr
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def is_engram_param(name: str) -> bool:
    return name.startswith("engram.")


def grad_norm(grads: dict[str, np.ndarray], component: str) -> float:
    """L2 norm over one parameter group: "engram", "backbone", or "all"."""
    if component == "engram":
        names = [n for n in grads if is_engram_param(n)]
    elif component == "backbone":
        names = [n for n in grads if not is_engram_param(n)]
    elif component == "all":
        names = list(grads)
    else:
        raise ValueError(f"unknown component {component!r}")
    total = 0.0
    for n in names:
        g = grads[n].astype(np.float64, copy=False)
        total += float(np.sum(g * g))
    return math.sqrt(total)


class Optimizer:
    """AdamW (or plain SGD) over named arrays with a per-group lr multiplier."""

    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(a) for n, a in params.arrays.items()}
        self.v = {n: np.zeros_like(a) for n, a in params.arrays.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], base_lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        for name in sorted(params.arrays):
            g = grads[name]
            p = params.arrays[name]
            lr = base_lr * (cfg.engram_lr_multiplier if is_engram_param(name) else 1.0)
            if cfg.optimizer == "sgd":
                if cfg.weight_decay:
                    p -= lr * cfg.weight_decay * p
                p -= lr * g
                continue
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            mhat = m / (1.0 - cfg.beta1**self.t)
            vhat = v / (1.0 - cfg.beta2**self.t)
            if cfg.weight_decay:
                p -= lr * cfg.weight_decay * p
            p -= lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)

    def state_sections(self) -> dict[str, np.ndarray]:
        out = {}
        for n, a in self.m.items():
            out[f"opt.m.{n}"] = a
        for n, a in self.v.items():
            out[f"opt.v.{n}"] = a
        return out

    def load_state_sections(self, sections: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for n in self.m:
            self.m[n] = sections[f"opt.m.{n}"].copy()
            self.v[n] = sections[f"opt.v.{n}"].copy()


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = grad_norm(grads, "all")
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def train_step(
    params: ModelParams,
    optimizer: Optimizer,
    batches: list[tuple[np.ndarray, np.ndarray]],
    step: int,
    cfg: TrainConfig,
    last_good_step: int = -1,
) -> dict:
    """One optimizer update over the step's micro-batches.

    The logged loss is the mean pre-update loss; gradients are averaged over
    micro-batches before the update.
    """
    t0 = time.perf_counter()
    total_loss = 0.0
    acc: dict[str, np.ndarray] = {}
    for x, y in batches:
        loss, grads = loss_and_grads(params, x, y)
        total_loss += loss
        if not acc:
            acc = grads
        else:
            for n, g in grads.items():
                acc[n] += g
    n_micro = len(batches)
    loss = total_loss / n_micro
    if not math.isfinite(loss):
        raise NumericalDivergence(
            f"non-finite loss {loss} at step {step}", last_good_step=last_good_step
        )
    if n_micro > 1:
        for g in acc.values():
            g /= n_micro
    if cfg.clip_norm is not None:
        clip_gradients(acc, cfg.clip_norm)
    ge = grad_norm(acc, "engram")
    gb = grad_norm(acc, "backbone")
    lr = lr_at(step, cfg)
    optimizer.step(params, acc, lr)
    return {
        "step": step,
        "loss": loss,
        "lr_backbone": lr,
        "lr_engram": lr * cfg.engram_lr_multiplier,
        "grad_norm_engram": ge,
        "grad_norm_backbone": gb,
        "wallclock_ms": int(round((time.perf_counter() - t0) * 1000)),
    }


def _write_ckpt(path, model_cfg: ModelConfig, train_cfg: TrainConfig, step: int, params: ModelParams, opt: Optimizer) -> None:
    meta = {
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "step": step,
        "opt_t": opt.t,
    }
    sections = dict(params.arrays)
    sections.update(opt.state_sections())
    write_checkpoint(path, meta, sections)


def load_ckpt(path) -> tuple[ModelConfig, TrainConfig, int, ModelParams, Optimizer]:
    meta, sections = read_checkpoint(path)
    model_cfg = ModelConfig.from_dict(meta["model_config"])
    train_cfg = TrainConfig.from_dict(meta["train_config"])
    arrays = {n: a for n, a in sections.items() if not n.startswith("opt.")}
    params = ModelParams(model_cfg, arrays)
    opt = Optimizer(params, train_cfg)
    opt.load_state_sections(sections, meta["opt_t"])
    return model_cfg, train_cfg, meta["step"], params, opt


def run_training(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    docs,
    out_dir,
    resume_from=None,
) -> str:
    """Train and write <out_dir>/log.jsonl plus checkpoints; returns the log path.

    ``docs`` is a sequence of 1-D token-id arrays. Batching is a pure
    function of (seed, step), so resuming from checkpoint k reproduces the
    unbroken run's records from step k onward.
    """
    os.makedirs(out_dir, exist_ok=True)
    if train_cfg.precision is not None and train_cfg.precision != model_cfg.precision:
        model_cfg = replace(model_cfg, precision=train_cfg.precision)

    if resume_from is not None:
        ck_model, ck_train, start_step, params, optimizer = load_ckpt(resume_from)
        if ck_model.to_dict() != model_cfg.to_dict() or ck_train.to_dict() != train_cfg.to_dict():
            raise ConfigError("checkpoint configs do not match the requested run")
    else:
        start_step = 0
        params = init_params(model_cfg, seed=train_cfg.seed)
        optimizer = Optimizer(params, train_cfg)

    blocks = pack_blocks(docs, model_cfg.context_len, train_cfg.doc_sep_id)
    schedule = BatchSchedule(
        blocks.shape[0] if blocks.shape[0] else 1,
        train_cfg.batch_size,
        train_cfg.grad_accum_steps,
        train_cfg.seed,
    )
    if blocks.shape[0] == 0 and train_cfg.max_steps > 0:
        raise ConfigError("corpus packs to zero blocks; shorten context_len or add data")

    log_path = os.path.join(out_dir, "log.jsonl")
    mode = "a" if resume_from is not None and os.path.exists(log_path) else "w"
    with open(log_path, mode, encoding="utf-8") as log:
        if mode == "w":
            header = {
                "type": "header",
                "format": LOG_FORMAT,
                "model_config": model_cfg.to_dict(),
                "train_config": train_cfg.to_dict(),
            }
            log.write(json.dumps(header, sort_keys=True) + "\n")
        if start_step == 0:
            _write_ckpt(os.path.join(out_dir, "ckpt_init.bin"), model_cfg, train_cfg, 0, params, optimizer)
        last_good = start_step - 1
        for step in range(start_step, train_cfg.max_steps):
            micro_idx = schedule.micro_batches(step)
            batches = [(blocks[idx][:, :-1], blocks[idx][:, 1:]) for idx in micro_idx]
            record = train_step(params, optimizer, batches, step, train_cfg, last_good)
            last_good = step
            if step % train_cfg.log_every == 0 or step == train_cfg.max_steps - 1:
                log.write(json.dumps(record, sort_keys=True) + "\n")
            if train_cfg.checkpoint_every and (step + 1) % train_cfg.checkpoint_every == 0:
                _write_ckpt(
                    os.path.join(out_dir, f"ckpt_step{step + 1:07d}.bin"),
                    model_cfg, train_cfg, step + 1, params, optimizer,
                )
    _write_ckpt(os.path.join(out_dir, "ckpt_final.bin"), model_cfg, train_cfg, train_cfg.max_steps, params, optimizer)
    return log_path


def parse_log(path) -> tuple[dict, list[dict]]:
    """(header, records) from a training log; ParseError carries the line."""
    header = None
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if obj.get("type") == "header":
                header = obj
                continue
            missing = [k for k in RECORD_FIELDS if k not in obj]
            if missing:
                raise ParseError(f"record missing fields {missing}", line=lineno)
            records.append(obj)
    if header is None:
        raise ParseError("log has no header line", line=1)
    return header, records


def canonical_log_lines(path) -> list[str]:
    """Log lines re-serialized without the wall-time field.

    wallclock_ms is the one record field that legitimately differs between
    reruns of the same seed/config/data, so byte-level determinism checks
    compare this canonical form.
    """
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            obj.pop("wallclock_ms", None)
            out.append(json.dumps(obj, sort_keys=True))
    return out


def train_from_files(model_config_path, train_config_path, data_path, out_dir, resume_from=None) -> str:
    model_cfg = ModelConfig.from_json(model_config_path)
    train_cfg = TrainConfig.from_json(train_config_path)
    docs = load_token_docs(data_path)
    return run_training(model_cfg, train_cfg, docs, out_dir, resume_from=resume_from)
