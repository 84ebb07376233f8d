"""Optimization and checkpointing: Adam, inverse-sqrt schedule, the epoch
loop, and final-N parameter averaging.

Checkpoints store parameters as 32-bit floats in a little-endian binary
container (magic "STCK") with a trailing key=value metadata block carrying
the step, epoch, and the full model configuration plus its digest, so a
checkpoint alone is enough to rebuild the model for decoding.

Training is deterministic for a fixed seed: batch order, dropout, and
SpecAugment all draw from named child streams of one root RngStream, and all
reductions run in a fixed order.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, fields

import numpy as np

from .audio import SpecAugmentPolicy, spec_augment
from .config import coerce, format_value
from .data import drop_ctc_infeasible, make_batches
from .losses import LossWeights, ctc_loss_batch, label_smoothed_ce, multitask_loss
from .model import ModelConfig, SpeechTranslator
from .rng import RngStream
from .tensor import Tensor

CHECKPOINT_MAGIC = b"STCK"
CHECKPOINT_VERSION = 1


@dataclass
class ScheduleConfig:
    base_lr: float = 2e-3
    warmup_steps: int = 400

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")


def inverse_sqrt_lr(step: int, sched: ScheduleConfig) -> float:
    """Linear warmup to base_lr, then decay by sqrt(warmup/step)."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if step <= sched.warmup_steps:
        return sched.base_lr * step / sched.warmup_steps
    return sched.base_lr * math.sqrt(sched.warmup_steps / step)


class Adam:
    """Bias-corrected Adam over named parameters.

    Aborts with the parameter's name when a gradient goes non-finite, which
    is the only runtime signal worth more than the update itself.
    """

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-9):
        self.named_params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self, lr: float):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1 ** self.step_count
        correct2 = 1.0 - b2 ** self.step_count
        for i, (name, p) in enumerate(self.named_params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / correct1
            v_hat = self.v[i] / correct2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(named_params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.
    Returns the pre-clip norm."""
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- checkpoint container -----------------------------------------------------


def save_checkpoint(path, named_arrays, metadata: dict):
    """Write name->array entries (stored float32) plus key=value metadata."""
    items = list(named_arrays)
    blob = [struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(items))]
    for name, arr in items:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        blob.append(struct.pack("<H", len(encoded)))
        blob.append(encoded)
        blob.append(struct.pack("<B", arr.ndim))
        blob.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        blob.append(arr.tobytes())
    meta_text = "".join(f"{k} = {format_value(v)}\n" for k, v in metadata.items())
    meta_bytes = meta_text.encode("utf-8")
    blob.append(struct.pack("<I", len(meta_bytes)))
    blob.append(meta_bytes)
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


def load_checkpoint(path):
    """Read a checkpoint; returns (entries: name -> float32 array, metadata)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", data, offset) if rank else ()
        offset += 4 * rank
        n_values = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n_values, offset=offset)
        offset += 4 * n_values
        if name in entries:
            raise ValueError(f"{path}: duplicate entry {name!r}")
        entries[name] = arr.reshape(shape).copy()
    (meta_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    metadata = {}
    for line in data[offset:offset + meta_len].decode("utf-8").splitlines():
        if line.strip():
            key, _, raw = line.partition("=")
            metadata[key.strip()] = coerce(raw)
    return entries, metadata


def config_digest(cfg: ModelConfig) -> str:
    text = ",".join(f"{f.name}={getattr(cfg, f.name)}" for f in fields(cfg))
    return hashlib.blake2b(text.encode(), digest_size=8).hexdigest()


def config_metadata(cfg: ModelConfig) -> dict:
    meta = {f"config.{f.name}": getattr(cfg, f.name) for f in fields(cfg)}
    meta["config_digest"] = config_digest(cfg)
    return meta


def config_from_metadata(metadata: dict) -> ModelConfig:
    kwargs = {}
    for f in fields(ModelConfig):
        key = f"config.{f.name}"
        if key in metadata:
            kwargs[f.name] = metadata[key]
    cfg = ModelConfig(**kwargs)
    stored = metadata.get("config_digest")
    if stored is not None and stored != config_digest(cfg):
        raise ValueError("checkpoint metadata fails its own config digest")
    return cfg


def save_model(path, model: SpeechTranslator, step: int, epoch: int):
    meta = {"step": step, "epoch": epoch}
    meta.update(config_metadata(model.cfg))
    save_checkpoint(path, [(n, p.data) for n, p in model.named_parameters()], meta)


def load_model(path) -> tuple:
    """Rebuild a model from one checkpoint; returns (model, metadata)."""
    entries, metadata = load_checkpoint(path)
    cfg = config_from_metadata(metadata)
    model = SpeechTranslator(cfg, RngStream(0))
    apply_entries(model, entries)
    return model, metadata


def apply_entries(model: SpeechTranslator, entries: dict):
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(entries))
    extra = sorted(set(entries) - set(params))
    if missing or extra:
        raise ValueError(f"checkpoint does not match model: missing {missing[:3]}, "
                         f"unexpected {extra[:3]}")
    for name, p in params.items():
        arr = entries[name]
        if arr.shape != p.data.shape:
            raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape} "
                             f"vs model {p.data.shape}")
        p.data[...] = arr.astype(np.float64)


def average_checkpoints(paths: list):
    """Elementwise mean of parameter entries across checkpoints.

    Accumulation runs in sorted-path order in float64, so the result is
    invariant to the order of `paths`.  Metadata records the source list.
    """
    if not paths:
        raise ValueError("no checkpoints to average")
    ordered = sorted(str(p) for p in paths)
    total = {}
    shapes = {}
    base_meta = None
    for path in ordered:
        entries, meta = load_checkpoint(path)
        if base_meta is None:
            base_meta = meta
            shapes = {n: a.shape for n, a in entries.items()}
            total = {n: np.zeros(a.shape, dtype=np.float64) for n, a in entries.items()}
        else:
            mismatched = [n for n in entries
                          if n not in shapes or entries[n].shape != shapes[n]]
            missing = sorted(set(shapes) - set(entries))
            if mismatched or missing:
                raise ValueError(f"{path}: incompatible with first checkpoint "
                                 f"(mismatched {sorted(mismatched)[:3]}, "
                                 f"missing {missing[:3]})")
        for n, a in entries.items():
            total[n] += a.astype(np.float64)
    averaged = {n: (t / len(ordered)).astype(np.float32) for n, t in total.items()}
    meta = dict(base_meta)
    meta["averaged_from"] = ";".join(os.path.basename(p) for p in ordered)
    meta["averaged_count"] = len(ordered)
    return averaged, meta


def final_checkpoints(directory, window: int = 10) -> list:
    """The last `window` per-epoch checkpoints in a run directory, by epoch."""
    names = sorted(n for n in os.listdir(directory)
                   if n.startswith("epoch") and n.endswith(".ckpt"))
    return [os.path.join(directory, n) for n in names[-window:]]


# -- the epoch loop -----------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    frame_budget: int = 4000
    seed: int = 1
    base_lr: float = 2e-3
    warmup_steps: int = 400
    clip_norm: float = 0.0
    alpha: float = 0.3
    epsilon_ls: float = 0.1
    use_spec_augment: bool = True
    sa_freq_masks: int = 2
    sa_freq_width: int = 8
    sa_time_masks: int = 2
    sa_time_fraction: float = 0.05

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def format_metric_line(step: int, lr: float, ce: float, ctc: float,
                       total: float) -> str:
    return (f"step={step} lr={lr!r} ce={ce!r} ctc={ctc!r} total={total!r}")


def train(model: SpeechTranslator, samples: list, cfg: TrainConfig,
          out_dir=None, log=None, max_steps: int | None = None,
          start_epoch: int = 0) -> list:
    """Run the training loop; returns the metric lines it logged.

    Per epoch: seeded shuffle into exact-shape batches, forward, multitask
    loss, backward, Adam step; one checkpoint per epoch when `out_dir` is
    given.  CTC-infeasible samples are dropped once up front with a count.
    `log` is called with each metric line (use print or file.write).
    """
    usable, dropped = drop_ctc_infeasible(samples)
    if not usable:
        raise ValueError("no trainable samples after CTC feasibility filtering")
    lines = []

    def emit(text):
        lines.append(text)
        if log is not None:
            log(text)

    if dropped:
        emit(f"dropped={len(dropped)} ctc-infeasible samples")
    root = RngStream(cfg.seed)
    sched = ScheduleConfig(cfg.base_lr, cfg.warmup_steps)
    weights = LossWeights(cfg.alpha, cfg.epsilon_ls)
    policy = SpecAugmentPolicy(cfg.sa_freq_masks, cfg.sa_freq_width,
                               cfg.sa_time_masks, cfg.sa_time_fraction)
    opt = Adam(model.named_parameters())
    step = 0
    vocab = model.cfg.vocab_size
    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        batches = make_batches(usable, cfg.frame_budget,
                               root.child("batches", epoch))
        for batch in batches:
            step += 1
            lr = inverse_sqrt_lr(step, sched)
            feats = batch.features
            if cfg.use_spec_augment:
                feats = np.stack([
                    spec_augment(feats[i], policy,
                                 root.child("specaug", epoch, utt_id))
                    for i, utt_id in enumerate(batch.utt_ids)])
            drop_rng = root.child("dropout", step)
            logits, enc = model.forward(Tensor(feats), batch.prefix,
                                        training=True, rng=drop_rng)
            b, l_out = batch.targets.shape
            ce = label_smoothed_ce(logits.reshape(b * l_out, vocab),
                                   batch.targets.reshape(-1), cfg.epsilon_ls)
            ctc = ctc_loss_batch(enc.ctc_logits.log_softmax(axis=-1),
                                 batch.src_targets).mean()
            total = multitask_loss(ce, ctc, weights)
            model.zero_grad()
            total.backward()
            if cfg.clip_norm > 0:
                clip_gradients(opt.named_params, cfg.clip_norm)
            opt.step(lr)
            emit(format_metric_line(step, lr, float(ce.data), float(ctc.data),
                                    float(total.data)))
            if max_steps is not None and step >= max_steps:
                break
        if out_dir is not None:
            save_model(os.path.join(out_dir, f"epoch{epoch:04d}.ckpt"),
                       model, step, epoch)
        if max_steps is not None and step >= max_steps:
            break
    return lines
