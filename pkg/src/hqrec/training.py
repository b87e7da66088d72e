"""Training objectives, optimizer, schedule, and the two-stage loops.

Stage one shapes the latent space: InfoNCE over pooled item tokens of
adjacent history items, plus a reconstruction term that makes the item
tokens retain per-attribute detail. Stage two trains the ranking
objective end to end (user vector against in-batch item targets) and
unlocks the reader. Modality encoders stay frozen in both stages and the
loop asserts it every step.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, NumericError
from .kernels import adamw_update


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    warmup_steps: int = 20
    temperature: float = 0.07
    lambda_recon: float = 0.5
    epochs: int = 50
    batch_size: int = 16
    grad_clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        bad = []
        if self.temperature <= 0:
            bad.append(f"temperature={self.temperature}")
        if self.warmup_steps < 1:
            bad.append(f"warmup_steps={self.warmup_steps}")
        if self.grad_clip_norm <= 0:
            bad.append(f"grad_clip_norm={self.grad_clip_norm}")
        if self.batch_size < 2:
            bad.append(f"batch_size={self.batch_size}")
        if bad:
            raise ConfigError("invalid train config: " + ", ".join(bad))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, obj):
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(obj) - set(known))
        if unknown:
            raise ConfigError(f"unknown train config keys: {', '.join(unknown)}")
        return cls(**known)


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------

def info_nce(anchors, positives, temperature):
    """In-batch contrastive cross-entropy on cosine similarities.

    Row i's positive is positives[i]; every other row is a negative.
    Uniform logits give exactly ln(B).
    """
    b = anchors.shape[0]
    if b < 2 or positives.shape[0] != b:
        raise DataError(f"info_nce needs matched batches of >= 2, got {anchors.shape[0]}")
    for t in (anchors, positives):
        norms = np.linalg.norm(t.data, axis=1)
        if np.any(norms == 0.0):
            raise NumericError("zero-norm vector in info_nce batch")
    a_n = T.l2_normalize(anchors)
    p_n = T.l2_normalize(positives)
    logits = T.mul_scalar(T.matmul(a_n, T.transpose(p_n)), 1.0 / temperature)

    # the detached row max cancels between logsumexp and the diagonal, so
    # work entirely in shifted coordinates (uniform logits give ln(B) exactly)
    row_max = np.max(logits.data, axis=1, keepdims=True)
    shifted = T.sub(logits, T.Tensor(np.broadcast_to(row_max, logits.shape).copy()))
    lse = T.tlog(T.tsum(T.texp(shifted), axis=1))
    eye = np.eye(b, dtype=logits.data.dtype)
    diag = T.tsum(T.mul(shifted, T.Tensor(eye)), axis=1)
    return T.tmean(T.sub(lse, diag))


def adjacent_pairs(histories):
    """(prev_item_id, next_item_id) for consecutive events in each history."""
    pairs = []
    for hist in histories:
        for a, b in zip(hist, hist[1:]):
            pairs.append((a.item_id, b.item_id))
    return pairs


def pretrain_loss(model, histories, cfg):
    """Contrastive + weighted reconstruction over a batch of histories.

    Histories shorter than 2 events are skipped by the contrastive term.
    Returns (total, components dict).
    """
    pairs = adjacent_pairs([h for h in histories if len(h) >= 2])
    if len(pairs) < 2:
        raise DataError("pretrain batch produced fewer than 2 adjacent pairs")
    cache = {}
    seen = OrderedDict()
    for a, b in pairs:
        seen.setdefault(a, None)
        seen.setdefault(b, None)
    vectors = {
        iid: model.item_vector(model._items[iid], cache) for iid in seen
    }
    anchors = T.concat([vectors[a] for a, _ in pairs], axis=0)
    positives = T.concat([vectors[b] for _, b in pairs], axis=0)
    contrast = info_nce(anchors, positives, cfg.temperature)

    recon_terms = []
    for iid in seen:
        pred, target = model.recon_predictions(model._items[iid], cache[iid])
        err = T.sub(pred, target)
        recon_terms.append(T.tmean(T.mul(err, err)))
    recon = T.tmean(T.concat([T.reshape(r, (1,)) for r in recon_terms], axis=0))

    total = T.add(contrast, T.mul_scalar(recon, cfg.lambda_recon))
    return total, {"contrast": contrast.item(), "recon": recon.item()}


def drop_target_collisions(samples):
    """Keep the first sample per ground-truth item (duplicates dropped)."""
    out, seen = [], set()
    for s in samples:
        if s.target_item in seen:
            continue
        seen.add(s.target_item)
        out.append(s)
    return out


def finetune_loss(model, samples, cfg):
    """InfoNCE between user vectors and their target-item vectors."""
    samples = drop_target_collisions(samples)
    if len(samples) < 2:
        raise DataError("finetune batch collapsed below 2 after collision drop")
    cache = {}
    users = T.concat([model.user_vector(s.history, cache) for s in samples], axis=0)
    targets = T.concat(
        [model.item_vector(model._items[s.target_item], cache) for s in samples],
        axis=0,
    )
    loss = info_nce(users, targets, cfg.temperature)
    return loss, {"contrast": loss.item()}


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def lr_at(step, total_steps, cfg):
    """Linear 0 -> peak over warmup, then cosine to 0 at total_steps."""
    if step < 0 or step > total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / max(1, total_steps - cfg.warmup_steps)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_gradients(params, names, max_norm):
    """Scale all gradients so the global norm is at most max_norm."""
    total = 0.0
    for n in names:
        g = params[n].grad
        if g is not None:
            total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for n in names:
            if params[n].grad is not None:
                params[n].grad *= scale
    return norm


class AdamW:
    """Decoupled weight decay Adam over a name -> Tensor parameter map."""

    def __init__(self, params, names, cfg):
        self.params = params
        self.names = list(names)
        self.cfg = cfg
        self.step_index = 0
        self.moments = {
            n: (np.zeros_like(params[n].data), np.zeros_like(params[n].data))
            for n in self.names
        }

    def step(self, lr):
        self.step_index += 1
        bc1 = 1.0 - self.cfg.beta1 ** self.step_index
        bc2 = 1.0 - self.cfg.beta2 ** self.step_index
        for n in self.names:
            p = self.params[n]
            if p.grad is None:
                continue
            m, v = self.moments[n]
            adamw_update(
                p.data, p.grad, m, v, lr, self.cfg.beta1, self.cfg.beta2,
                1e-8, self.cfg.weight_decay, bc1, bc2,
            )
            p.zero_grad()


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------

def _batches(order, batch_size):
    for i in range(0, len(order), batch_size):
        chunk = order[i:i + batch_size]
        if len(chunk) >= 2:
            yield chunk


def _run_stage(model, samples, cfg, stage, loss_fn, log_cb=None, epoch_cb=None,
               epochs=None, freeze_qformers=False):
    names = model.trainable_names(stage, freeze_qformers=freeze_qformers)
    opt = AdamW(model.params, names, cfg)
    rng = np.random.default_rng(cfg.seed + stage)
    epochs = cfg.epochs if epochs is None else epochs
    steps_per_epoch = max(1, math.ceil(len(samples) / cfg.batch_size))
    total_steps = max(1, epochs * steps_per_epoch)
    frozen = model.frozen_encoder_hash()
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        for chunk in _batches(order, cfg.batch_size):
            step += 1
            batch = [samples[i] for i in chunk]
            try:
                loss, parts = loss_fn(batch)
            except DataError:
                continue  # e.g. an all-collision batch; skip, keep determinism
            T.backward(loss)
            lr = lr_at(min(step, total_steps), total_steps, cfg)
            clip_gradients(model.params, names, cfg.grad_clip_norm)
            opt.step(lr)
            if model.frozen_encoder_hash() != frozen:
                raise NumericError("frozen modality encoders were modified")
            if log_cb:
                rec = {"stage": stage, "step": step, "epoch": epoch, "lr": lr,
                       "loss": loss.item()}
                rec.update(parts)
                log_cb(rec)
        if epoch_cb:
            epoch_cb(epoch)
    return {"steps": step, "moments": opt.moments}


def run_pretrain(model, window_samples, cfg, log_cb=None, epoch_cb=None, epochs=None):
    """Stage one over training-window histories; reader stays untouched."""
    usable = [s for s in window_samples if len(s.history) >= 2]
    if not usable:
        raise DataError("no histories with >= 2 interactions for pretraining")

    def loss_fn(batch):
        return pretrain_loss(model, [s.history for s in batch], cfg)

    return _run_stage(model, usable, cfg, 1, loss_fn, log_cb, epoch_cb, epochs)


def run_finetune(model, window_samples, cfg, log_cb=None, epoch_cb=None, epochs=None,
                 freeze_qformers=False):
    """Stage two over (history, target) windows; all parameters train.

    `freeze_qformers=True` is the reader-only ablation: the encoder stack
    stays pinned and only the reader adapts.
    """
    if not window_samples:
        raise DataError("no finetune samples")

    def loss_fn(batch):
        return finetune_loss(model, batch, cfg)

    return _run_stage(model, window_samples, cfg, 2, loss_fn, log_cb, epoch_cb,
                      epochs, freeze_qformers=freeze_qformers)


# ---------------------------------------------------------------------------
# Whole-model gradient check
# ---------------------------------------------------------------------------

def whole_model_gradcheck(model, samples, cfg, h=1e-5, rel_floor=1e-5):
    """Compare every trainable gradient with central finite differences.

    Returns (max relative error, per-parameter dict). Meant for float64
    toy configurations. The step is larger than the per-op checks use
    because the loss passes through thousands of ops: rounding noise in
    the differences scales as 1/h. The denominator floor absorbs that
    noise on parameters whose true gradient is zero, e.g. key biases
    that cancel inside softmax.
    """
    loss, _ = finetune_loss(model, samples, cfg)
    T.backward(loss)
    analytic = {
        n: (model.params[n].grad.copy() if model.params[n].grad is not None
            else np.zeros_like(model.params[n].data))
        for n in model.trainable_names(2)
    }
    for n in model.trainable_names(2):
        model.params[n].zero_grad()

    def loss_value():
        with T.no_grad():
            val, _ = finetune_loss(model, samples, cfg)
        return val.item()

    report = {}
    worst = 0.0
    for name, grad in analytic.items():
        data = model.params[name].data
        fd = np.zeros_like(data)
        flat, fdflat = data.ravel(), fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_value()
            flat[i] = orig - h
            fm = loss_value()
            flat[i] = orig
            fdflat[i] = (fp - fm) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), rel_floor)
        err = float(np.max(np.abs(grad - fd) / denom))
        report[name] = err
        worst = max(worst, err)
    return worst, report
