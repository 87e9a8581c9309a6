"""Adam training loop with frame-weighted clip sampling."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .rotation import DegenerateRotationError
from .dataset import Dataset, clip_features
from .losses import COMPONENTS, LossWeights, NonFiniteLossError, batch_loss, lr_at
from .net import NetConfig, NetworkParams, forward, save_params

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 1500
    batch_size: int = 256
    batches_per_epoch: int = 1
    lr: float = 1e-3
    decay: float = 0.999
    window: int = 45
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    angular_mode: str = "relative"

    def __post_init__(self):
        for k in ("epochs", "batch_size", "batches_per_epoch", "window", "checkpoint_every"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")

    @classmethod
    def from_mapping(cls, m: dict) -> "TrainConfig":
        """Build from flat string/number keys; ``w_pose`` etc. set the loss weights."""
        kw, wkw = {}, {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in m.items():
            if k.startswith("w_"):
                wkw[k[2:]] = float(v)
            elif k in types and k != "weights":
                kw[k] = _coerce(getattr(cls(), k), v)
            else:
                raise KeyError(f"unknown training option {k!r}")
        return cls(weights=LossWeights(**wkw), **kw)


def _coerce(default, v):
    if isinstance(default, bool):
        return str(v).lower() in ("1", "true", "yes", "on")
    return type(default)(v)


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls({k: np.zeros(t.shape) for k, t in params.items()},
                   {k: np.zeros(t.shape) for k, t in params.items()}, 0, beta1, beta2, eps)


def adam_step(params: NetworkParams, state: OptimizerState, lr: float, grads=None):
    """Bias-corrected Adam update in place; ``grads`` defaults to the tensors' ``.grad``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = t.grad if grads is None else grads[name]
        if g is None:
            g = np.zeros(t.shape)
        if g.shape != t.shape or state.m[name].shape != t.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.invalidate()


@dataclass
class Batch:
    window: np.ndarray       # (B, W, 37)
    target: np.ndarray       # (B, 48)
    prev_target: np.ndarray  # (B, 48)
    root: np.ndarray         # (B, 9)
    prev_root: np.ndarray    # (B, 9)
    labels: np.ndarray       # (B, 2)
    vel_mask: np.ndarray     # (B,)
    clip_index: np.ndarray
    frame_index: np.ndarray


class Sampler:
    """Draws clips with probability proportional to frame count, then a
    uniformly placed window whose last frame carries the targets."""

    def __init__(self, dataset: Dataset, window=45, angular_mode="relative"):
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        self.dataset = dataset
        self.window = window
        frames = dataset.frame_counts.astype(np.float64)
        if np.any(frames < window + 1):
            raise ValueError(f"every clip needs at least {window + 1} frames")
        self.p = frames / frames.sum()
        self.features = [clip_features(c, angular_mode) for c in dataset.clips]

    def draw(self, rng, batch_size) -> tuple:
        ci = rng.choice(len(self.p), size=batch_size, p=self.p)
        T = self.dataset.frame_counts[ci]
        fi = rng.integers(self.window, T)
        return ci, fi

    def batch(self, ci, fi) -> Batch:
        W = self.window
        clips = self.dataset.clips
        win = np.stack([self.features[c][i - W + 1:i + 1] for c, i in zip(ci, fi)])
        get = lambda attr, off: np.stack([getattr(clips[c], attr)[i - off] for c, i in zip(ci, fi)])
        return Batch(win, get("targets", 0), get("targets", 1), get("root", 0), get("root", 1),
                     get("labels", 0), (fi - 1 >= 0).astype(np.float64), ci, fi)


def sample_batch(dataset: Dataset, rng, batch_size=256, window=45, sampler=None) -> Batch:
    sampler = sampler or Sampler(dataset, window)
    return sampler.batch(*sampler.draw(rng, batch_size))


def train_step(params, opt, batch, skeleton, weights, lr):
    params.zero_grad()
    with ad.Tape() as tape:
        out = forward(batch.window, params)
        total, comps = batch_loss(out, batch, skeleton, weights)
        tape.backward(total)
    adam_step(params, opt, lr)
    vals = {k: float(v.data) for k, v in comps.items()}
    vals["total"] = float(total.data)
    return vals


def train(dataset: Dataset, config: TrainConfig, out_dir=None, net_config: NetConfig = None,
          params: NetworkParams = None, progress=None):
    """Run the loop; returns ``(params, curve)`` where ``curve`` is a list of dicts.

    Writes ``loss.csv`` and checkpoints into ``out_dir`` when given.
    """
    rng = np.random.default_rng(config.seed)
    params = params or NetworkParams.init(net_config or NetConfig(), seed=config.seed)
    opt = OptimizerState.for_params(params, config.beta1, config.beta2, config.eps)
    sampler = Sampler(dataset, config.window, config.angular_mode)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    curve = []
    writer = fh = None
    if out:
        fh = open(out / "loss.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr"] + [c for c in COMPONENTS] + ["total"])
    try:
        for epoch in range(config.epochs):
            lr = lr_at(epoch, config.lr, config.decay)
            acc = {k: 0.0 for k in COMPONENTS + ("total",)}
            t0 = time.perf_counter()
            for _ in range(config.batches_per_epoch):
                batch = sampler.batch(*sampler.draw(rng, config.batch_size))
                try:
                    vals = train_step(params, opt, batch, dataset.skeleton, config.weights, lr)
                except (FloatingPointError, DegenerateRotationError) as exc:
                    _dump_state(out, epoch, batch, str(exc))
                    raise
                if not np.isfinite(vals["total"]):
                    _dump_state(out, epoch, batch, "non-finite total loss")
                    raise NonFiniteLossError("non-finite total loss")
                for k in acc:
                    acc[k] += vals[k] / config.batches_per_epoch
            row = {"epoch": epoch, "lr": lr, **acc}
            curve.append(row)
            if writer:
                writer.writerow([epoch, repr(lr)] + [repr(acc[k]) for k in COMPONENTS + ("total",)])
                fh.flush()
            log.info("epoch %d lr %.3g total %.5f pose %.5f (%.1fs)", epoch, lr, acc["total"],
                     acc["pose"], time.perf_counter() - t0)
            if progress:
                progress(row)
            last = epoch == config.epochs - 1
            if out and ((epoch + 1) % config.checkpoint_every == 0 or last):
                meta = {"epoch": epoch + 1, "train_config": _jsonable(config)}
                save_params(params, out / f"ckpt_{epoch + 1:05d}.lbst", meta=meta)
                if last:
                    save_params(params, out / "final.lbst", meta=meta)
    finally:
        if fh:
            fh.close()
    return params, curve


def _jsonable(config: TrainConfig) -> dict:
    d = asdict(config)
    return d


def _dump_state(out, epoch, batch, reason):
    info = {"reason": reason, "epoch": epoch,
            "clips": batch.clip_index.tolist(), "frames": batch.frame_index.tolist()}
    log.error("training aborted: %s", json.dumps(info))
    if out:
        (Path(out) / "abort_state.json").write_text(json.dumps(info, indent=2) + "\n")


def gradcheck_problem(hidden=16, latent=8, window=8, batch=4, seed=0,
                      weights: LossWeights = LossWeights()):
    """Shrunken network plus a fixed batch from a short synthetic walk.

    Returns ``(params, loss_fn)`` for :func:`lobstr.net.grad_check`; the loss
    is the full weighted combination including the FK and velocity terms.
    """
    from .dataset import clip_to_data
    from .synth import synthetic_walk
    clip = synthetic_walk(seconds=2.0, seed=seed)
    data = clip_to_data(clip, noise_seed=seed)
    ds = Dataset(clip.skeleton, [data], {})
    sampler = Sampler(ds, window)
    b = sampler.batch(*sampler.draw(np.random.default_rng(seed), batch))
    params = NetworkParams.init(NetConfig(hidden=hidden, latent=latent), seed=seed)

    def loss_fn(p):
        return batch_loss(forward(b.window, p), b, ds.skeleton, weights)[0]
    return params, loss_fn
