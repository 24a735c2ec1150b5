"""AdamW training with clipping, update skipping and an EMA evaluation copy."""

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import HvaeConfig
from .model import HvaeError, HvaeParams, backward, forward, grad_norm, init_params, param_layout


class DivergenceError(HvaeError):
    pass


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 1e-3
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.9
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    warmup: int = 100
    clip: float = 200.0
    skip_threshold: float = 3000.0
    ema: float = 0.999
    eval_every: int = 0
    eval_size: int = 0
    max_skips: int = 50

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    params: HvaeParams
    ema_params: HvaeParams
    history: list
    iterations: int
    skipped: int

    @property
    def final_val_nll(self):
        return self.history[-1]["val_nll"] if self.history else float("nan")


def evaluate_nll(params, images, seed=0, chunk=256):
    """Negative ELBO per dimension averaged over ``images``, on fixed noise."""
    total, n = 0.0, len(images)
    for start in range(0, n, chunk):
        out, _ = forward(params, images[start : start + chunk], seed, stream=start)
        total += -float(out.elbo) * min(chunk, n - start)
    return total / n / params.config.pixels


class AdamW:
    """Decoupled weight decay Adam on the flat parameter vector."""

    def __init__(self, params, settings):
        self.s = settings
        self.m = np.zeros_like(params.flat)
        self.v = np.zeros_like(params.flat)
        self.t = 0

    def step(self, params, grads, lr):
        s, g, p = self.s, grads.flat, params.flat
        self.t += 1
        self.m *= s.beta1
        self.m += (1.0 - s.beta1) * g
        self.v *= s.beta2
        self.v += (1.0 - s.beta2) * g * g
        mhat = self.m / (1.0 - s.beta1**self.t)
        denom = np.sqrt(self.v / (1.0 - s.beta2**self.t))
        denom += s.adam_eps
        p -= lr * (mhat / denom + s.weight_decay * p)


def train(config, train_images, val_images, iters, settings=None, seed=0, params=None, log=None):
    """Train for ``iters`` steps; returns :class:`TrainResult`.

    Mini-batches come from a seeded permutation per epoch and the latent
    noise of step ``t`` is keyed by ``(seed, row, t)``, so a run is fully
    determined by its inputs.
    """
    s = settings or TrainSettings()
    train_images = np.asarray(train_images, dtype=np.float64)
    if len(train_images) == 0:
        raise HvaeError("training set is empty")
    params = init_params(config, seed) if params is None else params.copy()
    ema = params.copy()
    opt = AdamW(params, s)
    rng = np.random.default_rng([seed, 0xBA7C4])
    batch = min(s.batch_size, len(train_images))
    per_epoch = max(1, len(train_images) // batch)
    eval_every = s.eval_every or per_epoch
    val = None if val_images is None else np.asarray(val_images, dtype=np.float64)
    val_eval = val if (val is None or not s.eval_size) else val[: s.eval_size]

    history, skipped, streak = [], 0, 0
    window_nll, window_gn = [], []
    order = rng.permutation(len(train_images))
    for it in range(iters):
        pos = it % per_epoch
        if pos == 0 and it > 0:
            order = rng.permutation(len(train_images))
        xb = train_images[order[pos * batch : (pos + 1) * batch]]
        out, cache = forward(params, xb, seed, keep=True, stream=it + 1)
        g = backward(params, cache) if out.finite else None
        gn = grad_norm(g) if g is not None else float("nan")
        skip = not np.isfinite(gn) or gn > s.skip_threshold
        if skip:
            skipped += 1
            streak += 1
            if streak >= s.max_skips:
                raise DivergenceError(f"{streak} consecutive skipped updates at iteration {it}")
        else:
            streak = 0
            if gn > s.clip:
                g.flat *= s.clip / gn
            lr = s.lr * min(1.0, (it + 1) / s.warmup) if s.warmup else s.lr
            opt.step(params, g, lr)
            ema.flat *= s.ema
            ema.flat += (1.0 - s.ema) * params.flat
            window_nll.append(out.nll_per_dim)
        window_gn.append(gn)
        if (it + 1) % eval_every == 0 or it + 1 == iters:
            row = {
                "iter": it + 1,
                "train_nll": float(np.mean(window_nll)) if window_nll else float("nan"),
                "val_nll": evaluate_nll(ema, val_eval, seed) if val_eval is not None and len(val_eval) else float("nan"),
                "grad_norm": float(np.nanmean(window_gn)) if window_gn else float("nan"),
                "skipped": skipped,
            }
            history.append(row)
            if log:
                log(row)
            window_nll, window_gn = [], []
    if iters > 0 and val is not None and len(val) and val_eval is not val:
        history[-1]["val_nll"] = evaluate_nll(ema, val, seed)
    return TrainResult(params, ema, history, iters, skipped)


def write_history_csv(path, history):
    cols = ("iter", "train_nll", "val_nll", "grad_norm", "skipped")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in history:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols) + "\n")


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, params, iteration=0, seed=0, extra=None):
    """``<path>`` JSON header plus ``<path>.bin`` little-endian float64 blob."""
    path = Path(path)
    layout, offset = [], 0
    for name, shape, _ in param_layout(params.config):
        layout.append({"name": name, "shape": list(shape), "offset": offset})
        offset += int(np.prod(shape))
    blob = path.with_name(path.name + ".bin")
    params.to_vector().astype("<f8").tofile(blob)
    header = {
        "format": "multires-hvae-1",
        "config": params.config.to_dict(),
        "iteration": int(iteration),
        "seed": int(seed),
        "blob": blob.name,
        "n_values": offset,
        "layout": layout,
        "extra": extra or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(header, indent=1))
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    path = Path(path)
    header = json.loads(path.read_text())
    config = HvaeConfig.from_dict(header["config"])
    vec = np.fromfile(path.with_name(header["blob"]), dtype="<f8")
    if len(vec) != header["n_values"]:
        raise HvaeError("checkpoint blob size does not match its header")
    params = HvaeParams.from_vector(config, vec)
    for entry in header["layout"]:
        if list(params[entry["name"]].shape) != entry["shape"]:
            raise HvaeError(f"layout mismatch for {entry['name']}")
    return params, header
