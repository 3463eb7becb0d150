"""Multi-modal profile network: two heatmap CNN branches, a demographic MLP, a fusion
layer producing the user embedding, and one sigmoid head per source task."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ProfileBatch, UserStore
from .nn import checkpoint
from .nn.layers import BatchNorm, Conv2D, Dense, Flatten, Layer, MaxPool2D, ReLU, Sequential, ShapeError
from .nn.losses import sigmoid_bce
from .nn.optim import Adam, LrSchedule, PhasedSchedule, lr_at
from .synth import DAYS, HOURS, LabelMatrix

log = logging.getLogger(__name__)

KERNELS = ((7, 2), (4, 2), (3, 2), (1, 1))
POOLS = ((7, 2), (4, 2), (3, 2), (4, 3))
FULL_FILTERS = (64, 128, 256, 512)


@dataclass
class ProfileNetConfig:
    channels_a: int = 4
    channels_b: int = 3
    demo_width: int = 18
    filters: tuple[int, ...] = FULL_FILTERS
    demo_hidden: int = 64
    embedding: int = 512
    num_tasks: int = 9
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        self.filters = tuple(int(f) for f in self.filters)
        if len(self.filters) != len(KERNELS):
            raise ValueError(f"need {len(KERNELS)} filter widths")
        vals = [self.channels_a, self.channels_b, self.demo_width, self.demo_hidden, self.embedding,
                self.num_tasks, self.batch_size, *self.filters]
        if min(vals) < 1:
            raise ValueError("all widths must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileNetConfig":
        return cls(**d)


def build_branch(cin: int, filters, rng: np.random.Generator, dtype=np.float32) -> Sequential:
    """Four conv -> batch norm -> ReLU -> max-pool levels, then flatten."""
    layers: list[Layer] = []
    prev = cin
    for level, ((kh, kw), (ph, pw), f) in enumerate(zip(KERNELS, POOLS, filters)):
        layers += [
            Conv2D(kh, kw, prev, f, rng, dtype, input_layer=(level == 0)),
            BatchNorm(f, dtype=dtype),
            ReLU(),
            MaxPool2D(ph, pw),
        ]
        prev = f
    layers.append(Flatten())
    return Sequential(layers)


def forward_branch(x: np.ndarray, branch: Sequential, train: bool = True) -> np.ndarray:
    if x.ndim != 4 or x.shape[1:3] != (DAYS, HOURS):
        raise ShapeError(f"branch input must be (B, {DAYS}, {HOURS}, C), got {x.shape}")
    return branch.forward(x, train)


class ProfileNet(Layer):
    def __init__(self, cfg: ProfileNetConfig, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.branch_a = build_branch(cfg.channels_a, cfg.filters, rng, dtype)
        self.branch_b = build_branch(cfg.channels_b, cfg.filters, rng, dtype)
        self.demo = Sequential([Dense(cfg.demo_width, cfg.demo_hidden, rng, dtype), ReLU(),
                                Dense(cfg.demo_hidden, cfg.demo_hidden, rng, dtype), ReLU()])
        fused = 2 * cfg.filters[-1] + cfg.demo_hidden
        self.fusion = Sequential([Dense(fused, cfg.embedding, rng, dtype), ReLU()])
        self.heads = Dense(cfg.embedding, cfg.num_tasks, rng, dtype, gain=1.0)
        self._split = None

    def named_children(self):
        return [("branch_a", self.branch_a), ("branch_b", self.branch_b), ("demo", self.demo),
                ("fusion", self.fusion), ("heads", self.heads)]

    def zero_grad(self):
        for _, c in self.named_children():
            c.zero_grad()

    def astype(self, dtype):
        for _, c in self.named_children():
            c.astype(dtype)
        return self

    def parameter_count(self) -> int:
        return sum(p[k].size for _, p, _, k in self.named_params())

    def forward(self, batch: ProfileBatch, train: bool = True):
        b = len(batch)
        if batch.heat_b.shape[0] != b or batch.demo.shape[0] != b:
            raise ShapeError("modalities disagree on batch size")
        if batch.demo.shape[1] != self.cfg.demo_width:
            raise ShapeError(f"demographic input must have width {self.cfg.demo_width}, got {batch.demo.shape[1]}")
        ea = forward_branch(batch.heat_a, self.branch_a, train)
        eb = forward_branch(batch.heat_b, self.branch_b, train)
        ed = self.demo.forward(batch.demo, train)
        self._split = (ea.shape[1], eb.shape[1])
        emb = self.fusion.forward(np.concatenate([ea, eb, ed], axis=1), train)
        logits = self.heads.forward(emb, train)
        return emb, logits

    def embed(self, batch: ProfileBatch, train: bool = False) -> np.ndarray:
        return self.forward(batch, train)[0]

    def backward(self, d_emb=None, d_logits=None):
        if d_logits is not None:
            g = self.heads.backward(d_logits)
            d_emb = g if d_emb is None else d_emb + g
        d_cat = self.fusion.backward(d_emb)
        na, nb = self._split
        self.branch_a.backward(np.ascontiguousarray(d_cat[:, :na]))
        self.branch_b.backward(np.ascontiguousarray(d_cat[:, na:na + nb]))
        self.demo.backward(np.ascontiguousarray(d_cat[:, na + nb:]))

    def save(self, path: str | Path, prefix: str = "") -> str:
        return checkpoint.save(path, self.state(prefix))


def task_weights(mask: np.ndarray) -> np.ndarray:
    """w_ni / sum_i w_ni per task column; columns without labels get all-zero weights."""
    w = np.asarray(mask, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("task weights must be non-negative")
    tot = w.sum(axis=0, keepdims=True)
    return np.divide(w, tot, out=np.zeros_like(w), where=tot > 0)


def multitask_loss(logits: np.ndarray, labels: np.ndarray, w: np.ndarray):
    """Per-task weighted-mean BCE summed over tasks. Returns (J, dJ/dlogits)."""
    logits = np.asarray(logits)
    if logits.shape != np.shape(labels) or logits.shape != np.shape(w):
        raise ValueError(f"shape mismatch: logits {logits.shape}, labels {np.shape(labels)}, weights {np.shape(w)}")
    loss, grad = sigmoid_bce(logits, labels, task_weights(w).astype(logits.dtype))
    return loss, grad


@dataclass
class TrainLog:
    steps: list[tuple[int, float, float]] = field(default_factory=list)
    epochs: list[float] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("step,lr,loss\n")
            for step, lr, loss in self.steps:
                fh.write(f"{step},{lr!r},{loss!r}\n")


def default_schedule(steps_per_epoch: int, epochs: int) -> PhasedSchedule:
    """Triangular cyclic LR for the first half of training, cosine warm restarts after."""
    spe = max(1, steps_per_epoch)
    cyc_steps = max(1, (epochs // 2) * spe)
    return PhasedSchedule([
        (LrSchedule("cyclic_triangular", base_lr=1e-4, max_lr=1e-3, step_size=2 * spe), cyc_steps),
        (LrSchedule("cosine_warm_restarts", lr_max=1e-3, T_0=max(1, min(10, epochs) * spe // 2), T_mult=2), 0),
    ])


def train_multitask(net: ProfileNet, store: UserStore, rows, labels: LabelMatrix, epochs: int,
                    schedule=None, seed: int = 0, batch_size: int | None = None, log_every: int = 0) -> TrainLog:
    """Multi-task pretraining on source-task labels. ``labels`` rows align with ``rows``."""
    rows = np.asarray(rows, dtype=int)
    if len(rows) == 0:
        raise ValueError("empty training set")
    if labels.shape != (len(rows), net.cfg.num_tasks):
        raise ValueError(f"labels must be ({len(rows)}, {net.cfg.num_tasks}), got {labels.shape}")
    bs = batch_size or net.cfg.batch_size
    spe = -(-len(rows) // bs)
    schedule = schedule or default_schedule(spe, epochs)
    opt = Adam()
    out = TrainLog()
    step = 0
    named = list(net.named_params())
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(rows))
        total, count = 0.0, 0
        for s in range(spe):
            pick = order[s * bs:(s + 1) * bs]
            lr = lr_at(schedule, step)
            w = labels.mask[pick].astype(np.float32)
            if w.sum() == 0:
                # nothing observed: no forward pass, so batch-norm statistics stay untouched too
                out.steps.append((step, lr, 0.0))
                step += 1
                continue
            batch = store.batch(rows[pick])
            net.zero_grad()
            _, logits = net.forward(batch, train=True)
            loss, grad = multitask_loss(logits, labels.labels[pick].astype(np.float32), w)
            net.backward(d_logits=grad)
            opt.step(named, lr)
            out.steps.append((step, lr, loss))
            total += loss
            count += 1
            step += 1
            if log_every and step % log_every == 0:
                log.info("pretrain step %d lr %.2e loss %.4f", step, lr, loss)
        out.epochs.append(total / max(count, 1))
        log.info("pretrain epoch %d loss %.4f", epoch, out.epochs[-1])
    return out


def save_config(path: str | Path, cfg: ProfileNetConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
