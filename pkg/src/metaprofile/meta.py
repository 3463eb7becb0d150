"""Metric-based meta-learning on top of the profile network.

A query's class distribution is an attention-weighted sum of the one-hot labels of
the support items, with attention = softmax of learned pairwise similarity scores.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import UserStore
from .nn import checkpoint
from .nn.layers import Dense, Layer, ReLU, Sequential
from .nn.losses import sigmoid, softmax
from .nn.optim import Adam, LrSchedule, lr_at
from .profile_net import ProfileNet, ProfileNetConfig, multitask_loss

log = logging.getLogger(__name__)


class EpisodeError(ValueError):
    pass


@dataclass
class Episode:
    support_rows: np.ndarray
    support_classes: np.ndarray
    query_rows: np.ndarray
    query_classes: np.ndarray
    way: int
    shot: int
    class_ids: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "class_ids": [int(c) for c in self.class_ids],
            "support": [[int(r), int(c)] for r, c in zip(self.support_rows, self.support_classes)],
            "query": [[int(r), int(c)] for r, c in zip(self.query_rows, self.query_classes)],
        })


def sample_episode(pools: dict, way: int, shot: int, query_size: int, seed) -> Episode:
    """Sample an N-way K-shot episode from per-class row pools.

    A row listed under several classes is assigned to one of them uniformly at random
    for this episode, so support and query never share a user.
    """
    rng = np.random.default_rng(seed)
    classes = sorted(pools)
    if way > len(classes):
        raise EpisodeError(f"{way}-way episode needs {way} classes, only {len(classes)} available")
    chosen = sorted(rng.choice(len(classes), size=way, replace=False)) if way < len(classes) else range(way)
    chosen = [classes[i] for i in chosen]
    owners: dict[int, list] = {}
    for c in chosen:
        for r in np.asarray(pools[c], dtype=int):
            owners.setdefault(int(r), []).append(c)
    assigned: dict = {c: [] for c in chosen}
    for r in sorted(owners):
        opts = owners[r]
        assigned[opts[0] if len(opts) == 1 else opts[int(rng.integers(len(opts)))]].append(r)
    per_class = np.full(way, query_size // way)
    per_class[rng.permutation(way)[:query_size % way]] += 1
    s_rows, s_cls, q_rows, q_cls = [], [], [], []
    for i, c in enumerate(chosen):
        need = shot + per_class[i]
        pool = assigned[c]
        if len(pool) < need:
            raise EpisodeError(f"class {c!r} has {len(pool)} users, episode needs {need}")
        pick = rng.choice(pool, size=need, replace=False)
        s_rows.extend(pick[:shot])
        s_cls.extend([i] * shot)
        q_rows.extend(pick[shot:])
        q_cls.extend([i] * per_class[i])
    return Episode(np.array(s_rows, dtype=int), np.array(s_cls, dtype=int), np.array(q_rows, dtype=int),
                   np.array(q_cls, dtype=int), way, shot, chosen)


class SimilarityModule(Layer):
    """Fully connected ReLU stack scoring a (query, support) embedding pair."""

    def __init__(self, embedding: int, hidden=(128, 64), seed: int = 0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng([seed, 7])
        layers: list[Layer] = []
        prev = 2 * embedding
        for h in hidden:
            layers += [Dense(prev, h, rng, dtype), ReLU()]
            prev = h
        layers.append(Dense(prev, 1, rng, dtype, gain=1.0))
        self.net = Sequential(layers)
        self.embedding = embedding

    def named_children(self):
        return [("net", self.net)]

    def zero_grad(self):
        self.net.zero_grad()

    def astype(self, dtype):
        self.net.astype(dtype)
        return self

    def forward(self, pairs, train=True):
        return self.net.forward(pairs, train)[:, 0]

    def backward(self, dscore):
        return self.net.backward(dscore[:, None])

    def scores(self, q: np.ndarray, s: np.ndarray, train: bool = False) -> np.ndarray:
        """(Q, E) x (M, E) -> (Q, M) scores, query embedding first in each pair."""
        nq, ns = len(q), len(s)
        pairs = np.concatenate([np.repeat(q, ns, axis=0), np.tile(s, (nq, 1))], axis=1)
        return self.forward(pairs, train).reshape(nq, ns)

    def scores_backward(self, dscores: np.ndarray):
        nq, ns = dscores.shape
        dp = self.backward(dscores.reshape(-1))
        e = self.embedding
        dq = dp[:, :e].reshape(nq, ns, e).sum(axis=1)
        ds = dp[:, e:].reshape(nq, ns, e).sum(axis=0)
        return dq, ds


def attention_predict(scores: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    """Softmax over support scores, then weighted sum of support one-hot labels."""
    return softmax(scores, axis=-1) @ onehot


def predict_query(q_embed: np.ndarray, s_embeds: np.ndarray, s_onehot: np.ndarray, f: SimilarityModule) -> np.ndarray:
    scores = f.scores(np.asarray(q_embed)[None, :], np.asarray(s_embeds), train=False)
    return attention_predict(scores, s_onehot)[0]


def episode_loss(scores: np.ndarray, s_classes: np.ndarray, q_classes: np.ndarray, way: int):
    """Mean -log p(true class) over queries and its gradient w.r.t. the scores."""
    att = softmax(scores.astype(np.float64), axis=-1)
    onehot = np.eye(way)[s_classes]
    p = att @ onehot
    nq = len(q_classes)
    pc = np.maximum(p[np.arange(nq), q_classes], 1e-12)
    loss = float(-np.log(pc).mean())
    same = s_classes[None, :] == q_classes[:, None]
    grad = (att - att * same / pc[:, None]) / nq
    acc = float((p.argmax(axis=1) == q_classes).mean())
    return loss, grad.astype(scores.dtype), acc


class MetaModel(Layer):
    def __init__(self, cfg: ProfileNetConfig, sim_hidden=(128, 64)):
        super().__init__()
        self.backbone = ProfileNet(cfg)
        self.similarity = SimilarityModule(cfg.embedding, sim_hidden, seed=cfg.seed)
        self.sim_hidden = tuple(sim_hidden)

    def named_children(self):
        return [("backbone", self.backbone), ("similarity", self.similarity)]

    def zero_grad(self):
        self.backbone.zero_grad()
        self.similarity.zero_grad()

    def digest(self) -> str:
        return checkpoint.digest(self.state())

    def save(self, path) -> str:
        return checkpoint.save(path, self.state())

    def embed_rows(self, store: UserStore, rows, batch_size: int = 64) -> np.ndarray:
        rows = np.asarray(rows, dtype=int)
        out = [self.backbone.embed(store.batch(rows[i:i + batch_size]), train=False)
               for i in range(0, len(rows), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.backbone.cfg.embedding), np.float32)


@dataclass
class EpisodeConfig:
    way: int = 9
    shot: int = 1
    query_size: int = 18
    episodes: int = 300
    lr: float = 1e-3
    backbone_lr_scale: float = 0.1
    schedule: dict | None = None

    def lr_schedule(self) -> LrSchedule:
        if self.schedule:
            return LrSchedule.from_dict(self.schedule)
        return LrSchedule("cosine_warm_restarts", lr_max=self.lr, T_0=max(1, self.episodes // 3), T_mult=2)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetaTrainLog:
    losses: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    episodes: list[str] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("step,lr,loss,accuracy\n")
            for i, (lr, loss, acc) in enumerate(zip(self.lrs, self.losses, self.accuracy)):
                fh.write(f"{i},{lr!r},{loss!r},{acc!r}\n")


def train_episode(model: MetaModel, store: UserStore, ep: Episode, lr: float, backbone_scale: float,
                  sim_opt: Adam, bb_opt: Adam | None):
    rows = np.concatenate([ep.support_rows, ep.query_rows])
    # a frozen run (lr 0) must not touch batch-norm running statistics either
    train = lr > 0
    model.zero_grad()
    emb, _ = model.backbone.forward(store.batch(rows), train=train)
    m = len(ep.support_rows)
    scores = model.similarity.scores(emb[m:], emb[:m], train=train)
    loss, dscores, acc = episode_loss(scores, ep.support_classes, ep.query_classes, ep.way)
    dq, ds = model.similarity.scores_backward(dscores)
    if lr > 0:
        sim_opt.step(list(model.similarity.named_params()), lr)
        if bb_opt is not None and backbone_scale > 0:
            model.backbone.backward(d_emb=np.concatenate([ds, dq]).astype(emb.dtype))
            bb_opt.step(list(model.backbone.named_params()), lr * backbone_scale)
    return loss, acc


def meta_train(model: MetaModel, store: UserStore, pools: dict, cfg: EpisodeConfig, seed: int = 0,
               trace=None) -> MetaTrainLog:
    """Episodic training of the similarity module (and, scaled, the backbone).

    ``pools`` maps class id to candidate rows; ``trace`` may be a file-like object that
    receives one JSON line per episode.
    """
    schedule = cfg.lr_schedule()
    sim_opt, bb_opt = Adam(), Adam()
    out = MetaTrainLog()
    for i in range(cfg.episodes):
        ep = sample_episode(pools, cfg.way, cfg.shot, cfg.query_size, [seed, i])
        lr = lr_at(schedule, i) if cfg.lr > 0 else 0.0
        loss, acc = train_episode(model, store, ep, lr, cfg.backbone_lr_scale, sim_opt, bb_opt)
        out.losses.append(loss)
        out.accuracy.append(acc)
        out.lrs.append(lr)
        if trace is not None:
            trace.write(ep.to_json() + "\n")
        if (i + 1) % 50 == 0:
            log.info("episode %d loss %.4f acc %.3f", i + 1, np.mean(out.losses[-50:]), np.mean(out.accuracy[-50:]))
    return out


def meta_test(model: MetaModel, store: UserStore, support_rows, support_classes, predict_rows,
              num_classes: int | None = None, predict_embeds: np.ndarray | None = None) -> np.ndarray:
    """Feed-forward scoring: (len(predict_rows), N) class probabilities; no parameter updates."""
    support_rows = np.asarray(support_rows, dtype=int)
    if len(support_rows) == 0:
        raise EpisodeError("empty support set")
    support_classes = np.asarray(support_classes, dtype=int)
    n = num_classes or int(support_classes.max()) + 1
    s_emb = model.embed_rows(store, support_rows)
    q_emb = predict_embeds if predict_embeds is not None else model.embed_rows(store, predict_rows)
    return score_embeddings(model.similarity, q_emb, s_emb, support_classes, n)


def score_embeddings(sim: SimilarityModule, q_emb: np.ndarray, s_emb: np.ndarray, s_classes: np.ndarray,
                     num_classes: int, chunk: int = 256) -> np.ndarray:
    onehot = np.eye(num_classes)[np.asarray(s_classes, dtype=int)]
    out = [attention_predict(sim.scores(q_emb[i:i + chunk], s_emb).astype(np.float64), onehot)
           for i in range(0, len(q_emb), chunk)]
    return np.concatenate(out) if out else np.zeros((0, num_classes))


def binary_pools(rows, y) -> dict:
    rows = np.asarray(rows, dtype=int)
    y = np.asarray(y)
    return {0: rows[y == 0], 1: rows[y == 1]}


@dataclass
class BaselineConfig:
    """Normal training: the profile network with a single sigmoid head, fit on target labels only."""

    steps: int = 40
    batch_size: int = 32
    lr: float = 1e-3

    def to_dict(self) -> dict:
        return asdict(self)


def train_baseline(store: UserStore, net_cfg: ProfileNetConfig, rows, y, cfg: BaselineConfig,
                   seed: int = 0) -> ProfileNet:
    """Fresh single-task network trained with BCE for a fixed number of steps.

    Fewer than two labeled rows leaves the network at its initialisation (batch norm
    needs two samples).
    """
    net = ProfileNet(ProfileNetConfig.from_dict({**net_cfg.to_dict(), "num_tasks": 1, "seed": int(seed)}))
    rows = np.asarray(rows, dtype=int)
    y = np.asarray(y, dtype=np.float32).reshape(-1, 1)
    if len(rows) < 2:
        return net
    bs = min(cfg.batch_size, len(rows))
    opt = Adam()
    named = list(net.named_params())
    schedule = LrSchedule("cosine_warm_restarts", lr_max=cfg.lr, T_0=max(1, cfg.steps), T_mult=1)
    rng = np.random.default_rng([seed, len(rows)])
    order = rng.permutation(len(rows))
    pos = 0
    for step in range(cfg.steps):
        if pos + bs > len(rows):
            order, pos = rng.permutation(len(rows)), 0
        pick = order[pos:pos + bs]
        pos += bs
        net.zero_grad()
        _, logits = net.forward(store.batch(rows[pick]), train=True)
        _, grad = multitask_loss(logits, y[pick], np.ones_like(logits))
        net.backward(d_logits=grad)
        opt.step(named, lr_at(schedule, step))
    return net


def baseline_predict(net: ProfileNet, store: UserStore, rows, batch_size: int = 64) -> np.ndarray:
    """Positive-class probability per row."""
    rows = np.asarray(rows, dtype=int)
    out = [sigmoid(net.forward(store.batch(rows[i:i + batch_size]), train=False)[1][:, 0].astype(np.float64))
           for i in range(0, len(rows), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def payload_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
