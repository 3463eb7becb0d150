"""In-memory user store that turns sparse per-user heatmaps into dense network batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heatmap import ChannelSpec, SparseHeatmap, encode_users, to_flat
from .synth import DAYS, DEMO_CARDINALITIES, HOURS, POINT_GENRES, Cohort, DemographicRecord, channel_genres


@dataclass
class ProfileBatch:
    heat_a: np.ndarray  # (B, 365, 24, C_A)
    heat_b: np.ndarray  # (B, 365, 24, C_B)
    demo: np.ndarray    # (B, demo width)

    def __len__(self) -> int:
        return self.heat_a.shape[0]


def shopping_spec(num_channels: int) -> ChannelSpec:
    return ChannelSpec.by_top_genre(channel_genres(num_channels), "amount")


def points_spec() -> ChannelSpec:
    return ChannelSpec.by_top_genre(POINT_GENRES, "amount")


class UserStore:
    """Per-user flat heatmap cells plus demographic vectors, indexed by cohort row."""

    def __init__(self, heat_a: list[SparseHeatmap], heat_b: list[SparseHeatmap], demos: list[DemographicRecord],
                 spec_a: ChannelSpec, spec_b: ChannelSpec, cardinalities=tuple(DEMO_CARDINALITIES)):
        if not len(heat_a) == len(heat_b) == len(demos):
            raise ValueError("modalities disagree on the number of users")
        self.spec_a, self.spec_b = spec_a, spec_b
        self.c_a, self.c_b = spec_a.num_channels, spec_b.num_channels
        self.flat_a = [to_flat(h, spec_a.transforms) for h in heat_a]
        self.flat_b = [to_flat(h, spec_b.transforms) for h in heat_b]
        self.numeric = np.array([d.numeric_features for d in demos], dtype=np.float64)
        self.cats = np.array([d.categorical_features for d in demos], dtype=np.int64)
        self.cardinalities = tuple(cardinalities)
        self.demo_mean = np.zeros(self.numeric.shape[1])
        self.demo_std = np.ones(self.numeric.shape[1])

    @classmethod
    def from_cohort(cls, cohort: Cohort) -> "UserStore":
        n = cohort.config.num_users
        spec_a = shopping_spec(cohort.config.num_channels)
        spec_b = points_spec()
        ha = encode_users(cohort.events, spec_a, range(n))
        hb = encode_users(cohort.points, spec_b, range(n))
        return cls([ha[u] for u in range(n)], [hb[u] for u in range(n)], cohort.demos, spec_a, spec_b)

    def __len__(self) -> int:
        return len(self.flat_a)

    @property
    def demo_width(self) -> int:
        # standardised numeric + one-hot categoricals + one presence flag per heatmap modality
        return self.numeric.shape[1] + sum(self.cardinalities) + 2

    def fit_demo_stats(self, rows) -> None:
        x = self.numeric[np.asarray(rows, dtype=int)]
        self.demo_mean = x.mean(axis=0)
        self.demo_std = x.std(axis=0) + 1e-6

    def _dense(self, flats, rows, c) -> tuple[np.ndarray, np.ndarray]:
        out = np.zeros((len(rows), DAYS * HOURS * c), dtype=np.float32)
        present = np.zeros(len(rows), dtype=np.float32)
        for i, r in enumerate(rows):
            idx, val = flats[r]
            out[i, idx] = val
            present[i] = 1.0 if len(idx) else 0.0
        return out.reshape(len(rows), DAYS, HOURS, c), present

    def batch(self, rows) -> ProfileBatch:
        rows = np.asarray(rows, dtype=int)
        ha, pa = self._dense(self.flat_a, rows, self.c_a)
        hb, pb = self._dense(self.flat_b, rows, self.c_b)
        num = (self.numeric[rows] - self.demo_mean) / self.demo_std
        onehots = [np.eye(k, dtype=np.float32)[self.cats[rows, j]] for j, k in enumerate(self.cardinalities)]
        demo = np.concatenate([num.astype(np.float32)] + onehots + [pa[:, None], pb[:, None]], axis=1)
        return ProfileBatch(ha, hb, demo.astype(np.float32))

    def payload_digest(self, rows) -> str:
        import hashlib

        h = hashlib.sha256()
        for r in np.asarray(rows, dtype=int):
            for idx, val in (self.flat_a[r], self.flat_b[r]):
                h.update(idx.tobytes())
                h.update(val.tobytes())
            h.update(self.numeric[r].tobytes())
            h.update(self.cats[r].tobytes())
        return h.hexdigest()
