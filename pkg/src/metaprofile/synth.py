"""Synthetic user cohorts: shopping logs, point-usage logs, demographics and task labels.

Every user belongs to exactly one archetype. The archetype fixes the slow-moving
shape of a year of behaviour (channel mix, time of day, seasonality, spend), and
task labels are noisy functions of the archetype plus a few behavioural aggregates.
Archetypes listed in ``ood_archetype_ids`` never enter training splits and serve
as the out-of-distribution population.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

DAYS = 365
HOURS = 24
BASE_DATE = dt.date(2019, 1, 1)

SHOP_GENRES: dict[str, list[str]] = {
    "fashion": ["tops/shirts/blouses", "outerwear/coat", "bottoms/skirt"],
    "beauty": ["makeup/lipstick", "skincare/lotion", "fragrance/perfume"],
    "household": ["bedding/cushion/cushion", "kitchen/pan", "storage/box"],
    "electronics": ["audio/headphones", "pc/keyboard", "camera/lens"],
    "food": ["snacks/chocolate", "drinks/tea", "rice/brown"],
    "books": ["comics/manga", "novels/mystery", "magazines/weekly"],
    "shoes": ["sandals/straps", "sneakers/running", "boots/leather"],
    "sports": ["outdoor/tent", "fitness/yoga", "golf/balls"],
}
POINT_GENRES = ["points/standard", "points/limited", "points/used"]

DEMO_NUMERIC = ["age", "tenure_years"]
DEMO_CARDINALITIES = [2, 8, 4]  # gender, region, membership rank


class ConfigError(ValueError):
    """Raised for cohort configurations that cannot be generated."""


class SplitError(ValueError):
    """Raised when a cohort cannot be split as requested."""


@dataclass(frozen=True, slots=True)
class EventRecord:
    user_id: int
    price: int
    day: int
    hour: int
    genre_path: tuple[str, ...]

    @property
    def genre(self) -> str:
        return "/".join(self.genre_path)


@dataclass
class UserArchetype:
    archetype_id: int
    channel_affinity: np.ndarray
    hour_profile: np.ndarray
    seasonality: np.ndarray
    mean_events_per_year: float
    price_log_mean: float
    price_log_sd: float
    point_affinity: np.ndarray = field(default_factory=lambda: np.full(3, 1 / 3))
    mean_points_per_year: float = 0.0
    genres: tuple[str, ...] = ()

    def validate(self) -> None:
        for name in ("channel_affinity", "hour_profile", "point_affinity"):
            p = np.asarray(getattr(self, name), dtype=float)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ConfigError(f"archetype {self.archetype_id}: {name} is not a probability vector")
        if len(self.hour_profile) != HOURS:
            raise ConfigError(f"archetype {self.archetype_id}: hour_profile needs {HOURS} entries")
        if len(self.seasonality) != DAYS or np.any(np.asarray(self.seasonality) < 0):
            raise ConfigError(f"archetype {self.archetype_id}: seasonality needs {DAYS} non-negative values")
        if self.mean_events_per_year < 0 or self.mean_points_per_year < 0 or self.price_log_sd < 0:
            raise ConfigError(f"archetype {self.archetype_id}: negative intensity")
        if self.genres and len(self.genres) != len(self.channel_affinity):
            raise ConfigError(f"archetype {self.archetype_id}: one genre per channel required")


@dataclass
class CohortConfig:
    num_users: int = 2000
    num_channels: int = 4
    num_archetypes: int = 12
    num_source_tasks: int = 9
    num_target_tasks: int = 8
    seed: int = 0
    ood_archetype_ids: tuple[int, ...] = (10, 11)
    ood_fraction: float = 0.1
    label_density: float = 0.7
    label_noise: float = 0.02

    def validate(self) -> None:
        if self.num_users <= 0:
            raise ConfigError("num_users must be positive")
        if not 1 <= self.num_channels <= len(SHOP_GENRES):
            raise ConfigError(f"num_channels must be in [1, {len(SHOP_GENRES)}]")
        if self.num_archetypes < 2:
            raise ConfigError("num_archetypes must be at least 2")
        if self.num_source_tasks < 1:
            raise ConfigError("num_source_tasks must be at least 1")
        if self.num_target_tasks < 0:
            raise ConfigError("num_target_tasks must be non-negative")
        ood = set(self.ood_archetype_ids)
        if not ood <= set(range(self.num_archetypes)):
            raise ConfigError("ood_archetype_ids must be archetype ids")
        if len(ood) >= self.num_archetypes:
            raise ConfigError("at least one in-distribution archetype is required")
        if not 0.0 <= self.ood_fraction < 1.0:
            raise ConfigError("ood_fraction must be in [0, 1)")
        if not 0.0 < self.label_density <= 1.0:
            raise ConfigError("label_density must be in (0, 1]")
        if not 0.0 <= self.label_noise < 0.5:
            raise ConfigError("label_noise must be in [0, 0.5)")

    @classmethod
    def from_json(cls, path: str | Path) -> "CohortConfig":
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown cohort config keys: {sorted(unknown)}")
        if "ood_archetype_ids" in raw:
            raw["ood_archetype_ids"] = tuple(raw["ood_archetype_ids"])
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        d = asdict(self)
        d["ood_archetype_ids"] = list(self.ood_archetype_ids)
        return json.dumps(d, indent=2, sort_keys=True)


@dataclass
class DemographicRecord:
    user_id: int
    numeric_features: np.ndarray
    categorical_features: np.ndarray
    cardinalities: tuple[int, ...] = tuple(DEMO_CARDINALITIES)

    def __post_init__(self) -> None:
        cats = np.asarray(self.categorical_features)
        if len(cats) != len(self.cardinalities) or np.any(cats < 0) or np.any(cats >= self.cardinalities):
            raise ConfigError(f"user {self.user_id}: category index out of range")


@dataclass
class LabelMatrix:
    """Binary labels with an observation mask (1 = label observed)."""

    labels: np.ndarray
    mask: np.ndarray
    user_ids: np.ndarray
    task_names: list[str]

    def __post_init__(self) -> None:
        if self.labels.shape != self.mask.shape or self.labels.shape != (len(self.user_ids), len(self.task_names)):
            raise ValueError("label matrix dimensions disagree")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def select(self, rows=None, tasks=None) -> "LabelMatrix":
        rows = np.arange(len(self.user_ids)) if rows is None else np.asarray(rows, dtype=int)
        tasks = list(range(len(self.task_names))) if tasks is None else list(tasks)
        return LabelMatrix(
            self.labels[np.ix_(rows, tasks)],
            self.mask[np.ix_(rows, tasks)],
            self.user_ids[rows],
            [self.task_names[t] for t in tasks],
        )


@dataclass
class Cohort:
    config: CohortConfig
    archetypes: list[UserArchetype]
    archetype_ids: np.ndarray
    events: list[EventRecord]
    points: list[EventRecord]
    demos: list[DemographicRecord]
    labels: LabelMatrix
    source_tasks: list[int]
    target_tasks: list[int]

    def __iter__(self):
        # unpacks as (events, points, demos, labels)
        return iter((self.events, self.points, self.demos, self.labels))

    @property
    def ood_mask(self) -> np.ndarray:
        return np.isin(self.archetype_ids, list(self.config.ood_archetype_ids))


_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def user_seed(seed: int, user_id: int, stream: int = 0) -> int:
    """Per-user sub-seed: splitmix64(seed) mixed with user id and stream tag."""
    return splitmix64(splitmix64(seed & _MASK64) ^ splitmix64((user_id << 8 | stream) & _MASK64))


def _rng(seed: int, user_id: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(user_seed(seed, user_id, stream))


def channel_genres(num_channels: int) -> list[str]:
    return list(SHOP_GENRES)[:num_channels]


def sample_user_events(archetype: UserArchetype, year_seed: int, user_id: int = 0) -> list[EventRecord]:
    """Draw one year of shopping events for a user of ``archetype``."""
    archetype.validate()
    rng = np.random.default_rng(year_seed)
    season = np.asarray(archetype.seasonality, dtype=float)
    rate = archetype.mean_events_per_year * float(season.mean())
    n = int(rng.poisson(rate)) if rate > 0 else 0
    if n == 0:
        return []
    genres = archetype.genres or tuple(channel_genres(len(archetype.channel_affinity)))
    days = rng.choice(DAYS, size=n, p=season / season.sum())
    hours = rng.choice(HOURS, size=n, p=archetype.hour_profile)
    chans = rng.choice(len(archetype.channel_affinity), size=n, p=archetype.channel_affinity)
    leaves = rng.integers(0, 3, size=n)
    prices = np.rint(np.exp(rng.normal(archetype.price_log_mean, archetype.price_log_sd, size=n)))
    out = []
    for d, h, c, leaf, p in zip(days, hours, chans, leaves, prices):
        top = genres[c]
        sub = SHOP_GENRES[top][leaf % len(SHOP_GENRES[top])] if top in SHOP_GENRES else "misc"
        out.append(EventRecord(user_id, int(p), int(d), int(h), tuple([top] + sub.split("/"))))
    out.sort(key=lambda e: (e.day, e.hour, e.genre_path))
    return out


def _sample_point_events(arche: UserArchetype, intensity: float, seed: int, user_id: int) -> list[EventRecord]:
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(arche.mean_points_per_year * intensity))
    if n == 0:
        return []
    days = rng.choice(DAYS, size=n, p=arche.seasonality / arche.seasonality.sum())
    hours = rng.choice(HOURS, size=n, p=arche.hour_profile)
    kinds = rng.choice(len(POINT_GENRES), size=n, p=arche.point_affinity)
    amounts = np.rint(np.exp(rng.normal(arche.price_log_mean - 2.0, 0.7, size=n)))
    out = [
        EventRecord(user_id, int(a), int(d), int(h), tuple(POINT_GENRES[k].split("/")))
        for d, h, k, a in zip(days, hours, kinds, amounts)
    ]
    out.sort(key=lambda e: (e.day, e.hour, e.genre_path))
    return out


def _hour_profile(peak: float, kappa: float) -> np.ndarray:
    h = np.arange(HOURS)
    p = np.exp(kappa * np.cos(2 * np.pi * (h - peak) / HOURS))
    return p / p.sum()


def make_archetypes(cfg: CohortConfig) -> list[UserArchetype]:
    """Archetype table for a cohort; OOD archetypes are night-time, high-price shoppers."""
    rng = np.random.default_rng(splitmix64(cfg.seed ^ 0xA5C3))
    genres = tuple(channel_genres(cfg.num_channels))
    days = np.arange(DAYS)
    out = []
    for a in range(cfg.num_archetypes):
        ood = a in cfg.ood_archetype_ids
        # in-distribution archetypes own a dominant channel so channel mix identifies them
        alpha = np.full(cfg.num_channels, 0.4)
        affinity = rng.dirichlet(alpha)
        dominant = a % cfg.num_channels
        affinity = 0.5 * affinity + 0.5 * np.eye(cfg.num_channels)[dominant]
        peak = rng.uniform(0.0, 5.0) if ood else 8.0 + 15.0 * ((a * 7) % 10) / 10.0 + rng.uniform(-0.7, 0.7)
        hours = _hour_profile(peak, rng.uniform(2.0, 4.0))
        amp = rng.uniform(0.0, 0.7)
        phase = rng.uniform(0, DAYS)
        season = 1.0 + amp * np.cos(2 * np.pi * (days - phase) / DAYS)
        sale = int(rng.integers(0, DAYS - 7))
        season[sale:sale + 7] *= 2.5
        out.append(UserArchetype(
            archetype_id=a,
            channel_affinity=affinity / affinity.sum(),
            hour_profile=hours,
            seasonality=season,
            mean_events_per_year=float(np.exp(rng.uniform(np.log(25), np.log(140)))),
            price_log_mean=float(rng.normal(7.6, 0.45) + (1.2 if ood else 0.0)),
            price_log_sd=float(rng.uniform(0.35, 0.7)),
            point_affinity=rng.dirichlet(np.full(len(POINT_GENRES), 0.8)),
            mean_points_per_year=float(np.exp(rng.uniform(np.log(8), np.log(60)))),
            genres=genres,
        ))
        out[-1].point_affinity = out[-1].point_affinity / out[-1].point_affinity.sum()
    return out


def _assign_archetypes(cfg: CohortConfig) -> np.ndarray:
    rng = np.random.default_rng(splitmix64(cfg.seed ^ 0x51A7))
    ood = sorted(cfg.ood_archetype_ids)
    ind = [a for a in range(cfg.num_archetypes) if a not in cfg.ood_archetype_ids]
    n_ood = int(round(cfg.ood_fraction * cfg.num_users)) if ood else 0
    ids = np.concatenate([
        np.array(ind)[np.arange(cfg.num_users - n_ood) % len(ind)],
        np.array(ood, dtype=int)[np.arange(n_ood) % len(ood)] if n_ood else np.zeros(0, dtype=int),
    ])
    return rng.permutation(ids)


def _personalise(arche: UserArchetype, rng: np.random.Generator) -> tuple[UserArchetype, float]:
    intensity = float(np.exp(rng.normal(0.0, 0.3)))
    aff = 0.85 * arche.channel_affinity + 0.15 * rng.dirichlet(np.ones(len(arche.channel_affinity)))
    user = UserArchetype(
        archetype_id=arche.archetype_id,
        channel_affinity=aff / aff.sum(),
        hour_profile=arche.hour_profile,
        seasonality=arche.seasonality,
        mean_events_per_year=arche.mean_events_per_year * intensity,
        price_log_mean=arche.price_log_mean + float(rng.normal(0.0, 0.15)),
        price_log_sd=arche.price_log_sd,
        point_affinity=arche.point_affinity,
        mean_points_per_year=arche.mean_points_per_year,
        genres=arche.genres,
    )
    return user, intensity


def behaviour_aggregates(events: list[EventRecord], points: list[EventRecord], num_channels: int) -> np.ndarray:
    """Hand-crafted per-user aggregates: channel shares, hour-band shares, volume, spend."""
    genres = channel_genres(num_channels)
    ch = np.zeros(num_channels)
    bands = np.zeros(6)
    spend = 0.0
    for e in events:
        if e.genre_path[0] in genres:
            ch[genres.index(e.genre_path[0])] += 1
        bands[e.hour // 4] += 1
        spend += e.price
    pt = np.zeros(len(POINT_GENRES))
    for e in points:
        pt[POINT_GENRES.index(e.genre)] += 1
    n = max(len(events), 1)
    return np.concatenate([ch / n, bands / n, pt / max(len(points), 1),
                           [np.log1p(len(events)), np.log1p(spend / n), np.log1p(len(points))]])


def _demographics(user_id: int, arche_id: int, cfg: CohortConfig, rng: np.random.Generator) -> DemographicRecord:
    arng = np.random.default_rng(splitmix64(cfg.seed ^ 0xDE30 ^ (arche_id << 16)))
    age_mean = arng.uniform(25, 60)
    tenure_mean = arng.uniform(1, 8)
    gender_p = arng.uniform(0.2, 0.8)
    rank_p = arng.dirichlet(np.ones(4))
    numeric = np.array([rng.normal(age_mean, 9.0), rng.exponential(tenure_mean)])
    cats = np.array([int(rng.random() < gender_p), int(rng.integers(0, 8)), int(rng.choice(4, p=rank_p))])
    return DemographicRecord(user_id, numeric, cats)


def _task_labels(cfg: CohortConfig, arche_ids: np.ndarray, aggregates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(splitmix64(cfg.seed ^ 0x1AB5))
    n = len(arche_ids)
    ind = [a for a in range(cfg.num_archetypes) if a not in cfg.ood_archetype_ids]
    z = (aggregates - aggregates.mean(0)) / (aggregates.std(0) + 1e-9)
    spend_z = z[:, -2]
    volume_z = z[:, -3]
    cols = []
    for t in range(cfg.num_source_tasks):
        primary = ind[t % len(ind)]
        logit = np.where(arche_ids == primary, 2.2, -4.0) + 0.4 * spend_z + rng.normal(0, 0.3, n)
        cols.append(logit)
    for t in range(cfg.num_target_tasks):
        # each target task is a brand whose users concentrate in two in-distribution archetypes
        pos = {ind[t % len(ind)], ind[(t * 3 + 4) % len(ind)]}
        if len(pos) == 1:
            pos.add(ind[(t + 1) % len(ind)])
        logit = np.where(np.isin(arche_ids, list(pos)), 1.6, -3.2) + 0.5 * volume_z + rng.normal(0, 0.3, n)
        cols.append(logit)
    logits = np.stack(cols, axis=1)
    labels = (rng.random(logits.shape) < 1.0 / (1.0 + np.exp(-logits))).astype(np.int8)
    flips = rng.random(labels.shape) < cfg.label_noise
    labels = np.where(flips, 1 - labels, labels).astype(np.int8)
    mask = np.ones_like(labels)
    src = slice(0, cfg.num_source_tasks)
    mask[:, src] = (rng.random((n, cfg.num_source_tasks)) < cfg.label_density).astype(np.int8)
    return labels, mask


def generate_cohort(cfg: CohortConfig) -> Cohort:
    """Generate a full cohort; identical seeds give identical cohorts."""
    cfg.validate()
    archetypes = make_archetypes(cfg)
    arche_ids = _assign_archetypes(cfg)
    events: list[EventRecord] = []
    points: list[EventRecord] = []
    demos: list[DemographicRecord] = []
    aggs = []
    for uid, a in enumerate(arche_ids):
        user, intensity = _personalise(archetypes[a], _rng(cfg.seed, uid, 0))
        ev = sample_user_events(user, user_seed(cfg.seed, uid, 1), user_id=uid)
        pt = _sample_point_events(user, intensity, user_seed(cfg.seed, uid, 2), uid)
        demos.append(_demographics(uid, int(a), cfg, _rng(cfg.seed, uid, 3)))
        aggs.append(behaviour_aggregates(ev, pt, cfg.num_channels))
        events.extend(ev)
        points.extend(pt)
    labels, mask = _task_labels(cfg, arche_ids, np.array(aggs))
    names = [f"source_{t}" for t in range(cfg.num_source_tasks)] + [f"target_{t}" for t in range(cfg.num_target_tasks)]
    lm = LabelMatrix(labels, mask, np.arange(cfg.num_users), names)
    return Cohort(
        config=cfg,
        archetypes=archetypes,
        archetype_ids=arche_ids,
        events=events,
        points=points,
        demos=demos,
        labels=lm,
        source_tasks=list(range(cfg.num_source_tasks)),
        target_tasks=list(range(cfg.num_source_tasks, cfg.num_source_tasks + cfg.num_target_tasks)),
    )


@dataclass
class CohortSplit:
    train: np.ndarray
    support: np.ndarray
    predict: np.ndarray
    source_tasks: list[int]
    target_tasks: list[int]

    def train_labels(self, labels: LabelMatrix) -> LabelMatrix:
        return labels.select(self.train, self.source_tasks)

    def support_labels(self, labels: LabelMatrix) -> LabelMatrix:
        return labels.select(self.support, self.target_tasks)

    def predict_labels(self, labels: LabelMatrix) -> LabelMatrix:
        return labels.select(self.predict, self.target_tasks)


def split_cohort(
    labels: LabelMatrix,
    source_tasks: list[int],
    target_tasks: list[int],
    fractions: tuple[float, float, float],
    shots: int | None = None,
    seed: int = 0,
    rows: np.ndarray | None = None,
) -> CohortSplit:
    """Split users into disjoint training, support and prediction sets.

    With ``shots`` set, the support set holds exactly ``shots`` observed positives and
    negatives for every target task, drawn from the support fraction of users.
    """
    if set(source_tasks) & set(target_tasks):
        raise SplitError("source and target task sets overlap")
    f = [float(x) for x in fractions]
    if len(f) != 3 or min(f) < 0 or sum(f) > 1.0 + 1e-12:
        raise SplitError(f"invalid split fractions {fractions}")
    rows = np.arange(labels.shape[0]) if rows is None else np.asarray(rows, dtype=int)
    perm = np.random.default_rng(splitmix64(seed ^ 0x5B17)).permutation(rows)
    n = len(perm)
    n_train, n_sup, n_pred = (int(np.floor(x * n + 1e-9)) for x in f)
    train = np.sort(perm[:n_train])
    pool = perm[n_train:n_train + n_sup]
    predict = np.sort(perm[n_train + n_sup:n_train + n_sup + n_pred])
    if shots is None:
        support = np.sort(pool)
    else:
        chosen: list[int] = []
        taken: set[int] = set()
        for t in target_tasks:
            for cls in (1, 0):
                hits = [int(r) for r in pool
                        if r not in taken and labels.mask[r, t] and labels.labels[r, t] == cls]
                if len(hits) < shots:
                    raise SplitError(
                        f"task {labels.task_names[t]}: only {len(hits)} users of class {cls} for {shots} shots")
                chosen.extend(hits[:shots])
                taken.update(hits[:shots])
        support = np.array(chosen, dtype=int)
    return CohortSplit(train, support, predict, list(source_tasks), list(target_tasks))


def _datetime(day: int, hour: int) -> str:
    return f"{(BASE_DATE + dt.timedelta(days=day)).isoformat()}T{hour:02d}:00:00"


def write_events_csv(path: str | Path, events: list[EventRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "price", "datetime", "genre_path"])
        for e in events:
            w.writerow([e.user_id, e.price, _datetime(e.day, e.hour), e.genre])


def read_events_csv(path: str | Path) -> list[EventRecord]:
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["user_id", "price", "datetime", "genre_path"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(r, start=2):
            try:
                uid, price, stamp, genre = row
                when = dt.datetime.fromisoformat(stamp)
                day = when.timetuple().tm_yday - 1
                price_v = float(price)
                price_i = int(price_v) if price_v.is_integer() else price_v
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if price_v < 0 or not genre:
                raise ValueError(f"{path}:{lineno}: invalid price or genre")
            out.append(EventRecord(int(uid), price_i, day, when.hour, tuple(genre.split("/"))))
    return out


def write_labels_csv(path: str | Path, labels: LabelMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id"] + [f"task_{i}" for i in range(labels.shape[1])])
        for uid, row, m in zip(labels.user_ids, labels.labels, labels.mask):
            w.writerow([int(uid)] + [str(int(v)) if k else "NA" for v, k in zip(row, m)])


def read_labels_csv(path: str | Path, task_names: list[str] | None = None) -> LabelMatrix:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[0] != "user_id" or header[1:] != [f"task_{i}" for i in range(len(header) - 1)]:
            raise ValueError(f"{path}: unexpected header")
        uids, rows, masks = [], [], []
        for row in r:
            uids.append(int(row[0]))
            rows.append([0 if v == "NA" else int(v) for v in row[1:]])
            masks.append([0 if v == "NA" else 1 for v in row[1:]])
    k = len(header) - 1
    names = task_names or [f"task_{i}" for i in range(k)]
    return LabelMatrix(np.array(rows, dtype=np.int8).reshape(-1, k), np.array(masks, dtype=np.int8).reshape(-1, k),
                       np.array(uids, dtype=int), names)


def write_demographics_csv(path: str | Path, demos: list[DemographicRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id"] + DEMO_NUMERIC + ["gender", "region", "rank"])
        for d in demos:
            w.writerow([d.user_id] + [repr(float(v)) for v in d.numeric_features] + [int(c) for c in d.categorical_features])


def read_demographics_csv(path: str | Path) -> list[DemographicRecord]:
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            k = len(DEMO_NUMERIC)
            out.append(DemographicRecord(int(row[0]), np.array([float(v) for v in row[1:1 + k]]),
                                         np.array([int(v) for v in row[1 + k:]])))
    return out


COHORT_FILES = ("cohort.json", "tasks.json", "users.csv", "events.csv", "points.csv", "demographics.csv",
                "labels_source.csv", "labels_target.csv")


def write_cohort_dir(path: str | Path, cohort: Cohort) -> list[Path]:
    """Write a cohort as CSV/JSON files. Target-task labels go to their own file."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    (d / "cohort.json").write_text(cohort.config.to_json())
    (d / "tasks.json").write_text(json.dumps({"task_names": cohort.labels.task_names,
                                              "source_tasks": cohort.source_tasks,
                                              "target_tasks": cohort.target_tasks}, indent=2))
    ood = cohort.ood_mask
    with open(d / "users.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "archetype", "ood"])
        for uid, (a, o) in enumerate(zip(cohort.archetype_ids, ood)):
            w.writerow([uid, int(a), int(o)])
    write_events_csv(d / "events.csv", cohort.events)
    write_events_csv(d / "points.csv", cohort.points)
    write_demographics_csv(d / "demographics.csv", cohort.demos)
    write_labels_csv(d / "labels_source.csv", cohort.labels.select(None, cohort.source_tasks))
    write_labels_csv(d / "labels_target.csv", cohort.labels.select(None, cohort.target_tasks))
    return [d / f for f in COHORT_FILES]


def read_cohort_dir(path: str | Path) -> Cohort:
    """Inverse of ``write_cohort_dir``; archetype definitions are not stored and come back empty."""
    d = Path(path)
    for f in COHORT_FILES:
        if not (d / f).is_file():
            raise FileNotFoundError(f"{d / f} not found")
    cfg = CohortConfig.from_json(d / "cohort.json")
    tasks = json.loads((d / "tasks.json").read_text())
    with open(d / "users.csv", newline="") as fh:
        arche = np.array([int(r["archetype"]) for r in csv.DictReader(fh)], dtype=int)
    src = read_labels_csv(d / "labels_source.csv")
    tgt = read_labels_csv(d / "labels_target.csv")
    order = list(tasks["source_tasks"]) + list(tasks["target_tasks"])
    k = len(order)
    labels = np.zeros((len(src.user_ids), k), dtype=np.int8)
    mask = np.zeros_like(labels)
    for part, cols in ((src, tasks["source_tasks"]), (tgt, tasks["target_tasks"])):
        labels[:, cols] = part.labels
        mask[:, cols] = part.mask
    lm = LabelMatrix(labels, mask, src.user_ids, list(tasks["task_names"]))
    return Cohort(cfg, [], arche, read_events_csv(d / "events.csv"), read_events_csv(d / "points.csv"),
                  read_demographics_csv(d / "demographics.csv"), lm,
                  list(tasks["source_tasks"]), list(tasks["target_tasks"]))
