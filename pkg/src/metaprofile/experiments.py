"""Experiment protocols comparing the meta-learned model with normal training.

Three protocols share one per-seed setup (cohort, two-stage training, embedding cache):

* OOD detection: in-distribution confidence on held-out test users vs users from
  held-out archetypes.
* Label masking: nested label subsets of the labeled pool at decreasing fractions.
* Class imbalance: fixed positive count, negatives subsampled to each ratio.

Each cell hands both arms the same labeled rows and evaluation rows; the meta arm only
uses the labeled rows to form its support set, the baseline trains a fresh network on
them. Both arms hash their inputs and the report keeps the digest per row.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import UserStore
from .meta import (BaselineConfig, EpisodeConfig, MetaModel, baseline_predict, meta_train, payload_hash,
                   score_embeddings, train_baseline)
from .metrics import UndefinedMetricError, aupr, auroc, growth_rate, moving_average
from .profile_net import ProfileNetConfig, train_multitask
from .synth import Cohort, CohortConfig, ConfigError, generate_cohort, split_cohort

log = logging.getLogger(__name__)

EXPERIMENTS = ("ood", "masking", "imbalance")
REPORT_COLUMNS = ("experiment", "task", "arm", "config", "seed", "aupr", "auroc")
DEFAULT_FRACTIONS = (1.0, 0.8, 0.6, 0.4, 0.2, 0.05, 0.03, 0.01, 0.005)
DEFAULT_RATIOS = tuple(0.5 * 2 ** k for k in range(7))


@dataclass(frozen=True)
class MaskingSchedule:
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        object.__setattr__(self, "fractions", f)
        if not f or any(not 0 < x <= 1 for x in f):
            raise ConfigError("masking fractions must lie in (0, 1]")
        if any(b >= a for a, b in zip(f, f[1:])):
            raise ConfigError("masking fractions must be strictly decreasing")


@dataclass(frozen=True)
class ImbalanceSchedule:
    ratios: tuple[float, ...] = DEFAULT_RATIOS

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        object.__setattr__(self, "ratios", r)
        if not r or any(not (x > 0 and math.isfinite(x)) for x in r):
            raise ConfigError("imbalance ratios must be positive")


@dataclass
class ExperimentConfig:
    cohort: dict = field(default_factory=dict)
    filters: tuple[int, ...] = (8, 16, 32, 64)
    embedding: int = 64
    demo_hidden: int = 64
    sim_hidden: tuple[int, ...] = (128, 64)
    pretrain_epochs: int = 10
    episode: dict = field(default_factory=lambda: {"episodes": 400})
    baseline: dict = field(default_factory=dict)
    # train / labeled pool / held-out test, as fractions of in-distribution users
    split: tuple[float, float, float] = (0.5, 0.3, 0.2)
    support_cap: int = 64
    masking: tuple[float, ...] = DEFAULT_FRACTIONS
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    imbalance_positives: int = 32
    masking_tasks: tuple[int, ...] = (0,)
    imbalance_tasks: tuple[int, ...] = (0,)
    experiments: tuple[str, ...] = EXPERIMENTS
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        for name in ("filters", "sim_hidden", "split", "masking", "ratios", "masking_tasks",
                     "imbalance_tasks", "experiments", "seeds"):
            setattr(self, name, tuple(getattr(self, name)))
        unknown = set(self.experiments) - set(EXPERIMENTS)
        if unknown:
            raise ConfigError(f"unknown experiments {sorted(unknown)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        MaskingSchedule(self.masking)
        ImbalanceSchedule(self.ratios)
        if self.support_cap < 1 or self.imbalance_positives < 1:
            raise ConfigError("support_cap and imbalance_positives must be positive")
        self.cohort_config()

    def cohort_config(self, seed: int | None = None) -> CohortConfig:
        d = dict(self.cohort)
        if seed is not None:
            d["seed"] = int(seed)
        try:
            cfg = CohortConfig(**d)
        except TypeError as e:
            raise ConfigError(f"bad cohort config: {e}") from None
        cfg.validate()
        return cfg

    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(**self.episode)

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(**self.baseline)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad experiment config: {e}") from None


@dataclass
class ReportRow:
    experiment: str
    task: str
    arm: str
    config: float
    seed: int
    aupr: float | None
    auroc: float | None
    input_hash: str = ""
    note: str = ""

    @property
    def skipped(self) -> bool:
        return self.aupr is None


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass
class ExperimentReport:
    rows: list[ReportRow] = field(default_factory=list)

    def extend(self, rows) -> None:
        for r in rows:
            for m in (r.aupr, r.auroc):
                if m is not None and not 0.0 <= m <= 1.0:
                    raise ValueError(f"metric out of range in {r}")
            self.rows.append(r)

    def select(self, experiment: str, arm: str | None = None, skipped: bool = False) -> list[ReportRow]:
        return [r for r in self.rows if r.experiment == experiment and (arm is None or r.arm == arm)
                and (skipped or not r.skipped)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.experiment, r.task, r.arm, _fmt(r.config), r.seed, _fmt(r.aupr), _fmt(r.auroc)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ExperimentReport":
        rows = []
        for d in csv.DictReader(io.StringIO(text)):
            rows.append(ReportRow(d["experiment"], d["task"], d["arm"], float(d["config"]), int(d["seed"]),
                                  float(d["aupr"]) if d["aupr"] else None,
                                  float(d["auroc"]) if d["auroc"] else None))
        return cls(rows)

    def aggregate(self) -> list[dict]:
        """Mean and median over seeds per (experiment, task, arm, config).

        Imbalance rows also carry the 2-period moving average of the mean AUPR along
        the ratio axis.
        """
        groups: dict[tuple, list[ReportRow]] = defaultdict(list)
        for r in self.rows:
            if not r.skipped:
                groups[(r.experiment, r.task, r.arm, r.config)].append(r)
        out = []
        for (exp, task, arm, config), rs in groups.items():
            a = [r.aupr for r in rs]
            b = [r.auroc for r in rs]
            out.append({"experiment": exp, "task": task, "arm": arm, "config": config, "n_seeds": len(rs),
                        "aupr_mean": statistics.fmean(a), "aupr_median": statistics.median(a),
                        "auroc_mean": statistics.fmean(b), "auroc_median": statistics.median(b),
                        "aupr_ma2": None})
        # masking runs from full to sparse labels, imbalance from low to high ratio
        out.sort(key=lambda d: (EXPERIMENTS.index(d["experiment"]) if d["experiment"] in EXPERIMENTS else 9,
                                d["task"], d["arm"],
                                -d["config"] if d["experiment"] == "masking" else d["config"]))
        series: dict[tuple, list[dict]] = defaultdict(list)
        for d in out:
            if d["experiment"] == "imbalance":
                series[(d["task"], d["arm"])].append(d)
        for s in series.values():
            for d, m in zip(s, moving_average([d["aupr_mean"] for d in s], 2)):
                d["aupr_ma2"] = m
        return out

    def aggregate_csv(self) -> str:
        cols = ["experiment", "task", "arm", "config", "n_seeds", "aupr_mean", "aupr_median",
                "auroc_mean", "auroc_median", "aupr_ma2"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for d in self.aggregate():
            w.writerow([_fmt(d[c]) for c in cols])
        return buf.getvalue()

    def growth_table(self) -> list[dict]:
        """Per-task OOD summary: baseline, meta, difference and growth rate of mean AUPR and AUROC."""
        agg = {(d["task"], d["arm"]): d for d in self.aggregate() if d["experiment"] == "ood"}
        out = []
        for task in sorted({t for t, _ in agg}):
            if (task, "meta") not in agg or (task, "baseline") not in agg:
                continue
            row = {"task": task}
            for metric in ("aupr", "auroc"):
                b, m = agg[(task, "baseline")][f"{metric}_mean"], agg[(task, "meta")][f"{metric}_mean"]
                row.update({f"{metric}_baseline": b, f"{metric}_meta": m, f"{metric}_diff": m - b,
                            f"{metric}_growth": growth_rate(b, m) if b > 0 else None})
            out.append(row)
        return out

    def check_consistency(self, tol: float = 1e-12) -> None:
        for row in self.growth_table():
            for metric in ("aupr", "auroc"):
                g = row[f"{metric}_growth"]
                if g is None:
                    continue
                b, m = row[f"{metric}_baseline"], row[f"{metric}_meta"]
                if abs(g - (m - b) / b) > tol:
                    raise AssertionError(f"growth rate of {row['task']} does not recompute from its cells")

    def to_json(self) -> str:
        return json.dumps({
            "rows": [asdict(r) for r in self.rows],
            "aggregate": self.aggregate(),
            "growth": self.growth_table(),
        }, indent=1, sort_keys=True)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"report": out_dir / "report.csv", "aggregate": out_dir / "aggregate.csv",
                 "json": out_dir / "report.json"}
        paths["report"].write_text(self.to_csv())
        paths["aggregate"].write_text(self.aggregate_csv())
        paths["json"].write_text(self.to_json())
        return paths


# ---------------------------------------------------------------- per-seed setup

@dataclass
class SeedData:
    seed: int
    cohort: Cohort
    store: UserStore
    train_rows: np.ndarray
    pool_rows: np.ndarray
    test_rows: np.ndarray
    ood_rows: np.ndarray

    @property
    def target_tasks(self) -> list[int]:
        return list(self.cohort.target_tasks)

    def task_name(self, t: int) -> str:
        return self.cohort.labels.task_names[t]


def prepare_data(cfg: ExperimentConfig, seed: int, cohort: Cohort | None = None) -> SeedData:
    cohort = cohort if cohort is not None else generate_cohort(cfg.cohort_config(seed))
    store = UserStore.from_cohort(cohort)
    ood = cohort.ood_mask
    ind = np.flatnonzero(~ood)
    sp = split_cohort(cohort.labels, cohort.source_tasks, cohort.target_tasks, cfg.split, rows=ind, seed=seed)
    store.fit_demo_stats(sp.train)
    return SeedData(seed, cohort, store, sp.train, np.sort(sp.support), sp.predict, np.flatnonzero(ood))


def net_config(cfg: ExperimentConfig, data: SeedData, seed: int) -> ProfileNetConfig:
    return ProfileNetConfig(channels_a=data.store.c_a, channels_b=data.store.c_b, demo_width=data.store.demo_width,
                            filters=cfg.filters, demo_hidden=cfg.demo_hidden, embedding=cfg.embedding,
                            num_tasks=len(data.cohort.source_tasks), seed=seed)


def source_pools(data: SeedData) -> dict[int, np.ndarray]:
    """Episode class k = observed positives of source task k among the training users."""
    lab = data.cohort.labels
    pools = {}
    for k, t in enumerate(data.cohort.source_tasks):
        hit = (lab.mask[data.train_rows, t] == 1) & (lab.labels[data.train_rows, t] == 1)
        pools[k] = data.train_rows[hit]
    return pools


def pretrain_stage(cfg: ExperimentConfig, data: SeedData, seed: int) -> MetaModel:
    model = MetaModel(net_config(cfg, data, seed), cfg.sim_hidden)
    labels = data.cohort.labels.select(data.train_rows, data.cohort.source_tasks)
    train_multitask(model.backbone, data.store, data.train_rows, labels, cfg.pretrain_epochs, seed=seed)
    return model


def meta_stage(cfg: ExperimentConfig, data: SeedData, model: MetaModel, seed: int):
    return meta_train(model, data.store, source_pools(data), cfg.episode_config(), seed=seed)


# ---------------------------------------------------------------- cells

@dataclass
class CellInputs:
    """What both arms of one cell receive."""

    labeled_rows: np.ndarray
    labeled_y: np.ndarray
    eval_rows: np.ndarray
    eval_y: np.ndarray

    def digest(self) -> str:
        return payload_hash(self.labeled_rows.astype(np.int64), self.labeled_y.astype(np.int8),
                            self.eval_rows.astype(np.int64), self.eval_y.astype(np.int8))


def _support(inputs: CellInputs, cap: int) -> tuple[np.ndarray, np.ndarray]:
    """First ``cap`` labeled rows of each class, in the order the cell supplies them."""
    rows, cls = [], []
    for c in (0, 1):
        r = inputs.labeled_rows[inputs.labeled_y == c][:cap]
        rows.append(r)
        cls.append(np.full(len(r), c))
    return np.concatenate(rows), np.concatenate(cls)


class Evaluator:
    """Runs cells for one seed given the trained meta model."""

    def __init__(self, cfg: ExperimentConfig, data: SeedData, model: MetaModel):
        self.cfg, self.data, self.model = cfg, data, model
        self.baseline_cfg = cfg.baseline_config()
        rows = np.concatenate([data.pool_rows, data.test_rows, data.ood_rows])
        self.emb = np.zeros((len(data.store), model.backbone.cfg.embedding), dtype=np.float32)
        self.emb[rows] = model.embed_rows(data.store, rows)

    def _sub_seed(self, *parts) -> int:
        return int(np.random.SeedSequence([self.data.seed, *parts]).generate_state(1)[0])

    def meta_probs(self, inputs: CellInputs) -> tuple[np.ndarray, str]:
        digest = inputs.digest()
        s_rows, s_cls = _support(inputs, self.cfg.support_cap)
        if len(np.unique(s_cls)) < 2:
            raise UndefinedMetricError("support set lacks a class")
        p = score_embeddings(self.model.similarity, self.emb[inputs.eval_rows], self.emb[s_rows], s_cls, 2)
        return p[:, 1], digest

    def baseline_probs(self, inputs: CellInputs, seed: int) -> tuple[np.ndarray, str]:
        digest = inputs.digest()
        net = train_baseline(self.data.store, self.model.backbone.cfg, inputs.labeled_rows, inputs.labeled_y,
                             self.baseline_cfg, seed)
        return baseline_predict(net, self.data.store, inputs.eval_rows), digest

    def _rows(self, experiment, task, config, inputs, score_fn, note=""):
        """Score both arms; ``score_fn`` maps positive-class probability to the ranking score."""
        out = []
        seed = self._sub_seed(EXPERIMENTS.index(experiment), task, int(round(config * 1e6)))
        name = self.data.task_name(task)
        hashes = {}
        for arm in ("meta", "baseline"):
            p, hashes[arm] = self.meta_probs(inputs) if arm == "meta" else self.baseline_probs(inputs, seed)
            s = score_fn(p)
            out.append(ReportRow(experiment, name, arm, float(config), self.data.seed,
                                 aupr(s, inputs.eval_y), auroc(s, inputs.eval_y), hashes[arm], note))
        if hashes["meta"] != hashes["baseline"]:
            raise AssertionError("arms received different inputs")
        return out

    def _skip(self, experiment, task, config, note) -> list[ReportRow]:
        log.info("skip %s %s %s: %s", experiment, self.data.task_name(task), config, note)
        return [ReportRow(experiment, self.data.task_name(task), arm, float(config), self.data.seed, None, None,
                          "", note) for arm in ("meta", "baseline")]

    def _ordered_pool(self, task: int) -> tuple[np.ndarray, np.ndarray]:
        """Labeled pool grouped negatives then positives, each in a seeded fixed order."""
        y = self.data.cohort.labels.labels[self.data.pool_rows, task]
        rng = np.random.default_rng(self._sub_seed(99, task))
        neg = rng.permutation(self.data.pool_rows[y == 0])
        pos = rng.permutation(self.data.pool_rows[y == 1])
        return neg, pos

    def _test(self, task: int) -> tuple[np.ndarray, np.ndarray]:
        return self.data.test_rows, self.data.cohort.labels.labels[self.data.test_rows, task]

    def ood(self, task: int) -> list[ReportRow]:
        if len(self.data.ood_rows) == 0:
            raise ValueError("empty OOD set")
        neg, pos = self._ordered_pool(task)
        if len(neg) == 0 or len(pos) == 0:
            return self._skip("ood", task, 0.0, "labeled pool lacks a class")
        eval_rows = np.concatenate([self.data.test_rows, self.data.ood_rows])
        eval_y = np.r_[np.ones(len(self.data.test_rows), np.int8), np.zeros(len(self.data.ood_rows), np.int8)]
        inputs = CellInputs(np.r_[neg, pos], np.r_[np.zeros(len(neg)), np.ones(len(pos))].astype(np.int8),
                            eval_rows, eval_y)
        return self._rows("ood", task, 0.0, inputs, lambda p: np.maximum(p, 1.0 - p))

    def masking(self, task: int, fractions) -> list[ReportRow]:
        neg, pos = self._ordered_pool(task)
        test_rows, test_y = self._test(task)
        out = []
        for f in MaskingSchedule(fractions).fractions:
            kn, kp = math.ceil(f * len(neg)), math.ceil(f * len(pos))
            if kp == 0 or kn == 0:
                out += self._skip("masking", task, f, "no labeled samples of a class at this fraction")
                continue
            inputs = CellInputs(np.r_[neg[:kn], pos[:kp]], np.r_[np.zeros(kn), np.ones(kp)].astype(np.int8),
                                test_rows, test_y)
            out += self._rows("masking", task, f, inputs, lambda p: p, note=f"{kp} positives, {kn} negatives")
        return out

    def imbalance(self, task: int, ratios) -> list[ReportRow]:
        neg, pos = self._ordered_pool(task)
        test_rows, test_y = self._test(task)
        n_pos = self.cfg.imbalance_positives
        out = []
        for r in ImbalanceSchedule(ratios).ratios:
            n_neg = max(1, int(round(n_pos / r)))
            if n_pos > len(pos) or n_neg > len(neg):
                out += self._skip("imbalance", task, r,
                                  f"needs {n_pos} positives and {n_neg} negatives, pool has {len(pos)} and {len(neg)}")
                continue
            inputs = CellInputs(np.r_[neg[:n_neg], pos[:n_pos]],
                                np.r_[np.zeros(n_neg), np.ones(n_pos)].astype(np.int8), test_rows, test_y)
            out += self._rows("imbalance", task, r, inputs, lambda p: p, note=f"{n_pos} positives, {n_neg} negatives")
        return out

    def target_scores(self, task: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Meta-arm positive-class probability for the held-out users, support = whole labeled pool."""
        neg, pos = self._ordered_pool(task)
        test_rows, test_y = self._test(task)
        inputs = CellInputs(np.r_[neg, pos], np.r_[np.zeros(len(neg)), np.ones(len(pos))].astype(np.int8),
                            test_rows, test_y)
        p, _ = self.meta_probs(inputs)
        return self.data.cohort.labels.user_ids[test_rows], p, test_y

    def write_scores(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for t in self.data.target_tasks:
            uid, p, y = self.target_scores(t)
            path = out_dir / f"{self.data.task_name(t)}.csv"
            lines = ["user_id,score,label"] + [f"{int(u)},{float(v)!r},{int(l)}" for u, v, l in zip(uid, p, y)]
            path.write_text("\n".join(lines) + "\n")
            paths.append(path)
        return paths

    def run(self) -> list[ReportRow]:
        cfg, targets = self.cfg, self.data.target_tasks
        rows: list[ReportRow] = []
        if "ood" in cfg.experiments:
            for t in targets:
                rows += self.ood(t)
        if "masking" in cfg.experiments:
            for i in cfg.masking_tasks:
                rows += self.masking(targets[i], cfg.masking)
        if "imbalance" in cfg.experiments:
            for i in cfg.imbalance_tasks:
                rows += self.imbalance(targets[i], cfg.ratios)
        return rows


def evaluate_seed(cfg: ExperimentConfig, data: SeedData, model: MetaModel) -> list[ReportRow]:
    return Evaluator(cfg, data, model).run()


def run_seed(cfg: ExperimentConfig, seed: int) -> tuple[list[ReportRow], dict]:
    """Full pipeline for one seed. Returns report rows and timing/accuracy info."""
    info: dict = {"seed": seed}
    t0 = time.perf_counter()
    data = prepare_data(cfg, seed)
    model = pretrain_stage(cfg, data, seed)
    info["pretrain_s"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    mlog = meta_stage(cfg, data, model, seed)
    info["meta_s"] = time.perf_counter() - t1
    tail = mlog.accuracy[-50:]
    info["meta_accuracy_tail"] = float(np.mean(tail)) if tail else float("nan")
    t2 = time.perf_counter()
    rows = evaluate_seed(cfg, data, model)
    info["eval_s"] = time.perf_counter() - t2
    log.info("seed %d done: %s", seed, info)
    return rows, info


def run_suite(cfg: ExperimentConfig) -> tuple[ExperimentReport, list[dict]]:
    report = ExperimentReport()
    infos = []
    for seed in cfg.seeds:
        rows, info = run_seed(cfg, seed)
        report.extend(rows)
        infos.append(info)
    return report, infos


# ---------------------------------------------------------------- directional summaries

def _median_by(report: ExperimentReport, experiment: str, key) -> dict:
    vals: dict = defaultdict(dict)
    for r in report.select(experiment):
        vals[key(r)].setdefault((r.seed, r.task), {})[r.arm] = r
    return vals


def median_gap(report: ExperimentReport, experiment: str, metric: str = "aupr") -> dict[float, float]:
    """Per config value: median over (seed, task) of meta minus baseline."""
    out = {}
    for config, cells in _median_by(report, experiment, lambda r: r.config).items():
        gaps = [getattr(c["meta"], metric) - getattr(c["baseline"], metric)
                for c in cells.values() if "meta" in c and "baseline" in c]
        if gaps:
            out[config] = statistics.median(gaps)
    return dict(sorted(out.items()))


def median_metric(report: ExperimentReport, experiment: str, arm: str, metric: str = "aupr") -> dict:
    groups: dict = defaultdict(list)
    for r in report.select(experiment, arm):
        groups[(r.task, r.config)].append(getattr(r, metric))
    return {k: statistics.median(v) for k, v in sorted(groups.items())}


def ood_wins(report: ExperimentReport) -> dict[str, dict[str, bool]]:
    """Per task: whether the meta arm's seed-median AUROC and AUPR are >= the baseline's."""
    out: dict[str, dict[str, bool]] = {}
    for metric in ("auroc", "aupr"):
        meta = median_metric(report, "ood", "meta", metric)
        base = median_metric(report, "ood", "baseline", metric)
        for (task, config), m in meta.items():
            if (task, config) in base:
                out.setdefault(task, {})[metric] = m >= base[(task, config)]
    return out


def masking_direction(report: ExperimentReport, low: float = 0.01) -> dict:
    """Median AUPR gap at the ``low`` label fraction versus at full labels."""
    gaps = median_gap(report, "masking")
    if low not in gaps or 1.0 not in gaps:
        raise ValueError(f"masking report needs fractions {low} and 1.0")
    return {"gap_low": gaps[low], "gap_full": gaps[1.0], "gaps": gaps}


def imbalance_direction(report: ExperimentReport) -> dict:
    """2-period moving average of the median AUPR gap along increasing ratio, and its inversions."""
    gaps = median_gap(report, "imbalance")
    ma = [m for m in moving_average(list(gaps.values()), 2) if m is not None]
    inversions = sum(1 for a, b in zip(ma, ma[1:]) if b < a)
    return {"ratios": list(gaps), "gaps": list(gaps.values()), "ma2": ma, "inversions": inversions}
