"""Command-line pipeline: generate -> pretrain -> meta-train -> evaluate -> report.

Every command reads a JSON run config (flags override its keys), writes its outputs
plus a ``manifest.json`` into ``--out-dir``, and fails with one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .experiments import (ExperimentConfig, ExperimentReport, Evaluator, SeedData, imbalance_direction, median_gap,
                          meta_stage, ood_wins, pretrain_stage, prepare_data)
from .heatmap import ChannelSpec, densify, encode_users, write_dense, write_multi
from .meta import MetaModel
from .nn import checkpoint
from .profile_net import ProfileNetConfig
from .synth import COHORT_FILES, generate_cohort, read_cohort_dir, read_events_csv, write_cohort_dir

log = logging.getLogger("metaprofile")

MODEL_FILE = "model.mpnn"
NET_FILE = "net.json"


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _schema(name: str) -> dict:
    return json.loads(resources.files("metaprofile").joinpath("schemas", name).read_text())


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("metaprofile").joinpath("configs", f"{name}.json")))


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _require(path: Path, what: str = "file") -> Path:
    if not path.exists():
        raise CliError("missing-file", f"{what} not found: {path}")
    return path


def load_run_config(path: str | None, seed: int | None) -> tuple[ExperimentConfig, int, dict]:
    """Schema-checked config; ``--seed`` overrides the config's seed, one of them is required."""
    raw: dict = {}
    if path:
        p = Path(path)
        if not p.exists() and not p.suffix:
            p = bundled_config(path)
        try:
            raw = json.loads(_require(p, "config").read_text())
        except json.JSONDecodeError as e:
            raise CliError("schema", f"{p}: invalid JSON: {e}") from None
    try:
        jsonschema.validate(raw, _schema("run_config.schema.json"))
    except jsonschema.ValidationError as e:
        where = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise CliError("schema", f"config {where}: {e.message}") from None
    if seed is not None:
        raw["seed"] = seed
    if "seed" not in raw:
        raise CliError("seed-absent", "no seed given: set --seed or a 'seed' key in the config")
    run_seed = int(raw.pop("seed"))
    return ExperimentConfig.from_dict(raw), run_seed, {**raw, "seed": run_seed}


def config_hash(command: str, effective: dict) -> str:
    blob = json.dumps({"command": command, "config": effective}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _rel(p: Path, root: Path) -> str:
    try:
        return p.resolve().relative_to(Path(root).resolve()).as_posix()
    except ValueError:
        return p.name


def write_manifest(out_dir: Path, command: str, effective: dict, seed: int, inputs, outputs, timings: dict,
                   extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": effective,
        "config_hash": config_hash(command, effective),
        "seed": seed,
        "inputs": {str(p): sha256_file(Path(p)) for p in inputs},
        "outputs": {_rel(Path(p), out_dir): sha256_file(Path(p)) for p in outputs},
        "timings": timings,
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(run_dir: Path) -> dict:
    return json.loads(_require(run_dir / "manifest.json", "manifest").read_text())


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> None:
    cfg, seed, eff = load_run_config(args.config, args.seed)
    t0 = time.perf_counter()
    cohort = generate_cohort(cfg.cohort_config(seed))
    files = write_cohort_dir(args.out_dir, cohort)
    write_manifest(args.out_dir, "generate", eff, seed, [], files, {"generate_s": time.perf_counter() - t0})


def cmd_encode(args) -> None:
    events_path = _require(Path(args.events), "events file")
    spec_path = _require(Path(args.spec), "channel spec")
    raw = json.loads(spec_path.read_text())
    try:
        jsonschema.validate(raw, _schema("channel_spec.schema.json"))
    except jsonschema.ValidationError as e:
        raise CliError("schema", f"channel spec: {e.message}") from None
    spec = ChannelSpec.from_dict(raw)
    events = read_events_csv(events_path)
    uids = sorted({e.user_id for e in events})
    heatmaps = encode_users(events, spec, uids)
    dropped = sum(h.dropped for h in heatmaps.values())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.dense:
        with open(out, "wb") as fh:
            for u in uids:
                write_dense(fh, densify(heatmaps[u], spec.transforms, dtype=np.float32))
    else:
        write_multi(out, heatmaps)
    if dropped:
        log.warning("%d events matched no channel rule", dropped)
    out_dir = args.out_dir if args.out_dir_given else out.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, "encode", {"spec": raw, "dense": bool(args.dense)}, 0,
                   [events_path, spec_path], [out], {}, {"users": len(uids), "dropped_events": dropped})


def _load_data(cfg: ExperimentConfig, seed: int, cohort_dir: Path) -> SeedData:
    _require(cohort_dir, "cohort directory")
    return prepare_data(cfg, seed, cohort=read_cohort_dir(cohort_dir))


def _upstream(args, expect: str) -> tuple[Path, dict]:
    ck = _require(Path(args.checkpoint), "checkpoint directory")
    man = read_manifest(ck)
    if man.get("command") != expect:
        raise CliError("bad-input", f"{ck} holds a '{man.get('command')}' run, expected '{expect}'")
    return ck, man


def _seed_from(args, man: dict) -> int:
    if args.seed is not None and args.seed != man["seed"]:
        raise CliError("seed-mismatch", f"--seed {args.seed} differs from upstream seed {man['seed']}")
    return int(man["seed"])


def _load_model(ck: Path) -> MetaModel:
    d = json.loads(_require(ck / NET_FILE).read_text())
    sim_hidden = tuple(d.pop("sim_hidden", (128, 64)))
    model = MetaModel(ProfileNetConfig.from_dict(d), sim_hidden)
    model.load_state(checkpoint.load(_require(ck / MODEL_FILE)))
    return model


def _save_model(out_dir: Path, model: MetaModel) -> list[Path]:
    (out_dir / NET_FILE).write_text(json.dumps({**model.backbone.cfg.to_dict(), "sim_hidden": list(model.sim_hidden)},
                                               indent=2, sort_keys=True))
    model.save(out_dir / MODEL_FILE)
    return [out_dir / NET_FILE, out_dir / MODEL_FILE]


def cmd_pretrain(args) -> None:
    cfg, seed, eff = load_run_config(args.config, args.seed)
    cohort_dir = Path(args.cohort).resolve()
    t0 = time.perf_counter()
    data = _load_data(cfg, seed, cohort_dir)
    model = pretrain_stage(cfg, data, seed)
    outputs = _save_model(args.out_dir, model)
    write_manifest(args.out_dir, "pretrain", eff, seed, [cohort_dir / f for f in COHORT_FILES], outputs,
                   {"pretrain_s": time.perf_counter() - t0}, {"cohort_dir": str(cohort_dir)})


def cmd_meta_train(args) -> None:
    ck, man = _upstream(args, "pretrain")
    seed = _seed_from(args, man)
    cfg, _, eff = load_run_config(args.config, seed) if args.config else (
        ExperimentConfig.from_dict({k: v for k, v in man["config"].items() if k != "seed"}), seed, man["config"])
    cohort_dir = Path(args.cohort or man["cohort_dir"])
    t0 = time.perf_counter()
    data = _load_data(cfg, seed, cohort_dir)
    model = _load_model(ck)
    mlog = meta_stage(cfg, data, model, seed)
    outputs = _save_model(args.out_dir, model)
    mlog.to_csv(args.out_dir / "meta_log.csv")
    outputs.append(args.out_dir / "meta_log.csv")
    write_manifest(args.out_dir, "meta-train", eff, seed, [ck / MODEL_FILE, ck / NET_FILE], outputs,
                   {"meta_s": time.perf_counter() - t0},
                   {"cohort_dir": str(cohort_dir), "accuracy_last50": float(np.mean(mlog.accuracy[-50:] or [0.0]))})


def cmd_evaluate(args) -> None:
    ck, man = _upstream(args, "meta-train")
    seed = _seed_from(args, man)
    cfg, _, eff = load_run_config(args.config, seed) if args.config else (
        ExperimentConfig.from_dict({k: v for k, v in man["config"].items() if k != "seed"}), seed, man["config"])
    cohort_dir = Path(args.cohort or man["cohort_dir"])
    t0 = time.perf_counter()
    data = _load_data(cfg, seed, cohort_dir)
    model = _load_model(ck)
    ev = Evaluator(cfg, data, model)
    report = ExperimentReport()
    report.extend(ev.run())
    report.check_consistency()
    paths = report.write(args.out_dir)
    scores = ev.write_scores(args.out_dir / "scores")
    write_manifest(args.out_dir, "evaluate", eff, seed, [ck / MODEL_FILE, ck / NET_FILE],
                   [*paths.values(), *scores],
                   {"evaluate_s": time.perf_counter() - t0})


def cmd_report(args) -> None:
    root = _require(Path(args.reports), "reports directory")
    files = sorted(p for p in root.rglob("report.csv") if p.parent.resolve() != args.out_dir.resolve())
    if not files:
        raise CliError("missing-file", f"no report.csv under {root}")
    merged = ExperimentReport()
    for f in files:
        merged.extend(ExperimentReport.from_csv(f.read_text()).rows)
    merged.check_consistency()
    paths = merged.write(args.out_dir)
    table = args.out_dir / "growth.csv"
    cols = ["task", "aupr_baseline", "aupr_meta", "aupr_diff", "aupr_growth",
            "auroc_baseline", "auroc_meta", "auroc_diff", "auroc_growth"]
    lines = [",".join(cols)]
    for row in merged.growth_table():
        lines.append(",".join("" if row[c] is None else (row[c] if c == "task" else repr(float(row[c]))) for c in cols))
    table.write_text("\n".join(lines) + "\n")
    summary = args.out_dir / "summary.json"
    summary.write_text(json.dumps({
        "seeds": sorted({r.seed for r in merged.rows}),
        "masking_gap_median": {repr(k): v for k, v in median_gap(merged, "masking").items()},
        "imbalance_gap_median": {repr(k): v for k, v in median_gap(merged, "imbalance").items()},
        "imbalance_gap_ma2": imbalance_direction(merged)["ma2"],
        "ood_meta_not_worse": ood_wins(merged),
    }, indent=2, sort_keys=True))
    write_manifest(args.out_dir, "report", {"reports": [str(f) for f in files]}, 0, files,
                   [*paths.values(), table, summary], {})


COMMANDS = {
    "generate": cmd_generate,
    "encode": cmd_encode,
    "pretrain": cmd_pretrain,
    "meta-train": cmd_meta_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="determinism seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="BLAS thread count")
    common.add_argument("--out-dir", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="metaprofile", parents=[common], description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="synthesise a cohort")
    g.add_argument("--config", help="run config JSON (or bundled name: smoke, default)")

    e = sub.add_parser("encode", parents=[common], help="encode an events CSV into heatmaps")
    e.add_argument("--events", required=True)
    e.add_argument("--spec", required=True, help="channel spec JSON")
    e.add_argument("--out", required=True)
    e.add_argument("--dense", action="store_true", help="dense float32 binary instead of sparse text")

    pt = sub.add_parser("pretrain", parents=[common], help="multi-task pretraining")
    pt.add_argument("--cohort", required=True, help="directory written by generate")
    pt.add_argument("--config")

    for name, helptext in (("meta-train", "episodic meta-training"), ("evaluate", "run the experiment protocols")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--checkpoint", required=True, help="output directory of the previous stage")
        s.add_argument("--config", help="defaults to the upstream run's config")
        s.add_argument("--cohort", help="override the upstream cohort directory")

    r = sub.add_parser("report", parents=[common], help="merge evaluate outputs")
    r.add_argument("--reports", required=True, help="directory searched for report.csv files")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.out_dir_given = hasattr(args, "out_dir")
    args.seed = getattr(args, "seed", None)
    args.threads = getattr(args, "threads", None)
    args.out_dir = getattr(args, "out_dir", Path("."))
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        if args.command != "encode":
            args.out_dir.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(args.threads):
            COMMANDS[args.command](args)
    except CliError as e:
        return _fail(e.kind, str(e))
    except FileNotFoundError as e:
        return _fail("missing-file", str(e))
    except (ValueError, KeyError) as e:
        return _fail("invalid-input", f"{type(e).__name__}: {e}")
    return 0


def _fail(kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": " ".join(message.split())}), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
