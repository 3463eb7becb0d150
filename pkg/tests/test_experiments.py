import numpy as np
import pytest

from metaprofile.experiments import (DEFAULT_FRACTIONS, DEFAULT_RATIOS, REPORT_COLUMNS, CellInputs, Evaluator,
                                     ExperimentConfig, ExperimentReport, ImbalanceSchedule, MaskingSchedule, ReportRow,
                                     _support, median_gap, meta_stage, prepare_data, pretrain_stage)
from metaprofile.synth import ConfigError


def row(exp, arm, config, aupr, auroc=0.5, task="t0", seed=0):
    return ReportRow(exp, task, arm, config, seed, aupr, auroc)


def test_default_schedules():
    assert len(MaskingSchedule().fractions) == 9
    assert MaskingSchedule().fractions == DEFAULT_FRACTIONS == (1.0, 0.8, 0.6, 0.4, 0.2, 0.05, 0.03, 0.01, 0.005)
    assert ImbalanceSchedule().ratios == DEFAULT_RATIOS == (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)


@pytest.mark.parametrize("fractions", [(), (0.0,), (1.2,), (0.5, 0.8), (0.5, 0.5)])
def test_masking_schedule_rejects(fractions):
    with pytest.raises(ConfigError):
        MaskingSchedule(fractions)


@pytest.mark.parametrize("ratios", [(), (0.0,), (-1.0,), (float("inf"),)])
def test_imbalance_schedule_rejects(ratios):
    with pytest.raises(ConfigError):
        ImbalanceSchedule(ratios)


def test_config_validation_and_round_trip():
    with pytest.raises(ConfigError):
        ExperimentConfig(experiments=("ood", "bogus"))
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=())
    with pytest.raises(ConfigError):
        ExperimentConfig(cohort={"num_users": 0})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"nope": 1})
    cfg = ExperimentConfig(masking=(1.0, 0.1), seeds=(3,))
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_report_csv_columns_and_round_trip():
    rep = ExperimentReport()
    rep.extend([row("ood", "meta", 0.0, 0.75), row("ood", "baseline", 0.0, 0.5), row("masking", "meta", 0.01, None, None)])
    text = rep.to_csv()
    assert text.splitlines()[0] == ",".join(REPORT_COLUMNS)
    assert text.splitlines()[3].endswith(",,")
    back = ExperimentReport.from_csv(text)
    assert back.to_csv() == text
    assert back.rows[2].skipped


def test_report_rejects_out_of_range():
    with pytest.raises(ValueError):
        ExperimentReport().extend([row("ood", "meta", 0.0, 1.5)])


def test_aggregate_ordering_and_moving_average():
    rep = ExperimentReport()
    for seed, (a, b) in enumerate([(0.2, 0.4), (0.4, 0.8)]):
        rep.extend([row("imbalance", "meta", 2.0, b, seed=seed), row("imbalance", "meta", 0.5, a, seed=seed)])
        rep.extend([row("masking", "meta", 0.01, a, seed=seed), row("masking", "meta", 1.0, b, seed=seed)])
    agg = rep.aggregate()
    masking = [d["config"] for d in agg if d["experiment"] == "masking"]
    imb = [d for d in agg if d["experiment"] == "imbalance"]
    assert masking == [1.0, 0.01]
    assert [d["config"] for d in imb] == [0.5, 2.0]
    assert imb[0]["aupr_mean"] == pytest.approx(0.3) and imb[1]["aupr_mean"] == pytest.approx(0.6)
    assert imb[0]["aupr_ma2"] is None and imb[1]["aupr_ma2"] == pytest.approx(0.45)
    assert all(d["n_seeds"] == 2 for d in agg)
    assert rep.aggregate_csv().splitlines()[0].startswith("experiment,task,arm,config,n_seeds")


def test_growth_table_recomputes():
    rep = ExperimentReport([row("ood", "baseline", 0.0, 0.4503, 0.4), row("ood", "meta", 0.0, 0.5361, 0.6)])
    (g,) = rep.growth_table()
    assert g["aupr_growth"] == pytest.approx((0.5361 - 0.4503) / 0.4503, abs=1e-15)
    assert g["auroc_diff"] == pytest.approx(0.2)
    rep.check_consistency()


def test_identical_arms_give_zero_growth():
    rep = ExperimentReport([row("ood", "baseline", 0.0, 0.6, 0.7), row("ood", "meta", 0.0, 0.6, 0.7)])
    (g,) = rep.growth_table()
    assert g["aupr_growth"] == 0.0 and g["auroc_growth"] == 0.0
    assert median_gap(ExperimentReport([row("masking", "meta", 0.5, 0.3), row("masking", "baseline", 0.5, 0.3)]),
                      "masking") == {0.5: 0.0}


def test_support_cap_keeps_supplied_order():
    inputs = CellInputs(np.array([9, 8, 7, 1, 2]), np.array([0, 0, 0, 1, 1]), np.array([3]), np.array([1]))
    rows, cls = _support(inputs, 2)
    assert rows.tolist() == [9, 8, 1, 2] and cls.tolist() == [0, 0, 1, 1]


SMALL = dict(cohort={"num_users": 300}, filters=(2, 2, 2, 2), embedding=8, demo_hidden=8, sim_hidden=(8,),
             pretrain_epochs=1, episode={"episodes": 4}, baseline={"steps": 2, "batch_size": 8},
             masking=(1.0, 0.05, 0.001), ratios=(0.01, 0.5, 8.0, 1000.0), imbalance_positives=4, seeds=(0,))


@pytest.fixture(scope="module")
def small_run():
    cfg = ExperimentConfig(**SMALL)
    data = prepare_data(cfg, 0)
    model = pretrain_stage(cfg, data, 0)
    meta_stage(cfg, data, model, 0)
    ev = Evaluator(cfg, data, model)
    return cfg, data, model, ev, ev.run()


def test_split_is_disjoint_and_excludes_ood(small_run):
    _, data, *_ = small_run
    parts = [set(data.train_rows), set(data.pool_rows), set(data.test_rows), set(data.ood_rows)]
    assert sum(len(p) for p in parts) == 300 and len(set().union(*parts)) == 300
    assert not data.cohort.ood_mask[data.train_rows].any()


def test_every_cell_has_both_arms_with_equal_inputs(small_run):
    *_, rows = small_run
    cells = {}
    for r in rows:
        cells.setdefault((r.experiment, r.task, r.config), {})[r.arm] = r
    assert all(set(c) == {"meta", "baseline"} for c in cells.values())
    for c in cells.values():
        assert c["meta"].input_hash == c["baseline"].input_hash
        assert c["meta"].skipped == c["baseline"].skipped
    assert sum(1 for k in cells if k[0] == "ood") == 8


def test_masking_full_fraction_uses_whole_pool(small_run):
    cfg, data, _, ev, rows = small_run
    t = data.target_tasks[0]
    neg, pos = ev._ordered_pool(t)
    test_rows, test_y = ev._test(t)
    full = CellInputs(np.r_[neg, pos], np.r_[np.zeros(len(neg)), np.ones(len(pos))].astype(np.int8), test_rows,
                      test_y)
    (r,) = [r for r in rows if r.experiment == "masking" and r.config == 1.0 and r.arm == "meta"]
    assert r.input_hash == full.digest()
    assert r.note == f"{len(pos)} positives, {len(neg)} negatives"


def test_impossible_cells_are_skipped_not_dropped(small_run):
    *_, rows = small_run
    masked = [r for r in rows if r.experiment == "masking" and r.config == 0.001]
    imb = [r for r in rows if r.experiment == "imbalance" and r.config == 1000.0]
    assert len(masked) == 2 and len(imb) == 2
    # ceil keeps one of each class at 0.1%, so that cell runs; 4 / 1000 rounds to zero negatives -> floor of 1
    assert not masked[0].skipped
    assert imb[0].note == "4 positives, 1 negatives"
    # 4 / 0.01 = 400 negatives is more than the pool holds
    starved = [r for r in rows if r.experiment == "imbalance" and r.config == 0.01]
    assert len(starved) == 2 and all(r.skipped for r in starved)
    assert "needs 4 positives and 400 negatives" in starved[0].note
    text = ExperimentReport(rows).to_csv()
    assert "imbalance,target_0,meta,0.01,0,," in text


def test_rerun_is_bit_identical(small_run):
    cfg, data, model, _, rows = small_run
    again = Evaluator(cfg, data, model).run()
    assert ExperimentReport(again).to_csv() == ExperimentReport(rows).to_csv()


def test_target_scores_file(small_run, tmp_path):
    _, data, _, ev, _ = small_run
    paths = ev.write_scores(tmp_path)
    assert len(paths) == 8
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "user_id,score,label" and len(lines) == 1 + len(data.test_rows)


def test_report_write(small_run, tmp_path):
    *_, rows = small_run
    rep = ExperimentReport(rows)
    rep.check_consistency()
    paths = rep.write(tmp_path)
    assert sorted(p.name for p in paths.values()) == ["aggregate.csv", "report.csv", "report.json"]
