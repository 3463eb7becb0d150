import json

import pytest

from metaprofile.cli import main

STAGES = ("cohort", "pretrain", "meta", "eval", "report")
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def run_pipeline(root, config="smoke"):
    """generate -> pretrain -> meta-train -> evaluate -> report under ``root``; returns stage dirs."""
    d = {s: root / s for s in STAGES}
    steps = [
        ["generate", "--config", config, "--out-dir", str(d["cohort"])],
        ["pretrain", "--cohort", str(d["cohort"]), "--config", config, "--out-dir", str(d["pretrain"])],
        ["meta-train", "--checkpoint", str(d["pretrain"]), "--out-dir", str(d["meta"])],
        ["evaluate", "--checkpoint", str(d["meta"]), "--out-dir", str(d["eval"])],
        ["report", "--reports", str(d["eval"]), "--out-dir", str(d["report"])],
    ]
    for argv in steps:
        code = main(argv)
        assert code == 0, argv
    return d


def output_hashes(dirs):
    return {s: json.loads((dirs[s] / "manifest.json").read_text())["outputs"] for s in STAGES}


@pytest.fixture(scope="session")
def smoke_runs(tmp_path_factory):
    """The smoke pipeline run twice from scratch in separate directories."""
    first = run_pipeline(tmp_path_factory.mktemp("smoke_a"))
    second = run_pipeline(tmp_path_factory.mktemp("smoke_b"))
    return first, second
