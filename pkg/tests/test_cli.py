import csv
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from topoatrophy.cli import EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, build_parser, config_from_args, main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "visit", "role", "path", "group"])
        w.writerows(rows)


def _svg_ok(path):
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    s = base / "synth"
    argv = ["synth", "--out", str(s), "--dims", "20", "--phantoms", "4", "--levels", "0,0.5", "--seed", "3"]
    assert main(argv + ["--export-masks", "--pipelines", "1"]) == EXIT_OK
    assert main(["pipeline1", "--manifest", str(s / "manifest_p1.csv"), "--out", str(base / "p1"), "--grid", "16"]) == EXIT_OK
    assert main(["pipeline2", "--manifest", str(s / "manifest_p2.csv"), "--out", str(base / "p2")]) == EXIT_OK
    return base


def test_synth_outputs(runs):
    s = runs / "synth"
    rows = _rows(s / "synth_metrics.csv")
    assert len(rows) == 8 and {"auc_total", "volume_loss"} <= set(rows[0])
    assert len(list((s / "manifests").glob("*.json"))) == 8
    sp = json.loads((s / "spearman.json").read_text())
    assert sp["n_rows"] == 8 and "auc_total" in sp["spearman"]
    run = json.loads((s / "run.json").read_text())
    assert run["failures"] == [] and "out" not in run["config"] and "threads" not in run["config"]
    _svg_ok(s / "synth.svg")
    p2 = _rows(s / "manifest_p2.csv")
    assert {r["visit"] for r in p2} == {"baseline", "followup"} and len(p2) == 8


def test_pipeline1_outputs(runs):
    p1 = runs / "p1"
    auc = _rows(p1 / "auc.csv")
    assert list(auc[0]) == ["scan", "subject", "visit", "group", "sagittal", "coronal", "axial", "total"]
    assert len(auc) == 8 and {r["group"] for r in auc} == {"erosion_000", "erosion_050"}
    curves = _rows(p1 / "curves.csv")
    assert len(curves) == 8 * 3 * 16 and curves[0]["grid"] == "16"
    _svg_ok(p1 / "curves.svg")


def test_pipeline2_outputs(runs):
    p2 = runs / "p2"
    wb = json.loads((p2 / "within_between.json").read_text())
    assert len(wb["W"]) == 4 and wb["wilcoxon"]["method"] == "exact"
    side = json.loads(next((p2 / "sidecars").glob("*.json")).read_text())
    assert side["runtime_ms"] is None
    assert 0 < side["jitter_used"] <= side["jitter"]
    assert len(_rows(p2 / "between.csv")) == 4
    for f in (p2 / "diagrams").glob("*.svg"):
        _svg_ok(f)


def test_zero_within_flagged(runs, tmp_path):
    src = _rows(runs / "synth" / "manifest_p2.csv")
    base = {r["subject"]: r["path"] for r in src if r["visit"] == "baseline"}
    follow = {r["subject"]: r["path"] for r in src if r["visit"] == "followup"}
    follow["phantom_01"] = base["phantom_01"]
    root = runs / "synth"
    rows = [[s, "baseline", "csf", str(root / p), "x"] for s, p in base.items()]
    rows += [[s, "followup", "csf", str(root / p), "x"] for s, p in follow.items()]
    _write_manifest(tmp_path / "m.csv", rows)
    assert main(["pipeline2", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path / "o")]) == EXIT_OK
    wb = json.loads((tmp_path / "o" / "within_between.json").read_text())
    assert wb["zero_within"] == ["phantom_01"] and wb["R"][1] is None


def test_report(runs, tmp_path):
    out = tmp_path / "r"
    code = main(["report", "--inputs", str(runs / "p1"), str(runs / "p2"), "--out", str(out), "--cv-k", "2"])
    assert code == EXIT_OK
    for name in ("l1_curves_by_group.svg", "slicewise_effects.svg", "h2_diagrams.svg"):
        _svg_ok(out / name)
    assert len(_rows(out / "slice_stats.csv")) == 3 * 16
    tests = json.loads((out / "group_tests.json").read_text())
    assert tests
    cv = json.loads((out / "cv_report.json").read_text())
    assert cv["k"] == 2 and len(cv["folds"]) == 2
    assert json.loads((out / "summary.json").read_text())


def test_report_without_inputs(tmp_path):
    assert main(["report", "--inputs", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == EXIT_FATAL


def test_partial_and_total_failure(runs, tmp_path):
    root = runs / "synth"
    good = [[r["subject"], r["visit"], r["role"], str(root / r["path"]), r["group"]] for r in _rows(root / "manifest_p1.csv")[:2]]
    _write_manifest(tmp_path / "m.csv", good + [["ghost", "v", "parenchyma", str(tmp_path / "nope.hbmk"), "g"]])
    assert main(["pipeline1", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path / "o"), "--grid", "8"]) == EXIT_PARTIAL
    run = json.loads((tmp_path / "o" / "run.json").read_text())
    assert [f["scan"] for f in run["failures"]] == ["ghost_v"] and len(run["scans_ok"]) == 2
    _write_manifest(tmp_path / "bad.csv", [["ghost", "v", "parenchyma", str(tmp_path / "nope.hbmk"), "g"]])
    assert main(["pipeline1", "--manifest", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "o2")]) == EXIT_FATAL


def test_spacing_mismatch_fails_scans(runs, tmp_path):
    m = str(runs / "synth" / "manifest_p1.csv")
    assert main(["pipeline1", "--manifest", m, "--out", str(tmp_path / "o"), "--spacing", "2"]) == EXIT_FATAL


def test_config_merge(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": 10, "tau": 0.5, "labels": "csf=4,gm=5,wm=6"}))
    p = build_parser()
    c = config_from_args(p.parse_args(["pipeline1", "--config", str(cfg), "--grid", "12"])).validate()
    assert c.grid == 12 and c.tau == 0.5 and c.labels == {"csf": 4, "gm": 5, "wm": 6}
    cfg.write_text(json.dumps({"colour": "red"}))
    assert main(["pipeline1", "--config", str(cfg), "--manifest", "x.csv"]) == EXIT_FATAL


@pytest.mark.parametrize(
    "argv",
    [
        ["pipeline2", "--manifest", "x.csv", "--jitter", "0.5"],
        ["pipeline1", "--manifest", "x.csv", "--grid", "1"],
        ["pipeline1", "--labels", "csf=1,gm=1,wm=3", "--manifest", "x.csv"],
        ["synth", "--levels", "0.25,0.5"],
        ["pipeline1"],
        ["pipeline1", "--manifest", "/nonexistent/m.csv"],
    ],
)
def test_fatal_configs(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_FATAL


def test_argparse_errors_exit_1():
    with pytest.raises(SystemExit) as e:
        main(["pipeline1", "--spacing", "3"])
    assert e.value.code == EXIT_FATAL
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == EXIT_FATAL


def test_manifest_validation(tmp_path):
    (tmp_path / "m.csv").write_text("subject,visit,path\na,b,c\n")
    assert main(["pipeline1", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path / "o")]) == EXIT_FATAL
    _write_manifest(tmp_path / "m2.csv", [["a", "b", "skull", "x.hbmk", ""]])
    assert main(["pipeline1", "--manifest", str(tmp_path / "m2.csv"), "--out", str(tmp_path / "o")]) == EXIT_FATAL


def test_two_phantom_counts_and_erosion_direction(runs, tmp_path):
    root = runs / "synth"
    rows = [r for r in _rows(root / "manifest_p1.csv") if r["subject"] == "phantom_00"]
    _write_manifest(tmp_path / "m.csv", [[r["subject"], r["visit"], r["role"], str(root / r["path"]), r["group"]] for r in rows])
    assert main(["pipeline1", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path / "o"), "--grid", "10"]) == EXIT_OK
    auc = _rows(tmp_path / "o" / "auc.csv")
    curves = _rows(tmp_path / "o" / "curves.csv")
    assert len(auc) == 2 and len({(r["subject"], r["axis"]) for r in curves}) == 6
    # every phantom loses AUC on every axis under erosion
    full = _rows(runs / "p1" / "auc.csv")
    by = {(r["subject"], r["group"]): r for r in full}
    for s in {r["subject"] for r in full}:
        for axis in ("sagittal", "coronal", "axial"):
            assert float(by[s, "erosion_050"][axis]) < float(by[s, "erosion_000"][axis])


def test_failed_rerun_keeps_prior_outputs(runs, tmp_path):
    out = tmp_path / "o"
    m = str(runs / "synth" / "manifest_p1.csv")
    assert main(["pipeline1", "--manifest", m, "--out", str(out), "--grid", "8"]) == EXIT_OK
    before = (out / "curves.csv").read_bytes()
    _write_manifest(tmp_path / "bad.csv", [["ghost", "v", "parenchyma", str(tmp_path / "nope.hbmk"), "g"]])
    assert main(["pipeline1", "--manifest", str(tmp_path / "bad.csv"), "--out", str(out)]) == EXIT_FATAL
    assert (out / "curves.csv").read_bytes() == before
    assert not [p for p in out.iterdir() if p.name.startswith(".")]


def test_group_plot_warns_and_draws_means(tmp_path):
    import numpy as np

    from topoatrophy.plots import plot_group_curves

    pos = np.linspace(0, 1, 5)
    groups = {"CN": np.ones((3, 3, 5)), "AD": np.ones((2, 3, 5)) * 0.5, "MCI": np.empty((0, 3, 5))}
    with pytest.warns(UserWarning, match="empty"):
        notes = plot_group_curves(groups, pos, tmp_path / "g.svg")
    assert len(notes) == 1
    text = (tmp_path / "g.svg").read_text()
    _svg_ok(tmp_path / "g.svg")
    assert "CN (n=3)" in text and "AD (n=2)" in text and "MCI" not in text
