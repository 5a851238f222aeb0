"""
Acceptance criteria 1-11. Each test records one pass/fail line, shown in the
terminal summary under "acceptance criteria".
"""

import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage, stats

from oracles import (
    bottleneck_bruteforce,
    bottleneck_permutations,
    empty_sphere_violations,
    landscape_l1_by_levels,
    superlevel_h1_bruteforce,
)
from topoatrophy import analysis
from topoatrophy.alpha_pipeline import alpha_filtration, delaunay3, h2_diagram, point_cloud
from topoatrophy.cli import EXIT_OK, main
from topoatrophy.mask_io import VoxelMask
from topoatrophy.ph_core import SUBLEVEL, SUPERLEVEL, PersistenceDiagram, bottleneck
from topoatrophy.slice_pipeline import edt2d, superlevel_h1
from topoatrophy.summaries import landscape_l1
from topoatrophy.synth import PhantomSpec, make_phantom


def _multiset(pairs):
    return sorted(map(tuple, np.asarray(pairs).tolist()))


def test_01_homology_oracle(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad = 0
    for k in range(500):
        # alternate tie-heavy integer fields and continuous ones
        f = rng.integers(0, 4, (8, 8)) * 0.5 if k % 2 else rng.random((8, 8)) * 3
        bad += _multiset(superlevel_h1(f, "reduce").pairs) != superlevel_h1_bruteforce(f)
    dt = time.perf_counter() - t0
    assert criterion(1, bad == 0 and dt < 60, f"500 fields, {bad} mismatches, {dt:.1f} s (< 60 s)")


def test_02_delaunay(criterion):
    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    violations = 0
    for k in range(200):
        n = int(rng.integers(5, 201))
        if k % 4 == 3:
            # jittered voxel centres: the degenerate case the pipeline meets
            m = VoxelMask(rng.random((6, 6, 6)) < 0.5)
            pts = point_cloud(m, 1e-3, k).points[:200]
        else:
            pts = rng.random((n, 3)) * 10
        violations += empty_sphere_violations(pts, delaunay3(pts).tetrahedra)
    dt = time.perf_counter() - t0
    assert criterion(2, violations == 0 and dt < 120, f"200 clouds, {violations} violations, {dt:.1f} s (< 120 s)")


def _shell_h2(inner):
    spec = PhantomSpec("ellipsoid-shell", (32, 32, 32), 1.0, (12.0, 12.0, 12.0), inner=inner)
    par, _ = make_phantom(spec)
    return h2_diagram(alpha_filtration(delaunay3(point_cloud(par))), 0.25)


def test_03_alpha_cavity(criterion):
    t0 = time.perf_counter()
    hollow = _shell_h2(0.5)  # inner radius 6 mm
    solid = _shell_h2(0.0)
    dt = time.perf_counter() - t0
    ok = len(hollow) == 1 and 25 <= hollow.deaths[0] <= 49 and len(solid) == 0 and dt < 60
    death = hollow.deaths.tolist()
    assert criterion(3, ok, f"hollow pairs {len(hollow)} deaths {death} in [25, 49], solid pairs {len(solid)}, {dt:.1f} s")


def _diagram(rng, n):
    b = rng.integers(0, 6, n).astype(float)
    return PersistenceDiagram(np.column_stack([b, b + rng.integers(1, 6, n)]), 1, SUBLEVEL)


def test_04_bottleneck(criterion):
    rng = np.random.default_rng(104)
    wrong = 0
    for _ in range(200):
        a, b = _diagram(rng, int(rng.integers(0, 9))), _diagram(rng, int(rng.integers(0, 9)))
        small = len(a) + len(b) <= 8
        ref = bottleneck_permutations(a.pairs, b.pairs) if small else bottleneck_bruteforce(a.pairs, b.pairs)
        wrong += bottleneck(a, b) != ref
    asym = tri = 0
    for _ in range(1000):
        a, b, c = (_diagram(rng, int(rng.integers(0, 9))) for _ in range(3))
        ab, bc, ac = bottleneck(a, b), bottleneck(b, c), bottleneck(a, c)
        asym += ab != bottleneck(b, a)
        tri += ac > ab + bc + 1e-12
    ok = wrong == 0 and asym == 0 and tri == 0
    assert criterion(4, ok, f"200 pairs, {wrong} mismatches; 1000 triples, {asym} asymmetric, {tri} triangle violations")


def test_05_stability(criterion):
    rng = np.random.default_rng(105)
    worst = -np.inf
    for k in range(100):
        eps = (0.01, 0.1)[k % 2]
        bits = ndimage.binary_opening(rng.random((20, 20)) < 0.75) if k % 3 else rng.random((20, 20)) < 0.7
        f = edt2d(bits).values
        g = np.clip(f + rng.uniform(-eps, eps, f.shape), 0, None)
        worst = max(worst, bottleneck(superlevel_h1(f), superlevel_h1(g)) - eps)
    assert criterion(5, worst <= 1e-9, f"100 trials, max (shift - eps) = {worst:.3g} (<= 1e-9)")


def test_06_landscape_closed_form(criterion):
    rng = np.random.default_rng(106)
    worst = 0.0
    for k in range(200):
        n = int(rng.integers(1, 25))
        b = rng.uniform(0.5, 8.0, n)
        d = PersistenceDiagram(np.column_stack([b, b - rng.uniform(0.01, b)]), 1, SUPERLEVEL)
        ref = landscape_l1_by_levels(-d.pairs)
        worst = max(worst, abs(landscape_l1(d) - ref) / ref)
    assert criterion(6, worst <= 1e-6, f"200 diagrams, max relative error {worst:.2e} (<= 1e-6)")


@pytest.mark.slow
def test_07_synthetic_erosion(criterion, tmp_path):
    t0 = time.perf_counter()
    code = main(["synth", "--out", str(tmp_path), "--phantoms", "10", "--seed", "7"])
    dt = time.perf_counter() - t0
    sp = json.loads((tmp_path / "spearman.json").read_text())
    rho = {k: v["statistic"] for k, v in sp["spearman"].items()}
    axes = [rho[f"auc_{a}"] for a in ("sagittal", "coronal", "axial")]
    ok = code == EXIT_OK and sp["n_rows"] == 50 and max(axes) <= -0.7 and rho["bottleneck"] >= 0.8 and dt < 600
    detail = (
        f"rows {sp['n_rows']}, AUC rho per axis {[round(a, 3) for a in axes]} (<= -0.7), "
        f"bottleneck rho {rho['bottleneck']:.3f} (>= 0.8), {dt:.0f} s (< 600 s)"
    )
    assert criterion(7, ok, detail)


@pytest.mark.slow
def test_08_fingerprinting(criterion, tmp_path):
    s = tmp_path / "synth"
    argv = ["synth", "--out", str(s), "--phantoms", "20", "--levels", "0,0.25", "--pipelines", "none", "--seed", "8"]
    assert main(argv + ["--export-masks"]) == EXIT_OK
    assert main(["pipeline2", "--manifest", str(s / "manifest_p2.csv"), "--out", str(tmp_path / "p2")]) == EXIT_OK
    wb = json.loads((tmp_path / "p2" / "within_between.json").read_text())
    hits = sum(wb["nearest_own"])
    w = wb["wilcoxon"]["statistic"]
    ok = hits == 20 and w == 210
    assert criterion(8, ok, f"{hits}/20 follow-ups nearest own baseline, Wilcoxon W = {w:g} (max 210)")


def _pairs20():
    rng = np.random.default_rng(109)
    out = []
    for k in range(20):
        n1, n2 = 6 + k, 5 + (k * 7) % 23
        out.append((rng.normal(0.4, 1.0, n1), rng.normal(0.0, 1.5, n2)))
    return out


def test_09_statistics(criterion):
    stat_err = p_err = 0.0

    def upd(ours, ref_stat, ref_p=None):
        nonlocal stat_err, p_err
        stat_err = max(stat_err, abs(ours.statistic - ref_stat))
        if ref_p is not None:
            p_err = max(p_err, abs(ours.p - ref_p))

    for a, b in _pairs20():
        t = stats.ttest_ind(a, b, equal_var=False)
        upd(analysis.welch_t(a, b), t.statistic, t.pvalue)
        pooled = np.sqrt(((len(a) - 1) * np.var(a, ddof=1) + (len(b) - 1) * np.var(b, ddof=1)) / (len(a) + len(b) - 2))
        upd(analysis.cohens_d(a, b), (a.mean() - b.mean()) / pooled)
        m = min(len(a), len(b))
        x, y = a[:m], b[:m]
        r = stats.spearmanr(x, y)
        upd(analysis.spearman(x, y), r.statistic, r.pvalue)
        r = stats.pearsonr(x, y)
        upd(analysis.pearson(x, y), r.statistic, r.pvalue)
        method = "exact" if m <= 25 else "approx"
        r = stats.wilcoxon(x, y, alternative="greater", method=method, correction=False)
        upd(analysis.wilcoxon_one_sided(x, y), r.statistic, r.pvalue)
        ours = analysis.mann_whitney_u(a, b)
        method = "exact" if ours.method == "exact" else "asymptotic"
        r = stats.mannwhitneyu(a, b, method=method, use_continuity=False)
        upd(ours, r.statistic, r.pvalue)
    big = analysis.wilcoxon_one_sided(np.arange(1.0, 83.0), np.zeros(82))
    paper_ok = big.statistic == 3403 and abs(big.p - 1.83e-15) <= 0.05 * 1.83e-15
    ok = stat_err <= 1e-9 and p_err <= 1e-6 and paper_ok
    detail = f"20 pairs, max |dstat| {stat_err:.1e}, max |dp| {p_err:.1e}; n=82: W={big.statistic:g}, p={big.p:.3e}"
    assert criterion(9, ok, detail)


def test_10_classifier(criterion):
    rng = np.random.default_rng(110)
    y = np.array([0] * 20 + [1] * 20)
    X = rng.normal(size=(40, 30))
    X[y == 1, :5] += 6.0  # separable along the first five features
    sep = analysis.cv_evaluate(X, y, 5, 0)
    sep_ok = all(f["roc_auc"] == 1.0 for f in sep["folds"])
    Z = rng.normal(size=(40, 30))
    aucs, identity = [], True
    for rep in range(20):
        out = analysis.cv_evaluate(Z, rng.permutation(y), 5, rep)
        aucs.append(out["aggregate"]["roc_auc"]["mean"])
        identity &= all(f["roc_auc"] == f["mwu_auc"] for f in out["folds"])
    identity &= all(f["roc_auc"] == f["mwu_auc"] for f in sep["folds"])
    null = float(np.mean(aucs))
    ok = sep_ok and 0.4 <= null <= 0.6 and identity
    assert criterion(10, ok, f"separable fold AUCs all 1.0: {sep_ok}; null mean AUC {null:.3f} in [0.4, 0.6]; AUC = U/(n1 n0) on every fold: {identity}")


def _tree(root: Path) -> list:
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


def _same(a: Path, b: Path) -> bool:
    ta, tb = _tree(a), _tree(b)
    return ta == tb and all(filecmp.cmp(a / f, b / f, shallow=False) for f in ta)


def test_11_determinism(criterion, tmp_path):
    results = {}
    synth = ["synth", "--dims", "20", "--phantoms", "3", "--levels", "0,0.5", "--export-masks", "--seed", "11"]
    for threads in ("1", "2"):
        main(synth + ["--out", str(tmp_path / f"s{threads}"), "--threads", threads])
    results["synth"] = _same(tmp_path / "s1", tmp_path / "s2")
    m1, m2 = tmp_path / "s1" / "manifest_p1.csv", tmp_path / "s1" / "manifest_p2.csv"
    for cmd, man, extra in (("pipeline1", m1, ["--grid", "20", "--diagrams"]), ("pipeline2", m2, [])):
        for tag, threads in (("a", "1"), ("b", "1"), ("c", "3")):
            assert main([cmd, "--manifest", str(man), "--out", str(tmp_path / f"{cmd}{tag}"), "--threads", threads] + extra) == EXIT_OK
        results[cmd] = _same(tmp_path / f"{cmd}a", tmp_path / f"{cmd}b") and _same(tmp_path / f"{cmd}a", tmp_path / f"{cmd}c")
    ok = all(results.values())
    assert criterion(11, ok, "byte-identical reruns and thread counts: " + ", ".join(f"{k} {v}" for k, v in results.items()))
