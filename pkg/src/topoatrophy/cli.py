"""
Command line entry points.

Subcommands::

    pipeline1   slice-wise EDT H1 -> L1 curves and AUCs per scan
    pipeline2   alpha-complex H2 diagrams -> bottleneck distances, within/between report
    synth       phantom erosion series through both pipelines, Spearman report
    report      group plots, slice-wise statistics and classification from prior outputs

Every command reads a manifest CSV (``subject,visit,role,path,group``) and/or
a JSON config; flags override config values. Outputs are written to a temp
file and renamed into place, and depend only on the manifest contents and the
config, so reruns are byte-identical. Exit codes: 0 success, 2 some subjects
failed, 1 fatal.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import multiprocessing
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis
from .alpha_pipeline import DEFAULT_JITTER, DEFAULT_TAU, alpha_filtration, delaunay3, h2_diagram, point_cloud
from .mask_io import (
    DEFAULT_LABEL_MAP,
    VoxelMask,
    csf_complement,
    load_labels,
    load_mask,
    parse_label_map,
    save_mask,
    union_masks,
    validate_isotropic,
)
from .ph_core import SUBLEVEL, PersistenceDiagram, bottleneck, read_diagram_csv, write_diagram_csv
from .plots import plot_diagrams, plot_group_curves, plot_slicewise, plot_subject_curves, plot_synth
from .summaries import (
    FIRST,
    FULL,
    L1Curve,
    curve_auc,
    curve_from_diagrams,
    interpolate,
    read_curves_csv,
    slice_diagrams,
    write_curves_csv,
)
from .synth import (
    ErosionSpec,
    PhantomSpec,
    atrophy,
    erosion_manifest,
    erosion_series,
    individual_specs,
    make_phantom,
)

__all__ = [
    "EXIT_OK",
    "EXIT_FATAL",
    "EXIT_PARTIAL",
    "ConfigError",
    "RunConfig",
    "ManifestRow",
    "read_manifest",
    "cmd_pipeline1",
    "cmd_pipeline2",
    "cmd_synth",
    "cmd_report",
    "main",
]

log = logging.getLogger("topoatrophy")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
AXES = ("sagittal", "coronal", "axial")
ROLES = ("gm", "wm", "csf", "labels", "parenchyma")
MANIFEST_COLUMNS = ["subject", "visit", "role", "path", "group"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """
    Settings of one command. Field names double as JSON config keys.

    ``out`` and ``threads`` never change results and are left out of the
    recorded config so that runs into different directories or with
    different pool sizes produce identical files.
    """

    command: str = "pipeline1"
    manifest: str | None = None
    out: str = "out"
    grid: int = 100
    tau: float = DEFAULT_TAU
    jitter: float = DEFAULT_JITTER
    seed: int = 0
    threads: int = 1
    labels: dict = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))
    spacing: float = 1.0
    norm: str = FULL
    timing: bool = False
    diagrams: bool = False
    baseline_visit: str = "baseline"
    followup_visit: str = "followup"
    # synth
    phantoms: int = 10
    levels: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    dims: int = 64
    n_cavities: int = 24
    pipelines: tuple = (1, 2)
    export_masks: bool = False
    followup_level: float | None = None
    phantom_specs: list | None = None
    # report
    inputs: tuple = ()
    positive_group: str | None = None
    cv_k: int = 5
    alpha: float = 0.05

    def validate(self) -> "RunConfig":
        if self.command not in ("pipeline1", "pipeline2", "synth", "report"):
            raise ConfigError(f"unknown command {self.command!r}")
        if not 2 <= int(self.grid) <= 10000:
            raise ConfigError("grid must be between 2 and 10000")
        if not 0 <= float(self.tau) < math.inf:
            raise ConfigError("tau must be a non-negative number")
        if not 0 <= float(self.jitter) <= 0.05:
            raise ConfigError("jitter must lie in [0, 0.05] mm")
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")
        if int(self.threads) < 1:
            raise ConfigError("threads must be at least 1")
        if float(self.spacing) not in (1.0, 2.0):
            raise ConfigError("spacing must be 1 or 2 mm")
        if self.norm not in (FULL, FIRST):
            raise ConfigError(f"norm must be {FULL!r} or {FIRST!r}")
        lm = {k.lower(): int(v) for k, v in dict(self.labels).items()}
        if not {"csf", "gm", "wm"} <= set(lm) or len(set(lm.values())) != len(lm) or 0 in lm.values():
            raise ConfigError("label map needs distinct nonzero labels for csf, gm and wm")
        self.labels = lm
        lv = tuple(float(v) for v in self.levels)
        if not lv or lv[0] != 0.0 or list(lv) != sorted(set(lv)) or lv[-1] > 1.0:
            raise ConfigError("levels must start at 0, increase strictly and not exceed 1")
        self.levels = lv
        if self.followup_level is not None and float(self.followup_level) not in lv[1:]:
            raise ConfigError("followup_level must be one of the non-zero levels")
        pl = tuple(sorted(set(int(p) for p in self.pipelines)))
        if not set(pl) <= {1, 2}:
            raise ConfigError("pipelines must be a subset of {1, 2}")
        self.pipelines = pl
        if int(self.phantoms) < 1 or int(self.dims) < 8 or int(self.n_cavities) < 0:
            raise ConfigError("need phantoms >= 1, dims >= 8 and n_cavities >= 0")
        if int(self.cv_k) < 2:
            raise ConfigError("cv_k must be at least 2")
        if not 0 < float(self.alpha) < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.baseline_visit == self.followup_visit:
            raise ConfigError("baseline and follow-up visit names must differ")
        self.grid, self.seed, self.threads = int(self.grid), int(self.seed), int(self.threads)
        self.tau, self.jitter, self.spacing = float(self.tau), float(self.jitter), float(self.spacing)
        self.inputs = tuple(str(p) for p in self.inputs)
        return self

    def recorded(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return d

    def followup(self) -> float:
        if self.followup_level is not None:
            return float(self.followup_level)
        return 0.25 if 0.25 in self.levels else self.levels[-1]


# ---------------------------------------------------------------- file output


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, analysis.TestResult):
        return _clean(obj.to_dict())
    return obj


@contextmanager
def _atomic(path):
    """Yield a temp path next to ``path``; rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_json(path, obj) -> None:
    with _atomic(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _write_rows(path, header, rows) -> None:
    with _atomic(path) as tmp, open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ("" if math.isnan(v) else str(float(v)))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


def _write_matrix(path, labels, mat) -> None:
    _write_rows(path, ["subject"] + list(labels), [[lab] + list(row) for lab, row in zip(labels, mat)])


# ------------------------------------------------------------------ manifest


@dataclass(frozen=True)
class ManifestRow:
    subject: str
    visit: str
    role: str
    path: str
    group: str


def read_manifest(path) -> list:
    """
    Parse a manifest CSV. Relative mask paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read manifest {path}: {e}") from None
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"manifest {path} lacks columns {missing}")
        rows = []
        for i, r in enumerate(reader, start=2):
            subject, role, p = r["subject"].strip(), r["role"].strip().lower(), r["path"].strip()
            if not subject or not p:
                raise ConfigError(f"manifest line {i}: subject and path are required")
            if role not in ROLES:
                raise ConfigError(f"manifest line {i}: role {role!r} not in {ROLES}")
            full = Path(p) if Path(p).is_absolute() else path.parent / p
            rows.append(ManifestRow(subject, r["visit"].strip(), role, str(full), r["group"].strip()))
    if not rows:
        raise ConfigError(f"manifest {path} lists no scans")
    return rows


def _scans(rows) -> list:
    """``[(subject, visit, group, {role: path})]`` in first-appearance order."""
    out: dict = {}
    for r in rows:
        key = (r.subject, r.visit)
        entry = out.setdefault(key, [r.subject, r.visit, r.group, {}])
        if r.role in entry[3]:
            raise ConfigError(f"scan {key} lists role {r.role!r} twice")
        if r.group and entry[2] and r.group != entry[2]:
            raise ConfigError(f"scan {key} has conflicting groups")
        entry[2] = entry[2] or r.group
        entry[3][r.role] = r.path
    return [tuple(v) for v in out.values()]


def _scan_id(subject: str, visit: str) -> str:
    return f"{subject}_{visit}" if visit else subject


def _check_spacing(mask: VoxelMask, target: float) -> None:
    rep = validate_isotropic(mask, target)
    if not rep:
        raise ValueError(f"voxel spacing {mask.spacing} is not {target} mm isotropic (axes {rep.flagged_axes})")


def _parenchyma(roles: dict, label_map: dict) -> VoxelMask:
    if "labels" in roles:
        lv = load_labels(roles["labels"], label_map)
        return union_masks(lv.mask("gm"), lv.mask("wm"))
    if "parenchyma" in roles:
        return load_mask(roles["parenchyma"])
    if "gm" in roles and "wm" in roles:
        return union_masks(load_mask(roles["gm"]), load_mask(roles["wm"]))
    raise ValueError("scan needs a labels, parenchyma, or gm+wm mask")


def _csf(roles: dict, label_map: dict) -> VoxelMask:
    if "csf" in roles:
        return load_mask(roles["csf"])
    if "labels" in roles:
        return load_labels(roles["labels"], label_map).mask("csf")
    raise ValueError("scan needs a csf or labels mask")


# ----------------------------------------------------------------- execution


def _run_pool(fn, tasks: list, threads: int) -> list:
    """Map ``fn`` over ``tasks`` in order; results never depend on ``threads``."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks)), mp_context=ctx) as ex:
        return list(ex.map(fn, tasks))


class _Guarded:
    """Picklable wrapper turning a task exception into a failure record."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, task):
        try:
            return self.fn(task)
        except Exception as e:  # recorded per subject, the run continues
            return {"ok": False, "error": f"{type(e).__name__}: {e}", "key": task["key"]}


def _curves_of(mask: VoxelMask, cfg: dict, with_diagrams: bool):
    curves, aucs, dgms = {}, {}, []
    for axis in AXES:
        pairs = slice_diagrams(mask, axis)
        c = interpolate(curve_from_diagrams(pairs, cfg["norm"]), cfg["grid"])
        curves[axis] = c.values
        aucs[axis] = curve_auc(c)
        if with_diagrams:
            dgms.extend((axis, s.index, d.pairs) for s, d in pairs)
    return curves, aucs, dgms


def _p1_task(task: dict) -> dict:
    cfg = task["cfg"]
    par = _parenchyma(task["roles"], cfg["labels"])
    _check_spacing(par, cfg["spacing"])
    if not par.popcount():
        raise ValueError("parenchyma mask is empty")
    curves, aucs, dgms = _curves_of(par, cfg, cfg["diagrams"])
    return {"ok": True, "key": task["key"], "curves": curves, "auc": aucs, "diagrams": dgms}


def _h2_of(comp: VoxelMask, cfg: dict):
    tri = delaunay3(point_cloud(comp, cfg["jitter"], cfg["seed"]))
    return h2_diagram(alpha_filtration(tri), cfg["tau"]), len(tri.points), tri.cloud.jitter


def _p2_task(task: dict) -> dict:
    cfg = task["cfg"]
    t0 = time.perf_counter()
    csf = _csf(task["roles"], cfg["labels"])
    _check_spacing(csf, cfg["spacing"])
    comp, box = csf_complement(csf)
    dgm, n, jit = _h2_of(comp, cfg)
    ms = (time.perf_counter() - t0) * 1000.0
    return {
        "ok": True,
        "key": task["key"],
        "pairs": dgm.pairs,
        "point_count": n,
        "jitter_used": jit,
        "runtime_ms": round(ms, 3) if cfg["timing"] else None,
    }


_p1_worker = _Guarded(_p1_task)
_p2_worker = _Guarded(_p2_task)


def _exit_code(n_ok: int, n_failed: int) -> int:
    if n_ok == 0:
        return EXIT_FATAL
    return EXIT_PARTIAL if n_failed else EXIT_OK


def _failure_list(results) -> list:
    return [{"scan": r["key"], "error": r["error"]} for r in results if not r["ok"]]


# ------------------------------------------------------------------ commands


def cmd_pipeline1(config: RunConfig) -> int:
    """
    L1 curves per scan along the three axes, their AUCs, and a curve plot.

    Writes ``curves.csv`` (interpolated), ``auc.csv``, optionally
    ``slice_diagrams.csv``, ``curves.svg`` and ``run.json``.
    """
    cfg = config.validate()
    if not cfg.manifest:
        raise ConfigError("pipeline1 needs --manifest")
    scans = _scans(read_manifest(cfg.manifest))
    shared = {"labels": cfg.labels, "spacing": cfg.spacing, "norm": cfg.norm, "grid": cfg.grid, "diagrams": cfg.diagrams}
    tasks = [{"key": _scan_id(s, v), "roles": roles, "cfg": shared} for s, v, _, roles in scans]
    results = _run_pool(_p1_worker, tasks, cfg.threads)
    out = Path(cfg.out)
    grid = np.linspace(0.0, 1.0, cfg.grid)
    ok = [(scan, r) for scan, r in zip(scans, results) if r["ok"]]
    for r in results:
        if not r["ok"]:
            log.warning("scan %s failed: %s", r["key"], r["error"])
    if ok:
        curves = [(r["key"], L1Curve(a, grid, r["curves"][a], cfg.grid, cfg.norm)) for _, r in ok for a in AXES]
        with _atomic(out / "curves.csv") as tmp:
            write_curves_csv(tmp, curves)
        rows = []
        for (subject, visit, group, _), r in ok:
            a = [r["auc"][ax] for ax in AXES]
            rows.append([r["key"], subject, visit, group, *a, float(sum(a))])
        _write_rows(out / "auc.csv", ["scan", "subject", "visit", "group", *AXES, "total"], rows)
        if cfg.diagrams:
            dg, extra = [], []
            for _, r in ok:
                for axis, idx, pairs in r["diagrams"]:
                    dg.append(PersistenceDiagram(pairs, 1, "superlevel", "mm"))
                    extra.append({"scan": r["key"], "axis": axis, "slice_index": idx})
            with _atomic(out / "slice_diagrams.csv") as tmp:
                write_diagram_csv(tmp, dg, extra)
        items = [(r["key"], {a: L1Curve(a, grid, r["curves"][a], cfg.grid) for a in AXES}) for _, r in ok]
        with _atomic(out / "curves.svg") as tmp:
            plot_subject_curves(items, tmp)
    failures = _failure_list(results)
    _write_json(out / "run.json", {"command": "pipeline1", "config": cfg.recorded(), "scans_ok": [r["key"] for _, r in ok], "failures": failures})
    return _exit_code(len(ok), len(failures))


def _bottleneck_tables(base: dict, follow: dict, subjects: list):
    n = len(subjects)
    between = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            between[i, j] = between[j, i] = bottleneck(base[subjects[i]], base[subjects[j]])
    cross = np.array([[bottleneck(follow[a], base[b]) for b in subjects] for a in subjects]) if n else np.zeros((0, 0))
    within = np.array([cross[i, i] for i in range(n)])
    return within, between, cross


def cmd_pipeline2(config: RunConfig) -> int:
    """
    H2 diagrams of the CSF complement per scan and bottleneck comparisons.

    Writes ``diagrams.csv``, ``sidecars/<scan>.json``, ``within.csv``,
    ``between.csv`` (baseline x baseline), ``cross.csv`` (follow-up x
    baseline), ``within_between.json``, ``diagrams/<subject>.svg`` and
    ``run.json``.
    """
    cfg = config.validate()
    if not cfg.manifest:
        raise ConfigError("pipeline2 needs --manifest")
    scans = _scans(read_manifest(cfg.manifest))
    shared = {"labels": cfg.labels, "spacing": cfg.spacing, "jitter": cfg.jitter, "seed": cfg.seed, "tau": cfg.tau, "timing": cfg.timing}
    tasks = [{"key": _scan_id(s, v), "roles": roles, "cfg": shared} for s, v, _, roles in scans]
    results = _run_pool(_p2_worker, tasks, cfg.threads)
    out = Path(cfg.out)
    for r in results:
        if not r["ok"]:
            log.warning("scan %s failed: %s", r["key"], r["error"])

    dgms, extra = [], []
    by_visit: dict = {}
    groups: dict = {}
    for (subject, visit, group, _), r in zip(scans, results):
        if not r["ok"]:
            continue
        d = PersistenceDiagram(r["pairs"], 2, SUBLEVEL, "mm2")
        dgms.append(d)
        extra.append({"subject": subject, "visit": visit})
        by_visit[(subject, visit)] = d
        groups.setdefault(subject, group)
        _write_json(
            out / "sidecars" / f"{r['key']}.json",
            {"subject": subject, "visit": visit, "point_count": r["point_count"], "jitter": cfg.jitter, "jitter_used": r["jitter_used"], "seed": cfg.seed, "tau": cfg.tau, "runtime_ms": r["runtime_ms"]},
        )
    if dgms:
        with _atomic(out / "diagrams.csv") as tmp:
            write_diagram_csv(tmp, dgms, extra)

    failures = _failure_list(results)
    failed = {f["scan"] for f in failures}
    subjects = []
    for s, _, _, _ in scans:
        if s in subjects:
            continue
        have = [(s, v) in by_visit for v in (cfg.baseline_visit, cfg.followup_visit)]
        if all(have):
            subjects.append(s)
        elif not any(_scan_id(s, v) in failed for v in (cfg.baseline_visit, cfg.followup_visit)):
            failures.append({"scan": s, "error": f"needs visits {cfg.baseline_visit!r} and {cfg.followup_visit!r}"})

    notes = []
    if subjects:
        base = {s: by_visit[(s, cfg.baseline_visit)] for s in subjects}
        follow = {s: by_visit[(s, cfg.followup_visit)] for s in subjects}
        within, between, cross = _bottleneck_tables(base, follow, subjects)
        _write_rows(
            out / "within.csv",
            ["subject", "group", "within_mm2", "zero_within"],
            [[s, groups[s], w, w == 0] for s, w in zip(subjects, within)],
        )
        _write_matrix(out / "between.csv", subjects, between)
        _write_matrix(out / "cross.csv", subjects, cross)
        for s in subjects:
            with _atomic(out / "diagrams" / f"{s}.svg") as tmp:
                plot_diagrams([(cfg.baseline_visit, base[s]), (cfg.followup_visit, follow[s])], tmp, f"{s} H2")
        if len(subjects) >= 2:
            pd = analysis.PairwiseDistances(subjects, within, between, cross)
            wb = analysis.within_between(pd)
            wb["wilcoxon_exact_max_n"] = analysis.WILCOXON_EXACT_MAX_N
            _write_json(out / "within_between.json", wb)
        else:
            notes.append("within/between report needs at least two subjects")
    _write_json(
        out / "run.json",
        {"command": "pipeline2", "config": cfg.recorded(), "subjects_ok": subjects, "failures": failures, "notes": notes},
    )
    return _exit_code(len(subjects), len(failures))


def _synth_sources(cfg: RunConfig) -> list:
    """``[(name, PhantomSpec or roles dict)]`` from the config or the manifest."""
    if cfg.manifest:
        return [(s, roles) for s, _, _, roles in _scans(read_manifest(cfg.manifest))]
    if cfg.phantom_specs:
        specs = []
        for d in cfg.phantom_specs:
            d = dict(d)
            d["cavities"] = tuple((tuple(c), tuple(r)) for c, r in d.get("cavities", ()))
            specs.append(PhantomSpec(**d))
    else:
        specs = individual_specs(cfg.phantoms, cfg.seed, (cfg.dims,) * 3, cfg.spacing, cfg.n_cavities)
    return [(f"phantom_{i:02d}", s) for i, s in enumerate(specs)]


def _synth_task(task: dict) -> dict:
    cfg = task["cfg"]
    src = task["source"]
    if isinstance(src, PhantomSpec):
        par, csf = make_phantom(src)
        spec_record = src.to_dict()
    else:
        par, csf = _parenchyma(src, cfg["labels"]), _csf(src, cfg["labels"])
        spec_record = {"source": task["key"]}
    _check_spacing(par, cfg["spacing"])
    eseed = int(np.random.SeedSequence([cfg["seed"], task["index"]]).generate_state(1)[0])
    levels = erosion_series(par, ErosionSpec(cfg["levels"], eseed))
    v0 = par.popcount()
    rows, manifests, masks = [], [], []
    base = None
    for f, m in zip(cfg["levels"], levels):
        row = {"fraction": f, "volume": m.popcount(), "volume_loss": 1.0 - m.popcount() / v0}
        csf_f = atrophy(par, csf, m)
        if 1 in cfg["pipelines"]:
            _, aucs, _ = _curves_of(m, cfg, False)
            row.update({f"auc_{a}": aucs[a] for a in AXES})
            row["auc_total"] = float(sum(aucs.values()))
        if 2 in cfg["pipelines"]:
            dgm, n, _ = _h2_of(csf_complement(csf_f)[0], cfg)
            base = dgm if base is None else base
            row.update({"bottleneck": bottleneck(base, dgm), "h2_pairs": len(dgm), "point_count": n})
        rows.append(row)
        manifests.append(erosion_manifest(spec_record, f, eseed, par, m, csf_f))
        if cfg["export"]:
            masks.append((f, m, csf_f))
    return {"ok": True, "key": task["key"], "rows": rows, "manifests": manifests, "masks": masks}


_synth_worker = _Guarded(_synth_task)


def _level_tag(f: float) -> str:
    return f"level_{int(round(f * 100)):03d}"


def cmd_synth(config: RunConfig) -> int:
    """
    Erosion series through both pipelines with a Spearman report.

    Writes ``manifests/<phantom>_<level>.json``, ``synth_metrics.csv``,
    ``spearman.json``, ``synth.svg`` and ``run.json``; with ``export_masks``
    also ``masks/`` plus ``manifest_p1.csv`` (every level) and
    ``manifest_p2.csv`` (level 0 as baseline, the follow-up level as follow-up).
    """
    cfg = config.validate()
    sources = _synth_sources(cfg)
    shared = {
        "labels": cfg.labels,
        "spacing": cfg.spacing,
        "norm": cfg.norm,
        "grid": cfg.grid,
        "jitter": cfg.jitter,
        "seed": cfg.seed,
        "tau": cfg.tau,
        "levels": cfg.levels,
        "pipelines": cfg.pipelines,
        "export": cfg.export_masks,
    }
    tasks = [{"key": name, "source": src, "index": i, "cfg": shared} for i, (name, src) in enumerate(sources)]
    results = _run_pool(_synth_worker, tasks, cfg.threads)
    out = Path(cfg.out)
    ok = [r for r in results if r["ok"]]
    for r in results:
        if not r["ok"]:
            log.warning("phantom %s failed: %s", r["key"], r["error"])

    metric_cols = []
    if 1 in cfg.pipelines:
        metric_cols += [f"auc_{a}" for a in AXES] + ["auc_total"]
    if 2 in cfg.pipelines:
        metric_cols += ["bottleneck", "h2_pairs", "point_count"]
    table = []
    for r in ok:
        for row, man in zip(r["rows"], r["manifests"]):
            table.append([r["key"], row["fraction"], row["volume"], row["volume_loss"]] + [row[c] for c in metric_cols])
            _write_json(out / "manifests" / f"{r['key']}_{_level_tag(row['fraction'])}.json", man)
    if table:
        _write_rows(out / "synth_metrics.csv", ["phantom", "fraction", "volume", "volume_loss"] + metric_cols, table)
        loss = np.array([t[3] for t in table])
        tested = [c for c in metric_cols if c not in ("h2_pairs", "point_count")]
        report = {}
        for k, c in enumerate(metric_cols):
            if c in tested:
                y = np.array([t[4 + k] for t in table], dtype=float)
                report[c] = analysis.spearman(loss, y).to_dict() if len(y) >= 3 else None
        _write_json(out / "spearman.json", {"n_rows": len(table), "against": "volume_loss", "spearman": report})
        if tested:
            with _atomic(out / "synth.svg") as tmp:
                cols = {c: [t[4 + metric_cols.index(c)] for t in table] for c in tested}
                plot_synth(loss, cols, tmp)
    if cfg.export_masks and ok:
        _export(out, ok, cfg)
    failures = _failure_list(results)
    _write_json(out / "run.json", {"command": "synth", "config": cfg.recorded(), "phantoms_ok": [r["key"] for r in ok], "failures": failures})
    return _exit_code(len(ok), len(failures))


def _export(out: Path, ok: list, cfg: RunConfig) -> None:
    p1, p2 = [], []
    fu = cfg.followup()
    for r in ok:
        for f, m, csf_f in r["masks"]:
            tag = _level_tag(f)
            par_name = f"masks/{r['key']}_{tag}_parenchyma.hbmk"
            csf_name = f"masks/{r['key']}_{tag}_csf.hbmk"
            for mask, name in ((m, par_name), (csf_f, csf_name)):
                with _atomic(out / name) as tmp:
                    save_mask(mask, tmp)
            p1.append([r["key"], tag, "parenchyma", par_name, f"erosion_{int(round(f * 100)):03d}"])
            if f == 0.0:
                p2.append([r["key"], cfg.baseline_visit, "csf", csf_name, "phantom"])
            elif f == fu:
                p2.append([r["key"], cfg.followup_visit, "csf", csf_name, "phantom"])
    _write_rows(out / "manifest_p1.csv", MANIFEST_COLUMNS, p1)
    _write_rows(out / "manifest_p2.csv", MANIFEST_COLUMNS, p2)


def _read_auc(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_report(config: RunConfig) -> int:
    """
    Figures and statistics from earlier pipeline outputs.

    Looks in every ``inputs`` directory (default: ``out``) for
    ``curves.csv``/``auc.csv`` and ``diagrams.csv``. Produces
    ``l1_curves_by_group.svg``; with two groups also ``slice_stats.csv``,
    ``slicewise_effects.svg``, ``group_tests.json`` and, when both groups
    have at least ``cv_k`` members, ``cv_report.json``; ``h2_diagrams.svg``
    from pipeline 2 output; and ``summary.json``. Missing inputs are
    reported per plot.
    """
    cfg = config.validate()
    out = Path(cfg.out)
    dirs = [Path(p) for p in (cfg.inputs or (cfg.out,))]
    made, warns, errors = [], [], []

    def find(name):
        for d in dirs:
            if (d / name).exists():
                return d / name
        return None

    curves_p, auc_p, dg_p = find("curves.csv"), find("auc.csv"), find("diagrams.csv")
    if curves_p is None or auc_p is None:
        errors.append("L1 curve plot: no curves.csv/auc.csv among the inputs")
    else:
        curves = read_curves_csv(curves_p)
        aucs = _read_auc(auc_p)
        by_group: dict = {}
        positions = None
        for row in aucs:
            try:
                stack = [curves[(row["scan"], a)] for a in AXES]
            except KeyError:
                warns.append(f"scan {row['scan']} has no curves; skipped")
                continue
            positions = stack[0].positions
            by_group.setdefault(row["group"] or "ungrouped", []).append([c.values for c in stack])
        if cfg.positive_group is not None:
            by_group.setdefault(cfg.positive_group, [])
        arrays = {g: np.asarray(v, dtype=float).reshape(-1, 3, len(positions)) for g, v in by_group.items()} if positions is not None else {}
        if arrays:
            with _atomic(out / "l1_curves_by_group.svg") as tmp:
                warns += plot_group_curves(arrays, positions, tmp)
            made.append("l1_curves_by_group.svg")
        names = sorted(g for g in arrays if len(arrays[g]))
        if len(names) == 2:
            neg, pos = names if cfg.positive_group != names[0] else names[::-1]
            if min(len(arrays[neg]), len(arrays[pos])) >= 2:
                recs = analysis.slicewise_effects(arrays[pos], arrays[neg], AXES, cfg.alpha)
                _write_rows(out / "slice_stats.csv", ["axis", "position", "cohens_d", "p_adj", "reject"], [[r["axis"], r["position"], r["cohens_d"], r["p_adj"], r["reject"]] for r in recs])
                with _atomic(out / "slicewise_effects.svg") as tmp:
                    plot_slicewise(recs, tmp)
                made += ["slice_stats.csv", "slicewise_effects.svg"]
                tests = {}
                for col in list(AXES) + ["total"]:
                    a = [float(r[col]) for r in aucs if (r["group"] or "ungrouped") == pos]
                    b = [float(r[col]) for r in aucs if (r["group"] or "ungrouped") == neg]
                    tests[col] = {
                        "welch_t": analysis.welch_t(a, b),
                        "cohens_d": analysis.cohens_d(a, b),
                        "mann_whitney_u": analysis.mann_whitney_u(a, b),
                    }
                _write_json(out / "group_tests.json", {"positive": pos, "negative": neg, "auc": tests, "mwu_exact_rule": {"min_group_below": analysis.MWU_EXACT_MIN_GROUP, "total_at_most": analysis.MWU_EXACT_MAX_TOTAL}})
                made.append("group_tests.json")
            else:
                warns.append("slice-wise tests need two subjects per group")
            if min(len(arrays[neg]), len(arrays[pos])) >= cfg.cv_k:
                X = np.concatenate([arrays[neg].reshape(len(arrays[neg]), -1), arrays[pos].reshape(len(arrays[pos]), -1)])
                y = np.r_[np.zeros(len(arrays[neg]), int), np.ones(len(arrays[pos]), int)]
                cv = analysis.cv_evaluate(X, y, cfg.cv_k, cfg.seed)
                cv.update({"positive": pos, "negative": neg})
                _write_json(out / "cv_report.json", cv)
                made.append("cv_report.json")
            else:
                warns.append(f"classification needs at least {cfg.cv_k} subjects per group")
        elif arrays:
            warns.append(f"group statistics need exactly two non-empty groups, found {names}")
    if dg_p is None:
        errors.append("H2 diagram plot: no diagrams.csv among the inputs")
    else:
        groups = read_diagram_csv(dg_p, group_by=("subject", "visit"))
        items = [(f"{k[3]}/{k[4]}", d) for k, d in sorted(groups.items(), key=lambda kv: (kv[0][3], kv[0][4]))]
        with _atomic(out / "h2_diagrams.svg") as tmp:
            plot_diagrams(items, tmp)
        made.append("h2_diagrams.svg")
    _write_json(out / "summary.json", {"command": "report", "outputs": made, "warnings": warns, "errors": errors})
    for e in errors:
        log.error(e)
    if not made:
        return EXIT_FATAL
    return EXIT_PARTIAL if errors else EXIT_OK


COMMANDS = {"pipeline1": cmd_pipeline1, "pipeline2": cmd_pipeline2, "synth": cmd_synth, "report": cmd_report}


# ----------------------------------------------------------------------- CLI


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FATAL, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    if text.strip().lower() == "none":
        return ()
    return tuple(int(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="topoatrophy", description="Persistent-homology morphometry of tissue masks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config; flags override its values")
    common.add_argument("--manifest", help="CSV with columns subject,visit,role,path,group")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="subject-level worker processes")
    common.add_argument("--labels", type=parse_label_map, help="label map, e.g. csf=1,gm=2,wm=3")
    common.add_argument("--spacing", type=float, choices=(1.0, 2.0), help="required isotropic voxel size (mm)")
    p1 = _Parser(add_help=False)
    p1.add_argument("--grid", type=int, help="interpolation grid size (default 100)")
    p1.add_argument("--norm", choices=(FULL, FIRST), help="landscape L1 norm (default full)")
    p2 = _Parser(add_help=False)
    p2.add_argument("--tau", type=float, help="persistence threshold in mm^2 (default 0.25)")
    p2.add_argument("--jitter", type=float, help="triangulation jitter in mm (default 1e-3)")
    p2.add_argument("--timing", action=argparse.BooleanOptionalAction, default=None, help="record runtime_ms in sidecars")

    s = sub.add_parser("pipeline1", parents=[common, p1], help="slice-wise L1 curves")
    s.add_argument("--diagrams", action=argparse.BooleanOptionalAction, default=None, help="also write per-slice diagrams")
    s = sub.add_parser("pipeline2", parents=[common, p2], help="alpha-complex H2 and bottleneck distances")
    s.add_argument("--baseline-visit", dest="baseline_visit")
    s.add_argument("--followup-visit", dest="followup_visit")
    s = sub.add_parser("synth", parents=[common, p1, p2], help="synthetic erosion validation")
    s.add_argument("--phantoms", type=int, help="number of generated phantoms (default 10)")
    s.add_argument("--levels", type=_floats, help="erosion fractions, starting at 0")
    s.add_argument("--dims", type=int, help="phantom grid size per axis (default 64)")
    s.add_argument("--n-cavities", dest="n_cavities", type=int)
    s.add_argument("--pipelines", type=_ints, help="'1,2' (default), '1', '2' or 'none'")
    s.add_argument("--export-masks", dest="export_masks", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--followup-level", dest="followup_level", type=float)
    s = sub.add_parser("report", parents=[common, p1], help="plots and statistics from prior outputs")
    s.add_argument("--inputs", nargs="+", help="directories holding pipeline outputs (default --out)")
    s.add_argument("--positive-group", dest="positive_group")
    s.add_argument("--cv-k", dest="cv_k", type=int)
    s.add_argument("--alpha", type=float)
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        unknown = set(loaded) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        values.update(loaded)
        if isinstance(values.get("labels"), str):
            values["labels"] = parse_label_map(values["labels"])
    for k, v in vars(args).items():
        if k in known and v is not None:
            values[k] = v
    values["command"] = args.command
    return RunConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except ConfigError as e:
        print(f"topoatrophy: {e}", file=sys.stderr)
        return EXIT_FATAL
    except Exception as e:  # fatal: nothing useful was produced
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_FATAL
