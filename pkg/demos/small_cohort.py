"""
End-to-end run on a small synthetic cohort.

Generates phantoms with an erosion series, runs both pipelines on the
exported masks and builds the report. Takes about a minute at the default
32-voxel grid::

    python3 demos/small_cohort.py /tmp/topoatrophy-demo
"""

import json
import sys
from pathlib import Path

from topoatrophy.cli import main


def run(out: Path, dims: int = 32, phantoms: int = 6) -> None:
    synth = out / "synth"
    steps = [
        ["synth", "--out", str(synth), "--dims", str(dims), "--phantoms", str(phantoms),
         "--levels", "0,0.25,0.5", "--export-masks", "--seed", "1"],
        ["pipeline1", "--manifest", str(synth / "manifest_p1.csv"), "--out", str(out / "p1"), "--grid", "50"],
        ["pipeline2", "--manifest", str(synth / "manifest_p2.csv"), "--out", str(out / "p2")],
        ["report", "--inputs", str(out / "p1"), str(out / "p2"), "--out", str(out / "report"), "--cv-k", "3"],
    ]
    for argv in steps:
        code = main(argv)
        print(f"{argv[0]:<10} exit {code}")
        if code == 1:
            raise SystemExit(code)

    rho = json.loads((synth / "spearman.json").read_text())["spearman"]
    for name, r in rho.items():
        print(f"spearman(volume loss, {name}) = {r['statistic']:+.3f}")
    wb = json.loads((out / "p2" / "within_between.json").read_text())
    print(f"follow-ups nearest own baseline: {sum(wb['nearest_own'])}/{len(wb['subjects'])}")
    print(f"median R = {wb['median_R']:.2f}, Wilcoxon W = {wb['wilcoxon']['statistic']:g}")


if __name__ == "__main__":
    run(Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out"))
