"""Margins of the comparison checks under uniform refinement.

Runs a config at refine levels 0..L and writes margins.csv plus a gnuplot
script (margin vs h) to the output directory.

    python3 scripts/refinement_study.py src/symmcomp/configs/square_thm1_thm2.cfg --levels 2 --out out/study
"""

from __future__ import annotations

import argparse
import csv
from dataclasses import replace
from pathlib import Path

from symmcomp.cli import execute, load_config
from symmcomp.harness import refinement_consistent

GNUPLOT = """\
set datafile separator ','
set logscale x
set key bottom right
set xlabel 'h'
set ylabel 'margin'
plot for [i=2:{last}] '{csv}' using 1:i with linespoints title columnhead(i)
"""


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--levels", type=int, default=2)
    ap.add_argument("--out", default="out/refinement")
    args = ap.parse_args()
    base = load_config(args.config)
    out = Path(args.out)
    rows, previous = [], None
    names = None
    for level in range(args.levels + 1):
        cfg = replace(base, refine=base.refine + level, golden=None)
        _, reports = execute(cfg, out / f"level{level}")
        checks = [(r.experiment.split("/")[-1] + ":" + c.name, c) for r in reports for c in r.checks]
        names = names or [n for n, _ in checks]
        h = reports[0].h
        rows.append([h] + [c.margin for _, c in checks])
        print(f"level {level}: h = {h:.5g}")
        if previous is not None:
            for new, old in zip(reports, previous):
                ok = refinement_consistent(old, new)
                for name, flag in ok.items():
                    print(f"  {new.experiment}/{name}: {'consistent' if flag else 'DECREASED beyond tol(h)'}")
        previous = reports
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "margins.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h"] + names)
        w.writerows([[repr(x) for x in row] for row in rows])
    (out / "margins.gp").write_text(GNUPLOT.format(last=len(names) + 1, csv="margins.csv"))
    print(f"wrote {out / 'margins.csv'}")


if __name__ == "__main__":
    main()
