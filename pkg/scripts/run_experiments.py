"""Run every experiment config in a directory and summarize the results.

Experiments are independent; up to SYMMCOMP_THREADS run at once and the
summary is ordered by experiment id.

    python3 scripts/run_experiments.py [CONFIG_DIR] --out out/all
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from symmcomp.cli import EXIT_OK, cmd_report, execute, load_config
from symmcomp.errors import SymmcompError
from symmcomp.spectral import worker_count


def _run_one(path: str, out: str) -> tuple[str, int, str]:
    cfg = load_config(path)
    try:
        code, reports = execute(cfg, Path(out) / cfg.id)
    except SymmcompError as exc:
        return cfg.id, 2, str(exc)
    return cfg.id, code, ", ".join(f"{r.experiment.split('/')[-1]}={r.status}" for r in reports)


def main() -> int:
    default_dir = str(resources.files("symmcomp") / "configs")
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config_dir", nargs="?", default=default_dir)
    ap.add_argument("--out", default="out/all")
    args = ap.parse_args()
    paths = sorted(str(p) for p in Path(args.config_dir).glob("*.cfg"))
    with ProcessPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(_run_one, paths, [args.out] * len(paths)))
    worst = EXIT_OK
    for exp_id, code, summary in sorted(results):
        print(f"{exp_id:<28} exit {code}  {summary}")
        worst = max(worst, code)
    cmd_report(argparse.Namespace(dir=args.out))
    return worst


if __name__ == "__main__":
    sys.exit(main())
