"""Command-line experiment runner.

    symmcomp run CONFIG [--out DIR] [--update-golden]
    symmcomp mesh "disk r=1 h=0.05" -o disk.msh [--ell -1]
    symmcomp refine disk.msh [-o disk_r.msh]
    symmcomp report --dir OUT

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 hypothesis violation, 4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import mesh as meshlib
from .errors import ConfigError, HypothesisError, InvalidMeshError, NonConvergenceError
from .geometry import WeightParams, isoperimetric_check, weighted_measure
from .harness import (
    ComparisonReport,
    HarnessConfig,
    Pipeline,
    compare_golden,
    is_unit_source,
    radial_distribution,
    verify_faber_krahn,
    verify_flux,
    verify_minima,
    verify_norm_comparison,
    verify_pointwise_comparison,
    write_golden,
)
from .mesh import ScalarField
from .rearrangement import distribution_function
from .solver import RobinCoefficient, RobinProblem, SolverConfig, evaluate_expression
from .spectral import EigenConfig

log = logging.getLogger("symmcomp")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NONCONVERGENCE = 0, 1, 2, 3, 4
CHECKS = ("isoperimetric", "norms", "pointwise", "faber_krahn", "minima", "flux")
DEFAULT_CHECKS = ("isoperimetric", "norms", "pointwise", "minima", "flux")


@dataclass
class ExperimentConfig:
    id: str
    domain: str
    params: WeightParams
    beta: RobinCoefficient
    source: str = "1"
    refine: int = 0
    checks: tuple = DEFAULT_CHECKS
    output: str | None = None
    golden: str | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    eigen: EigenConfig = field(default_factory=EigenConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def build_mesh(self) -> meshlib.TriMesh:
        m = meshlib.parse_shape_spec(self.domain)
        for _ in range(self.refine):
            m = meshlib.refine(m)
        return m

    def build_problem(self, mesh: meshlib.TriMesh) -> RobinProblem:
        v = mesh.vertices
        f = ScalarField(mesh, evaluate_expression(self.source, v[:, 0], v[:, 1]))
        return RobinProblem(mesh, self.params, f, self.beta)


# ---------------------------------------------------------------------------
# config parsing


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


class _Fields:
    """Typed access to a nested mapping with line/field diagnostics."""

    def __init__(self, data: dict, text: str, source: str):
        self.data = data
        self.text = text
        self.source = source

    def where(self, section, key=None) -> str:
        line = _line_of(self.text, section, key)
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    def get(self, section, key, conv=str, default=...):
        sec = self.data.get(section)
        if sec is None or key not in sec:
            if default is ...:
                raise ConfigError(f"{self.where(section)}: missing field {key!r}")
            return default
        raw = sec[key]
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.where(section, key)}: invalid value {raw!r} ({exc})") from None


def _floatish(x) -> float:
    return float(x)


def _intish(x) -> int:
    if isinstance(x, float) and not x.is_integer():
        raise ValueError("expected an integer")
    return int(x)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    else:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
        cp.optionxform = str
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        data = {s: dict(cp.items(s)) for s in cp.sections()}
    return config_from_mapping(data, text, str(path))


def config_from_mapping(data: dict, text: str = "", source: str = "<config>") -> ExperimentConfig:
    known = {"experiment", "domain", "params", "beta", "source", "solver", "eigen", "harness"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}")
    F = _Fields(data, text, source)
    exp_id = F.get("experiment", "id")
    checks = F.get("experiment", "checks", str, ",".join(DEFAULT_CHECKS))
    checks = tuple(c.strip() for c in (checks if isinstance(checks, list) else str(checks).split(",")) if c.strip())
    bad = [c for c in checks if c not in CHECKS]
    if bad:
        raise ConfigError(f"{F.where('experiment', 'checks')}: unknown check(s) {bad}; choose from {CHECKS}")

    if "spec" in data.get("domain", {}):
        domain = F.get("domain", "spec")
    else:
        shape = F.get("domain", "shape")
        parts = [shape]
        for k, v in data.get("domain", {}).items():
            if k in ("shape", "refine"):
                continue
            val = "(" + ",".join(str(x) for x in v) + ")" if isinstance(v, (list, tuple)) else str(v).replace(" ", "")
            parts.append(f"{k}={val}")
        domain = " ".join(parts)
    refine = F.get("domain", "refine", _intish, 0)

    params = WeightParams(
        n=F.get("params", "n", _intish, 2),
        p=F.get("params", "p", _floatish),
        ell=F.get("params", "ell", _floatish),
    )
    if params.n != 2:
        raise ConfigError(f"{F.where('params', 'n')}: only n = 2 meshes are supported")

    kind = F.get("beta", "kind", str, "constant")
    if kind == "constant":
        beta = RobinCoefficient.constant(F.get("beta", "value", _floatish))
    elif kind == "expression":
        try:
            beta = RobinCoefficient.expression(F.get("beta", "value"))
        except ValueError as exc:
            raise ConfigError(f"{F.where('beta', 'value')}: {exc}") from None
    else:
        raise ConfigError(f"{F.where('beta', 'kind')}: expected 'constant' or 'expression', got {kind!r}")

    source = str(F.get("source", "expr", str, "1"))
    try:
        evaluate_expression(source, np.array([0.3]), np.array([0.2]))
    except ValueError as exc:
        raise ConfigError(f"{F.where('source', 'expr')}: {exc}") from None

    solver = SolverConfig(
        eps0=F.get("solver", "eps0", _floatish, 1e-2),
        eps_min=F.get("solver", "eps_min", _floatish, 1e-6),
        tol=F.get("solver", "tol", _floatish, None),
        max_newton=F.get("solver", "max_newton", _intish, 200),
    )
    eigen = EigenConfig(
        tol=F.get("eigen", "tol", _floatish, 1e-10),
        tol_nonlinear=F.get("eigen", "tol_nonlinear", _floatish, 1e-8),
    )
    harness = HarnessConfig(solver=solver, eigen=eigen)
    for key in ("c_integral_p2", "c_integral", "c_pointwise", "c_eigen"):
        setattr(harness, key, F.get("harness", key, _floatish, getattr(harness, key)))
    harness.lorentz = str(F.get("harness", "lorentz", str, "yes")).lower() in ("1", "yes", "true", "on")
    return ExperimentConfig(
        id=str(exp_id),
        domain=domain,
        params=params,
        beta=beta,
        source=source,
        refine=refine,
        checks=checks,
        output=F.get("experiment", "output", str, None),
        golden=F.get("harness", "golden", str, None),
        solver=solver,
        eigen=eigen,
        harness=harness,
    )


# ---------------------------------------------------------------------------
# run


GNUPLOT_PROFILES = """\
set datafile separator ','
set key top right
set xlabel 'r'
set ylabel 'value'
set title '{title}'
plot '{csv}' using 1:2 with lines title 'u#', \\
     '{csv}' using 1:3 with lines title 'v'
"""


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def execute(cfg: ExperimentConfig, out_dir: Path, update_golden: bool = False) -> tuple[int, list]:
    """Run every requested check; return (exit code, reports)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        mesh = cfg.build_mesh()
    except (ValueError, InvalidMeshError) as exc:
        raise ConfigError(f"[domain] {cfg.domain!r}: {exc}") from None
    cfg.params.require(allow_classical=True)
    problem = cfg.build_problem(mesh)
    problem.validate()
    meshlib.write_mesh(mesh, out_dir / "mesh.msh")

    reports: list[ComparisonReport] = []
    P = cfg.params
    if "isoperimetric" in cfg.checks:
        iso = isoperimetric_check(mesh, P)
        rep = ComparisonReport(f"{cfg.id}/isoperimetric", mesh.h, {"H1": P.h1, "H2": P.h2})
        rep.add("perimeter>=gamma*measure^e", iso.rhs, iso.lhs, iso.tol, margin=iso.margin)
        reports.append(rep)

    need_pipeline = any(c in cfg.checks for c in ("norms", "pointwise", "minima", "flux"))
    pl = Pipeline.run(problem, cfg.harness) if need_pipeline else None
    if pl is not None:
        pl.u.to_csv(out_dir / "u.csv")
        pl.u.write_field(out_dir / "u.field")
        pl.v.to_csv(out_dir / "v.csv")
        mu = distribution_function(pl.u.field, P)
        mu.to_csv(out_dir / "mu_u.csv", header=("t", "mu"))
        radial_distribution(pl.v).to_csv(out_dir / "mu_v.csv", header=("t", "mu"))
    if "norms" in cfg.checks:
        reports.append(verify_norm_comparison(problem, cfg.harness, f"{cfg.id}/norms", pl))
    if "pointwise" in cfg.checks:
        if not is_unit_source(problem):
            log.warning("pointwise comparison skipped: it needs f = 1")
        else:
            rep = verify_pointwise_comparison(problem, cfg.harness, f"{cfg.id}/pointwise", pl)
            curves = rep.info.pop("curves", None)
            if curves is not None:
                _write_csv(out_dir / "pointwise.csv", ["r", "u_sharp", "v"],
                           zip(curves["r"], curves["u_sharp"], curves["v"]))
                (out_dir / "pointwise.gp").write_text(
                    GNUPLOT_PROFILES.format(title=f"{cfg.id}: u# vs v", csv="pointwise.csv"))
            else:
                log.warning("pointwise comparison refused: %s", rep.info.get("reason"))
            reports.append(rep)
    if "minima" in cfg.checks:
        reports.append(verify_minima(pl.u, pl.v, cfg.harness.pointwise_tol(mesh.h), f"{cfg.id}/minima"))
    if "flux" in cfg.checks:
        reports.append(verify_flux(pl, f"{cfg.id}/flux"))
    if "faber_krahn" in cfg.checks:
        reports.append(verify_faber_krahn(mesh, cfg.beta, P, cfg.harness, f"{cfg.id}/faber_krahn"))

    doc = {
        "experiment": cfg.id,
        "domain": cfg.domain,
        "refine": cfg.refine,
        "params": {"n": P.n, "p": P.p, "ell": P.ell},
        "beta": cfg.beta.describe(),
        "source": cfg.source,
        "weighted_measure": weighted_measure(mesh, P.ell),
        "reports": [r.to_dict() for r in sorted(reports, key=lambda r: r.experiment)],
    }
    failed = [r for r in reports if r.status == "fail"]
    doc["status"] = "fail" if failed else "pass"
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out_dir / "report.csv").write_text(
        "".join(r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1] for i, r in enumerate(reports)))

    code = EXIT_FAIL if failed else EXIT_OK
    if cfg.golden:
        gdir = Path(cfg.golden)
        for r in reports:
            if update_golden:
                write_golden(r, gdir)
            else:
                diffs = compare_golden(r, gdir)
                for d in diffs:
                    log.error("golden mismatch: %s", d)
                if diffs:
                    code = EXIT_FAIL
    return code, reports


def cmd_run(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        bundled = bundled_config(args.config)
        if bundled is not None:
            cfg_path = bundled
    try:
        cfg = load_config(cfg_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output or f"out/{cfg.id}")
    try:
        code, reports = execute(cfg, out, args.update_golden)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisError as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    for r in reports:
        worst = min((c.margin for c in r.checks if not c.informational), default=float("nan"))
        print(f"{r.experiment:<40} {r.status:<13} min margin {worst: .6e}")
    print(f"wrote {out}")
    return code


def bundled_config(name: str) -> Path | None:
    base = resources.files("symmcomp") / "configs"
    cand = base / Path(name).name
    return Path(str(cand)) if cand.is_file() else None


def cmd_mesh(args) -> int:
    try:
        m = meshlib.parse_shape_spec(args.spec)
    except (ValueError, InvalidMeshError) as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    meshlib.write_mesh(m, args.output)
    msg = f"{args.output}: {m.n_vertices} vertices, {m.n_triangles} triangles, h = {m.h:.6g}"
    if args.ell is not None:
        msg += f", |Ω|_ell = {weighted_measure(m, args.ell):.12g}"
    print(msg)
    return EXIT_OK


def cmd_refine(args) -> int:
    src = Path(args.file)
    try:
        m = meshlib.read_mesh(src)
    except (OSError, ValueError, InvalidMeshError) as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for _ in range(args.times):
        m = meshlib.refine(m)
    out = Path(args.output) if args.output else src.with_name(src.stem + "_r" + src.suffix)
    meshlib.write_mesh(m, out)
    print(f"{out}: {m.n_vertices} vertices, {m.n_triangles} triangles, h = {m.h:.6g}")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.dir)
    files = sorted(root.rglob("report.json"))
    if not files:
        print(f"no report.json under {root}", file=sys.stderr)
        return EXIT_CONFIG
    rows = []
    for f in files:
        doc = json.loads(f.read_text())
        for r in doc["reports"]:
            for c in r["checks"]:
                rows.append([r["experiment"], c["name"], r["h"], c["margin"], c["tol"],
                             r["status"], int(c["informational"])])
    rows.sort(key=lambda x: (x[0], x[1]))
    _write_csv(root / "summary.csv", ["experiment", "check", "h", "margin", "tol", "status", "informational"], rows)
    (root / "summary.json").write_text(json.dumps(
        [dict(zip(["experiment", "check", "h", "margin", "tol", "status", "informational"], r)) for r in rows],
        indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(f"{r[0]:<40} {r[1]:<34} {r[5]:<13} {r[3]: .6e}")
    return EXIT_FAIL if any(r[5] == "fail" for r in rows) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="symmcomp", description="Weighted Robin comparison experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config (INI or JSON)")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--update-golden", action="store_true", help="store margins as the new goldens")
    r.set_defaults(fn=cmd_run)
    m = sub.add_parser("mesh", help="generate a mesh from a shape spec")
    m.add_argument("spec", help='e.g. "disk r=1 h=0.05 offset=(0.5,0)"')
    m.add_argument("-o", "--output", required=True)
    m.add_argument("--ell", type=float, help="also print the ell-weighted measure")
    m.set_defaults(fn=cmd_mesh)
    f = sub.add_parser("refine", help="uniform midpoint refinement of a mesh file")
    f.add_argument("file")
    f.add_argument("-o", "--output")
    f.add_argument("--times", type=int, default=1)
    f.set_defaults(fn=cmd_refine)
    s = sub.add_parser("report", help="summarize report.json files under a directory")
    s.add_argument("--dir", required=True)
    s.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
