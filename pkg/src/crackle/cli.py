"""Command line entry point: sample, diagram, integrate, verify, plot, report."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import limits, verify
from .errors import BudgetExceeded, ConfigError, CrackleError, ParseError
from .model import PointCloud, Regime, TailKind, TailModel, make_plan, sample_cloud, trial_seed
from .ph import Variant, crackle_diagram, crackle_diagram_tilde

log = logging.getLogger("crackle")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
DIAGRAM_HEADER = ["trial", "component_id", "m", "dim", "birth", "death", "birth_scaled", "death_scaled"]
INTEGRATE_HEADER = ["region", "kind", "lambda", "stderr", "samples", "acceptance_rate"]


def fmt(v):
    """Decimal text with 17 significant digits (lossless for doubles)."""
    return format(float(v), ".17g")


# -- configuration -----------------------------------------------------------------

def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _regions(text):
    return tuple(r.strip() for r in text.split(";") if r.strip())


def _bool(text):
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_READ = {float: float, int: lambda s: int(float(s)) if "e" in s.lower() else int(s), str: str,
         bool: _bool, "floats": _floats, "regions": _regions}
_WRITE = {float: fmt, int: str, str: str, bool: lambda b: "true" if b else "false",
          "floats": lambda v: ",".join(fmt(x) for x in v), "regions": lambda v: ";".join(v)}


def _opt(key, default, kind=None):
    kind = kind or type(default)
    return field(default=default, metadata={"key": key, "kind": kind})


@dataclass
class RunConfig:
    tail_kind: str = _opt("tail.kind", "pareto")
    alpha: float = _opt("tail.alpha", 3.0)
    tau: float = _opt("tail.tau", 1.0)
    d: int = _opt("plan.d", 2)
    k: int = _opt("plan.k", 1)
    p: int = _opt("plan.p", 3)
    n: tuple = _opt("plan.n", (1e4,), "floats")
    M: float = _opt("plan.M", 1.0)
    regime: str = _opt("plan.regime", "critical")
    kappa: float = _opt("plan.kappa", 1.5)
    trials: int = _opt("run.trials", 100)
    seed: int = _opt("run.seed", 0)
    out: str = _opt("run.out", "out")
    threads: int = _opt("run.threads", 1)
    max_points: float = _opt("run.max_points", 5e6)
    r_min: float = _opt("sample.r_min", 0.0)
    regions: tuple = _opt("test.regions", ("shrink(0.02,rect(0.2,1,0.3,1.3)&dkm(1,3))",), "regions")
    m: int = _opt("test.m", 0)
    coverage_region: str = _opt("test.coverage_region", "")
    eps: float = _opt("test.eps", 0.05)
    samples: int = _opt("mc.samples", 400000)
    mc_seed: int = _opt("mc.seed", 1)

    @classmethod
    def keys(cls):
        return {f.metadata["key"]: f for f in fields(cls)}

    @classmethod
    def parse(cls, text, path="<config>"):
        known = cls.keys()
        values = {}
        for row, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(path, row, f"expected key = value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ParseError(path, row, f"unknown key {key!r}")
            f = known[key]
            try:
                values[f.name] = _READ[f.metadata["kind"]](val)
            except ValueError as exc:
                raise ParseError(path, row, f"bad value for {key}: {exc}") from None
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        return cls.parse(Path(path).read_text(), str(path))

    def dumps(self):
        return "".join(f"{f.metadata['key']} = {_WRITE[f.metadata['kind']](getattr(self, f.name))}\n"
                       for f in fields(self))

    def validate(self):
        if self.tail_kind not in ("pareto", "vonmises"):
            raise ConfigError(f"tail.kind must be pareto or vonmises, got {self.tail_kind!r}")
        if self.regime not in ("critical", "subcritical"):
            raise ConfigError(f"plan.regime must be critical or subcritical, got {self.regime!r}")
        if not self.n:
            raise ConfigError("plan.n is empty")
        for r in self.regions + ((self.coverage_region,) if self.coverage_region else ()):
            try:
                limits.parse_region(r)
            except ValueError as exc:
                raise ConfigError(f"test region {r!r}: {exc}") from None

    def tail(self):
        if self.tail_kind == "pareto":
            return TailModel.pareto(self.alpha, self.d)
        return TailModel.von_mises(self.tau, self.d)

    def plans(self):
        regime = Regime.CRITICAL if self.regime == "critical" else Regime.SUBCRITICAL
        tail = self.tail()
        return [make_plan(tail, self.k, self.p, n, self.M, regime, self.kappa) for n in self.n]

    def size(self):
        return self.m or self.p

    def digest(self):
        """Hash of the settings that determine results (output location and threads excluded)."""
        keep = [line for line in self.dumps().splitlines(True)
                if not line.startswith(("run.out ", "run.threads "))]
        return hashlib.sha256("".join(keep).encode()).hexdigest()


# -- manifest ------------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str = __version__
    constants_version: str = limits.CONSTANTS_VERSION
    created: str = ""
    files: dict = dataclasses.field(default_factory=dict)

    def add(self, path):
        self.files[Path(path).name] = sha256_file(path)

    def write(self, out_dir):
        self.created = datetime.datetime.now(datetime.timezone.utc).isoformat()
        path = Path(out_dir) / "manifest.json"
        old = json.loads(path.read_text()) if path.exists() else {}
        files = {**old.get("files", {}), **self.files}
        data = {**dataclasses.asdict(self), "files": dict(sorted(files.items()))}
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return path


# -- file formats -------------------------------------------------------------------

def write_cloud(path, cloud: PointCloud):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(cloud.dim)])
        for row in cloud.points:
            w.writerow([fmt(v) for v in row])


def read_cloud(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, 1, "empty file")
    header = rows[0]
    if header != [f"x{i}" for i in range(len(header))]:
        raise ParseError(path, 1, f"bad header {header}")
    pts = []
    for row_no, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise ParseError(path, row_no, f"expected {len(header)} columns, got {len(row)}")
        try:
            pts.append([float(v) for v in row])
        except ValueError as exc:
            raise ParseError(path, row_no, str(exc)) from None
    return np.array(pts, dtype=float).reshape(-1, len(header))


def diagram_rows(trial, diagram):
    M = diagram.plan.M
    return [[trial, pr.component_id, pr.component_size, pr.dim, pr.birth, pr.death, pr.birth / M, pr.death / M]
            for pr in diagram.pairs]


def write_diagram(path, rows):
    rows = sorted(rows, key=lambda r: (r[0], r[6], r[7], r[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAGRAM_HEADER)
        for r in rows:
            w.writerow([r[0], r[1], r[2], r[3]] + [fmt(v) for v in r[4:]])


def read_diagram(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != DIAGRAM_HEADER:
        raise ParseError(path, 1, f"expected header {','.join(DIAGRAM_HEADER)}")
    out = []
    for row_no, row in enumerate(rows[1:], 2):
        if len(row) != len(DIAGRAM_HEADER):
            raise ParseError(path, row_no, f"expected {len(DIAGRAM_HEADER)} columns, got {len(row)}")
        try:
            out.append([int(v) for v in row[:4]] + [float(v) for v in row[4:]])
        except ValueError as exc:
            raise ParseError(path, row_no, str(exc)) from None
    return out


def write_integrate(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(INTEGRATE_HEADER)
        for region, kind, est in rows:
            w.writerow([region, kind, fmt(est.value), fmt(est.stderr), est.samples, fmt(est.acceptance_rate)])


def read_integrate(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != INTEGRATE_HEADER:
        raise ParseError(path, 1, f"expected header {','.join(INTEGRATE_HEADER)}")
    out = []
    for row_no, row in enumerate(rows[1:], 2):
        try:
            out.append((row[0], row[1], float(row[2]), float(row[3]), int(row[4]), float(row[5])))
        except (ValueError, IndexError) as exc:
            raise ParseError(path, row_no, str(exc)) from None
    return out


# -- commands -----------------------------------------------------------------------

def _out(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_sample(cfg: RunConfig):
    out = _out(cfg)
    cloud = sample_cloud(cfg.tail(), cfg.n[0], trial_seed(cfg.seed, 0), r_min=cfg.r_min, max_points=cfg.max_points)
    path = out / "cloud.csv"
    write_cloud(path, cloud)
    return [path]


def cmd_diagram(cfg: RunConfig, cloud_path=None):
    plan = cfg.plans()[0]
    out = _out(cfg)
    rows = []
    if cloud_path:
        pts = read_cloud(cloud_path)
        rows += diagram_rows(0, crackle_diagram(PointCloud(pts), plan))
    else:
        r_min = max(0.0, plan.R - 2.0 * plan.M)
        for i in range(cfg.trials):
            cloud = sample_cloud(plan.tail, plan.n, trial_seed(cfg.seed, i), r_min=r_min,
                                 max_points=cfg.max_points)
            rows += diagram_rows(i, crackle_diagram(cloud, plan))
    path = out / "diagram.csv"
    write_diagram(path, rows)
    return [path]


def _limit_estimate(cfg: RunConfig, region, m=None):
    m = m or cfg.size()
    if cfg.tail_kind == "pareto":
        return "heavy", limits.mean_measure_heavy(region, cfg.k, m, cfg.alpha, cfg.d, cfg.samples, cfg.mc_seed)
    c = cfg.tail().c_limit(cfg.M)
    return "exp", limits.mean_measure_exp(region, cfg.k, m, c, cfg.d, cfg.samples, cfg.mc_seed)


def cmd_integrate(cfg: RunConfig):
    out = _out(cfg)
    rows = []
    for expr in cfg.regions:
        kind, est = _limit_estimate(cfg, limits.parse_region(expr))
        rows.append((expr, kind, est))
    path = out / "integrate.csv"
    write_integrate(path, rows)
    return [path]


def _guarded(name, fn):
    try:
        return fn()
    except CrackleError as exc:
        return verify.TestReport(name, f"error: {type(exc).__name__}", math.nan, math.nan, math.nan, False,
                                 details={"error": str(exc)})


def run_verify(cfg: RunConfig):
    """All reports for a config, in a fixed order."""
    reports = []
    regions = [limits.parse_region(r) for r in cfg.regions]
    lams = [_limit_estimate(cfg, A)[1] for A in regions]
    for rung, plan in enumerate(cfg.plans()):
        batch = verify.run_trials(plan, cfg.trials, cfg.seed + rung, workers=cfg.threads)
        for A, lam in zip(regions, lams):
            for rep in (_guarded("poisson_gof", lambda: verify.poisson_gof(batch, A, lam, cfg.size())),
                        _guarded("hit_miss", lambda: verify.hit_miss_estimate(batch, A, lam, cfg.size()))):
                rep.details.update({"n": plan.n, "R": plan.R, "region": A.expr})
                reports.append(rep)
        if cfg.coverage_region:
            cov = limits.parse_region(cfg.coverage_region)
            rep = _guarded("coverage", lambda: verify.coverage_fraction(batch, cov, cfg.eps))
            reports.append(rep)
    return reports


def cmd_verify(cfg: RunConfig):
    out = _out(cfg)
    reports = run_verify(cfg)
    path = out / "reports.jsonl"
    passed = all(r.passed for r in reports)
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
        fh.write(json.dumps({"summary": {"reports": len(reports), "failed": sum(not r.passed for r in reports),
                                         "passed": passed, "config_hash": cfg.digest()}}, sort_keys=True) + "\n")
    return [path], passed


def read_reports(path):
    reports, summary = [], None
    with open(path) as fh:
        for row_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, row_no, str(exc)) from None
            if "summary" in data:
                summary = data["summary"]
            else:
                reports.append(verify.TestReport(**data))
    return reports, summary


# -- plot -------------------------------------------------------------------------

PALETTE = ["#0173b2", "#de8f05", "#029e73", "#d55e00", "#cc78bc", "#ca9161", "#949494", "#56b4e9"]


def render_svg(rows, k, p, width=480, height=480, pad=48):
    """Scatter of scaled pairs colored by component size over B_{k,p-1} and the Delta_{k,p} line."""
    xy = np.array([[r[6], r[7]] for r in rows], dtype=float).reshape(-1, 2)
    bound = 1.0
    b_prev = pi_prev = None
    if p - 1 >= k + 2:
        b_prev, pi_prev = limits.b_km(k, p - 1), limits.pi_km(k, p - 1)
        bound = max(bound, b_prev * pi_prev)
    pi_p = limits.pi_km(k, p)
    if len(xy):
        bound = max(bound, float(xy.max()))
    bound *= 1.05
    scale = (width - 2 * pad) / bound
    X = lambda v: pad + v * scale
    Y = lambda v: height - pad - v * scale
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if b_prev is not None:
        poly = [(0, 0), (b_prev, b_prev), (b_prev, pi_prev * b_prev)]
        pts = " ".join(f"{X(a):.3f},{Y(b):.3f}" for a, b in poly)
        parts.append(f'<polygon points="{pts}" fill="#cccccc" stroke="none"/>')
    parts.append(f'<line x1="{X(0):.3f}" y1="{Y(0):.3f}" x2="{X(bound):.3f}" y2="{Y(bound):.3f}" '
                 f'stroke="black" stroke-width="1"/>')
    xe = min(bound, bound / pi_p)
    parts.append(f'<line x1="{X(0):.3f}" y1="{Y(0):.3f}" x2="{X(xe):.3f}" y2="{Y(pi_p * xe):.3f}" '
                 f'stroke="black" stroke-dasharray="4 3" stroke-width="1"/>')
    parts.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>')
    parts.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>')
    parts.append(f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">birth / M</text>')
    parts.append(f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 14 {height / 2})">death / M</text>')
    for r in sorted(rows, key=lambda r: (r[2], r[6], r[7])):
        color = PALETTE[(r[2] - k - 2) % len(PALETTE)]
        parts.append(f'<circle cx="{X(r[6]):.3f}" cy="{Y(r[7]):.3f}" r="2.5" fill="{color}"/>')
    sizes = sorted({r[2] for r in rows})
    for i, m in enumerate(sizes):
        color = PALETTE[(m - k - 2) % len(PALETTE)]
        parts.append(f'<circle cx="{pad + 10}" cy="{pad + 10 + 16 * i}" r="4" fill="{color}"/>')
        parts.append(f'<text x="{pad + 20}" y="{pad + 14 + 16 * i}" font-size="11">m = {m}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(cfg: RunConfig, diagram_path):
    out = _out(cfg)
    rows = read_diagram(diagram_path)
    path = out / "diagram.svg"
    path.write_text(render_svg(rows, cfg.k, cfg.p))
    return [path]


def cmd_report(cfg: RunConfig, reports_path):
    reports, summary = read_reports(reports_path)
    for r in reports:
        print(r.line())
    passed = all(r.passed for r in reports)
    print(f"{'PASS' if passed else 'FAIL'}: {sum(r.passed for r in reports)}/{len(reports)} reports passed")
    return passed


# -- entry --------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="crackle", description=__doc__)
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    ap.add_argument("--out", help="output directory (overrides run.out)")
    ap.add_argument("--trials", type=int, help="number of trials (overrides run.trials)")
    ap.add_argument("--threads", type=int, help="worker processes (overrides run.threads)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", help="write one cloud as CSV")
    p = sub.add_parser("diagram", help="write crackle diagrams as CSV")
    p.add_argument("--cloud", help="cloud CSV to use instead of sampling")
    sub.add_parser("integrate", help="limiting mean measure of each test region")
    sub.add_parser("verify", help="run the statistical tests")
    p = sub.add_parser("plot", help="render a diagram CSV as SVG")
    p.add_argument("diagram", help="diagram CSV")
    p = sub.add_parser("report", help="summarize a reports file")
    p.add_argument("reports", help="reports JSON-lines file")
    return ap


def load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {"seed": args.seed, "out": args.out, "trials": args.trials, "threads": args.threads}
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        passed = True
        if args.command == "sample":
            written = cmd_sample(cfg)
        elif args.command == "diagram":
            written = cmd_diagram(cfg, args.cloud)
        elif args.command == "integrate":
            written = cmd_integrate(cfg)
        elif args.command == "verify":
            written, passed = cmd_verify(cfg)
        elif args.command == "plot":
            written = cmd_plot(cfg, args.diagram)
        else:
            return EXIT_PASS if cmd_report(cfg, args.reports) else EXIT_FAIL
        manifest = RunManifest(cfg.digest())
        for path in written:
            manifest.add(path)
        cfg_path = Path(cfg.out) / "config.txt"
        cfg_path.write_text(cfg.dumps())
        manifest.add(cfg_path)
        manifest.write(cfg.out)
        for path in written:
            print(path)
        return EXIT_PASS if passed else EXIT_FAIL
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CrackleError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
