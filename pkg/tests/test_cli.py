import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crackle import cli, limits
from crackle.errors import ConfigError, ParseError
from crackle.verify import TestReport

finite = st.floats(allow_nan=False, allow_infinity=False, min_value=1e-300, max_value=1e300)


def small_config(tmp_path, **extra):
    text = ["plan.n = 10000", "run.trials = 6", "mc.samples = 200000", f"run.out = {tmp_path / 'out'}"]
    text += [f"{k} = {v}" for k, v in extra.items()]
    path = tmp_path / "run.cfg"
    path.write_text("\n".join(text) + "\n")
    return path


def test_config_round_trip_defaults():
    cfg = cli.RunConfig()
    assert cli.RunConfig.parse(cfg.dumps()) == cfg


@settings(max_examples=100, deadline=None)
@given(finite, finite, st.lists(finite, min_size=1, max_size=4), st.integers(0, 2 ** 63 - 1))
def test_config_round_trip_lossless(M, kappa, ns, seed):
    cfg = cli.RunConfig(M=M, kappa=kappa, n=tuple(ns), seed=seed)
    back = cli.RunConfig.parse(cfg.dumps())
    assert back == cfg
    assert back.dumps() == cfg.dumps()


def test_config_rejects_unknown_and_bad_rows():
    with pytest.raises(ParseError, match="row 2: unknown key"):
        cli.RunConfig.parse("plan.p = 3\nplan.q = 4\n", "x.cfg")
    with pytest.raises(ParseError, match="row 1"):
        cli.RunConfig.parse("plan.p = three\n")
    with pytest.raises(ParseError, match="row 1"):
        cli.RunConfig.parse("just words\n")
    with pytest.raises(ConfigError):
        cli.RunConfig.parse("tail.kind = gaussian\n")
    with pytest.raises(ConfigError):
        cli.RunConfig.parse("test.regions = blob(1)\n")


def test_sample_csv_round_trip(tmp_path):
    cfg_path = small_config(tmp_path, **{"plan.n": 10})
    assert cli.main(["--config", str(cfg_path), "sample"]) == 0
    path = tmp_path / "out" / "cloud.csv"
    lines = path.read_text().splitlines()
    assert lines[0] == "x0,x1" and 1 <= len(lines) - 1 <= 30
    pts = cli.read_cloud(path)
    copy = tmp_path / "copy.csv"
    from crackle.model import PointCloud
    cli.write_cloud(copy, PointCloud(pts))
    assert copy.read_bytes() == path.read_bytes()


def test_sample_budget_exit_code(tmp_path, capsys):
    cfg_path = small_config(tmp_path, **{"plan.n": 1e9})
    assert cli.main(["--config", str(cfg_path), "sample"]) == cli.EXIT_RUNTIME
    assert "max_points" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
    bad = tmp_path / "bad.cfg"
    bad.write_text("nope = 1\n")
    assert cli.main(["--config", str(bad), "sample"]) == cli.EXIT_USAGE
    assert cli.main(["--config", str(tmp_path / "missing.cfg"), "sample"]) == cli.EXIT_RUNTIME


def test_diagram_csv(tmp_path):
    cfg_path = small_config(tmp_path)
    assert cli.main(["--config", str(cfg_path), "--trials", "8", "diagram"]) == 0
    path = tmp_path / "out" / "diagram.csv"
    rows = cli.read_diagram(path)
    assert path.read_text().splitlines()[0] == ",".join(cli.DIAGRAM_HEADER)
    keys = [(r[0], r[6]) for r in rows]
    assert keys == sorted(keys)
    copy = tmp_path / "d2.csv"
    cli.write_diagram(copy, rows)
    assert copy.read_bytes() == path.read_bytes()
    for r in rows:
        if r[2] in (3, 4):
            assert limits.region_contains(limits.delta_km(1, r[2]), (r[6], r[7]))


def test_diagram_from_cloud_file(tmp_path):
    cloud = tmp_path / "c.csv"
    cloud.write_text("x0,x1\n40,0\n42,0\n41,1.7320508075688772\n")
    cfg_path = small_config(tmp_path)
    assert cli.main(["--config", str(cfg_path), "diagram", "--cloud", str(cloud)]) == 0
    rows = cli.read_diagram(tmp_path / "out" / "diagram.csv")
    assert len(rows) == 1 and rows[0][2] == 3
    assert rows[0][4] == pytest.approx(1.0) and rows[0][5] == pytest.approx(2 / 3 ** 0.5)


def test_integrate_csv(tmp_path):
    cfg_path = small_config(tmp_path)
    assert cli.main(["--config", str(cfg_path), "integrate"]) == 0
    rows = cli.read_integrate(tmp_path / "out" / "integrate.csv")
    assert len(rows) == 1 and rows[0][1] == "heavy" and rows[0][2] > 0


def test_verify_deterministic_and_manifest(tmp_path):
    cfg_path = small_config(tmp_path, **{"plan.n": "10000,40000"})
    codes = []
    outputs = []
    for i in range(2):
        out = tmp_path / f"o{i}"
        codes.append(cli.main(["--config", str(cfg_path), "--out", str(out), "verify"]))
        outputs.append((out / "reports.jsonl").read_bytes())
    assert codes[0] == codes[1] and codes[0] in (0, 1)
    assert outputs[0] == outputs[1]
    lines = outputs[0].decode().splitlines()
    assert "summary" in json.loads(lines[-1])
    for line in lines[:-1]:
        rep = TestReport.from_json(line)
        assert rep.to_json() == line
    manifest = json.loads((tmp_path / "o0" / "manifest.json").read_text())
    for name, digest in manifest["files"].items():
        assert cli.sha256_file(tmp_path / "o0" / name) == digest


def test_report_command(tmp_path, capsys):
    path = tmp_path / "r.jsonl"
    path.write_text(TestReport("a", "rule", 1.0, 1.0, 0.0, True).to_json() + "\n")
    assert cli.main(["report", str(path)]) == 0
    path.write_text(TestReport("a", "rule", 1.0, 2.0, 0.0, False).to_json() + "\n")
    assert cli.main(["report", str(path)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_plot_empty_and_deterministic(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(cli.DIAGRAM_HEADER) + "\n")
    svg = cli.render_svg(cli.read_diagram(empty), 1, 4)
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert svg.count("<polygon") == 1 and "<circle" not in svg
    rows = [[0, 1, 3, 1, 0.5, 0.55, 0.5, 0.55], [0, 2, 4, 1, 0.8, 1.0, 0.8, 1.0]]
    assert cli.render_svg(rows, 1, 4) == cli.render_svg(rows, 1, 4)
    assert cli.render_svg(rows, 1, 4).count("<circle") == 2 + 2


def test_plot_malformed_row(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(",".join(cli.DIAGRAM_HEADER) + "\n0,1,3,1,0.5,0.6,0.5,0.6\n0,1,3,1,oops,1,1,1\n")
    with pytest.raises(ParseError, match="row 3"):
        cli.read_diagram(bad)
    assert cli.main(["--out", str(tmp_path / "o"), "plot", str(bad)]) == cli.EXIT_USAGE
    assert "row 3" in capsys.readouterr().err
