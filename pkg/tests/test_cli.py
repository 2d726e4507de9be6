import io
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from incbf.cli import (EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, CliCommand, main, plot_svg,
                       read_trace_csv, run_command, trace_table, write_trace_csv)
from incbf.config import load_preset
from incbf.errors import ConfigError
from incbf.harness import run_scenario

HEADER = ("t,x,y_true,y_hat,y_dot_hat,r,u_bar,delta_u,u,h_1,h_2,slack_1,slack_2,"
          "filter_active,qp_iters")


@pytest.fixture(scope="module")
def short_trace():
    trace, _ = run_scenario(load_preset("siso-paper", {"timing.t_end": "0.003"}))
    return trace


def test_csv_header_and_line_count(short_trace, tmp_path):
    assert len(short_trace) == 3
    path = tmp_path / "trace.csv"
    write_trace_csv(short_trace, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == HEADER


def test_csv_round_trip_bit_equal(tmp_path):
    trace, _ = run_scenario(load_preset("siso-paper", {"timing.t_end": "2"}))
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    back = read_trace_csv(path)
    table = trace_table(trace)
    assert list(back) == list(table)
    for name, values in table.items():
        assert np.array_equal(back[name], values, equal_nan=True), name
        assert back[name].tobytes() == np.asarray(values, dtype=back[name].dtype).tobytes()


def test_csv_pitch_columns(tmp_path):
    trace, _ = run_scenario(load_preset("pitch-hgv", {"timing.t_end": "0.002"}))
    path = tmp_path / "p.csv"
    write_trace_csv(trace, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[7:15] == [f"delta_u_{j}" for j in range(1, 5)] + [f"u_{j}" for j in range(1, 5)]
    assert header[-1] == "alloc_slack"


def test_csv_write_error_names_path(short_trace, tmp_path):
    bad = tmp_path / "missing" / "trace.csv"
    with pytest.raises(OSError, match="missing"):
        write_trace_csv(short_trace, bad)


def test_csv_min_h_matches_metrics(tmp_path, scenario):
    trace, metrics = scenario("siso-paper")
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    back = read_trace_csv(path)
    assert float(back["h_1"].min()) == metrics.min_h[0]
    assert float(back["h_2"].min()) == metrics.min_h[1]


def test_empty_trace_svg_has_axes_only():
    svg = plot_svg({"t": np.zeros(0), "y_true": np.zeros(0)}, ["y_true"])
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    assert root.tag == ns + "svg"
    assert not root.findall(f".//{ns}polyline")
    assert len(root.findall(f".//{ns}line")) >= 2


def test_svg_unknown_column(short_trace):
    with pytest.raises(KeyError, match="nonsense"):
        plot_svg(short_trace, ["y_true", "nonsense"])


def test_svg_deterministic_and_within_limits(scenario):
    trace, _ = scenario("siso-paper")
    a = plot_svg(trace, ["y_true"], [0.5, -0.5], title="siso")
    b = plot_svg(trace, ["y_true"], [0.5, -0.5], title="siso")
    assert a == b
    root = ET.fromstring(a)
    ns = "{http://www.w3.org/2000/svg}"
    dashed = [float(l.get("y1")) for l in root.findall(f"{ns}line")
              if l.get("stroke-dasharray")]
    top, bottom = min(dashed), max(dashed)
    pts = root.find(f"{ns}polyline").get("points").split()
    ys = [float(p.split(",")[1]) for p in pts]
    # pixel rows grow downwards
    assert top <= min(ys) and max(ys) <= bottom


def _cfg_file(tmp_path, text):
    path = tmp_path / "scenario.cfg"
    path.write_text(text)
    return path


def test_validate_good_config(tmp_path):
    path = _cfg_file(tmp_path, "plant.lambda = 0.6\n")
    out = io.StringIO()
    assert run_command(CliCommand("validate", path), out, io.StringIO()) == EXIT_OK
    assert main(["validate", str(path)]) == EXIT_OK


def test_run_bad_key_exits_1(tmp_path):
    path = _cfg_file(tmp_path, "plant.nonsense = 3\n")
    err = io.StringIO()
    assert run_command(CliCommand("run", path), io.StringIO(), err) == EXIT_CONFIG
    assert "line 1" in err.getvalue()
    assert main(["run", str(path)]) == EXIT_CONFIG


def test_usage_errors_exit_1(tmp_path):
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["run"]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG
    with pytest.raises(ConfigError):
        CliCommand("explode")


def test_unknown_plot_column_exits_1(tmp_path):
    err = io.StringIO()
    cmd = CliCommand("plot", preset="siso-paper", overrides=["timing.t_end=0.01"],
                     columns=["y_true", "bogus"], output_dir=tmp_path)
    assert run_command(cmd, io.StringIO(), err) == EXIT_CONFIG
    assert "bogus" in err.getvalue()


def test_strict_infeasible_exits_2(tmp_path):
    path = _cfg_file(tmp_path, "filter.kind = icbf\nplant.x0 = 2\nlimits.u_min = -0.1\n"
                               "limits.u_max = 0.1\ntiming.t_end = 0.5\nrun.strict = on\n")
    err = io.StringIO()
    assert run_command(CliCommand("run", path), io.StringIO(), err) == EXIT_RUNTIME
    assert "t=0" in err.getvalue()


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("siso-paper", "siso-paper-lpf", "pitch-hgv"):
        assert name in out


def test_run_siso_preset_summary(tmp_path, capsys):
    assert main(["run", "--preset", "siso-paper", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("siso-paper: ")
    assert "min_h=" in out and "violation_duration=0.000" in out
    assert {p.name for p in tmp_path.iterdir()} == {"trace.csv", "metrics.txt", "plot.svg"}
    assert re.search(r"min_h=[0-9.]+,[0-9.]+", out)
