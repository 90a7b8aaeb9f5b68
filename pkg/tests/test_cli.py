"""Tests for config parsing, run orchestration, compare, and selftest."""

import json
import os

import pytest

from qsdlab import cli
from qsdlab.errors import ConfigError
from qsdlab.cli import RunConfig, compare, main, parse_config, run


def read_manifest(run_dir):
    with open(os.path.join(run_dir, "manifest.json"), encoding="utf-8") as fh:
        return json.load(fh)


def test_parse_empty_config_gives_defaults():
    config = parse_config("")
    assert config == RunConfig()
    assert config.dt == pytest.approx(2 * 3.141592653589793 / 1000)


def test_parse_overrides_and_comments():
    config = parse_config(
        "# a comment\n"
        "beta = 0.25   # inline comment\n"
        "backend = mqsd\n"
        "noise = false\n"
        "seed = 42\n")
    assert config.beta == 0.25
    assert config.backend == "mqsd"
    assert config.noise is False
    assert config.seed == 42


def test_parse_rejects_bad_values_with_field_and_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("gamma = 0.1\nbeta = -1\n")
    assert "beta" in str(exc.value)
    with pytest.raises(ConfigError) as exc:
        parse_config("steps_per_period = lots\n")
    assert exc.value.line == 1


def test_parse_rejects_unknown_and_duplicate_keys():
    with pytest.raises(ConfigError) as exc:
        parse_config("\n\nbetta = 1.0\n")
    assert exc.value.line == 3
    with pytest.raises(ConfigError):
        parse_config("beta = 1.0\nbeta = 0.5\n")


def test_parse_dt_alternative():
    config = parse_config("dt = 0.006283185307179587\n")  # 2*pi / 1000
    assert config.steps_per_period == 1000
    with pytest.raises(ConfigError):
        parse_config("dt = 0.001\n")  # does not divide 2*pi
    with pytest.raises(ConfigError):
        parse_config("dt = 0.006283185307179587\nsteps_per_period = 500\n")


def test_parse_rejects_malformed_lines():
    with pytest.raises(ConfigError):
        parse_config("beta\n")
    with pytest.raises(ConfigError):
        parse_config("beta =\n")


CLASSICAL_CONFIG = """\
backend = classical
periods = 20
steps_per_period = 200
output_dir = {out}
"""


def test_run_classical_writes_artifacts(tmp_path):
    out = str(tmp_path / "run")
    config = parse_config(CLASSICAL_CONFIG.format(out=out))
    assert run(config) == 0
    assert sorted(os.listdir(out)) == ["manifest.json", "plot.py",
                                       "section_000.csv"]
    manifest = read_manifest(out)
    assert manifest["config"]["backend"] == "classical"
    assert manifest["trajectories"][0]["closure_broke_down"] is False
    from qsdlab.sections import parse_section
    _, points = parse_section(os.path.join(out, "section_000.csv"))
    assert len(points) == 21


def test_run_is_byte_deterministic(tmp_path):
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (out_a, out_b):
        run(parse_config("backend = linearized\nbeta = 0.01\nperiods = 3\n"
                         "steps_per_period = 500\n"
                         f"output_dir = {out}\n"))
    name = "section_000.csv"
    with open(os.path.join(out_a, name), "rb") as fa, \
            open(os.path.join(out_b, name), "rb") as fb:
        assert fa.read() == fb.read()


def test_compare_identical_dirs_reports_zero(tmp_path):
    out = str(tmp_path / "run")
    run(parse_config(CLASSICAL_CONFIG.format(out=out)))
    report = compare(out, out)
    assert report["rms_mean"] == 0.0
    assert report["jaccard_mean"] == 1.0


def test_compare_refuses_parameter_mismatch(tmp_path):
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    run(parse_config(CLASSICAL_CONFIG.format(out=out_a)))
    run(parse_config(CLASSICAL_CONFIG.format(out=out_b) + "g = 0.2\n"))
    with pytest.raises(ConfigError):
        compare(out_a, out_b)


def test_linearized_breakdown_recorded_in_manifest(tmp_path):
    # at beta = 1 the gaussian closure collapses; the run must still finish
    # (variance floor) and flag the breakdown
    out = str(tmp_path / "run")
    code = run(parse_config(
        "backend = linearized\nbeta = 1.0\nperiods = 10\n"
        "steps_per_period = 1000\nseed = 3\n"
        f"output_dir = {out}\n"))
    assert code == 0
    meta = read_manifest(out)["trajectories"][0]
    assert meta["closure_broke_down"] is True
    assert max(meta["validity_max"]) > 0.05


def test_parallel_run_matches_serial_bytes(tmp_path):
    base = ("backend = linearized\nbeta = 0.01\nperiods = 2\n"
            "steps_per_period = 500\nn_trajectories = 3\n")
    out_s, out_p = str(tmp_path / "serial"), str(tmp_path / "parallel")
    run(parse_config(base + f"output_dir = {out_s}\n"))
    os.environ["QSDLAB_THREADS"] = "2"
    try:
        run(parse_config(base + f"output_dir = {out_p}\n"))
    finally:
        del os.environ["QSDLAB_THREADS"]
    for i in range(3):
        name = f"section_{i:03d}.csv"
        with open(os.path.join(out_s, name), "rb") as fa, \
                open(os.path.join(out_p, name), "rb") as fb:
            assert fa.read() == fb.read()


def test_main_exit_codes(tmp_path):
    assert main(["run", str(tmp_path / "missing.cfg")]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("backend = warp\n")
    assert main(["run", str(bad)]) == 1
    good = tmp_path / "good.cfg"
    out = tmp_path / "out"
    good.write_text(CLASSICAL_CONFIG.format(out=out))
    assert main(["run", str(good)]) == 0
    report_path = tmp_path / "report.json"
    assert main(["compare", str(out), str(out),
                 "--output", str(report_path)]) == 0
    assert json.loads(report_path.read_text())["rms_mean"] == 0.0


def test_selftest_passes():
    assert cli.selftest(verbose=False) == 0
