import json
import os

import pytest

from loopsoup_lab.cli import (ConfigError, RunConfig, _parse_text,
                              emit_config, main, parse_config, report_paths)
from loopsoup_lab.experiments import EXPERIMENT_CATALOG, HEIGHT_GAP

MINIMAL = 'experiment = "isomorphism"\nnx = 2\nny = 2\nseed = 1\n'


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_minimal_config_fills_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL))
    assert cfg == RunConfig(experiment="isomorphism", nx=2, ny=2, seed=1)
    assert cfg.alpha == 0.5
    assert cfg.beta == "calibrated"
    assert cfg.u == HEIGHT_GAP
    assert cfg.k_max == 64
    assert cfg.workers == 1
    assert cfg.replicas is None


def test_full_config_round_trips():
    text = (
        'experiment = "rectangle-crossing"\n'
        "nx = 3\nny = 8\n"
        "alpha = 0.5\nbeta = 0.25\n"
        "coupling = 0.3465735902799726\n"
        'cluster_rule = "cable"\n'
        "replicas = 2000\nseed = 11\nworkers = 2\n"
        'report = "out/rect.json"\ncsv = "out/rect"\n'
        "\n[arcs]\n"
        '1 = "left"\n2 = ["right", 0, 3]\n'
        "\n[thresholds]\n"
        "min_class = 200\nz_max = 4.5\n"
    )
    cfg = _parse_text(text)
    assert cfg.arcs == {1: "left", 2: ("right", 0, 3)}
    assert cfg.options["coupling"] == pytest.approx(0.3465735902799726)
    assert cfg.thresholds == {"min_class": 200, "z_max": 4.5}
    emitted = emit_config(cfg)
    assert _parse_text(emitted) == cfg
    assert _parse_text(emit_config(_parse_text(emitted))) == cfg


def test_round_trip_every_experiment():
    texts = [
        MINIMAL,
        'experiment = "multi-arc-parity"\nn_arcs = 3\ncount_samples = 500\n'
        "current_samples = 200\nbeta = 0.1\nu = 0.5\n",
        'experiment = "strip-parity"\nheight = 3\nbox_width = 2\n'
        "extent = 24\nn_boxes = 3\nspacing = 8\noffset = 1\n"
        "epsilon = 0.1\nreplicas = 500\n",
    ]
    for text in texts:
        cfg = _parse_text(text)
        assert _parse_text(emit_config(cfg)) == cfg


def test_unknown_key_is_line_numbered(tmp_path):
    path = write(tmp_path, MINIMAL + "bogus = 3\n")
    with pytest.raises(ConfigError) as info:
        parse_config(path)
    assert "unknown key 'bogus'" in str(info.value)
    assert info.value.line == 5
    assert info.value.path == path


def test_key_not_used_by_experiment_rejected():
    with pytest.raises(ConfigError, match="unknown key 'beta'"):
        _parse_text(MINIMAL + "beta = 0.25\n")
    with pytest.raises(ConfigError, match="unknown key 'nx'"):
        _parse_text('experiment = "strip-parity"\nheight = 3\nbox_width = 2\n'
                    "extent = 24\nn_boxes = 3\nnx = 4\n")


def test_type_mismatch_is_line_numbered():
    with pytest.raises(ConfigError) as info:
        _parse_text('experiment = "isomorphism"\nnx = "two"\nny = 2\n')
    assert "expects integer" in str(info.value)
    assert info.value.line == 2
    with pytest.raises(ConfigError, match="float"):
        _parse_text(MINIMAL + 'alpha = "half"\n')
    with pytest.raises(ConfigError, match="calibrated"):
        _parse_text('experiment = "multi-arc-parity"\nn_arcs = 2\n'
                    'beta = "simmered"\n')


def test_toml_syntax_error_reports_line():
    with pytest.raises(ConfigError) as info:
        _parse_text('experiment = "isomorphism"\nnx = = 2\n')
    assert "TOML syntax" in str(info.value)
    assert info.value.line == 2


def test_semantic_rejections():
    with pytest.raises(ConfigError, match="alpha"):
        _parse_text(MINIMAL + "alpha = -1.0\n")
    with pytest.raises(ConfigError, match="experiment"):
        _parse_text("nx = 2\nny = 2\n")
    with pytest.raises(ConfigError, match="unknown experiment"):
        _parse_text('experiment = "percolation"\nnx = 2\nny = 2\n')
    with pytest.raises(ConfigError, match="requires key"):
        _parse_text('experiment = "isomorphism"\nnx = 2\n')
    with pytest.raises(ConfigError, match="n_arcs"):
        _parse_text('experiment = "multi-arc-parity"\nn_arcs = 9\n')
    with pytest.raises(ConfigError, match="fit"):
        _parse_text('experiment = "strip-parity"\nheight = 3\n'
                    "box_width = 2\nextent = 10\nn_boxes = 4\n")
    with pytest.raises(ConfigError, match="unknown threshold"):
        _parse_text(MINIMAL + "[thresholds]\nmin_class = 5\n")


def test_overlapping_arcs_rejected():
    base = ('experiment = "rectangle-crossing"\nnx = 2\nny = 2\n[arcs]\n')
    with pytest.raises(ConfigError, match="overlap"):
        _parse_text(base + '1 = "left"\n2 = "left"\n')
    with pytest.raises(ConfigError, match="labels"):
        _parse_text(base + '1 = "left"\n3 = "right"\n')
    with pytest.raises(ConfigError, match="unknown side"):
        _parse_text(base + '1 = "left"\n2 = "esat"\n')
    with pytest.raises(ConfigError, match="exactly arcs 1 and 2"):
        _parse_text(base + '1 = "left"\n2 = "right"\n3 = "top"\n')


def run_main(tmp_path, text, *extra, env=None, monkeypatch=None):
    path = write(tmp_path, text, name="run.toml")
    if env and monkeypatch:
        for key, value in env.items():
            monkeypatch.setenv(key, value)
    return main(["run", path, *extra])


ISO_RUN = (MINIMAL + 'replicas = 3000\nreport = "iso.json"\ncsv = "iso"\n')


def test_run_pass_writes_reports(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LOOPSOUP_LAB_REPORT_DIR", str(tmp_path))
    code = run_main(tmp_path, ISO_RUN)
    out = capsys.readouterr().out
    assert code == 0
    assert "isomorphism: PASS" in out
    doc = json.loads((tmp_path / "iso.json").read_text())
    assert doc["verdict"] == "PASS"
    assert doc["schema"] == "loopsoup-lab/report-v1"
    assert doc["master_seed"] == 1
    assert "wall_time_s" not in doc
    claims = (tmp_path / "iso-claims.csv").read_text().splitlines()
    assert len(claims) == 1 + len(doc["claims"])
    assert claims[0].startswith("claim_id,")


def test_run_reports_are_deterministic(tmp_path, monkeypatch):
    monkeypatch.setenv("LOOPSOUP_LAB_REPORT_DIR", str(tmp_path))
    assert run_main(tmp_path, ISO_RUN) == 0
    first = (tmp_path / "iso.json").read_bytes()
    assert run_main(tmp_path, ISO_RUN) == 0
    assert (tmp_path / "iso.json").read_bytes() == first
    assert run_main(tmp_path, ISO_RUN, "--workers", "2") == 0
    assert (tmp_path / "iso.json").read_bytes() == first


def test_run_flag_overrides(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LOOPSOUP_LAB_REPORT_DIR", str(tmp_path))
    code = run_main(tmp_path, ISO_RUN, "--seed", "9", "--replicas", "500")
    assert code == 0
    doc = json.loads((tmp_path / "iso.json").read_text())
    assert doc["master_seed"] == 9
    assert doc["config"]["replicas"] == 500


def test_report_dir_resolution(tmp_path, monkeypatch):
    cfg = RunConfig(experiment="isomorphism", nx=2, ny=2,
                    report="deep/nest/a.json", csv="deep/nest/a.csv")
    monkeypatch.delenv("LOOPSOUP_LAB_REPORT_DIR", raising=False)
    json_path, csv_stem = report_paths(cfg)
    assert json_path == os.path.join("deep/nest", "a.json")
    assert csv_stem == os.path.join("deep/nest", "a")
    monkeypatch.setenv("LOOPSOUP_LAB_REPORT_DIR", str(tmp_path / "o"))
    json_path, csv_stem = report_paths(cfg)
    assert json_path == str(tmp_path / "o" / "a.json")
    assert csv_stem == str(tmp_path / "o" / "a")
    json_path, _ = report_paths(cfg, report_dir=str(tmp_path / "flag"))
    assert json_path == str(tmp_path / "flag" / "a.json")
    bare = RunConfig(experiment="isomorphism", nx=2, ny=2, seed=4)
    json_path, csv_stem = report_paths(bare, report_dir=".")
    assert json_path == os.path.join(".", "isomorphism-seed4.json")
    assert csv_stem is None


def test_run_strip_emits_curve_csv(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LOOPSOUP_LAB_REPORT_DIR", str(tmp_path))
    text = ('experiment = "strip-parity"\nheight = 2\nbox_width = 8\n'
            "extent = 56\nn_boxes = 3\nepsilon = 0.4\n"
            "replicas = 4000\nseed = 6\n"
            'report = "strip.json"\ncsv = "strip"\n')
    assert run_main(tmp_path, text) == 0
    curve = (tmp_path / "strip-curve.csv").read_text().splitlines()
    assert curve[0].split(",")[:2] == ["box", "left"]
    assert len(curve) == 1 + 3


def test_run_fail_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LOOPSOUP_LAB_REPORT_DIR", str(tmp_path))
    text = ('experiment = "rectangle-crossing"\nnx = 3\nny = 3\n'
            "coupling = 0.34657359027997264\nreplicas = 4000\nseed = 9\n"
            "workers = 2\n"
            "[thresholds]\nmin_class = 300\nenergy_cap = 400\n"
            "energy_permutations = 100\n")
    assert run_main(tmp_path, text) == 1
    assert "FAIL" in capsys.readouterr().out


def test_run_inconclusive_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LOOPSOUP_LAB_REPORT_DIR", str(tmp_path))
    text = ('experiment = "rectangle-crossing"\nnx = 3\nny = 3\n'
            "beta = 0.0001\nreplicas = 400\nseed = 2\n"
            "[thresholds]\nenergy_cap = 100\nenergy_permutations = 20\n")
    assert run_main(tmp_path, text) == 3
    assert "INCONCLUSIVE" in capsys.readouterr().out


def test_config_errors_exit_two(tmp_path, capsys):
    path = write(tmp_path, MINIMAL + "alpha = -2.0\n")
    assert main(["run", path]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and ":5:" in err
    assert main(["run", str(tmp_path / "absent.toml")]) == 2
    assert main(["calibrate", str(tmp_path / "absent.toml")]) == 2
    path = write(tmp_path, MINIMAL, name="ok.toml")
    assert main(["run", path, "--seed", "-3"]) == 2


def test_list_prints_catalog(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name, entry in EXPERIMENT_CATALOG.items():
        assert name in out
        for claim_id in entry["claims"]:
            assert claim_id in out


def test_calibrate_subcommand(tmp_path, capsys):
    path = write(tmp_path, MINIMAL)
    assert main(["calibrate", path]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["beta"] == 0.25
    assert doc["height_gap"] == pytest.approx(HEIGHT_GAP)
    assert doc["continuum_ratio"] == 2.0
    assert doc["dynkin_ok"] is True
    assert doc["dynkin_residual"] < 1e-12
