import json

import numpy as np
import pytest

from stsbos import pipeline as pl
from stsbos.cli import main
from stsbos.models import StateBox, TargetSet
from stsbos.sos import BosCertificate, DegreeError, constant_certificate

FAST = dict(degree=6, volume_samples=20_000, oracle_samples=2000, audit_samples=400, seed=1)


@pytest.fixture(scope="module")
def ipm_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("ipm_slow")
    cfg = pl.PipelineConfig(model="ipm", strategy="preferred", label="slow", duration=1.6, **FAST)
    return d, pl.run_pipeline(d, cfg)


def test_pipeline_end_to_end(ipm_run):
    d, rep = ipm_run
    assert rep["certificate"]["status"] == "optimal"
    assert 0 < rep["bos_volume_percent"] <= 100
    assert 0 <= rep["oracle_volume_percent"] <= 100
    for name in pl.FILES.values():
        assert (d / name).is_file(), name
    body = json.loads((d / pl.FILES["report"]).read_text())
    assert body["subject"] == "S1" and body["label"] == "slow" and body["model"] == "ipm"
    assert "saturation" in json.dumps(body["feedback"])
    assert body["audit"]["trajectories_exact"]["violations"] == 0


def test_report_traceable_to_artifacts(ipm_run):
    from stsbos.sos import superlevel_volume
    d, rep = ipm_run
    cert = BosCertificate.load(d / pl.FILES["certificate"])
    vol = superlevel_volume(cert, seed=FAST["seed"], samples=FAST["volume_samples"])
    assert 100 * vol.fraction == pytest.approx(rep["bos_volume_percent"], rel=1e-10)


def test_rerun_is_byte_identical(ipm_run, tmp_path):
    d, _ = ipm_run
    cfg = pl.PipelineConfig.load(d / pl.FILES["config"])
    pl.run_pipeline(tmp_path, cfg)
    assert (tmp_path / pl.FILES["report"]).read_bytes() == (d / pl.FILES["report"]).read_bytes()
    assert (tmp_path / pl.FILES["certificate"]).read_bytes() == (d / pl.FILES["certificate"]).read_bytes()


def test_odd_degree_rejected_before_compute(tmp_path):
    with pytest.raises(DegreeError):
        pl.run_pipeline(tmp_path / "t", pl.PipelineConfig(degree=3, seed=0))
    assert not (tmp_path / "t").exists()


def test_seed_required(tmp_path):
    with pytest.raises(pl.ConfigError):
        pl.run_pipeline(tmp_path, pl.PipelineConfig())


def test_config_round_trip(tmp_path):
    cfg = pl.PipelineConfig(model="dpm", label="x", degree=8, saturate=False, seed=4)
    cfg.save(tmp_path / "c.txt")
    back = pl.PipelineConfig.load(tmp_path / "c.txt")
    assert back == cfg
    assert back.resolved("taylor_degree") == 3 and back.resolved("control_degree") == 4
    with pytest.raises(pl.ConfigError):
        cfg.updated({"nope": "1"})
    with pytest.raises(pl.ConfigError):
        pl.PipelineConfig(model="triple").validate()


def test_stage_failure_names_the_stage(tmp_path):
    # the control stage cannot run without the fitted model
    with pytest.raises((pl.StageError, FileNotFoundError)) as exc:
        pl.run_stage("control", tmp_path, pl.PipelineConfig(seed=0))
    if isinstance(exc.value, pl.StageError):
        assert exc.value.stage == "control"


# -- comparisons --------------------------------------------------------------------
def _report(subject, label, vol, se=0.1, model="ipm", rosv=None):
    r = {"subject": subject, "label": label, "model": model, "bos_volume_percent": vol,
         "bos_volume_stderr_percent": se}
    if rosv is not None:
        r["rosv"] = {"distance": rosv}
    return r


def test_table_example_and_tie_rule():
    comp = pl.compare_strategies([_report("S1", "slow", 35.9), _report("S1", "fast", 23.0)])
    assert comp["rows"][0]["correct"] is True
    tie = pl.compare_strategies([_report("S1", "slow", 30.0), _report("S1", "fast", 30.0)])
    assert tie["rows"][0]["correct"] is False
    close = pl.compare_strategies([_report("S1", "slow", 30.2, 0.1), _report("S1", "fast", 30.0, 0.1)])
    assert close["rows"][0]["correct"] is False  # within two standard errors


def test_counts_in_table_layout(tmp_path):
    reps = []
    for i, s in enumerate(["S1", "S2", "S3"]):
        reps += [_report(s, "slow", 50.0, rosv=1.0), _report(s, "fast", 40.0 + 6 * i, rosv=0.5),
                 _report(s, "quasi", 60.0), _report(s, "momentum", 45.0)]
    comp = pl.compare_strategies(reps)
    assert comp["counts"]["BOS IPM"]["slow > fast"] == {"correct": 2, "total": 3}
    assert comp["counts"]["BOS IPM"]["quasi > momentum"] == {"correct": 3, "total": 3}
    assert comp["counts"]["ROSv"]["slow > fast"] == {"correct": 3, "total": 3}
    pl.write_comparison(tmp_path, comp)
    assert {p.name for p in tmp_path.iterdir()} >= {"comparison.json", "comparison_rows.csv", "table_v.csv"}


def test_comparison_errors():
    with pytest.raises(ValueError):
        pl.compare_strategies([_report("S1", "slow", 1.0)])
    with pytest.raises(ValueError):
        pl.compare_strategies([_report("S1", "slow", 1.0), _report("S1", "slow", 2.0)])
    with pytest.raises(ValueError):
        pl.compare_strategies([_report("S1", "slow", 1.0), _report("S2", "fast", 2.0)])


# -- slices -----------------------------------------------------------------------------
def test_empty_grid_writes_header_only(tmp_path):
    c = constant_certificate(StateBox((-1, -1), (1, 1), 1.0), TargetSet((0, 0), (0.1, 0.1)), 1.0)
    assert pl.export_bos_slices(c, [0.0, 0.5], 0, tmp_path / "s.csv") == 0
    assert (tmp_path / "s.csv").read_text() == "t,theta,theta_dot,v,member\n"


def test_slice_times_checked(tmp_path):
    c = constant_certificate(StateBox((-1, -1), (1, 1), 1.0), TargetSet((0, 0), (0.1, 0.1)), 1.0)
    with pytest.raises(ValueError):
        pl.export_bos_slices(c, [0.5, 1.5], 5, tmp_path / "s.csv")


def test_slices_match_volume_and_terminal_set(ipm_run, tmp_path):
    d, rep = ipm_run
    cert = BosCertificate.load(d / pl.FILES["certificate"])
    T = cert.box.T
    times = (np.arange(20) + 0.5) * T / 20
    n = pl.export_bos_slices(cert, times, 61, tmp_path / "s.csv")
    data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert n == data.shape[0] == 20 * 61 ** 2
    assert abs(100 * data[:, -1].mean() - rep["bos_volume_percent"]) <= 3.0
    # the terminal slice holds the target
    pts = cert.target.sample(np.random.default_rng(0), 500)
    assert np.all(cert.value(np.full(500, T), pts) >= cert.alpha - cert.epsilon())


# -- command line ---------------------------------------------------------------------
def test_cli_requires_seed(tmp_path, capsys):
    assert main(["pipeline", str(tmp_path)]) == 2
    assert "--seed" in capsys.readouterr().err


def test_cli_rejects_odd_degree(tmp_path, capsys):
    assert main(["pipeline", str(tmp_path), "--degree=5", "--seed=0"]) == 2
    assert "even" in capsys.readouterr().err
    assert not (tmp_path / pl.FILES["traj"]).exists()


def test_cli_bad_override(tmp_path, capsys):
    assert main(["synth", str(tmp_path), "--strategy"]) == 2
    assert main(["synth", str(tmp_path), "--colour=blue"]) == 2


def test_cli_stages_match_library(ipm_run, tmp_path, capsys):
    d, rep = ipm_run
    keys = ["--" + k + "=" + str(v) for k, v in FAST.items()] + ["--label=slow"]
    assert main(["synth", str(tmp_path), *keys]) == 0
    for stage in ("fit", "control", "feedback", "bos", "oracle", "rosv"):
        assert main([stage, str(tmp_path), "--seed=1"]) == 0, stage
    capsys.readouterr()
    for name in ("certificate", "law", "oracle"):
        assert (tmp_path / pl.FILES[name]).read_bytes() == (d / pl.FILES[name]).read_bytes(), name
    assert main(["export-slices", str(tmp_path), "--times=0,0.8", "--grid=3", f"--out={tmp_path / 'x.csv'}"]) == 0
    assert len((tmp_path / "x.csv").read_text().splitlines()) == 1 + 2 * 9
    assert main(["export-slices", str(tmp_path), "--times=9"]) == 2


def test_cli_stage_error_exit_code(tmp_path, capsys):
    (tmp_path / "t").mkdir()
    code = main(["bos", str(tmp_path / "t"), "--seed=0"])
    assert code in (2, 3)


def test_cli_config_file_precedence(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("strategy = quasi_static\nduration = 1.2\n")
    assert main(["synth", str(tmp_path / "t"), "--config", str(tmp_path / "c.txt"), "--duration=1.4"]) == 0
    cfg = pl.PipelineConfig.load(tmp_path / "t" / pl.FILES["config"])
    assert cfg.strategy == "quasi_static" and cfg.duration == 1.4
