import json

import numpy as np
import pytest

from seqmargin.datamodel import load_dataset, make_dataset
from seqmargin.geometry import max_margin_certificate
from seqmargin.harness import cli_main, run_experiment, validate_config, write_summary, write_trace
from seqmargin.harness.config import ConfigError, load_config, parse_generator_spec
from seqmargin.harness.io import TRACE_HEADER, read_trace
from seqmargin.harness.runner import worker_count
from seqmargin.metrics import trace_records
from seqmargin.trainer import OrderingSchedule, TrainConfig, run_sequential_gd

THM33 = {"name": "t33", "dataset": {"builtin": "fig3_contradicting"},
         "train": {"K": 10, "cycles": 8, "eta": "auto:0.9", "guard": "T3.3"},
         "metrics": ["loss_joint", "bound_t33", "forget_cycle"], "checks": ["T3.3", "T3.4"]}


def _write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_empty_trace_is_header_only(tmp_path):
    write_trace([], tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == ",".join(TRACE_HEADER) + "\n"


def test_trace_rows_and_roundtrip(tmp_path):
    ds = make_dataset([[1.0, 0.5], [0.3, -1.0]], tasks=[0, 1])
    run = run_sequential_gd(ds, TrainConfig(K=1, stages=1, eta=0.1), OrderingSchedule("cyclic", 2))
    recs = trace_records(run, ["loss_joint", "norm_w"])
    write_trace(recs, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 3
    back = read_trace(tmp_path / "t.csv")
    assert [r.value for r in back] == [r.value for r in recs]   # 17 digits round-trip exactly


def test_trace_rejects_non_finite(tmp_path):
    from seqmargin.metrics import TraceRecord
    with pytest.raises(ValueError):
        write_trace([TraceRecord("r", "seqgd", 0, 0, 1, "loss_joint", float("nan"))],
                    tmp_path / "t.csv")


def test_summary_phi(tmp_path):
    cert = max_margin_certificate(make_dataset([[2.0, 0.0]]))
    write_summary(None, {"margin_certificate": cert}, [], tmp_path / "s.json")
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["margin_certificate"]["phi"] == 2.0


def test_run_experiment_outputs_and_zero_violations(tmp_path):
    res = run_experiment(validate_config(THM33), out=tmp_path)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["checks"]["T3.3"]["violations"] == 0
    assert s["checks"]["T3.4"]["violations"] == 0
    assert s["final_joint_loss"] == pytest.approx(res.run.joint_loss_end[-1])
    assert not res.failed


def test_summary_config_echo_reproduces_run(tmp_path):
    run_experiment(validate_config(THM33), out=tmp_path / "a")
    echo = json.loads((tmp_path / "a" / "summary.json").read_text())["config"]
    echo["out"] = None
    run_experiment(validate_config(echo), out=tmp_path / "b")
    for f in ("trace.csv", "summary.json"):
        a = (tmp_path / "a" / f).read_bytes()
        b = (tmp_path / "b" / f).read_bytes()
        if f == "summary.json":
            a, b = json.loads(a), json.loads(b)
            a["config"]["out"] = b["config"]["out"] = None
        assert a == b


@pytest.mark.parametrize("patch, where", [
    ({"train": {"K": 0, "cycles": 2}}, "train/K"),
    ({"dataset": {"builtin": "nope"}}, "dataset/builtin"),
    ({"metrics": ["loss_joint", "accuracy"]}, "metrics/1"),
    ({"schedule": {"kind": "random"}}, "schedule/seed"),
    ({"extra": 1}, "<root>"),
    ({"train": {"K": 1}}, "train"),
])
def test_config_errors_name_the_key(patch, where):
    raw = dict(THM33, **patch)
    with pytest.raises(ConfigError) as ei:
        validate_config(raw)
    assert where in str(ei.value)


def test_load_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(p)


def test_generator_spec():
    assert parse_generator_spec("fig1") == {"builtin": "fig1"}
    g = parse_generator_spec("nonseparable:overlap=0.5,seed=3")
    assert g == {"generator": {"kind": "nonseparable", "overlap": 0.5, "seed": 3}}
    with pytest.raises(ConfigError):
        parse_generator_spec("nonseparable:colour=3")
    with pytest.raises(ConfigError):
        parse_generator_spec("spiral")


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("SEQMARGIN_THREADS", "1")
    assert worker_count(8) == 1
    monkeypatch.setenv("SEQMARGIN_THREADS", "4")
    assert worker_count(2) == 2


# -- CLI ------------------------------------------------------------------------------------

def test_cli_margin(capsys):
    assert cli_main(["margin", "fig1"]) == 0
    out = json.loads(capsys.readouterr().out)["margin_certificate"]
    assert np.allclose(out["direction"], [1, 0, 0]) and out["phi"] == pytest.approx(1.0)


def test_cli_margin_not_separable(tmp_path):
    assert cli_main(["margin", "nonsep", "--quiet"]) == 1


def test_cli_usage_errors(capsys):
    assert cli_main(["frobnicate"]) == 2
    assert cli_main(["train"]) == 2
    assert cli_main(["verify", "nope"]) == 2


def test_cli_train_writes_outputs(tmp_path):
    cfg = _write(tmp_path, THM33)
    assert cli_main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert (tmp_path / "o" / "trace.csv").exists()
    assert (tmp_path / "o" / "summary.json").exists()


def test_cli_eta_above_guard_with_check_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, THM33)
    assert cli_main(["train", "--config", str(cfg), "--eta", "1.0", "--quiet"]) == 2
    assert "guard" in capsys.readouterr().err


def test_cli_overrides(tmp_path):
    raw = {"name": "r", "dataset": {"generator": {"kind": "disks2d", "seed": 0, "n_per_task": 5}},
           "train": {"K": 2, "stages": 4, "eta": 0.01}, "schedule": {"kind": "random", "seed": 1},
           "metrics": ["loss_joint"]}
    cfg = _write(tmp_path, raw)
    out = tmp_path / "o"
    assert cli_main(["train", str(cfg), "--seed", "5", "--stages", "6", "--k", "3",
                     "--out", str(out), "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["stages"] == 6 and s["config"]["train"]["K"] == 3
    assert s["config"]["schedule"]["seed"] == 5
    assert s["config"]["dataset"]["generator"]["seed"] == 5


def test_cli_smm(tmp_path, capsys):
    raw = {"name": "s", "dataset": {"builtin": "fig1"}, "train": {"cycles": 10},
           "metrics": ["norm_w"]}
    cfg = _write(tmp_path, raw)
    assert cli_main(["smm", "--config", str(cfg)]) == 0
    s = json.loads(capsys.readouterr().out.split("\nwrote")[0])
    assert np.allclose(s["final_w"], np.array([12, 1, 1]) / 11, atol=1e-4)


def test_cli_nonsep_cert(capsys):
    assert cli_main(["nonsep-cert", "nonsep"]) == 0
    out = json.loads(capsys.readouterr().out)["nonsep_certificate"]
    assert out["b"] > 0.1 and out["mu"] > 0
    assert cli_main(["nonsep-cert", "fig1", "--quiet"]) == 1


def test_cli_gen_data(tmp_path):
    out = tmp_path / "d.txt"
    assert cli_main(["gen-data", "nonseparable:overlap=0.7", str(out), "--seed", "4"]) == 0
    ds = load_dataset(out)
    assert ds.N == 40 and ds.d == 2
    assert cli_main(["gen-data", "disks2d:resample=true", str(out)]) == 2


def test_cli_verify_thm33(capsys):
    assert cli_main(["verify", "thm33"]) == 0
    assert "[PASS] thm33" in capsys.readouterr().out
