import csv
import io
import json

import pytest

from opequiv import cli
from opequiv.core import binary_entropy
from opequiv.errors import ConfigError, NoConvergence

BIN = {"pX": [0.5, 0.5], "distortion": {"hamming": 2}}

SMALL = {
    "rd": {**BIN, "D_grid": [0.0, 0.05, 0.11, 0.2, 0.3]},
    "sweep": {**BIN, "D": 0.11, "eps": 0.02, "ns": [100, 150, 200], "grid_step": 0.25, "n": 200,
              "rates": {"start": 0.2, "stop": 0.8, "num": 31}},
    "trials": {**BIN, "mode": "source", "D": 0.2, "eps": 0.15, "n": 24, "R": 0.45, "trials": 100, "seed": 1},
    "membership": {**BIN, "D": 0.2, "ns": [10, 20, 40], "trials": 100, "seed": 2,
                   "channel": {"kind": "bsc", "flip": 0.1}, "threshold": 0.1},
    "separate": {**BIN, "mode": "reliable_on_lossy", "D": 0.2, "eps": 0.15, "n": 24, "R": 0.128,
                 "trials": 100, "seed": 3, "membership_trials": 20,
                 "channels": [{"kind": "identity"}, {"kind": "source_code", "rate": 0.45, "eps": 0.15}]},
}


def run(tmp_path, command, config, *extra):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(config))
    out = tmp_path / "out"
    code = cli.main([command, "--config", str(path), "--out", str(out), *extra])
    return code, out


def rows(path):
    body = cli.read_csv_body(path)
    return list(csv.DictReader(io.StringIO(body)))


def test_rd_outputs(tmp_path):
    code, out = run(tmp_path, "rd", SMALL["rd"])
    assert code == 0
    first = (out / "rd.csv").read_text().splitlines()[0]
    assert first.startswith("# opequiv") and "generated=" in first
    r = rows(out / "rd.csv")
    R = [float(x["R"]) for x in r]
    assert all(a >= b for a, b in zip(R, R[1:]))
    assert float(r[-1]["D"]) == 0.5 and R[-1] == 0.0
    row = next(x for x in r if float(x["D"]) == 0.11)
    assert float(row["R"]) == pytest.approx(1 - binary_entropy(0.11), abs=1e-3)
    mirror = json.loads((out / "rd.json").read_text())
    assert mirror["columns"] == ["D", "R", "iterations", "gap"] and len(mirror["rows"]) == len(r)
    assert "generated" not in json.dumps(mirror)


def test_sweep_consistent_with_rd(tmp_path):
    code, out = run(tmp_path, "sweep", SMALL["sweep"], "--threads", "2")
    assert code == 0
    surv = [float(x["survival"]) for x in rows(out / "sweep.csv")]
    assert all(a >= b for a, b in zip(surv, surv[1:]))
    summary = json.loads((out / "sweep.json").read_text())["summary"]
    _, rd_out = run(tmp_path, "rd", {**BIN, "D_grid": [0.11], "include_dmax": False})
    rd_R = float(rows(rd_out / "rd.csv")[0]["R"])
    assert abs(summary["alpha"] - rd_R) <= 0.05
    assert summary["qY_star"] == [0.5, 0.5]


def test_trials_modes(tmp_path):
    code, out = run(tmp_path, "trials", SMALL["trials"])
    assert code == 0
    r = rows(out / "trials.csv")
    assert [x["tag"] for x in r][0] == "Success" and sum(int(x["count"]) for x in r) == 100
    conv = {**BIN, "mode": "converse", "D": 0.3, "eps": 0.3, "n": 12, "R": 0.75, "Rs": 0.25,
            "trials": 40, "seed": 1}
    code, out = run(tmp_path, "trials", conv)
    summary = json.loads((out / "trials.json").read_text())["summary"]
    assert code == 0 and summary["error_fraction"] >= summary["pigeonhole_bound"] - summary["slack_3sigma"]
    chan = {**BIN, "mode": "channel", "D": 0.1, "eps": 0.3, "n": 24, "R": 0.2, "trials": 50, "seed": 1,
            "channel": {"kind": "identity"}}
    assert run(tmp_path, "trials", chan)[0] == 0


def test_membership_and_separate(tmp_path):
    code, out = run(tmp_path, "membership", SMALL["membership"])
    assert code == 0
    assert [int(x["n"]) for x in rows(out / "membership.csv")] == [10, 20, 40]
    code, out = run(tmp_path, "separate", SMALL["separate"])
    assert code == 0
    r = rows(out / "separate.csv")
    assert [x["channel"] for x in r] == ["0:identity", "1:source_code"]
    sep = {**BIN, "mode": "separation", "D": 0.33, "eps": 0.15, "n": 20, "R": 0.2, "Rs": 0.2, "trials": 50,
           "channel_code": {"D": 0.1, "eps": 0.3}, "channels": [{"kind": "bsc", "flip": 0.01}]}
    assert run(tmp_path, "separate", sep)[0] == 0


def test_note_lands_in_header(tmp_path):
    code, out = run(tmp_path, "rd", {**SMALL["rd"], "note": "normalised weights"})
    assert code == 0
    assert (out / "rd.csv").read_text().splitlines()[0].endswith("note=normalised weights")
    assert json.loads((out / "rd.json").read_text())["note"] == "normalised weights"


@pytest.mark.parametrize("command", sorted(SMALL))
def test_reruns_byte_identical(tmp_path, command):
    _, out = run(tmp_path, command, SMALL[command])
    first = cli.read_csv_body(out / f"{command}.csv")
    first_json = (out / f"{command}.json").read_text()
    _, out = run(tmp_path, command, SMALL[command])
    assert cli.read_csv_body(out / f"{command}.csv") == first
    assert (out / f"{command}.json").read_text() == first_json


def test_seed_flag_overrides(tmp_path):
    _, out = run(tmp_path, "trials", SMALL["trials"], "--seed", "5")
    a = cli.read_csv_body(out / "trials.csv")
    assert json.loads((out / "trials.json").read_text())["config"]["seed"] == 5
    _, out = run(tmp_path, "trials", {**SMALL["trials"], "seed": 5})
    assert cli.read_csv_body(out / "trials.csv") == a


@pytest.mark.parametrize("config,path", [
    ({**SMALL["rd"], "pX": [0.5, 0.6]}, "pX"),
    ({**SMALL["rd"], "pX": [0.5, -0.5, 1.0]}, "pX/1"),
    ({**SMALL["rd"], "D_grid": "all"}, "D_grid"),
    ({**SMALL["rd"], "bogus": 1}, ""),
    ({**SMALL["rd"], "distortion": {"matrix": [[0, 1], [1]]}}, "distortion/matrix"),
    ({**SMALL["rd"], "pX": [1 / 3] * 3}, "distortion"),
])
def test_config_errors_name_the_field(tmp_path, capsys, config, path):
    code, out = run(tmp_path, "rd", config)
    assert code == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.startswith(f"config error: {path or '<root>'}")
    assert not out.exists()


def test_semantic_config_errors():
    with pytest.raises(ConfigError) as info:
        cli.validate_config("trials", {**SMALL["trials"], "mode": "channel"})
    assert info.value.path == "channel"
    with pytest.raises(ConfigError) as info:
        cli.validate_config("membership", {**SMALL["membership"], "channel": {"kind": "bsc"}})
    assert info.value.path == "channel"
    with pytest.raises(ConfigError):
        cli.validate_config("trials", {**SMALL["trials"], "qY": [1.0]})


def test_missing_file_and_bad_json(tmp_path):
    assert cli.main(["rd", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["rd", "--config", str(bad)]) == cli.EXIT_CONFIG


def test_resource_limit_exit_code(tmp_path):
    big = {**SMALL["trials"], "n": 60, "R": 0.9}
    assert run(tmp_path, "trials", big)[0] == cli.EXIT_RESOURCE


def test_no_convergence_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NoConvergence("stalled")

    monkeypatch.setattr(cli, "blahut_arimoto", boom)
    assert run(tmp_path, "rd", SMALL["rd"])[0] == cli.EXIT_NO_CONVERGENCE


def test_sample_configs_validate():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    kinds = {"rd_binary": "rd", "sweep_binary": "sweep", "trials_source": "trials", "trials_channel": "trials",
             "trials_converse": "trials", "membership_bsc": "membership", "separate_separation": "separate",
             "separate_reliable": "separate", "ternary_demo": "separate"}
    for name, command in kinds.items():
        cli.load_config(command, root / f"{name}.json")
    demo = json.loads((root / "ternary_demo.json").read_text())
    assert "11/36" in demo["note"]
