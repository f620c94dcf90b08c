import json
import subprocess
import sys

import pytest

from pathspace.harness import cli
from pathspace.harness.checks import CHECKS
from pathspace.harness.config import ConfigError, ExperimentConfig


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_config_round_trip():
    cfg = ExperimentConfig().update({"check": "ibp", "epsilon": "0.25, 1, 4", "T": "2", "dt": "0.002",
                                     "n_paths": "1e4", "seed": "18446744073709551615", "function": "bump:0;0;0.5,1,0.1",
                                     "times": "0.5,2"})
    back = ExperimentConfig.parse(cfg.dumps())
    assert back == cfg
    assert back.epsilon == [0.25, 1.0, 4.0] and back.n_paths == 10_000 and back.seed == 2**64 - 1


@pytest.mark.parametrize("bad", [{"dt": "0"}, {"dt": "-1"}, {"T": "1", "dt": "0.3"}, {"epsilon": ""},
                                 {"epsilon": "1,-1"}, {"n_paths": "0"}, {"times": "0.5,0.25"}, {"times": "2"},
                                 {"seed": "-4"}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig().update({"seed": 1, **bad}).validate()


def test_config_parse_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.parse("model heisenberg-1")
    with pytest.raises(ConfigError):
        ExperimentConfig.parse("colour = blue")
    with pytest.raises(ConfigError):
        ExperimentConfig.parse("n_paths = 1.5")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        ExperimentConfig().validate()


def test_list_commands(capsys):
    code, out, _ = run_cli(capsys, "list-checks")
    assert code == 0 and all(name in out for name in CHECKS)
    code, out, _ = run_cli(capsys, "list-models")
    assert code == 0 and "heisenberg-1" in out and "euclidean-2" in out


def test_usage_errors(capsys):
    assert run_cli(capsys, "run", "--check", "ibp")[0] == 2          # missing seed
    assert run_cli(capsys, "run", "--check", "nope", "--seed", "1")[0] == 2
    assert run_cli(capsys, "run", "--check", "ibp", "--model", "torus-2", "--seed", "1")[0] == 2
    assert run_cli(capsys, "run", "--check", "ibp", "--dt", "0", "--seed", "1")[0] == 2
    assert run_cli(capsys, "run", "--check", "ibp", "--function", "poly:x", "--seed", "1")[0] == 2
    assert run_cli(capsys, "run", "--check", "ibp", "--epsilon", "1,2", "--seed", "1")[0] == 2
    assert run_cli(capsys, "sweep", "--check", "ibp", "--epsilon", "1", "--seed", "1")[0] == 2
    assert run_cli(capsys, "converge", "--dt-ladder", "0.001", "--seed", "1")[0] == 2
    assert run_cli(capsys, "bogus")[0] == 2


def test_run_ibp_euclidean(capsys, tmp_path):
    prefix = str(tmp_path / "ibp")
    code, out, _ = run_cli(capsys, "run", "--check", "ibp", "--model", "euclidean-1", "--function", "coord:0",
                           "--gamma", "linear:0", "--n-paths", "4000", "--dt", "0.01", "--seed", "7",
                           "--output", prefix)
    assert code == 0
    rec = json.loads(open(prefix + ".json").read())["records"][0]
    assert rec["rhs"]["mean"] == 1.0 and abs(rec["z"]) < 4


def test_config_file_with_override(capsys, tmp_path):
    cfgfile = tmp_path / "a.cfg"
    cfgfile.write_text("check = lower_bound_constant\nmodel = heisenberg-1\nepsilon = 2\nseed = 1\n")
    code, out, _ = run_cli(capsys, "run", "--config", str(cfgfile), "--epsilon", "1", "--seed", "3")
    doc = json.loads(out)
    assert code == 0 and doc["config"]["epsilon"] == [1.0] and doc["config"]["seed"] == 3
    assert doc["records"][0]["constant"] == pytest.approx(37.27106, abs=1e-4)


def test_sweep_monotonicity(capsys):
    code, out, _ = run_cli(capsys, "sweep", "--check", "transport_bound", "--epsilon", "0.25,1,4",
                           "--n-paths", "50", "--seed", "2")
    doc = json.loads(out)
    assert code == 0 and [r["pass"] for r in doc["per_epsilon"]] == [True, True, True]
    assert doc["monotonicity"]["bound_decreasing_in_eps"]
    code, out, _ = run_cli(capsys, "sweep", "--check", "lsi_full", "--epsilon", "0.25,1,4", "--n-paths", "200",
                           "--dt", "0.01", "--function", "bump", "--seed", "2")
    vals = json.loads(out)["monotonicity"]["lsi_constant"]
    assert vals == pytest.approx([2 * 2.718281828459045**12, 2 * 2.718281828459045**3, 2 * 2.718281828459045**0.75])


def test_statistical_failure_exit_code(capsys):
    # a deliberately tiny isometry tolerance turns into a statistical FAIL: dt=0.02 leaves a visible defect
    code, out, _ = run_cli(capsys, "run", "--check", "isometry", "--epsilon", "0.25", "--dt", "0.02",
                           "--n-paths", "200", "--seed", "1")
    assert code == 1 and json.loads(out)["pass"] is False


def test_converge_flat_exact(capsys):
    code, out, _ = run_cli(capsys, "converge", "--model", "euclidean-2", "--dt-ladder", "0.004,0.002,0.001",
                           "--n-paths", "200", "--seed", "1")
    doc = json.loads(out)
    assert code == 0 and doc["study"]["exact"]


def _strip_wall(doc):
    doc.pop("wall_time", None)
    return doc


def test_determinism_and_workers(capsys):
    args = ["run", "--check", "lsi_chain", "--function", "affine", "--n-paths", "600", "--block", "200",
            "--dt", "0.01", "--seed", "11"]
    a = _strip_wall(json.loads(run_cli(capsys, *args)[1]))
    b = _strip_wall(json.loads(run_cli(capsys, *args)[1]))
    c = _strip_wall(json.loads(run_cli(capsys, *args, "--workers", "2")[1]))
    a_cfg, c_cfg = a.pop("config"), c.pop("config")
    b.pop("config")
    assert a == b == c
    assert a_cfg["workers"] == 1 and c_cfg["workers"] == 2


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "pathspace.harness.cli", "list-models"], capture_output=True,
                         text=True, check=True)
    assert "heisenberg-1" in out.stdout
