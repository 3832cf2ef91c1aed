import json
import sys

import numpy as np
import pytest

sys.path.insert(0, "")
from dhtest import *
from dhtest.cli import EXIT_DOMAIN, EXIT_NO_INPUT, EXIT_OK, EXIT_USAGE, main


def dsbs_pair(crossover=0.1):
    rows = np.array([[1 - crossover, crossover], [crossover, 1 - crossover]]) / 2
    P = JointPMF.from_tensor(["X1", "Y"], rows)
    Q = JointPMF.from_tensor(["X1", "Y"], np.full((2, 2), 0.25))
    return HypothesisPair(P=P, Q=Q, roles=RoleMap(x=["X1"], y="Y"), ci=True)


def write(path, model):
    path.write_text(model.model_dump_json())
    return str(path)


@pytest.fixture
def pair_file(tmp_path):
    return write(tmp_path / "pair.json", dsbs_pair())


@pytest.fixture
def params_file(tmp_path):
    return write(
        tmp_path / "params.json", MHOParams(sigma2_x=1.0, sigma2_n=0.5, helper_noise=[0.5])
    )


# ---------------------------------------------------------------------------
# Usage and exit codes
# ---------------------------------------------------------------------------


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["gaussian-sweep", "--rho0", "0.8"]) == EXIT_USAGE
    assert main(["gaussian-sweep", "--rho0", "0.8", "--rho1", "0", "--samples", "0"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "gaussian-sweep" in capsys.readouterr().out


def test_missing_input_file(tmp_path):
    missing = str(tmp_path / "absent.json")
    assert main(["exponent", "--pair", missing, "--rate", "0.3"]) == EXIT_NO_INPUT


def test_invalid_input_file(tmp_path):
    bad = tmp_path / "pair.json"
    bad.write_text('{"P": {"variables": []}}')
    assert main(["exponent", "--pair", str(bad), "--rate", "0.3"]) == EXIT_USAGE


def test_invalid_environment(monkeypatch):
    monkeypatch.setenv("DHTEST_THREADS", "zero")
    assert main(["gaussian-sweep", "--rho0", "0.8", "--rho1", "0"]) == EXIT_DOMAIN


# ---------------------------------------------------------------------------
# Gaussian pairs
# ---------------------------------------------------------------------------


def test_gaussian_sweep_stdout(capsys):
    code = main(["gaussian-sweep", "--rho0", "0.8", "--rho1", "0", "--r-max", "1", "--samples", "5"])
    assert code == EXIT_OK
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[0] == "R1,E_inner,E_outer,E_centralized"
    assert len(lines) == 6
    assert "region D1" in captured.err


def test_gaussian_sweep_to_file(tmp_path, capsys):
    out = tmp_path / "curve.csv"
    args = ["gaussian-sweep", "--rho0", "0.2", "--rho1", "0.5", "--samples", "3", "--out", str(out)]
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out == ""
    assert out.read_text().splitlines()[0] == "R1,E_inner,E_outer,E_centralized"


def test_gaussian_sweep_domain_errors(capsys):
    assert main(["gaussian-sweep", "--rho0", "-0.5", "--rho1", "0.5"]) == EXIT_DOMAIN
    assert "Untractable" in capsys.readouterr().err
    assert main(["gaussian-sweep", "--rho0", "0.4", "--rho1", "0.4"]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# Discrete exponents
# ---------------------------------------------------------------------------


def test_exponent_zero_rate_reports_generated_seed(pair_file, capsys):
    assert main(["exponent", "--pair", pair_file, "--rate", "0"]) == EXIT_OK
    captured = capsys.readouterr()
    record = json.loads(captured.out)
    assert record["scheme"] == "qbt"
    assert record["exponent"] == pytest.approx(0.0, abs=1e-12)
    assert captured.err.startswith("seed: ")


def test_exponent_both_schemes(pair_file, tmp_path):
    out = tmp_path / "exp.json"
    args = [
        "exponent", "--pair", pair_file, "--rate", "0.3", "--scheme", "both",
        "--seed", "3", "--restarts", "4", "--out", str(out),
    ]
    assert main(args) == EXIT_OK
    payload = json.loads(out.read_text())
    assert set(payload) == {"qbt", "sha", "gap"}
    assert payload["gap"] <= 1e-3
    assert payload["sha"]["rho1"] is not None


def strict_json(text):
    def reject(token):
        raise ValueError(f"non-standard JSON constant {token}")

    return json.loads(text, parse_constant=reject)


def test_exponent_infinite_component_is_valid_json(pair_file, capsys):
    # at rate 2 > H(X1) the second decode-then-test exponent is infinite
    args = ["exponent", "--pair", pair_file, "--rate", "2.0", "--scheme", "sha", "--seed", "0", "--restarts", "4"]
    assert main(args) == EXIT_OK
    record = strict_json(capsys.readouterr().out)
    assert record["rho2"] is None
    assert record["exponent"] == pytest.approx(record["rho1"], abs=1e-12)
    assert record["exponent"] == pytest.approx(centralized_exponent(dsbs_pair()), abs=1e-6)


def test_exponent_negative_rate_is_usage_error(pair_file):
    assert main(["exponent", "--pair", pair_file, "--rate", "-1"]) == EXIT_USAGE


def test_outer_bound_and_check_xi(pair_file, tmp_path, capsys):
    h = dsbs_pair()
    cP = JointPMF.from_tensor(["X1", "Y", "Z"], h.P.tensor[:, :, None] * np.eye(2)[:, None, :])
    cQ = JointPMF.from_tensor(["X1", "Y", "Z"], h.Q.tensor[:, :, None] * np.eye(2)[:, None, :])
    p_file = write(tmp_path / "cp.json", cP)
    q_file = write(tmp_path / "cq.json", cQ)

    common = ["--pair", pair_file, "--coupled-p", p_file, "--coupled-q", q_file]
    assert main(["check-xi"] + common) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["member"]
    assert report["z"] == "Z"

    assert main(["outer-bound"] + common + ["--rate", "0", "--seed", "1"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["value"] == pytest.approx(centralized_exponent(h), abs=1e-9)


def test_outer_bound_invalid_coupling(pair_file, tmp_path):
    h = dsbs_pair()
    cP = JointPMF.from_tensor(["X1", "Y", "Z"], h.P.tensor[:, :, None])
    p_file = write(tmp_path / "cp.json", cP)
    args = ["outer-bound", "--pair", pair_file, "--coupled-p", p_file, "--coupled-q", p_file, "--rate", "0.2"]
    assert main(args + ["--seed", "0"]) == EXIT_DOMAIN


def test_check_suffstat(tmp_path, capsys):
    t = np.zeros((2, 2, 2))
    for x in range(2):
        for y in range(2):
            t[x, x, y] = 0.5 * (0.9 if x == y else 0.1)
    pmf_file = write(tmp_path / "pmf.json", JointPMF.from_tensor(["X1", "X2", "Y"], t))
    args = ["check-suffstat", "--pmf", pmf_file, "--x-vars", "X1,X2", "--y", "Y", "--map", "0,0,1,1"]
    assert main(args) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["c5"] and result["rows_distinct"]
    assert result["label"] == "necessary-check"


# ---------------------------------------------------------------------------
# Many-help-one
# ---------------------------------------------------------------------------


def test_mho_point(params_file, tmp_path, capsys):
    inside = write(
        tmp_path / "in.json", RateExponentPoint(main_rate=0.53, helper_rates=[1.0], exponent=0.5)
    )
    assert main(["mho", "--params", params_file, "--point", inside]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["member"]

    exceeds = write(
        tmp_path / "big.json", RateExponentPoint(main_rate=1.0, helper_rates=[1.0], exponent=2.0)
    )
    assert main(["mho", "--params", params_file, "--point", exceeds]) == EXIT_DOMAIN
    assert "centralized" in capsys.readouterr().err


def test_mho_min_main_rate(params_file, capsys):
    args = ["mho", "--params", params_file, "--min-main-rate", "--r1-grid", "0,1", "--e-grid", "0.2,0.5"]
    assert main(args) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "R1,E,R_min"
    assert len(lines) == 5
    assert float(lines[4].split(",")[2]) == pytest.approx(0.5, abs=1e-9)

    assert main(["mho", "--params", params_file, "--min-main-rate"]) == EXIT_DOMAIN


def test_mho_min_main_rate_empty_region(params_file, capsys):
    # E = 1 is above the centralized exponent of these variances
    args = ["mho", "--params", params_file, "--min-main-rate", "--r1-grid", "1", "--e-grid", "0.5,1"]
    assert main(args) == EXIT_DOMAIN
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[1] == "1,0.5,0.5"
    assert lines[2] == "1,1,empty"
    assert "empty region" in captured.err


def test_mho_needs_a_mode(params_file):
    assert main(["mho", "--params", params_file]) == EXIT_USAGE


def test_ceo(tmp_path, capsys):
    params = write(
        tmp_path / "ceo.json", MHOParams(sigma2_x=1.0, sigma2_n=1.0, helper_noise=[0.5, 0.5])
    )
    assert main(["ceo", "--params", params, "--rates", "5,5", "--exponent", "0.3"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["member"]
    assert main(["ceo", "--params", params, "--rates", "5", "--exponent", "0.3"]) == EXIT_DOMAIN


def test_one_helper(params_file, capsys):
    assert main(["one-helper", "--params", params_file, "--r1", "1", "--exponent", "0.5"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["min_main_rate"] == pytest.approx(0.5, abs=1e-12)
    assert payload["witness_r1"] == pytest.approx(0.5, abs=1e-12)
    assert main(["one-helper", "--params", params_file, "--r1", "1", "--exponent", "3"]) == EXIT_DOMAIN


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def test_simulate(pair_file, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 8, "codebook_rate": 1.0, "bin_rate": 0.5, "mu": 0.2, "trials": 20}))
    channel = write(tmp_path / "ch.json", TestChannel.symmetric(0.2))
    outputs = []
    for name in ("a", "b"):
        out, table = tmp_path / f"{name}.json", tmp_path / f"{name}.csv"
        args = [
            "simulate", "--config", str(cfg), "--pair", pair_file, "--channel", channel,
            "--seed", "5", "--out", str(out), "--csv", str(table),
        ]
        assert main(args) == EXIT_OK
        outputs.append(json.loads(out.read_text()))
        assert table.read_text().splitlines()[0] == "n,type1,type2,neg_log2_type2_per_n"
    assert outputs[0] == outputs[1]
    assert outputs[0]["config"]["seed"] == 5


def test_simulate_streams_progress(pair_file, tmp_path, monkeypatch, caplog):
    monkeypatch.delenv("DHTEST_LOG_LEVEL", raising=False)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 8, "n_list": [6], "codebook_rate": 1.0, "bin_rate": 0.5, "mu": 0.2, "trials": 10}))
    channel = write(tmp_path / "ch.json", TestChannel.symmetric(0.2))
    args = ["simulate", "--config", str(cfg), "--pair", pair_file, "--channel", channel, "--seed", "2"]
    assert main(args + ["--out", str(tmp_path / "r.json")]) == EXIT_OK
    progress = [r.getMessage() for r in caplog.records if r.name == "dhtest.simulator"]
    assert any(m.startswith("n = 6:") for m in progress)
    assert any(m.startswith("n = 8:") for m in progress)

    caplog.clear()
    assert main(args + ["--out", str(tmp_path / "q.json"), "--log-level", "error"]) == EXIT_OK
    assert not [r for r in caplog.records if r.name == "dhtest.simulator"]


def test_simulate_invalid_config(pair_file, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 8, "codebook_rate": 1.0, "bin_rate": 0.5, "trials": 0}))
    channel = write(tmp_path / "ch.json", TestChannel.symmetric(0.2))
    args = ["simulate", "--config", str(cfg), "--pair", pair_file, "--channel", channel, "--seed", "1"]
    assert main(args) == EXIT_USAGE
