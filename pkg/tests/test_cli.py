import csv
import json

import numpy as np
import pytest

from bandro.cli import main
from bandro.core import read_dataset
from bandro.band_kde import kde_eval


@pytest.fixture
def beta_csv(tmp_path):
    path = tmp_path / "beta.csv"
    assert main(["gen-data", "--family", "scaled_beta", "--n", "100", "--seed", "1",
                 "--out", str(path)]) == 0
    return path


@pytest.fixture
def uniform_csv(tmp_path):
    path = tmp_path / "u.csv"
    assert main(["gen-data", "--family", "uniform", "--n", "200", "--out", str(path)]) == 0
    return path


SR = ["--kind", "sr", "--a", "0", "--b", "250", "--mu", "200", "--U", "0.0102",
      "--alpha", "0.2", "--mc-samples", "5000"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_gen_data_shape_and_determinism(tmp_path, beta_csv):
    data = read_dataset(beta_csv)
    assert data.N == 100 and data.m == 1
    assert np.all((data.points > 0) & (data.points < 250))
    again = tmp_path / "again.csv"
    main(["gen-data", "--family", "scaled_beta", "--n", "100", "--seed", "1", "--out", str(again)])
    assert again.read_bytes() == beta_csv.read_bytes()


def test_gen_data_params(tmp_path):
    out = tmp_path / "f.csv"
    assert main(["gen-data", "--family", "factor_normal", "--n", "5", "--param", "n=3",
                 "--out", str(out)]) == 0
    assert read_dataset(out).m == 3


def test_seed_env_overrides_flag(tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["gen-data", "--family", "scaled_beta", "--n", "10", "--seed", "7", "--out", str(a)])
    monkeypatch.setenv("BANDRO_SEED", "7")
    main(["gen-data", "--family", "scaled_beta", "--n", "10", "--seed", "99", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_band_sr_curve(tmp_path, beta_csv, capsys):
    out = tmp_path / "curve.csv"
    assert main(["band", "--data", str(beta_csv), *SR, "--out", str(out)]) == 0
    r = rows(out)
    assert r[0] == ["xi", "l", "u"] and len(r) == 202
    vals = np.array(r[1:], dtype=float)
    assert np.all(vals[:, 1] <= vals[:, 2])
    assert "mean_width=" in capsys.readouterr().out
    again = tmp_path / "again.csv"
    main(["band", "--data", str(beta_csv), *SR, "--out", str(again)])
    assert again.read_bytes() == out.read_bytes()


def test_band_kde_delta_zero_is_the_estimate(tmp_path, beta_csv):
    out = tmp_path / "kde.csv"
    assert main(["band", "--data", str(beta_csv), "--kind", "kde", "--h", "10", "--delta", "0",
                 "--out", str(out)]) == 0
    vals = np.array(rows(out)[1:], dtype=float)
    assert np.array_equal(vals[:, 1], vals[:, 2])
    np.testing.assert_allclose(vals[:, 1], kde_eval(read_dataset(beta_csv), "boxcar", 10,
                                                    vals[:, 0]), rtol=1e-12)


def test_band_infeasible_exits_2(tmp_path, beta_csv, capsys):
    # a cap far below any density on [0, 250] leaves no feasible unimodal density
    args = ["band", "--data", str(beta_csv), "--kind", "sr", "--a", "0", "--b", "250",
            "--mu", "200", "--U", "0.001", "--mc-samples", "2000", "--out",
            str(tmp_path / "c.csv")]
    assert main(args) == 2
    assert "bandro:" in capsys.readouterr().err


def test_band_missing_sr_flags_exit_1(tmp_path, beta_csv, capsys):
    assert main(["band", "--data", str(beta_csv), "--kind", "sr", "--out",
                 str(tmp_path / "c.csv")]) == 1
    assert "usage" in capsys.readouterr().err


def test_solve_uniform_with_oracle(tmp_path, uniform_csv):
    out = tmp_path / "s.json"
    assert main(["solve", "--data", str(uniform_csv), "--kind", "uniform", "--a", "0", "--b", "1",
                 "--order-cap", "1", "--iters", "5000", "--eta", "0.05", "--oracle",
                 "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert set(res) >= {"x", "lambda", "F_hat", "iters", "oracle_value", "gap"}
    assert abs(res["gap"]) <= 1e-2
    assert res["x"][0] == pytest.approx(0.95, abs=0.05)


def test_solve_deterministic(tmp_path, uniform_csv):
    outs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        main(["solve", "--data", str(uniform_csv), "--kind", "uniform", "--a", "0", "--b", "1",
              "--iters", "500", "--seed", "4", "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_solve_missing_data_exit_1(tmp_path, capsys):
    assert main(["solve", "--kind", "uniform", "--out", str(tmp_path / "s.json")]) == 1
    assert "usage" in capsys.readouterr().err


def test_solve_divergence_exit_2(tmp_path, beta_csv):
    args = ["solve", "--data", str(beta_csv), *SR, "--iters", "200", "--eta", "1e12",
            "--eta-lam", "1e12", "--out", str(tmp_path / "s.json")]
    assert main(args) == 2


def test_unknown_command_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1


def test_oracle_check(tmp_path, beta_csv):
    out = tmp_path / "o.json"
    assert main(["oracle-check", "--data", str(beta_csv), *SR, "--x", "190", "--G", "500",
                 "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["greedy_lp_diff"] <= 1e-9
    assert res["duality_gap"] <= 1e-3


def _write_config(path, **kw):
    cfg = {"sizes": [10], "trials": 2, "n_large": 1000, "grid": {"c": [1.0], "alpha": [0.2]},
           "sgd": {"batch": 16, "eta": 5.0, "eta_lam": 50.0, "iters": 100},
           "mc_samples": 1000, "tab_nodes": 21}
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return path


def test_experiment_files_and_rerun(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json")
    for name in ("a", "b"):
        assert main(["experiment", "--config", str(cfg), "--jobs", "1",
                     "--out", str(tmp_path / name)]) == 0
    for f in ("trials.csv", "aggregate.csv", "hyperparameters.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert len(rows(tmp_path / "a" / "trials.csv")) == 3


def test_experiment_trials_override(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json")
    assert main(["experiment", "--config", str(cfg), "--trials", "1", "--jobs", "1",
                 "--out", str(tmp_path / "o")]) == 0
    assert len(rows(tmp_path / "o" / "trials.csv")) == 2


def test_experiment_failures_exit_2(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json",
                        sgd={"batch": 8, "eta": 1e12, "eta_lam": 1e12, "iters": 50})
    assert main(["experiment", "--config", str(cfg), "--jobs", "1",
                 "--out", str(tmp_path / "o")]) == 2
