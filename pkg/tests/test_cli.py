import json

import pytest

from ranklab.cli import main
from ranklab.reports import read_csv


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestSimulateCommand:
    def test_writes_csv_and_figure(self, tmp_path, capsys):
        out = tmp_path / "traj.csv"
        code = run_cli(
            "simulate", "--m", 20, "--m1", 3, "--beta", 1.1, "--gamma0", 0.9,
            "--gamma1", 0.1, "--p0", 0.4, "--p1", 0.4, "--n", 100, "--seed", 7,
            "--out", out,
        )
        assert code == 0
        assert "ctr=" in capsys.readouterr().out
        metadata, rows = read_csv(out)
        assert metadata["seed"] == 7
        assert len(rows) == 101 * 20
        fig = out.with_suffix(".png")
        assert fig.exists() and fig.stat().st_size > 0

    def test_identical_seed_identical_csv(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert run_cli("simulate", "--m1", 5, "--seed", 3, "--out", out,
                           "--no-plot") == 0
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_m1_is_usage_error(self, tmp_path, capsys):
        code = run_cli("simulate", "--m1", 0, "--out", tmp_path / "x.csv", "--no-plot")
        assert code != 0
        assert "error" in capsys.readouterr().err.lower()

    def test_static_flag(self, tmp_path):
        out = tmp_path / "s.csv"
        assert run_cli("simulate", "--m1", 4, "--static", "--seed", 1,
                       "--out", out, "--no-plot") == 0
        _, rows = read_csv(out)
        final = [r for r in rows if r["step"] == "100"]
        assert all(r["clicks"] == "1" for r in final)


class TestLimitCommand:
    def test_nineteen_rows_and_cross_regime_ordering(self, tmp_path):
        out = tmp_path / "limit.csv"
        code = run_cli(
            "limit", "--m", 20, "--beta", 1.1, "--gamma0", 0.8, "--gamma1", 0.2,
            "--p", 0.4, "--out", out, "--no-plot",
        )
        assert code == 0
        _, rows = read_csv(out)
        assert len(rows) == 19
        shares = {int(r["m1"]): float(r["limit_share"]) for r in rows}
        assert shares[3] > 0.5 > shares[17]
        assert all(int(r["n_stable_patterns"]) >= 1 for r in rows)

    def test_multiple_betas_and_figure(self, tmp_path):
        out = tmp_path / "limit.csv"
        code = run_cli("limit", "--m", 10, "--beta", 1.2, 1.5, "--gamma0", 0.8,
                       "--gamma1", 0.2, "--p", 0.3, "--out", out)
        assert code == 0
        _, rows = read_csv(out)
        assert len(rows) == 2 * 9
        assert out.with_suffix(".png").stat().st_size > 0


class TestSweepCommand:
    def test_sweep_csv_schema(self, tmp_path):
        out = tmp_path / "sweep.csv"
        code = run_cli(
            "sweep", "--m", 20, "--axis", "beta", "--values", 1.1, "--m1-values",
            3, 17, "--reps", 5, "--n", 50, "--seed", 2, "--out", out, "--no-plot",
        )
        assert code == 0
        metadata, rows = read_csv(out)
        assert metadata["axis"] == "beta"
        assert len(rows) == 2
        assert set(rows[0]) == {"axis", "axis_value", "m1", "mean_ctr",
                                "ci_low", "ci_high", "reps", "seed"}

    def test_bad_axis_value_fails(self, tmp_path, capsys):
        code = run_cli("sweep", "--axis", "p2_symmetric", "--values", 1.4,
                       "--m1-values", 3, "--reps", 3, "--out", tmp_path / "x.csv",
                       "--no-plot")
        assert code != 0


class TestEnumerateCommand:
    def test_count_report(self, capsys, tmp_path):
        code = run_cli("enumerate", "--m", 12, "--m1", 6, "--beta", 1.1,
                       "--out", tmp_path / "pats.csv")
        assert code == 0
        out = capsys.readouterr().out
        assert "stable patterns" in out
        assert "intermediate band" in out
        _, rows = read_csv(tmp_path / "pats.csv")
        assert all(set(r["pattern"]) <= {"0", "1"} for r in rows)

    def test_guard_exceeded_is_error(self, capsys, tmp_path):
        code = run_cli("enumerate", "--m", 40, "--m1", 20, "--beta", 1.2)
        assert code != 0
        assert "exceeds" in capsys.readouterr().err


class TestFitAndReplayCommands:
    @pytest.fixture()
    def click_csv(self, tmp_path):
        from ranklab.estimate import write_click_csv
        from tests.test_estimate import synthetic_records

        path = tmp_path / "clicks.csv"
        write_click_csv(synthetic_records(40), path)
        return path

    def test_fit_writes_report(self, tmp_path, click_csv):
        out = tmp_path / "fit.json"
        assert run_cli("fit", "--records", click_csv, "--out", out) == 0
        payload = json.loads(out.read_text())
        assert 1.0 <= payload["beta_hat"] <= 3.0
        assert payload["n_obs"] == 320  # 8 conditions x 40 synthetic clicks
        assert payload["converged"] is True

    def test_fit_regime_requires_event_log(self, tmp_path, click_csv, capsys):
        code = run_cli("fit", "--records", click_csv, "--regime", "dynamic",
                       "--out", tmp_path / "f.json")
        assert code != 0
        assert "regime" in capsys.readouterr().err

    def test_replay_from_event_log(self, tmp_path):
        from fastapi.testclient import TestClient

        from ranklab.service import ServiceConfig, create_app

        app = create_app(ServiceConfig(data_dir=tmp_path / "svc", seed=2))
        with TestClient(app) as client:
            for k in range(12):
                payload = client.post("/sessions").json()
                sid = payload["session_id"]
                client.post(f"/sessions/{sid}/type",
                            json={"answer": ["cat", "dog", "neither"][k % 3]})
                options = client.get(f"/sessions/{sid}/options").json()["options"]
                client.post(f"/sessions/{sid}/click",
                            json={"item": options[k % 20]["item"]})
        log = app.state.store.log_path
        out = tmp_path / "refit.json"
        records_out = tmp_path / "records.csv"
        code = run_cli("replay", "--log", log, "--out", out,
                       "--records-out", records_out)
        assert code == 0
        assert json.loads(out.read_text())["n_obs"] == 12
        from ranklab.estimate import load_click_csv
        assert len(load_click_csv(records_out)) == 12


class TestTableCommand:
    def test_table_smoke(self, tmp_path, capsys):
        out = tmp_path / "table.csv"
        code = run_cli("table", "--mode", "sim2", "--beta", 1.22, "--gamma0", 0.74,
                       "--gamma1", 0.08, "--reps", 5, "--seed", 0, "--out", out)
        assert code == 0
        _, rows = read_csv(out)
        assert [r["condition"] for r in rows] == ["D1", "D2", "D3", "D4",
                                                  "S1", "S2", "S3", "S4"]
        assert out.with_suffix(".png").stat().st_size > 0
        assert "D4=" in capsys.readouterr().out
