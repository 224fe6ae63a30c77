import csv
import json

import pytest

from fairk.cli import main
from fairk.config import ExperimentConfig, dump_config, from_mapping, load_config
from fairk.errors import ConfigError


def write_ini(path, text):
    path.write_text(text)
    return str(path)


class TestConfig:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig().validate()
        assert (cfg.num_clients, cfg.eta, cfg.eta_l, cfg.batch_size, cfg.local_steps, cfg.dir_alpha, cfg.rho) \
            == (50, 0.01, 0.01, 50, 5, 0.3, 0.1)

    def test_dump_load_round_trip(self, tmp_path):
        cfg = ExperimentConfig(policy="top_rand", k=12, k_m=None, rounds=7, seed=3).replace(out="x")
        path = write_ini(tmp_path / "c.ini", dump_config(cfg))
        assert load_config(path) == cfg

    def test_every_problem_reported(self):
        with pytest.raises(ConfigError) as err:
            from_mapping({"experiment": {"rounds": "0", "eta": "-1", "policy": "best", "nope": "1"},
                          "channel": {"mu_c": "x", "fading": "rician"}, "extra": {}})
        keys = " ".join(err.value.problems)
        for key in ("rounds", "eta", "policy", "nope", "channel.mu_c", "channel.fading", "[extra]"):
            assert key in keys
        assert len(err.value.problems) == 7

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="missing.ini"):
            load_config(tmp_path / "missing.ini")

    def test_budget_resolution(self):
        assert ExperimentConfig().budget(650) == (65, 49)
        assert ExperimentConfig(k=10, k_m=3).budget(650) == (10, 3)
        assert ExperimentConfig().exchange_k0(650) == 12


class TestCli:
    def test_missing_config(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nowhere.ini")]) != 0
        assert "nowhere.ini" in capsys.readouterr().err

    def test_malformed_config_lists_keys(self, tmp_path, capsys):
        path = write_ini(tmp_path / "bad.ini", "[experiment]\nrounds = -1\nbatch_size = zero\n")
        assert main(["run", "--config", path]) == 2
        err = capsys.readouterr().err
        assert "rounds" in err and "batch_size" in err

    def test_run_writes_metrics(self, tmp_path):
        out = tmp_path / "run"
        assert main(["run", "--rounds", "3", "--out", str(out), "--policy", "top_k", "--seed", "4"]) == 0
        lines = (out / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 3 and json.loads(lines[0])["policy"] == "top_k"
        with open(out / "summary.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 1
        assert load_config(out / "config.ini").seed == 4

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["run", "--rounds", "5", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()

    def test_compare_row_count(self, tmp_path):
        out = tmp_path / "cmp"
        assert main(["compare", "--rounds", "3", "--out", str(out)]) == 0
        with open(out / "compare.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4 * 3
        assert {r["policy"] for r in rows} == {"fair_k", "top_k", "round_robin", "top_rand"}
        for policy in ("fair_k", "top_k", "round_robin", "top_rand"):
            assert (out / policy / "metrics.jsonl").is_file()

    def test_aou_dist(self, tmp_path, capsys):
        out = tmp_path / "ad"
        args = ["aou-dist", "--d", "200", "--k", "20", "--k-m", "15", "--k0", "3", "--sim-rounds", "400",
                "--out", str(out)]
        assert main(args) == 0
        with open(out / "aou_dist.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["l", "analytic_prob", "empirical_prob"]
        assert sum(float(r[1]) for r in rows[1:]) == pytest.approx(1.0, abs=1e-9)
        assert "E[tau]=" in capsys.readouterr().out

    def test_aou_dist_too_short_simulation(self, tmp_path, capsys):
        args = ["aou-dist", "--d", "200", "--k", "20", "--k-m", "15", "--k0", "3", "--sim-rounds", "50",
                "--out", str(tmp_path)]
        assert main(args) == 1
        assert "rounds=50" in capsys.readouterr().err

    def test_aou_dist_rejects_infeasible_model(self, tmp_path, capsys):
        assert main(["aou-dist", "--d", "10", "--k", "6", "--k-m", "3", "--k0", "1", "--out", str(tmp_path)]) == 1
        assert "ModelConstructionError" in capsys.readouterr().err

    def test_estimate_and_bound(self, tmp_path):
        path = write_ini(tmp_path / "c.ini", "[experiment]\nnum_clients = 4\n"
                         "[analysis]\nlipschitz_pairs = 100\nlh_samples = 10\nnoise_samples = 3\n")
        out = tmp_path / "est"
        assert main(["estimate-lipschitz", "--config", path, "--out", str(out)]) == 0
        consts = json.loads((out / "constants.json").read_text())
        assert consts["L_tilde"] >= consts["L_g"] > 0
        assert main(["bound", "--config", path, "--out", str(out), "--constants", str(out / "constants.json")]) == 0
        doc = json.loads((out / "bound.json").read_text())
        assert doc["bound"] == pytest.approx(sum(doc["terms"].values()), rel=1e-12)
        assert set(doc["terms"]) == {"optimization", "channel_noise", "sgd_noise", "local_drift_heterogeneity",
                                     "local_drift_sgd", "staleness"}

    def test_strict_bound_reports_violation(self, tmp_path, capsys):
        path = write_ini(tmp_path / "c.ini", "[experiment]\nnum_clients = 4\neta = 5\n"
                         "[analysis]\nlipschitz_pairs = 100\nlh_samples = 10\nnoise_samples = 3\nstrict = true\n")
        assert main(["bound", "--config", path, "--out", str(tmp_path)]) == 1
        assert "AdmissibilityError" in capsys.readouterr().err
