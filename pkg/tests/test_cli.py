import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mdfcontrol.cli import main
from mdfcontrol.sizefam import SizeFamily


@pytest.fixture
def battery(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("id,p\nA,0.001\nB,0.013\nC,0.04\nD,0.2\n")
    return path


def sim_config(tmp_path, name="sim.json", **kw):
    d = dict(M=10, m0=5, effects=2.0, q=0.05, procedure="dagger", replicates=300, seed=9)
    d.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return path


class TestTest:
    def test_star_example(self, battery, tmp_path):
        out = tmp_path / "o.json"
        assert main(["test", "-i", str(battery), "-o", str(out), "--procedure", "star"]) == 0
        d = json.loads(out.read_text())
        assert d["rejected"] == ["A", "B"] and d["J"] == 2 and d["procedure"] == "star"

    def test_stdout(self, battery, capsys):
        assert main(["test", "-i", str(battery), "--procedure", "bh"]) == 0
        assert json.loads(capsys.readouterr().out)["J"] == 2

    def test_q_zero(self, battery, capsys):
        assert main(["test", "-i", str(battery), "--q", "0"]) == 0
        assert json.loads(capsys.readouterr().out)["rejected"] == []

    def test_empty_file(self, tmp_path, capsys):
        path = tmp_path / "e.csv"
        path.write_text("id,p\n")
        assert main(["test", "-i", str(path)]) == 1
        assert "no data rows" in capsys.readouterr().err

    def test_parse_error_line(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("id,p\nA,0.1\nB,zero\n")
        assert main(["test", "-i", str(path)]) == 1
        assert "line 3" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "extra",
        [["--q", "1.5"], ["--sizes", "nonsense"], ["--sizes", '{"kind": "sidak", "M": 3}'], ["--procedure", "x"]],
    )
    def test_config_errors(self, battery, extra):
        assert main(["test", "-i", str(battery)] + extra) == 2

    def test_sizes_json_file(self, battery, tmp_path, capsys):
        fam = tmp_path / "fam.json"
        fam.write_text(json.dumps(SizeFamily.weighted([0.4, 0.3, 0.2, 0.1]).to_dict()))
        assert main(["test", "-i", str(battery), "--sizes", str(fam), "--procedure", "dagger"]) == 0
        assert len(json.loads(capsys.readouterr().out)["sizes_at_threshold"]) == 4

    def test_plot_data(self, battery, tmp_path):
        out = tmp_path / "o.json"
        assert main(["test", "-i", str(battery), "-o", str(out), "--emit-plot-data"]) == 0
        rows = list(csv.reader((tmp_path / "o_curve.csv").open()))
        assert rows[0] == ["q", "J"] and len(rows) == 251
        assert rows[1][0] == "0.001" and rows[-1][0] == "0.250"
        J = [int(r[1]) for r in rows[1:]]
        assert J == sorted(J)
        assert J[49] == 2  # q = 0.05

    def test_plot_needs_path(self, battery):
        assert main(["test", "-i", str(battery), "--emit-plot-data"]) == 2


class TestSimulate:
    def test_pass(self, tmp_path):
        out = tmp_path / "r.json"
        assert main(["simulate", "-i", str(sim_config(tmp_path)), "-o", str(out)]) == 0
        d = json.loads(out.read_text())
        assert d["passed"] and d["config"]["replicates"] == 300

    def test_toml(self, tmp_path, capsys):
        path = tmp_path / "c.toml"
        path.write_text('M = 4\nm0 = 4\neffects = []\nreplicates = 50\nprocedure = "star"\n')
        assert main(["simulate", "-i", str(path)]) == 0
        d = json.loads(capsys.readouterr().out)
        assert d["rates"]["fdr_hat"] == d["rates"]["fwer_hat"]

    def test_bound_failure(self, tmp_path):
        # frozen: seed 2 gives fwer_hat = 0.0725 on 400 global-null replicates
        cfg = sim_config(tmp_path, m0=10, effects=[], replicates=400, seed=2)
        assert main(["simulate", "-i", str(cfg), "--k-sigma", "0", "-o", str(tmp_path / "r.json")]) == 3

    def test_bonferroni_refused(self, tmp_path, capsys):
        cfg = sim_config(tmp_path, procedure="star")
        assert main(["simulate", "-i", str(cfg), "--sizes", "bonferroni"]) == 2
        err = capsys.readouterr().err
        assert "A1" in err and "A4" in err

    @pytest.mark.parametrize("body", ['{"M": 3, "m0": 5}', "[1, 2]", "{", '{"M": 3, "m0": 3, "bogus": 1}'])
    def test_bad_config(self, tmp_path, body):
        path = tmp_path / "c.json"
        path.write_text(body)
        assert main(["simulate", "-i", str(path)]) == 2

    def test_missing_input(self):
        assert main(["simulate"]) == 2

    def test_flags_override_and_seed_precedence(self, tmp_path, monkeypatch, capsys):
        cfg = sim_config(tmp_path, seed=5)
        monkeypatch.setenv("MDF_SEED", "77")

        def run(*extra):
            assert main(["simulate", "-i", str(cfg), *extra]) == 0
            return json.loads(capsys.readouterr().out)["config"]

        assert run()["seed"] == 5
        assert run("--seed", "6")["seed"] == 6
        c = run("--q", "0.1", "--procedure", "star")
        assert (c["q"], c["procedure"]) == (0.1, "star")
        d = json.loads(cfg.read_text())
        del d["seed"]
        cfg.write_text(json.dumps(d))
        assert run()["seed"] == 77
        monkeypatch.delenv("MDF_SEED")
        assert run()["seed"] == 0

    def test_bad_env_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MDF_SEED", "abc")
        cfg = tmp_path / "c.json"
        cfg.write_text('{"M": 2, "m0": 2, "replicates": 10}')
        assert main(["simulate", "-i", str(cfg)]) == 2

    def test_byte_identical(self, tmp_path):
        cfg = sim_config(tmp_path, replicates=9000)
        outs = []
        for i, workers in enumerate((1, 1, 3)):
            out = tmp_path / f"r{i}.json"
            assert main(["simulate", "-i", str(cfg), "-o", str(out), "--workers", str(workers)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_replicates_csv(self, tmp_path):
        reps = tmp_path / "reps.csv"
        assert main(["simulate", "-i", str(sim_config(tmp_path)), "-o", str(tmp_path / "r.json"),
                     "--replicates-csv", str(reps)]) == 0
        assert len(reps.read_text().splitlines()) == 301


class TestOptimize:
    def test_equal_thetas_sidak(self, tmp_path):
        out = tmp_path / "fam.json"
        assert main(["optimize", "--thetas", "2,2,2", "-o", str(out)]) == 0
        fam = SizeFamily.from_dict(json.loads(out.read_text()))
        a = np.linspace(0.01, 0.99, 50)
        assert np.allclose(fam.evaluate(a), SizeFamily.sidak(3).evaluate(a), atol=1e-6)
        report = json.loads((tmp_path / "fam.validation.json").read_text())
        assert report["validation"]["ok"]

    def test_heterogeneous_from_config(self, tmp_path):
        cfg = tmp_path / "opt.toml"
        cfg.write_text("thetas = [3.0, 0.5, 1.5]\ngrid_size = 40\n")
        out, rep = tmp_path / "fam.json", tmp_path / "rep.json"
        assert main(["optimize", "-i", str(cfg), "-o", str(out), "--report", str(rep)]) == 0
        assert json.loads(rep.read_text())["thetas"] == [3.0, 0.5, 1.5]
        fam = SizeFamily.from_dict(json.loads(out.read_text()))
        assert fam.M == 3
        assert main(["validate-sizes", "-i", str(out), "-o", str(tmp_path / "v.json")]) == 0

    def test_single_identity(self, capsys):
        assert main(["optimize", "--thetas", "1.5"]) == 0
        fam = SizeFamily.from_dict(json.loads(capsys.readouterr().out))
        a = np.linspace(0, 1, 21)
        assert np.allclose(fam.evaluate(a)[:, 0], a)

    def test_optimizer_failure(self):
        assert main(["optimize", "--thetas", "0,3"]) == 4

    @pytest.mark.parametrize("args", [[], ["--thetas", "a,b"], ["--thetas", "1,2", "--grid-size", "8"]])
    def test_config_errors(self, args):
        assert main(["optimize", *args]) == 2


class TestValidate:
    def write(self, tmp_path, doc):
        path = tmp_path / "fam.json"
        path.write_text(json.dumps(doc))
        return str(path)

    def test_sidak(self, tmp_path, capsys):
        assert main(["validate-sizes", "-i", self.write(tmp_path, {"kind": "sidak", "M": 5})]) == 0
        assert json.loads(capsys.readouterr().out)["validation"]["ok"]

    def test_bonferroni(self, tmp_path, capsys):
        assert main(["validate-sizes", "-i", self.write(tmp_path, {"kind": "bonferroni", "M": 5})]) == 5
        assert not json.loads(capsys.readouterr().out)["validation"]["a1_pass"]

    def test_weights_below_one(self, tmp_path, capsys):
        path = self.write(tmp_path, {"kind": "weighted", "weights": [0.5, 0.3, 0.1]})
        code = main(["validate-sizes", "-i", path, "--k-max", "3"])
        v = json.loads(capsys.readouterr().out)["validation"]
        assert v["a3_pass"]
        assert code == (0 if v["a1_pass"] and v["a2_pass"] else 5)
        assert sorted(v["a4_pass_by_k"]) == ["1", "2", "3"]

    def test_builtin_flag(self, capsys):
        assert main(["validate-sizes", "--sizes", "sidak", "--m", "4"]) == 0

    @pytest.mark.parametrize("doc", [{"kind": "weird"}, {"kind": "weighted"}, [1, 2]])
    def test_malformed(self, tmp_path, doc):
        assert main(["validate-sizes", "-i", self.write(tmp_path, doc)]) == 2

    def test_missing_input(self):
        assert main(["validate-sizes"]) == 2


def test_console_entry_point(battery):
    res = subprocess.run(
        [sys.executable, "-m", "mdfcontrol", "test", "-i", str(battery), "--procedure", "dagger"],
        capture_output=True, text=True, check=False,
    )
    assert res.returncode == 0
    assert json.loads(res.stdout)["J"] == 2


def test_usage_error():
    assert main(["frobnicate"]) == 2
