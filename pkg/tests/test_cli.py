import json

import numpy as np
import pytest

from martest.cli import main
from martest.data import Dataset
from martest.io import write_dataset
from martest.simulation import Scenario, generate_dataset


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cli") / "null.csv"
    write_dataset(p, generate_dataset(Scenario(n=300), seed=7))
    return p


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestTestCommand:
    def test_report(self, capsys, csv_path):
        code, out, err = _run(capsys, "test", csv_path, "--z-mode", "degenerate")
        assert code == 0, err
        rep = json.loads(out)
        assert rep["df"] == 3 and rep["schema_version"] == 1
        assert 0 <= rep["p_value"] <= 1
        assert rep["reject"] == (rep["p_value"] < 0.05)

    def test_deterministic(self, capsys, csv_path):
        a = _run(capsys, "test", csv_path, "--z-mode", "degenerate")[1]
        b = _run(capsys, "test", csv_path, "--z-mode", "degenerate")[1]
        assert a == b

    @pytest.mark.parametrize("level", ["0", "1", "1.5", "-0.1"])
    def test_bad_level(self, capsys, csv_path, level):
        code, _, err = _run(capsys, "test", csv_path, "--level", level)
        assert code == 1
        assert json.loads(err)["error"]["code"] == "usage"

    def test_duplicated_row(self, capsys, tmp_path):
        p = tmp_path / "dup.csv"
        write_dataset(p, Dataset(np.full(50, 1.2), np.ones(50), np.full(50, 0.3), np.full(50, -0.1)))
        code, _, err = _run(capsys, "test", p)
        assert code == 2
        assert json.loads(err)["error"]["code"] in {"degenerate-covariance", "degenerate-data", "identifiability"}

    def test_parse_error(self, capsys, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,u,z\n1,NA,0\n")
        code, _, err = _run(capsys, "test", p)
        assert code == 1
        assert "row 2" in json.loads(err)["error"]["message"]

    def test_missing_file(self, capsys, tmp_path):
        assert _run(capsys, "test", tmp_path / "nope.csv")[0] == 1

    def test_explicit_bandwidths(self, capsys, csv_path):
        code, out, _ = _run(capsys, "test", csv_path, "--z-mode", "degenerate", "--bandwidth-prop", "0.4", "--bandwidth-kde", "0.2,0.2")
        assert code == 0
        assert json.loads(out)["diagnostics"]["kde_bandwidth"] == [0.2, 0.2]


class TestOtherCommands:
    @pytest.mark.parametrize("estimator", ["ipw", "pseudo"])
    def test_fit(self, capsys, csv_path, estimator):
        code, out, _ = _run(capsys, "fit", csv_path, "--estimator", estimator, "--z-mode", "degenerate")
        rep = json.loads(out)
        assert code == 0 and len(rep["beta"]) == 3 and rep["converged"]

    def test_simulate(self, capsys, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["simulate", "--n", "100", "--reps", "50", "--seed", "3", "--c2-list", "0,0.5"]
        assert _run(capsys, *args, "--out", a, "--json-out", tmp_path / "a.json")[0] == 0
        assert _run(capsys, *args, "--out", b)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        assert len(a.read_text().splitlines()) == 3
        cells = json.loads((tmp_path / "a.json").read_text())["cells"]
        assert len(cells[0]["t_values"]) == 50

    def test_power(self, capsys):
        code, out, _ = _run(capsys, "power", "--c1", "0", "--n-cal", "300")
        rep = json.loads(out)
        assert code == 0 and rep["power_at_level"] == 0.05

    def test_unknown_command(self, capsys):
        assert _run(capsys, "frobnicate")[0] == 1


@pytest.mark.slow
def test_null_p_values_across_seeds(capsys, tmp_path):
    p = tmp_path / "seed.csv"
    rejections = 0
    for seed in range(100):
        write_dataset(p, generate_dataset(Scenario(n=1000), seed=seed))
        code, out, err = _run(capsys, "test", p, "--z-mode", "degenerate")
        assert code == 0, err
        rejections += json.loads(out)["p_value"] < 0.05
    assert 1 <= rejections <= 12
