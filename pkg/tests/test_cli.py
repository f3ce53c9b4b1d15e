import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from rc_rmle.cli import main
from rc_rmle.model import SCENARIOS, generate


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    return path


@pytest.fixture(scope="module")
def unbounded_csv(tmp_path_factory):
    d = generate(SCENARIOS["unbounded"], 1000, 21)
    path = tmp_path_factory.mktemp("data") / "unbounded.csv"
    return write_csv(path, ["y", "x1"], zip(d.y, d.x[:, 1]))


def read_density(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["b0"]), float(r["b1"]), float(r["f"])] for r in rows])


def test_estimate_lepskii(unbounded_csv, tmp_path):
    out = tmp_path / "est"
    code = main(["estimate", "--input", str(unbounded_csv), "--intercept", "--lepskii",
                 "--regularizer", "l2", "--output-dir", str(out)])
    assert code == 0
    dens = read_density(out / "density.csv")
    assert dens.shape == (361, 3)
    assert abs(dens[:, 2].sum() * (9 / 19) ** 2 - 1) <= 1e-8
    assert (dens[:, 2] >= 0).all()
    report = json.loads((out / "report.json").read_text())
    assert report["selection"] == "lepskii"
    assert 1 <= report["lepskii"]["selected_index"] <= 12
    assert report["dropped_observations"] == 0
    for key in ("objective", "alpha", "solver", "peak"):
        assert key in report
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "estimate"
    assert str(unbounded_csv.resolve()) in manifest["input_digests"]
    assert set(manifest["outputs"]) == {"density.csv", "report.json"}


def test_estimate_fixed_alpha_and_replay(unbounded_csv, tmp_path):
    out = tmp_path / "a"
    assert main(["estimate", "--input", str(unbounded_csv), "--intercept", "--alpha", "0.5",
                 "--regularizer", "h1", "--output-dir", str(out)]) == 0
    again = tmp_path / "b"
    assert main(["replay", str(out / "manifest.json"), "--output-dir", str(again)]) == 0
    for name in ("density.csv", "report.json"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_replay_detects_changed_input(tmp_path):
    d = generate(SCENARIOS["unbounded"], 200, 3)
    data = write_csv(tmp_path / "d.csv", ["y", "x1"], zip(d.y, d.x[:, 1]))
    out = tmp_path / "o"
    assert main(["estimate", "--input", str(data), "--intercept", "--alpha", "1", "--output-dir", str(out)]) == 0
    data.write_text(data.read_text() + "1.0,2.0\n")
    assert main(["replay", str(out / "manifest.json"), "--output-dir", str(tmp_path / "r")]) == 2


def test_alpha_and_lepskii_exclusive(unbounded_csv, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--input", str(unbounded_csv), "--intercept", "--alpha", "1", "--lepskii",
              "--output-dir", str(tmp_path)])
    assert exc.value.code == 2


@pytest.mark.parametrize(
    "extra,flag",
    [
        (["--grid-cells", "1"], "--grid-cells"),
        (["--grid-min", "5", "--grid-max", "4"], "--grid-min"),
        (["--ratio", "1.0"], "--ratio"),
        (["--alpha", "-1"], "--alpha"),
    ],
)
def test_configuration_errors_exit_2(unbounded_csv, tmp_path, capsys, extra, flag):
    code = main(["estimate", "--input", str(unbounded_csv), "--intercept", "--output-dir", str(tmp_path / "x")] + extra)
    assert code == 2
    assert flag in capsys.readouterr().err


def test_bad_schema_exit_2(unbounded_csv, tmp_path, capsys):
    code = main(["estimate", "--input", str(unbounded_csv), "--regressors", "nope", "--intercept",
                 "--output-dir", str(tmp_path / "x")])
    assert code == 2


def test_empty_operator_exit_1(tmp_path, capsys):
    # every line b0 = 100 misses the grid
    data = write_csv(tmp_path / "far.csv", ["y", "x1"], [(100.0, 0.0), (101.0, 0.0)])
    code = main(["estimate", "--input", str(data), "--intercept", "--alpha", "1", "--output-dir", str(tmp_path / "o")])
    assert code == 1
    assert capsys.readouterr().err


def test_two_slope_peak(tmp_path):
    rng = np.random.default_rng(8)
    n = 2000
    beta = np.array([0.085, 0.017]) + 0.03 * rng.standard_normal((n, 2))
    x = np.column_stack([rng.normal(1.0, 0.5, n), rng.normal(0.0, 1.0, n)])
    y = np.sum(beta * x, axis=1)
    data = write_csv(tmp_path / "fes.csv", ["BS", "lnExp", "lnPrice"], zip(y, x[:, 0], x[:, 1]))
    out = tmp_path / "o"
    code = main(["estimate", "--input", str(data), "--response", "BS", "--regressors", "lnExp,lnPrice",
                 "--lepskii", "--output-dir", str(out)])
    assert code == 0
    peak = json.loads((out / "report.json").read_text())["peak"]
    assert peak["cell_lo"][0] <= 0.085 <= peak["cell_hi"][0]
    assert peak["cell_lo"][1] <= 0.017 <= peak["cell_hi"][1]


def test_simulate_smoke(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--scenario", "bounded", "--n", "500", "--runs", "2", "--estimators", "rmle",
                 "--workers", "1", "--output-dir", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["results"]["rmle"]["500"]["ise"]) == 2
    assert "Bounded Support" in (out / "table.txt").read_text()
    again = tmp_path / "sim2"
    assert main(["replay", str(out / "manifest.json"), "--output-dir", str(again)]) == 0
    assert (out / "report.json").read_bytes() == (again / "report.json").read_bytes()


@pytest.mark.slow
def test_simulate_shape(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--scenario", "unbounded", "--n", "500,3000", "--runs", "20",
                 "--estimators", "rmle,kernel", "--workers", "1", "--output-dir", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    cells = [(e, n) for e in report["results"] for n in report["results"][e]]
    assert sorted(cells) == [("kernel", "3000"), ("kernel", "500"), ("rmle", "3000"), ("rmle", "500")]
    rows = [line.split() for line in (out / "table.txt").read_text().splitlines() if line.strip()[:1].isdigit()]
    assert [r[0] for r in rows] == ["500", "3,000"]
    assert all(len(r) == 5 for r in rows)


def test_simulate_bad_sizes(tmp_path):
    assert main(["simulate", "--scenario", "unbounded", "--n", "3000,500", "--output-dir", str(tmp_path)]) == 2


def test_baseline_oracle(tmp_path):
    out = tmp_path / "b"
    assert main(["baseline", "--scenario", "unbounded", "--n", "10000", "--oracle", "--output-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["ise"] > 0 and report["selection"] == "oracle"
    assert report["bandwidth"] in report["h_grid"]
    assert abs(report["integral"] - 1) <= 1e-8


def test_baseline_guards(unbounded_csv, tmp_path):
    assert main(["baseline", "--input", str(unbounded_csv), "--intercept", "--oracle", "--output-dir", str(tmp_path)]) == 2
    assert main(["baseline", "--scenario", "unbounded", "--bandwidth", "0", "--output-dir", str(tmp_path)]) == 2
    assert main(["baseline", "--input", str(unbounded_csv), "--intercept", "--bandwidth", "0.4",
                 "--output-dir", str(tmp_path / "ok")]) == 0
    assert "ise" not in json.loads((tmp_path / "ok" / "report.json").read_text())


def test_module_entry_point(unbounded_csv, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "rc_rmle", "estimate", "--input", str(unbounded_csv), "--intercept",
         "--alpha", "0.2", "--lepskii", "--output-dir", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    assert "not allowed with" in proc.stderr
