import csv
import io
import json

import numpy as np
import pytest

from treeflow import analytic, cli


@pytest.fixture
def files(tmp_path):
    def write(name, obj):
        path = tmp_path / name
        path.write_text(json.dumps(obj))
        return str(path)
    return write


def run(argv, capsys):
    status = cli.main(argv)
    out = capsys.readouterr()
    return status, out.out, out.err


def test_verify_passes(capsys):
    status, out, _ = run(["verify"], capsys)
    assert status == 0
    lines = out.strip().splitlines()
    assert len(lines) == 6 and all(line.startswith("PASS ") for line in lines)


def test_solve_symmetric_optimum(files, capsys):
    xi = analytic.equal_pressure_xi(2, 5.0)
    g = files("g.json", {"levels": 2, "r0": 1.0, "xi": list(map(float, xi))})
    p = files("p.json", [0.0, 0.0, 0.0, 0.0])
    status, out, _ = run(["solve", "--geometry", g, "--bc", "outlet_pressures",
                          "--pressures", p, "--phi", "1.0"], capsys)
    assert status == 0
    np.testing.assert_allclose(json.loads(out)["outlet_flows"], [0.25] * 4, rtol=1e-12)


def test_solve_with_bc_file_csv(files, capsys):
    g = files("g.json", {"levels": 1, "r0": 1.0, "xi": [1.0, 1.0]})
    bc = files("bc.json", {"type": "outlet_flows", "values": [1.0, 0.0], "p0": 2.0})
    status, out, _ = run(["solve", "--geometry", g, "--bc-file", bc, "--format", "csv"], capsys)
    assert status == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["branch"] for r in rows] == ["1,1", "1,2"]
    assert float(rows[0]["pressure"]) == 0.0


def test_sweep_last_gap_within_one_percent(files, capsys):
    p = files("p.json", {"values": [0.0, 0.3, 0.1, 0.7, 0.2, 0.5, 0.9, 0.4]})
    argv = ["sweep-epsilon", "--levels", "3", "--lambda", "10", "--r0", "1", "--phi", "1",
            "--pressures", p]
    status, out, _ = run(argv, capsys)
    assert status == 0
    last = list(csv.DictReader(io.StringIO(out)))[-1]
    assert float(last["gap"]) <= 0.01 * float(last["infimum"])
    _, again, _ = run(argv + ["--jobs", "3"], capsys)
    assert again == out


def test_optimize_pressures_dispatch(files, capsys):
    equal = files("e.json", [0.2, 0.2001])
    args = ["optimize-pressures", "--pressures", equal, "--lambda", "3", "--phi", "1"]
    _, out, _ = run(args, capsys)
    assert json.loads(out)["regime"] == "minimizing_sequence"
    _, out, _ = run(args + ["--equal-pressure-tol", "1e-3"], capsys)
    assert json.loads(out)["regime"] == "equal_pressures"


def test_optimize_flows_and_auglag(files, tmp_path, capsys):
    q = files("q.json", [0.5, 0.5])
    status, out, _ = run(["optimize-flows", "--flows", q, "--lambda", "3"], capsys)
    assert status == 0
    assert json.loads(out)["xi_star"] == [1.0, 1.0]
    config = files("c.json", {"b": 10.0, "tau": 1.0})
    history = tmp_path / "h.csv"
    status, out, _ = run(["auglag", "--case", "flows", "--flows", q, "--lambda", "3",
                          "--config", config, "--history", str(history)], capsys)
    assert status == 0 and json.loads(out)["converged"]
    assert history.read_text().startswith("k,ell,lagrangian,energy,volume_residual\n")


def test_output_is_deterministic(files, tmp_path, capsys):
    q = files("q.json", [0.1, 0.2, 0.3, 0.4])
    outputs = []
    for name in ("a.json", "b.json"):
        target = tmp_path / name
        assert cli.main(["auglag", "--case", "flows", "--flows", q, "--lambda", "4",
                         "--output", str(target)]) == 0
        outputs.append(target.read_bytes())
    assert outputs[0] == outputs[1]


@pytest.mark.parametrize("argv, fragment", [
    (["solve", "--geometry", "g.json", "--bogus"], "unrecognized arguments"),
    (["frobnicate"], "invalid choice"),
    (["optimize-flows", "--flows", "missing.json", "--lambda", "3"], "cannot read"),
])
def test_usage_errors_exit_1(argv, fragment, capsys):
    status, _, err = run(argv, capsys)
    assert status == 1
    assert fragment in err


def test_field_precise_validation_error(files, capsys):
    g = files("g.json", {"levels": 2, "r0": 1.0, "xi": [1, 1, 1, 1, 1, -1]})
    q = files("q.json", [1, 1, 1, 1])
    status, _, err = run(["solve", "--geometry", g, "--bc", "outlet_flows", "--flows", q],
                         capsys)
    assert status == 1
    assert "xi[5] (branch 2,4)" in err


def test_numerical_degeneracy_exit_2(files, capsys):
    g = files("g.json", {"levels": 2, "r0": 1.0,
                         "xi": [1e-12, 1e-12, 1e12, 1e12, 1e12, 1e12]})
    p = files("p.json", [0.0, 0.1, 0.2, 0.3])
    status, _, err = run(["solve", "--geometry", g, "--bc", "outlet_pressures",
                          "--pressures", p, "--phi", "1"], capsys)
    assert status == 2
    assert "numerical degeneracy" in err
