import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treeflow import analytic, auglag, network, topology
from treeflow.auglag import AugLagConfig
from treeflow.errors import ValidationError


def test_lagrangian_examples():
    energy = lambda xi: 4.0
    assert auglag.augmented_lagrangian([1.0], 3.0, 10.0, energy, lambda xi: 0.0) == 4.0
    assert auglag.augmented_lagrangian([1.0], 0.0, 2.0, energy, lambda xi: 0.1) == \
        pytest.approx(4.01)
    with pytest.raises(ValidationError):
        auglag.augmented_lagrangian([1.0, 0.0], 0.0, 1.0, energy, lambda xi: 0.0)


@pytest.mark.parametrize("field, value", [
    ("b", 0.0), ("tau", -1.0), ("eps_stop", 0.0), ("step_shrink", 1.0),
    ("xi_floor", 0.0), ("gradient", "newton"), ("max_inner", 0)])
def test_config_validation(field, value):
    with pytest.raises(ValidationError, match=field):
        AugLagConfig(**{field: value})


def test_config_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(auglag.config_to_json(AugLagConfig(b=5.0)))
    assert auglag.load_config(path) == AugLagConfig(b=5.0)
    with pytest.raises(ValidationError, match="unknown"):
        AugLagConfig.from_dict({"beta": 1})


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_case1_gradient_matches_central_differences(levels, seed):
    rng = np.random.default_rng(seed)
    obj = auglag._FlowsObjective(rng.uniform(0.1, 1, 2**levels), 1.3)
    xi = rng.uniform(0.1, 2.0, topology.n_branches(levels))
    grad = obj.gradient(xi)
    for k in range(xi.size):
        h = 1e-6 * xi[k]
        up, down = xi.copy(), xi.copy()
        up[k] += h
        down[k] -= h
        # termwise difference: the total energy would cancel away the digits
        fd = obj.delta(down, up) / (2 * h)
        assert abs(fd - grad[k]) <= 1e-6 * abs(grad[k])


@pytest.mark.parametrize("levels", [1, 2, 3])
def test_case2_adjoint_matches_central_differences(levels):
    rng = np.random.default_rng(levels)
    obj = auglag._PressuresObjective(rng.uniform(0, 1, 2**levels), 1.0, 1.0, levels, "fd")
    xi = rng.uniform(0.2, 2.0, topology.n_branches(levels))
    np.testing.assert_allclose(obj.adjoint_gradient(xi), obj.fd_gradient(xi),
                               rtol=1e-6, atol=1e-8)


def test_case1_symmetric_example():
    run = auglag.optimize_case1([0.5, 0.5], 3.0, 1.0)
    assert run.converged
    assert np.max(np.abs(run.final_report.xi_star - 1.0)) <= 1e-6


def test_case1_random_n3():
    q = np.random.default_rng(5).uniform(0.05, 1.0, 8)
    run = auglag.optimize_case1(q, 8.0, 1.0)
    exact = analytic.optimal_xi_case1(q, 8.0, 1.0)
    assert run.converged
    assert run.final_report.energy == pytest.approx(exact.energy, rel=1e-8)


def test_case1_fixed_point_stops_quickly():
    q = [0.2, 0.3, 0.1, 0.4]
    exact = analytic.optimal_xi_case1(q, 5.0, 1.0)
    config = AugLagConfig(ell0=analytic.case1_multiplier(q, 5.0, 1.0))
    run = auglag.optimize_case1(q, 5.0, 1.0, config, xi0=exact.xi_star)
    assert run.converged
    assert len(run.iterates) - 1 <= 2


def test_lagrangian_never_increases_within_a_descent():
    q = np.random.default_rng(9).uniform(0.1, 1.0, 8)
    config = AugLagConfig()
    run = auglag.optimize_case1(q, 6.0, 1.0, config)
    obj = auglag._FlowsObjective(q, 1.0)
    for before, after in zip(run.iterates, run.iterates[1:]):
        # the descent between two records ran at the earlier multiplier
        g0, g1 = before.volume_residual, after.volume_residual
        change = (obj.delta(before.xi, after.xi) + before.ell * (g1 - g0)
                  + 0.5 * config.b * (g1 * g1 - g0 * g0))
        assert change <= 1e-12 * abs(before.lagrangian)


def test_case1_floor_handling():
    run = auglag.optimize_case1([1.0, 0.0, 0.5, 0.5], 4.0, 1.0)
    report = run.final_report
    assert report.xi_star[3] == pytest.approx(1e-12, abs=1e-9)
    assert report.feasibility_residual <= 1e-8


def test_non_convergence_is_reported():
    run = auglag.optimize_case1([0.2, 0.8], 3.0, 1.0, AugLagConfig(max_outer=3))
    assert not run.converged
    assert run.termination == "max_outer"
    assert run.final_report is not None


def test_history_csv_columns():
    run = auglag.optimize_case1([0.5, 0.5], 3.0, 1.0)
    rows = list(csv.reader(io.StringIO(run.history_csv())))
    assert rows[0] == ["k", "ell", "lagrangian", "energy", "volume_residual"]
    assert len(rows) == len(run.iterates) + 1
    assert json.loads(json.dumps(run.to_dict()))["converged"] is True


@pytest.mark.parametrize("levels, lam", [(1, 3.0), (2, 5.0), (3, 20.0)])
def test_equal_pressures_stay_at_optimum(levels, lam):
    xi = analytic.equal_pressure_xi(levels, lam)
    config = AugLagConfig(ell0=analytic.equal_pressure_multiplier(levels, lam, 1.0, 1.0))
    run = auglag.optimize_case2(np.full(2**levels, 0.5), 1.0, lam, 1.0, config, xi0=xi)
    assert run.converged
    assert max(np.max(np.abs(it.xi - xi)) for it in run.iterates) <= 1e-6


@pytest.mark.parametrize("levels, lam", [(1, 3.0), (2, 5.0)])
def test_equal_pressure_perturbation_probe(levels, lam, capsys):
    # instability probe: the outcome is reported, not asserted
    xi = analytic.equal_pressure_xi(levels, lam)
    perturbed = xi * (1 + 1e-3 * np.random.default_rng(0).standard_normal(xi.size))
    config = AugLagConfig(ell0=analytic.equal_pressure_multiplier(levels, lam, 1.0, 1.0))
    run = auglag.optimize_case2(np.zeros(2**levels), 1.0, lam, 1.0, config, xi0=perturbed)
    report = run.final_report
    with capsys.disabled():
        print(f"\n  probe N={levels}: start offset {np.max(np.abs(perturbed - xi)):.2e}, "
              f"final offset {np.max(np.abs(report.xi_star - xi)):.2e}, "
              f"floored {[str(b) for b in report.floored]}, gap {report.gap:.2e}")
    assert report.gap >= -1e-12


def test_case2_unequal_pressures_closes_a_branch():
    run = auglag.optimize_case2([0.0, 1e-4], 1.0, 3.0, 1.0, xi0=[1.001, 0.999])
    assert len(run.final_report.floored) == 1
