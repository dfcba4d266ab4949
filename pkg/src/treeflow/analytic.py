"""Closed-form optima and the tree-collapsing minimizing sequence.

Under a volume cap ``1 + sum(xi) = lambda_cap``:

* prescribed outlet flows: the optimum puts every ratio proportional to the
  branch flow magnitude;
* prescribed equal outlet pressures: the optimum is the per-level uniform tree
  and dissipates ``r0 phi^2 (1 + N^2 / (lambda_cap - 1))``;
* prescribed unequal outlet pressures: no optimum exists, and the geometry
  closing every path but the one to a single outlet approaches that same
  value as the closed branches shrink.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import topology
from .errors import ValidationError
from .flow import FlowState, flows_from_pressures, pressures_from_flows
from .network import XI_MIN, TreeGeometry, branch_flows, volume_residual


class MonotonicityWarning(UserWarning):
    """An optimal geometry has a daughter branch wider than its mother."""


@dataclass(frozen=True, eq=False)
class OptimalityReport:
    xi_star: np.ndarray
    flow_state: FlowState
    energy: float
    infimum: float
    kkt_residual: float
    feasibility_residual: float
    lambda_cap: float
    boundary_degenerate: bool = False
    floored: tuple = ()
    monotone: bool = True

    @property
    def gap(self) -> float:
        return self.energy - self.infimum

    def to_dict(self) -> dict:
        return {
            "levels": self.flow_state.geometry.levels,
            "lambda": self.lambda_cap,
            "xi_star": [float(v) for v in self.xi_star],
            "energy": self.energy,
            "infimum": self.infimum,
            "gap": self.gap,
            "kkt_residual": self.kkt_residual,
            "feasibility_residual": self.feasibility_residual,
            "boundary_degenerate": self.boundary_degenerate,
            "floored": [str(b) for b in self.floored],
            "monotone": self.monotone,
            "flow_state": self.flow_state.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class MinimizingSequenceElement:
    epsilon: float
    geometry: TreeGeometry
    flow_state: FlowState
    energy: float
    infimum: float = field(default=math.nan)

    def to_row(self, lambda_cap: float) -> dict:
        q = self.flow_state.outlet_flows
        return {
            "epsilon": self.epsilon,
            "energy": self.energy,
            "infimum": self.infimum,
            "gap": self.energy - self.infimum,
            "q_1": float(q[0]),
            "max_other_q": float(np.max(np.abs(q[1:]))),
            "volume_residual": volume_residual(self.geometry.xi, lambda_cap),
        }


def _check_lambda(lambda_cap: float) -> float:
    if not lambda_cap > 1:
        raise ValidationError(f"lambda: volume cap must exceed 1, got {lambda_cap!r}")
    return float(lambda_cap)


def infimum_energy(levels: int, lambda_cap: float, r0: float, phi: float) -> float:
    """Lowest dissipation reachable with prescribed inflow: ``r0 phi^2 (1 + N^2/(lambda_cap-1))``."""
    lambda_cap = _check_lambda(lambda_cap)
    topology._check_levels(levels)
    return r0 * phi * phi * (1.0 + levels * levels / (lambda_cap - 1.0))


def _warn_if_not_monotone(geometry: TreeGeometry) -> bool:
    bad = geometry.monotonicity_violations()
    if bad:
        warnings.warn(f"optimal geometry violates radius monotonicity at {len(bad)} "
                      f"branch(es), first {bad[0]}", MonotonicityWarning, stacklevel=3)
    return not bad


def optimal_xi_case1(outlet_flows, lambda_cap: float, r0: float, *,
                     p0: float = 0.0, xi_min: float = XI_MIN) -> OptimalityReport:
    """Energy-optimal ratios for prescribed outlet flows.

    Each ratio is ``(lambda_cap - 1) |q| / sum|q|`` over the branch flows.
    Branches carrying no flow would get a zero ratio; they are floored at
    ``xi_min`` instead, the others are rescaled to keep the volume, and the
    report is flagged ``boundary_degenerate``.
    """
    lambda_cap = _check_lambda(lambda_cap)
    q = np.asarray(outlet_flows, dtype=float).ravel()
    levels = topology.levels_for_outlets(q.size)
    _, flows = branch_flows(q)
    magnitude = np.abs(flows)
    total = math.fsum(magnitude)
    if total == 0:
        raise ValidationError("outlet_flows: all branch flows are zero, no admissible optimum")
    budget = lambda_cap - 1.0
    xi = budget * magnitude / total
    dead = magnitude == 0
    if dead.any():
        live_budget = budget - xi_min * dead.sum()
        if live_budget <= 0:
            raise ValidationError("lambda: volume cap too small to floor the zero-flow branches")
        xi[dead] = xi_min
        xi[~dead] *= live_budget / math.fsum(xi[~dead])
    geometry = TreeGeometry(levels, r0, xi, xi_min=xi_min)
    state = pressures_from_flows(geometry, q, p0)
    ratio = (flows[~dead] / xi[~dead]) ** 2
    kkt = float((ratio.max() - ratio.min()) / ratio.max())
    branches = topology.branch_set(levels)
    return OptimalityReport(
        xi_star=geometry.xi, flow_state=state, energy=state.energy,
        infimum=r0 * (state.total_flow ** 2 + total * total / budget),
        kkt_residual=kkt, feasibility_residual=abs(volume_residual(xi, lambda_cap)),
        lambda_cap=lambda_cap, boundary_degenerate=bool(dead.any()),
        floored=tuple(b for b, d in zip(branches, dead) if d),
        monotone=_warn_if_not_monotone(geometry))


def case1_multiplier(outlet_flows, lambda_cap: float, r0: float) -> float:
    """Volume multiplier at the case-1 optimum, ``r0 (sum|q| / (lambda_cap - 1))^2``."""
    _, flows = branch_flows(outlet_flows)
    return r0 * (math.fsum(np.abs(flows)) / (lambda_cap - 1.0)) ** 2


def equal_pressure_multiplier(levels: int, lambda_cap: float, r0: float, phi: float) -> float:
    """Volume multiplier at the equal-pressure optimum, ``r0 (N phi / (lambda_cap - 1))^2``."""
    return r0 * (levels * phi / (lambda_cap - 1.0)) ** 2


def equal_pressure_xi(levels: int, lambda_cap: float) -> np.ndarray:
    lambda_cap = _check_lambda(lambda_cap)
    return np.concatenate([np.full(2**i, (lambda_cap - 1.0) / (levels * 2**i))
                           for i in range(1, topology._check_levels(levels) + 1)])


def equal_pressure_optimum(levels: int, lambda_cap: float, r0: float, phi: float, *,
                           pressure: float = 0.0) -> OptimalityReport:
    """Optimum when every outlet sits at the same pressure: ``xi = (lambda_cap-1)/(N 2**i)``."""
    xi = equal_pressure_xi(levels, lambda_cap)
    geometry = TreeGeometry(levels, r0, xi)
    state = flows_from_pressures(geometry, np.full(2**levels, float(pressure)), phi)
    target = levels * phi / (lambda_cap - 1.0)
    kkt = float(np.max(np.abs(state.branch_flows / xi - target)) / abs(target))
    return OptimalityReport(
        xi_star=geometry.xi, flow_state=state, energy=state.energy,
        infimum=infimum_energy(levels, lambda_cap, r0, phi), kkt_residual=kkt,
        feasibility_residual=abs(volume_residual(xi, lambda_cap)),
        lambda_cap=float(lambda_cap), monotone=_warn_if_not_monotone(geometry))


def _shrink_rate(levels: int) -> float:
    return (2 ** (levels + 1) - 2) / levels - 1.0


def epsilon_max(levels: int, lambda_cap: float) -> float:
    """Upper bound on epsilon keeping the open path's ratios positive."""
    return (_check_lambda(lambda_cap) - 1.0) / levels / _shrink_rate(levels)


def collapsed_xi(levels: int, lambda_cap: float, epsilon: float, outlet: int = 1) -> np.ndarray:
    """Ratios that keep the path to ``(N, outlet)`` open and shrink all others to ``epsilon``."""
    limit = epsilon_max(levels, lambda_cap)
    if not 0 < epsilon < limit:
        raise ValidationError(f"epsilon: must lie in (0, {limit!r}), got {epsilon!r}")
    open_value = (lambda_cap - 1.0) / levels - _shrink_rate(levels) * epsilon
    return np.where(topology.path_mask(levels, outlet), open_value, float(epsilon))


def minimizing_sequence_element(levels: int, lambda_cap: float, r0: float, phi: float,
                                outlet_pressures, epsilon: float, *,
                                outlet: int = 1) -> MinimizingSequenceElement:
    """Collapsing geometry at ``epsilon`` and its flow under the given outlet pressures."""
    geometry = TreeGeometry(levels, r0, collapsed_xi(levels, lambda_cap, epsilon, outlet),
                            xi_min=min(XI_MIN, epsilon))
    state = flows_from_pressures(geometry, outlet_pressures, phi)
    return MinimizingSequenceElement(float(epsilon), geometry, state, state.energy,
                                     infimum_energy(levels, lambda_cap, r0, phi))


def epsilon_schedule(levels: int, lambda_cap: float, *, eps0: float | None = None,
                     ratio: float = 0.5, steps: int = 20) -> np.ndarray:
    """Geometric schedule ``eps0 * ratio**k``; ``eps0`` defaults to a tenth of the bound."""
    if eps0 is None:
        eps0 = 0.1 * epsilon_max(levels, lambda_cap)
    if not 0 < ratio < 1 or steps < 1:
        raise ValidationError("schedule: need 0 < ratio < 1 and steps >= 1")
    return eps0 * ratio ** np.arange(steps)


def sweep_epsilon(levels: int, lambda_cap: float, r0: float, phi: float, outlet_pressures,
                  epsilons=None, *, jobs: int = 1) -> list[MinimizingSequenceElement]:
    """Evaluate the collapsing sequence along ``epsilons`` (results keep input order)."""
    if epsilons is None:
        epsilons = epsilon_schedule(levels, lambda_cap)

    def one(eps):
        return minimizing_sequence_element(levels, lambda_cap, r0, phi,
                                           outlet_pressures, float(eps))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, epsilons))
    return [one(eps) for eps in epsilons]


SWEEP_COLUMNS = ("epsilon", "energy", "infimum", "gap", "q_1", "max_other_q", "volume_residual")


def sweep_to_csv(elements, lambda_cap: float) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for element in elements:
        row = element.to_row(lambda_cap)
        writer.writerow([format(row[c], ".17g") for c in SWEEP_COLUMNS])
    return buf.getvalue()


def aux_inner_flows(xi, phi: float) -> np.ndarray:
    """Flows minimizing dissipation when only each level's total is fixed to ``phi``."""
    xi = topology._as_positive(xi, "xi")
    q = np.empty_like(xi)
    for level in range(1, topology.levels_for_size(xi.size) + 1):
        sl = topology.level_slice(level)
        q[sl] = xi[sl] / math.fsum(xi[sl]) * phi
    return q


def aux_reduced_energy(xi, r0: float, phi: float) -> float:
    """``r0 phi^2 (1 + sum_i 1/y_i)`` with ``y_i`` the sum of level ``i`` ratios."""
    xi = topology._as_positive(xi, "xi")
    levels = topology.levels_for_size(xi.size)
    y = [math.fsum(xi[topology.level_slice(i)]) for i in range(1, levels + 1)]
    return r0 * phi * phi * (1.0 + math.fsum(1.0 / v for v in y))


def aux_minimizer(weights, lambda_cap: float, phi: float):
    """A minimizer of the level-relaxed problem built from arbitrary positive weights.

    Each level of ``weights`` is rescaled to total ``(lambda_cap - 1) / N``;
    the flows are the matching inner optimum.  Returns ``(q, xi)``.
    """
    lambda_cap = _check_lambda(lambda_cap)
    w = topology._as_positive(weights, "weights")
    levels = topology.levels_for_size(w.size)
    xi = np.empty_like(w)
    for level in range(1, levels + 1):
        sl = topology.level_slice(level)
        xi[sl] = w[sl] / math.fsum(w[sl]) * (lambda_cap - 1.0) / levels
    return aux_inner_flows(xi, phi), xi
