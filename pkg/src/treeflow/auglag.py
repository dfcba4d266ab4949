"""Augmented Lagrangian descent over the resistance ratios under the volume cap.

The outer loop follows the classical method of multipliers:

1. descend ``L_b(xi, l) = E(xi) + l G(xi) + b/2 G(xi)^2`` in ``xi`` with
   ``G(xi) = sum(xi) - (lambda_cap - 1)``, accepting only steps that lower it;
2. update ``l <- l + tau G(xi)``;
3. stop once ``|l_new - l_old| <= eps_stop``.

Because ``G`` is linear, each inner iteration splits the gradient, in the
diagonal metric ``D = diag(xi)``, into a part normal to the volume constraint
and a tangential part that leaves ``sum(xi)`` unchanged.  Each part gets its
own backtracked step length, which grows again after every accepted step.
Ratios are clamped at ``xi_floor``; a clamped ratio whose gradient still
points down is frozen for the next inner step.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import linalg

from . import topology
from .analytic import OptimalityReport, infimum_energy
from .errors import ValidationError
from .flow import flows_from_pressures, pressures_from_flows
from .network import TreeGeometry, branch_flows, load_json, resistance_matrix, volume_residual


@dataclass(frozen=True)
class AugLagConfig:
    """Tuning knobs.  ``gradient`` picks the case-2 gradient: ``"adjoint"`` or ``"fd"``.

    ``b = tau = 100`` won a calibration sweep over random case-1 instances; with
    a smaller ``tau`` the multiplier crawls whenever the energy is stiff in the
    volume direction.
    """

    b: float = 100.0
    tau: float = 100.0
    ell0: float = 0.0
    eps_stop: float = 1e-9
    max_outer: int = 2000
    step0: float = 0.1
    step_shrink: float = 0.5
    xi_floor: float = 1e-12
    max_inner: int = 200
    max_backtracks: int = 50
    inner_tol: float = 1e-13
    feasibility_tol: float = 1e-8
    gradient: str = "adjoint"

    def __post_init__(self):
        if not self.b > 0:
            raise ValidationError(f"config.b: must be > 0, got {self.b!r}")
        if not self.tau > 0:
            raise ValidationError(f"config.tau: must be > 0, got {self.tau!r}")
        if not self.eps_stop > 0:
            raise ValidationError(f"config.eps_stop: must be > 0, got {self.eps_stop!r}")
        if not 0 < self.step_shrink < 1:
            raise ValidationError(
                f"config.step_shrink: must lie in (0, 1), got {self.step_shrink!r}")
        if not self.step0 > 0:
            raise ValidationError(f"config.step0: must be > 0, got {self.step0!r}")
        if not self.xi_floor > 0:
            raise ValidationError(f"config.xi_floor: must be > 0, got {self.xi_floor!r}")
        for name in ("max_outer", "max_inner", "max_backtracks"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"config.{name}: must be >= 1")
        if self.gradient not in ("adjoint", "fd"):
            raise ValidationError(
                f"config.gradient: expected 'adjoint' or 'fd', got {self.gradient!r}")

    @classmethod
    def from_dict(cls, data) -> "AugLagConfig":
        if not isinstance(data, dict):
            raise ValidationError("config: expected a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"config: unknown field(s) {sorted(unknown)}")
        return cls(**data)


def load_config(source) -> AugLagConfig:
    return AugLagConfig.from_dict(load_json(source))


@dataclass(frozen=True, eq=False)
class Iterate:
    xi: np.ndarray
    ell: float
    lagrangian: float
    energy: float
    volume_residual: float


@dataclass(eq=False)
class OptimizationRun:
    iterates: list = field(default_factory=list)
    converged: bool = False
    termination: str = ""
    final_report: OptimalityReport | None = None

    @property
    def multipliers(self) -> np.ndarray:
        return np.array([it.ell for it in self.iterates])

    def oscillation_quartiles(self) -> tuple[float, float]:
        """Largest multiplier change over the first and over the last quarter of the run."""
        jumps = np.abs(np.diff(self.multipliers))
        if jumps.size == 0:
            raise ValueError("need at least one multiplier update")
        # short runs compare their first and last update
        quarter = max(1, jumps.size // 4)
        return float(jumps[:quarter].max()), float(jumps[-quarter:].max())

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("k", "ell", "lagrangian", "energy", "volume_residual"))
        for k, it in enumerate(self.iterates):
            writer.writerow([k] + [format(v, ".17g") for v in
                                   (it.ell, it.lagrangian, it.energy, it.volume_residual)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        out = {"converged": self.converged, "termination": self.termination,
               "outer_iterations": len(self.iterates) - 1}
        if self.final_report is not None:
            out["report"] = self.final_report.to_dict()
        return out


def augmented_lagrangian(xi, ell: float, b: float, objective, constraint) -> float:
    """``E(xi) + ell G(xi) + b/2 G(xi)^2`` for callables ``objective`` and ``constraint``."""
    xi = np.asarray(xi, dtype=float)
    if not np.all(xi > 0):
        raise ValidationError("xi: all entries must be > 0")
    g = constraint(xi)
    return objective(xi) + ell * g + 0.5 * b * g * g


class _FlowsObjective:
    """Dissipation with prescribed outlet flows; the gradient is ``-r0 q^2 / xi^2``."""

    def __init__(self, outlet_flows, r0: float):
        self.outlet_flows = np.asarray(outlet_flows, dtype=float).ravel()
        self.levels = topology.levels_for_outlets(self.outlet_flows.size)
        self.phi, self.flows = branch_flows(self.outlet_flows)
        self.r0 = float(r0)
        self._sq = self.flows ** 2

    def energy(self, xi):
        return self.r0 * (self.phi ** 2 + float(np.sum(self._sq / xi)))

    def gradient(self, xi):
        return -self.r0 * self._sq / (xi * xi)

    def delta(self, xi, trial):
        # termwise, so the change is not swamped by the constant root term
        return self.r0 * math.fsum(self._sq * (xi - trial) / (xi * trial))


class _PressuresObjective:
    """Dissipation with prescribed outlet pressures and inflow, flows re-solved per call."""

    def __init__(self, outlet_pressures, phi: float, r0: float, levels: int, mode: str):
        self.pressures = np.asarray(outlet_pressures, dtype=float).ravel()
        self.phi, self.r0, self.levels, self.mode = float(phi), float(r0), levels, mode

    def state(self, xi):
        return flows_from_pressures(TreeGeometry(self.levels, self.r0, xi, xi_min=0.0),
                                    self.pressures, self.phi)

    def energy(self, xi):
        return self.state(xi).energy

    def delta(self, xi, trial):
        if self.mode == "fd":
            return self.energy(trial) - self.energy(xi)
        # trapezoid rule on the exact gradient: resolves changes far below
        # the rounding level of the energy itself
        step = trial - xi
        return 0.5 * math.fsum((self.adjoint_gradient(xi) + self.adjoint_gradient(trial)) * step)

    def gradient(self, xi):
        if self.mode == "fd":
            return self.fd_gradient(xi)
        return self.adjoint_gradient(xi)

    def fd_gradient(self, xi):
        """Central differences with step ``1e-7 max(xi_k, 1e-6)``."""
        grad = np.empty_like(xi)
        for k in range(xi.size):
            h = 1e-7 * max(xi[k], 1e-6)
            up, down = xi.copy(), xi.copy()
            up[k] += h
            down[k] -= h
            down[k] = max(down[k], 0.5 * xi[k])
            grad[k] = (self.energy(up) - self.energy(down)) / (up[k] - down[k])
        return grad

    def adjoint_gradient(self, xi):
        """Exact sensitivity ``-r0/xi^2 (2 phi W Q - Q^2)``.

        ``Q`` are the branch flows and ``W`` the branch flows of the unit inflow
        split under equal outlet pressures (``A^-1 1`` normalised).
        """
        geometry = TreeGeometry(self.levels, self.r0, xi, xi_min=0.0)
        q = self.state(xi).outlet_flows
        a = resistance_matrix(geometry)
        w = linalg.cho_solve(linalg.cho_factor(a, lower=True), np.ones(a.shape[0]))
        w /= w.sum()
        _, big_q = branch_flows(q)
        _, big_w = branch_flows(w)
        return -self.r0 / (xi * xi) * (2.0 * self.phi * big_w * big_q - big_q * big_q)


def _descend(xi, ell, objective, lambda_cap, config, steps):
    """Inner loop at fixed multiplier.  Returns (xi, status)."""
    b, floor = config.b, config.xi_floor

    def change(z, trial):
        g0 = volume_residual(z, lambda_cap)
        dg = math.fsum(trial - z)
        return objective.delta(z, trial) + ell * dg + 0.5 * b * dg * (2.0 * g0 + dg)

    for _ in range(config.max_inner):
        g_vol = volume_residual(xi, lambda_cap)
        grad = objective.gradient(xi) + (ell + b * g_vol)
        free = ~((xi <= floor) & (grad > 0))
        if not free.any():
            return xi, "stalled"
        # metric D = xi: near a case-1 optimum the curvature scales like 1/xi,
        # so this diagonal preconditioner evens out the conditioning
        metric = np.where(free, xi, 0.0)
        normal = float(metric @ grad / metric.sum())
        tangent = np.where(free, grad - normal, 0.0)
        scale = max(float(np.mean(np.abs(grad[free] - (ell + b * g_vol)))), abs(ell), 1e-300)
        # the normal part may stay loose by a fraction of the penalty gradient,
        # which keeps the volume residual contracting between multiplier updates
        loose = config.inner_tol * scale + 0.1 * b * abs(g_vol)
        if (np.max(np.abs(tangent)) <= config.inner_tol * scale
                and abs(normal) <= loose):
            return xi, "stationary"
        moved = False
        for key, direction in (("tangent", metric * tangent),
                               ("normal", metric * normal)):
            if not np.any(direction):
                continue
            alpha = steps[key]
            for _ in range(config.max_backtracks):
                trial = np.maximum(xi - alpha * direction, floor)
                if change(xi, trial) < 0:
                    xi, moved = trial, True
                    steps[key] = alpha / config.step_shrink
                    break
                alpha *= config.step_shrink
            else:
                steps[key] = config.step0
        if not moved:
            return xi, "stalled"
    return xi, "max_inner"


def _run(objective, xi0, lambda_cap, config, report_fn):
    xi = np.maximum(np.asarray(xi0, dtype=float).copy(), config.xi_floor)
    ell = float(config.ell0)
    steps = {"tangent": config.step0, "normal": config.step0}
    run = OptimizationRun()

    def record(z, multiplier):
        g = volume_residual(z, lambda_cap)
        energy = objective.energy(z)
        run.iterates.append(Iterate(z.copy(), multiplier, energy + multiplier * g
                                    + 0.5 * config.b * g * g, energy, g))

    record(xi, ell)
    run.termination = "max_outer"
    for _ in range(config.max_outer):
        xi, status = _descend(xi, ell, objective, lambda_cap, config, steps)
        new_ell = ell + config.tau * volume_residual(xi, lambda_cap)
        change = abs(new_ell - ell)
        ell = new_ell
        record(xi, ell)
        if change <= config.eps_stop and status != "max_inner":
            run.termination = "multiplier"
            break
    residual = abs(volume_residual(xi, lambda_cap))
    run.converged = run.termination == "multiplier" and residual <= config.feasibility_tol
    run.final_report = report_fn(xi)
    return run


def optimize_case1(outlet_flows, lambda_cap: float, r0: float,
                   config: AugLagConfig | None = None, *, xi0=None, p0: float = 0.0
                   ) -> OptimizationRun:
    """Minimise dissipation over the ratios for prescribed outlet flows.

    Starts from the per-level uniform tree unless ``xi0`` is given.
    Non-convergence is reported through ``converged=False``, never raised.
    """
    config = config or AugLagConfig()
    if not lambda_cap > 1:
        raise ValidationError(f"lambda: volume cap must exceed 1, got {lambda_cap!r}")
    objective = _FlowsObjective(outlet_flows, r0)
    levels = objective.levels
    if xi0 is None:
        xi0 = _uniform_start(levels, lambda_cap)
    xi0 = topology._as_positive(xi0, "xi0")
    if xi0.size != topology.n_branches(levels):
        raise ValidationError("xi0: length does not match the outlet flows")

    def report(xi):
        geometry = TreeGeometry(levels, r0, xi, xi_min=config.xi_floor)
        state = pressures_from_flows(geometry, objective.outlet_flows, p0)
        live = objective.flows != 0
        ratio = (objective.flows[live] / xi[live]) ** 2
        budget = lambda_cap - 1.0
        floored = xi <= config.xi_floor
        return OptimalityReport(
            xi_star=geometry.xi, flow_state=state, energy=state.energy,
            infimum=r0 * (objective.phi ** 2
                          + math.fsum(np.abs(objective.flows)) ** 2 / budget),
            kkt_residual=float((ratio.max() - ratio.min()) / ratio.max()),
            feasibility_residual=abs(volume_residual(xi, lambda_cap)),
            lambda_cap=float(lambda_cap), boundary_degenerate=bool(floored.any()),
            floored=_floored(levels, floored), monotone=geometry.is_monotone())

    return _run(objective, xi0, lambda_cap, config, report)


def optimize_case2(outlet_pressures, phi: float, lambda_cap: float, r0: float,
                   config: AugLagConfig | None = None, *, xi0=None) -> OptimizationRun:
    """Minimise dissipation over the ratios for prescribed outlet pressures and inflow.

    With unequal pressures the problem has no minimiser and the run is
    expected to push some ratios onto ``xi_floor``; the report lists them.
    """
    config = config or AugLagConfig()
    if not lambda_cap > 1:
        raise ValidationError(f"lambda: volume cap must exceed 1, got {lambda_cap!r}")
    p = np.asarray(outlet_pressures, dtype=float).ravel()
    levels = topology.levels_for_outlets(p.size)
    objective = _PressuresObjective(p, phi, r0, levels, config.gradient)
    if xi0 is None:
        xi0 = _uniform_start(levels, lambda_cap)
    xi0 = topology._as_positive(xi0, "xi0")
    if xi0.size != topology.n_branches(levels):
        raise ValidationError("xi0: length does not match the outlet pressures")

    def report(xi):
        state = objective.state(xi)
        grad = objective.adjoint_gradient(xi)
        floored = xi <= config.xi_floor
        free = ~floored
        tangent = grad[free] - grad[free].mean() if free.any() else np.zeros(1)
        return OptimalityReport(
            xi_star=state.geometry.xi, flow_state=state, energy=state.energy,
            infimum=infimum_energy(levels, lambda_cap, r0, phi),
            kkt_residual=float(np.max(np.abs(tangent)) / max(np.mean(np.abs(grad)), 1e-300)),
            feasibility_residual=abs(volume_residual(xi, lambda_cap)),
            lambda_cap=float(lambda_cap), boundary_degenerate=bool(floored.any()),
            floored=_floored(levels, floored), monotone=state.geometry.is_monotone())

    return _run(objective, xi0, lambda_cap, config, report)


def _uniform_start(levels, lambda_cap):
    return np.concatenate([np.full(2**i, (lambda_cap - 1.0) / (levels * 2**i))
                           for i in range(1, levels + 1)])


def _floored(levels, mask):
    return tuple(b for b, m in zip(topology.branch_set(levels), mask) if m)


def config_to_json(config: AugLagConfig) -> str:
    return json.dumps(asdict(config), indent=2)
