"""Steady Poiseuille flow in a tree under the two boundary-condition regimes.

* outlet flows + inlet pressure: pressures follow directly from ``A q``;
* outlet pressures + inlet flow: outlet flows solve the mixed system, and the
  inlet pressure is reconstructed afterwards.

Flows are positive when the fluid moves away from the root.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import topology
from .errors import NumericalDegeneracyError, ValidationError
from .network import (TreeGeometry, _outlet_vector, branch_flows, load_json,
                      mixed_system, resistance_matrix)

OUTLET_FLOWS = "outlet_flows"
OUTLET_PRESSURES = "outlet_pressures"

_REFINE_TOL = 1e-10
_INLET_TOL = 1e-10


@dataclass(frozen=True)
class BoundaryConditions:
    """Either outlet flows with an inlet pressure, or outlet pressures with an inlet flow."""

    kind: str
    values: tuple
    p0: float | None = None
    phi: float | None = None

    def __post_init__(self):
        if self.kind == OUTLET_FLOWS:
            if self.p0 is None or self.phi is not None:
                raise ValidationError("outlet_flows conditions need p0 (and no phi)")
        elif self.kind == OUTLET_PRESSURES:
            if self.phi is None or self.p0 is not None:
                raise ValidationError("outlet_pressures conditions need phi (and no p0)")
        else:
            raise ValidationError(
                f"type: expected 'outlet_flows' or 'outlet_pressures', got {self.kind!r}")
        values = tuple(float(v) for v in self.values)
        topology.levels_for_outlets(len(values))
        object.__setattr__(self, "values", values)

    @classmethod
    def outlet_flows(cls, flows, p0: float = 0.0) -> "BoundaryConditions":
        return cls(OUTLET_FLOWS, tuple(np.ravel(flows)), p0=float(p0))

    @classmethod
    def outlet_pressures(cls, pressures, phi: float) -> "BoundaryConditions":
        return cls(OUTLET_PRESSURES, tuple(np.ravel(pressures)), phi=float(phi))

    def to_dict(self) -> dict:
        out = {"type": self.kind, "values": list(self.values)}
        if self.kind == OUTLET_FLOWS:
            out["p0"] = self.p0
        else:
            out["phi"] = self.phi
        return out

    @classmethod
    def from_dict(cls, data) -> "BoundaryConditions":
        if not isinstance(data, dict):
            raise ValidationError("bc: expected a JSON object")
        kind = data.get("type")
        values = data.get("values")
        if not isinstance(values, list):
            raise ValidationError("bc.values: expected a list of numbers")
        for k, v in enumerate(values):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ValidationError(f"bc.values[{k}]: expected a number, got {v!r}")
        scalar = "p0" if kind == OUTLET_FLOWS else "phi"
        unknown = set(data) - {"type", "values", scalar}
        if unknown:
            raise ValidationError(f"bc: unexpected field(s) {sorted(unknown)}")
        if kind not in (OUTLET_FLOWS, OUTLET_PRESSURES):
            raise ValidationError(
                f"bc.type: expected 'outlet_flows' or 'outlet_pressures', got {kind!r}")
        value = data.get(scalar)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValidationError(f"bc.{scalar}: expected a number, got {value!r}")
        try:
            return cls(kind, tuple(values), **{scalar: float(value)})
        except ValidationError as exc:
            raise ValidationError(f"bc.values: {exc}") from None


def load_bc(source) -> BoundaryConditions:
    return BoundaryConditions.from_dict(load_json(source))


@dataclass(frozen=True, eq=False)
class FlowState:
    """Flows and pressures everywhere in the tree.

    ``branch_flows`` and ``branch_pressures`` are level-major vectors over the
    non-root branches; ``branch_pressures`` holds the pressure at each branch
    outlet.  ``root_pressure`` is the pressure at the root pipe's outlet.
    """

    geometry: TreeGeometry
    total_flow: float
    branch_flows: np.ndarray
    inlet_pressure: float
    root_pressure: float
    branch_pressures: np.ndarray
    outlet_pressures: np.ndarray
    energy: float

    @property
    def outlet_flows(self) -> np.ndarray:
        return self.branch_flows[topology.level_slice(self.geometry.levels)]

    def flow(self, branch) -> float:
        return float(self.branch_flows[topology.flat_index(branch)])

    def pressure(self, branch) -> float:
        return float(self.branch_pressures[topology.flat_index(branch)])

    def to_dict(self) -> dict:
        branches = topology.branch_set(self.geometry.levels)
        return {
            "levels": self.geometry.levels,
            "total_flow": self.total_flow,
            "inlet_pressure": self.inlet_pressure,
            "root_pressure": self.root_pressure,
            "branch_flows": {str(b): float(v) for b, v in zip(branches, self.branch_flows)},
            "branch_pressures": {str(b): float(v)
                                 for b, v in zip(branches, self.branch_pressures)},
            "outlet_flows": [float(v) for v in self.outlet_flows],
            "outlet_pressures": [float(v) for v in self.outlet_pressures],
            "energy": self.energy,
        }


def _cascade(geometry: TreeGeometry, p0: float, phi: float, flows: np.ndarray):
    """Pressure at every branch outlet by accumulating Poiseuille drops from the inlet."""
    root = p0 - geometry.r0 * phi
    drops = geometry.branch_resistances * flows
    pressures = np.empty_like(flows)
    upstream = np.array([root])
    for level in range(1, geometry.levels + 1):
        sl = topology.level_slice(level)
        pressures[sl] = np.repeat(upstream, 2) - drops[sl]
        upstream = pressures[sl]
    return root, pressures


def _energy(geometry: TreeGeometry, phi: float, flows: np.ndarray) -> float:
    return geometry.r0 * (phi * phi + float(np.sum(flows * flows / geometry.xi)))


def pressures_from_flows(geometry: TreeGeometry, outlet_flows, p0: float) -> FlowState:
    """Solve the regime with prescribed outlet flows and inlet pressure."""
    q = _outlet_vector(outlet_flows, geometry.levels, "outlet_flows")
    phi, flows = branch_flows(q)
    outlet_p = p0 - resistance_matrix(geometry) @ q
    root, pressures = _cascade(geometry, p0, phi, flows)
    return FlowState(geometry, phi, flows, float(p0), root, pressures, outlet_p,
                     _energy(geometry, phi, flows))


def solve_mixed(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """LU solve with one refinement pass when the relative residual exceeds 1e-10."""
    try:
        with warnings.catch_warnings():
            # singularity is detected below and raised as an error
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu = linalg.lu_factor(m, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalDegeneracyError(f"mixed system factorization failed ({exc})") from None
    if np.any(np.diag(lu[0]) == 0):
        raise NumericalDegeneracyError("mixed system matrix is singular")
    q = linalg.lu_solve(lu, b)
    scale = np.abs(m) @ np.abs(q) + np.abs(b)
    residual = np.max(np.abs(m @ q - b) / np.where(scale > 0, scale, 1.0))
    if residual > _REFINE_TOL:
        q = q + linalg.lu_solve(lu, b - m @ q)
    if not np.all(np.isfinite(q)):
        raise NumericalDegeneracyError("mixed system solve produced non-finite flows")
    return q


def flows_from_pressures(geometry: TreeGeometry, outlet_pressures, phi: float) -> FlowState:
    """Solve the regime with prescribed outlet pressures and inlet flow.

    The inlet pressure is reconstructed from every outlet path; a spread
    beyond 1e-10 (relative) raises :class:`NumericalDegeneracyError`.
    """
    p = _outlet_vector(outlet_pressures, geometry.levels, "outlet_pressures")
    m, b = mixed_system(geometry, p, phi)
    q = solve_mixed(m, b)
    total, flows = branch_flows(q)
    drop = resistance_matrix(geometry) @ q
    inlet_candidates = p + drop
    scale = max(np.max(np.abs(p)), np.max(np.abs(drop)), math.ulp(1.0))
    spread = float(np.ptp(inlet_candidates))
    if spread > _INLET_TOL * scale:
        raise NumericalDegeneracyError(
            f"inlet pressure differs between outlet paths by {spread:.3e}")
    p0 = float(inlet_candidates[0])
    root, pressures = _cascade(geometry, p0, total, flows)
    return FlowState(geometry, total, flows, p0, root, pressures, p,
                     _energy(geometry, total, flows))


def solve(geometry: TreeGeometry, bc: BoundaryConditions) -> FlowState:
    if len(bc.values) != geometry.n_outlets:
        raise ValidationError(
            f"bc.values: expected {geometry.n_outlets} entries for levels="
            f"{geometry.levels}, got {len(bc.values)}")
    if bc.kind == OUTLET_FLOWS:
        return pressures_from_flows(geometry, bc.values, bc.p0)
    return flows_from_pressures(geometry, bc.values, bc.phi)
