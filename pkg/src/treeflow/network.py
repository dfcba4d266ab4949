"""Resistance matrix, mixed flow system, volume and dissipated energy of a tree.

The geometry is described by the root resistance ``r0`` and the cumulative
ratios ``xi`` of every non-root branch; branch ``(i, j)`` has hydrodynamic
resistance ``r0 / xi[i, j]``.  Outlet pressures and flows are linked by

    p0 * 1 - p = A(xi) @ q

where ``A`` is the symmetric positive definite resistance matrix.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np
from scipy import linalg

from . import topology
from .errors import DegenerateBranchError, NumericalDegeneracyError, ValidationError

#: default positivity floor on every xi entry
XI_MIN = 1e-12
#: default cap on levels for dense assembly (4096 x 4096)
MAX_LEVELS = 12


@dataclass(frozen=True, eq=False)
class TreeGeometry:
    """Root resistance plus cumulative resistance ratios of every branch.

    ``R0`` and ``L0`` (root radius and length, metres) are optional and only
    used to report a physical volume.
    """

    levels: int
    r0: float
    xi: np.ndarray
    R0: float | None = None
    L0: float | None = None
    xi_min: float = field(default=XI_MIN, repr=False)

    def __post_init__(self):
        levels = topology._check_levels(self.levels)
        xi = np.array(self.xi, dtype=float).ravel()
        expected = topology.n_branches(levels)
        if xi.size != expected:
            raise ValidationError(
                f"xi: expected {expected} entries for levels={levels}, got {xi.size}")
        if not (math.isfinite(self.r0) and self.r0 > 0):
            raise ValidationError(f"r0: must be a finite positive number, got {self.r0!r}")
        bad = np.flatnonzero(~np.isfinite(xi) | (xi < self.xi_min))
        if bad.size:
            k = int(bad[0])
            branch = topology.branch_set(levels)[k]
            raise DegenerateBranchError(
                f"xi[{k}] (branch {branch}): degenerate branch, value {float(xi[k])!r} "
                f"is below the floor {self.xi_min!r}")
        for name in ("R0", "L0"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValidationError(f"{name}: must be positive or null, got {value!r}")
        xi.flags.writeable = False
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "r0", float(self.r0))
        object.__setattr__(self, "xi", xi)

    @property
    def n_outlets(self) -> int:
        return 2**self.levels

    @property
    def branch_resistances(self) -> np.ndarray:
        return self.r0 / self.xi

    def with_xi(self, xi) -> "TreeGeometry":
        return TreeGeometry(self.levels, self.r0, xi, self.R0, self.L0, self.xi_min)

    def monotonicity_violations(self) -> list[topology.BranchIndex]:
        """Internal branches with a daughter whose ratio exceeds their own."""
        bad = []
        for level in range(1, self.levels):
            mothers = self.xi[topology.level_slice(level)]
            daughters = self.xi[topology.level_slice(level + 1)].reshape(-1, 2)
            for j in np.flatnonzero(daughters.max(axis=1) > mothers):
                bad.append(topology.BranchIndex(level, int(j) + 1))
        return bad

    def is_monotone(self) -> bool:
        return not self.monotonicity_violations()

    def to_dict(self) -> dict:
        return {"levels": self.levels, "r0": self.r0, "R0": self.R0, "L0": self.L0,
                "xi": [float(v) for v in self.xi]}

    @classmethod
    def from_dict(cls, data: dict, *, xi_min: float = XI_MIN) -> "TreeGeometry":
        if not isinstance(data, dict):
            raise ValidationError("geometry: expected a JSON object")
        for key in ("levels", "r0", "xi"):
            if key not in data:
                raise ValidationError(f"geometry.{key}: missing required field")
        unknown = set(data) - {"levels", "r0", "R0", "L0", "xi"}
        if unknown:
            raise ValidationError(f"geometry: unknown field(s) {sorted(unknown)}")
        levels = data["levels"]
        if not isinstance(levels, int) or isinstance(levels, bool):
            raise ValidationError(f"geometry.levels: expected an integer, got {levels!r}")
        xi = data["xi"]
        if not isinstance(xi, list):
            raise ValidationError("geometry.xi: expected a list of numbers")
        for k, v in enumerate(xi):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ValidationError(f"geometry.xi[{k}]: expected a number, got {v!r}")
        for key in ("r0", "R0", "L0"):
            v = data.get(key)
            if v is not None and (not isinstance(v, (int, float)) or isinstance(v, bool)):
                raise ValidationError(f"geometry.{key}: expected a number, got {v!r}")
        try:
            return cls(levels, data["r0"], xi, data.get("R0"), data.get("L0"), xi_min)
        except ValidationError as exc:
            raise type(exc)(f"geometry.{exc}") from None


def load_json(source) -> object:
    """Parse JSON from a path or a string, reporting the line on syntax errors."""
    if isinstance(source, FsPath) or (isinstance(source, str) and not source.lstrip().startswith(("{", "["))):
        name = str(source)
        try:
            text = FsPath(source).read_text()
        except OSError as exc:
            raise ValidationError(f"{name}: cannot read ({exc.strerror})") from None
    else:
        name, text = "<input>", source
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{name}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None


def load_geometry(source, *, xi_min: float = XI_MIN) -> TreeGeometry:
    return TreeGeometry.from_dict(load_json(source), xi_min=xi_min)


def uniform_geometry(levels: int, r0: float, lambda_cap: float) -> TreeGeometry:
    """Per-level geometry ``xi[i, j] = (lambda_cap - 1) / (N 2**i)``."""
    xi = np.concatenate([np.full(2**i, (lambda_cap - 1) / (levels * 2**i))
                         for i in range(1, levels + 1)])
    return TreeGeometry(levels, r0, xi)


def _path_sum_matrix(levels: int, weights: np.ndarray, root_weight: float) -> np.ndarray:
    """``root_weight`` + sum of ``weights`` over the common path of each outlet pair."""
    outlets = np.arange(2**levels)
    cumulative = np.zeros((outlets.size, levels + 1))
    for k in range(1, levels + 1):
        flat = 2**k - 2 + (outlets >> (levels - k))
        cumulative[:, k] = cumulative[:, k - 1] + weights[flat]
    shared = levels - topology.nu_matrix(levels)
    return root_weight + np.take_along_axis(cumulative, shared, axis=1)


def resistance_matrix(geometry: TreeGeometry, *, max_levels: int = MAX_LEVELS) -> np.ndarray:
    """Dense ``2**N x 2**N`` resistance matrix of the tree."""
    if geometry.levels > max_levels:
        raise ValidationError(
            f"levels={geometry.levels} exceeds the assembly cap max_levels={max_levels}")
    return _path_sum_matrix(geometry.levels, geometry.branch_resistances, geometry.r0)


def tilde_a1(levels: int) -> np.ndarray:
    """Limit of ``eps * A / r0`` along the geometry collapsing onto outlet 1.

    It is the resistance matrix, without the root, of the tree whose branches
    on the path to outlet ``(N, 1)`` have resistance 0 and all others 1; its
    kernel is spanned by the first basis vector.
    """
    weights = (~topology.path_mask(levels)).astype(float)
    return _path_sum_matrix(levels, weights, 0.0)


def check_spd(matrix: np.ndarray) -> np.ndarray:
    """Cholesky factor of ``matrix``; raise :class:`NumericalDegeneracyError` if not SPD."""
    if not np.allclose(matrix, matrix.T, rtol=1e-14, atol=0.0):
        raise NumericalDegeneracyError("resistance matrix is not symmetric")
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalDegeneracyError(
            f"resistance matrix is not positive definite ({exc})") from None


def _outlet_vector(values, levels: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size != 2**levels:
        raise ValidationError(f"{name}: expected {2**levels} outlet values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: values must be finite")
    return arr


def mixed_system(geometry: TreeGeometry, outlet_pressures, phi: float):
    """Square system ``M q = b`` for outlet flows given outlet pressures and inlet flow.

    Row ``i < 2**N - 1`` is ``(A v_i)^T`` with ``v_i = e_i - e_{i+1}`` and the
    right-hand side ``p[i+1] - p[i]``; the last row imposes ``sum(q) = phi``.
    """
    p = _outlet_vector(outlet_pressures, geometry.levels, "outlet_pressures")
    a = resistance_matrix(geometry)
    m = np.empty_like(a)
    m[:-1] = a[:-1] - a[1:]
    m[-1] = 1.0
    b = np.empty_like(p)
    b[:-1] = p[1:] - p[:-1]
    b[-1] = phi
    return m, b


def branch_flows(outlet_flows) -> tuple[float, np.ndarray]:
    """Total inflow and level-major flows of every branch, by conservation."""
    q = np.asarray(outlet_flows, dtype=float).ravel()
    levels = topology.levels_for_outlets(q.size)
    by_level = [q]
    for _ in range(levels - 1):
        by_level.append(by_level[-1].reshape(-1, 2).sum(axis=1))
    total = float(by_level[-1].sum())
    return total, np.concatenate(by_level[::-1])


def volume(geometry: TreeGeometry) -> tuple[float, float | None]:
    """Dimensionless volume ``1 + sum(xi)`` and, when R0 and L0 are set, cubic metres."""
    relative = 1.0 + math.fsum(geometry.xi)
    physical = None
    if geometry.R0 is not None and geometry.L0 is not None:
        physical = math.pi * geometry.R0**2 * geometry.L0 * relative
    return relative, physical


def volume_residual(xi, lambda_cap: float) -> float:
    """``sum(xi) - (lambda_cap - 1)``: signed violation of the volume cap."""
    return math.fsum(np.asarray(xi, dtype=float)) - (lambda_cap - 1.0)


def energy_quadratic(outlet_flows, geometry: TreeGeometry) -> float:
    """Dissipated power as the quadratic form ``q^T A q``."""
    q = _outlet_vector(outlet_flows, geometry.levels, "outlet_flows")
    return float(q @ resistance_matrix(geometry) @ q)


def energy_branchwise(outlet_flows, geometry: TreeGeometry) -> float:
    """Dissipated power summed pipe by pipe, ``r0 phi^2 + sum r0 q^2 / xi``."""
    q = _outlet_vector(outlet_flows, geometry.levels, "outlet_flows")
    phi, flows = branch_flows(q)
    return geometry.r0 * (phi * phi + float(np.sum(flows * flows / geometry.xi)))
