"""Dissipation-optimal dyadic pipe trees in the Poiseuille regime.

Submodules:

* :mod:`treeflow.topology`: branch indices, paths and ratio conversions;
* :mod:`treeflow.network`: geometry, resistance matrix, volume and energy;
* :mod:`treeflow.flow`: flow/pressure solves for both boundary regimes;
* :mod:`treeflow.analytic`: closed-form optima and the collapsing sequence;
* :mod:`treeflow.auglag`: augmented Lagrangian optimizer;
* :mod:`treeflow.cli`: command-line front end.
"""
from .errors import (DegenerateBranchError, NumericalDegeneracyError, TreeFlowError,
                     ValidationError)
from .topology import BranchIndex, branch_set, flat_index, nu, path_to, subpath
from .network import (TreeGeometry, energy_branchwise, energy_quadratic, load_geometry,
                      mixed_system, resistance_matrix, tilde_a1, uniform_geometry, volume)
from .flow import (BoundaryConditions, FlowState, flows_from_pressures,
                   pressures_from_flows, solve)
from .analytic import (MinimizingSequenceElement, OptimalityReport, equal_pressure_optimum,
                       infimum_energy, minimizing_sequence_element, optimal_xi_case1,
                       sweep_epsilon)
from .auglag import AugLagConfig, OptimizationRun, optimize_case1, optimize_case2

__version__ = "0.1.0"

__all__ = [
    "AugLagConfig", "BoundaryConditions", "BranchIndex", "DegenerateBranchError",
    "FlowState", "MinimizingSequenceElement", "NumericalDegeneracyError",
    "OptimalityReport", "OptimizationRun", "TreeFlowError", "TreeGeometry",
    "ValidationError", "branch_set", "energy_branchwise", "energy_quadratic",
    "equal_pressure_optimum", "flat_index", "flows_from_pressures", "infimum_energy",
    "load_geometry", "minimizing_sequence_element", "mixed_system", "nu",
    "optimal_xi_case1", "optimize_case1", "optimize_case2", "path_to",
    "pressures_from_flows", "resistance_matrix", "solve", "subpath", "sweep_epsilon",
    "tilde_a1", "uniform_geometry", "volume",
]
