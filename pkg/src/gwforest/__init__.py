"""Simulation and verification toolkit for critical multitype Galton-Watson forests."""

__version__ = "0.1.0"

from .errors import (CriticalityWarning, ForestStructureError, GWError, IrreducibilityError,
                     LawSpecError, SpineConstructionError, TruncationError, TruncationLeakError)
from .laminations import LaminationLaw, closed_forms, reproduce_section5
from .lawspec import law_from_dict, parse_law
from .leafed import (GeometricLeafedLaw, LeafedForest, LeafedLaw, TableLeafedLaw,
                     estimate_params, exploration_processes, sample_leafed_forest)
from .multitype import (MultitypeForest, MultitypeLaw, TableMultitypeLaw, additive_martingale,
                        sample_multitype_forest)
from .reduction import ReducedLeafedLaw, reduce, reduced_params, verify_prop1
from .spectral import (drift_check, eta_squared, expected_Zn_exact, mean_matrix, solve_eigenvectors,
                       spectral_data, spine_kernel)
from .spine import sample_spine_monotype, sample_spine_multitype, verify_many_to_one
from .tree import PlanarForest, build_forest, lukasiewicz, weighted_heights

__all__ = [
    "CriticalityWarning", "ForestStructureError", "GWError", "IrreducibilityError", "LawSpecError",
    "SpineConstructionError", "TruncationError", "TruncationLeakError",
    "LaminationLaw", "closed_forms", "reproduce_section5", "law_from_dict", "parse_law",
    "GeometricLeafedLaw", "LeafedForest", "LeafedLaw", "TableLeafedLaw", "estimate_params",
    "exploration_processes", "sample_leafed_forest",
    "MultitypeForest", "MultitypeLaw", "TableMultitypeLaw", "additive_martingale",
    "sample_multitype_forest", "ReducedLeafedLaw", "reduce", "reduced_params", "verify_prop1",
    "drift_check", "eta_squared", "expected_Zn_exact", "mean_matrix", "solve_eigenvectors",
    "spectral_data", "spine_kernel", "sample_spine_monotype", "sample_spine_multitype",
    "verify_many_to_one", "PlanarForest", "build_forest", "lukasiewicz", "weighted_heights",
]
