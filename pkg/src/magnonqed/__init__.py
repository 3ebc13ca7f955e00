"""Forward model and fitting toolkit for spin ensembles coupled to antiferromagnetic magnons."""

from .afm_modes import (Equilibrium, FieldConfig, MagnetParams, ModeSolution, StackingConfig,
                        equilibrium, linearized_modes, magnon_mode, mode_rf_field, stacking_spectrum)
from .errors import (CrossingNotResolved, DegenerateFit, DegenerateModeError, FitError,
                     MagnonQEDError, NeverStrongError, NoDipFound, NonConvergence, PoleError,
                     SolverError, StabilityError, UndefinedVisibilityError, ValidationError)
from .hybrid_response import (CouplingParams, PolaritonBranch, SpectrumMap, chiral_projection,
                              polariton_branches, s21, spectrum_map)
from .saturation import SaturationParams, threshold_power, visibility
from .specfit import (CouplingExtract, LorentzianFit, Trace, background_subtract,
                      extract_coupling, fit_dip, fit_double_dip, pseudo_derivative)
from .spin_levels import LevelSet, SpinEnsembleParams, energy_levels, qubit_gap

__version__ = "0.1.0"

__all__ = [
    "Equilibrium", "FieldConfig", "MagnetParams", "ModeSolution", "StackingConfig", "equilibrium",
    "linearized_modes", "magnon_mode", "mode_rf_field", "stacking_spectrum", "CrossingNotResolved",
    "DegenerateFit", "DegenerateModeError", "FitError", "MagnonQEDError", "NeverStrongError",
    "NoDipFound", "NonConvergence", "PoleError", "SolverError", "StabilityError",
    "UndefinedVisibilityError", "ValidationError", "CouplingParams", "PolaritonBranch",
    "SpectrumMap", "chiral_projection", "polariton_branches", "s21", "spectrum_map",
    "SaturationParams", "threshold_power", "visibility", "CouplingExtract", "LorentzianFit",
    "Trace", "background_subtract", "extract_coupling", "fit_dip", "fit_double_dip",
    "pseudo_derivative", "LevelSet", "SpinEnsembleParams", "energy_levels", "qubit_gap",
    "__version__",
]
