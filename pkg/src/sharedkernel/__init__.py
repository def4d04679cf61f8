"""Shared-kernel mixture screening for bounded data on [0, 1]."""
__version__ = "0.1.0"

from .dictionary_fit import NormalGammaPrior, choose_k_by_cv, fit_dictionary
from .model import (ConvergenceError, DataError, GibbsConfig, KernelDictionary, ScreeningDataset,
                    ScreeningResult)
from .screening import permutation_null, posterior_h0_given_counts, screen

__all__ = [
    "ConvergenceError", "DataError", "GibbsConfig", "KernelDictionary", "NormalGammaPrior",
    "ScreeningDataset", "ScreeningResult", "choose_k_by_cv", "fit_dictionary",
    "permutation_null", "posterior_h0_given_counts", "screen", "__version__",
]
