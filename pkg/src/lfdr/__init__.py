"""Local false discovery rates with empirical nulls, power diagnostics and
delta-method accuracy formulas."""

from .density import BasisSpec, fit_mixture_density
from .errors import LfdrError
from .fdr import fdr_report, local_fdr, tail_fdr
from .ingest import BinnedCounts, ZSample, bin_z_values, t_to_z
from .nulls import NullModel, central_matching, mle_fit, theoretical_null

__all__ = [
    "BasisSpec",
    "BinnedCounts",
    "LfdrError",
    "NullModel",
    "ZSample",
    "bin_z_values",
    "central_matching",
    "fdr_report",
    "fit_mixture_density",
    "local_fdr",
    "mle_fit",
    "t_to_z",
    "tail_fdr",
    "theoretical_null",
]

__version__ = "0.1.0"
