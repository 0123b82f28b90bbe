"""Comparison models: log-quad, discrete hazards and SVD."""
from .dischaz import DEFAULT_GROUPS, HEAPING_GROUPS, DiscreteHazards, DiscreteHazardSpec, dischaz_fit, u5mr_from_q
from .logquad import LogQuadCoefficients, load_logquad_coefficients, logquad_fit_k, logquad_predict
from .svd import (
    LsvBasis,
    SvdLsvRegression,
    compute_lsv_basis,
    load_clark_coefficients,
    load_lsv_basis,
    svd_empirical_predict,
    svd_lsv_fit,
)
from .tabulate import CellTable, tabulate
