"""Information-based subdata selection for clusterwise linear regression."""

from .core import (
    ClrParams,
    CsvFormatError,
    Dataset,
    InvalidParamsError,
    RngSpec,
    SelectionResult,
    param_dim,
    read_csv,
    theta_flatten,
    theta_unflatten,
    validate_params,
    write_csv,
)
from .em import (
    DegenerateFitError,
    EmControls,
    FitError,
    FitResult,
    align_labels,
    e_step,
    em_fit,
    log_density_point,
    loglik,
    m_step,
    select_g,
)
from .information import (
    asymptotic_limit,
    complete_info_point,
    d_criterion,
    f1,
    f2,
    f3,
    missing_info_diag,
    subdata_info,
    surrogate_q,
    true_info_point_mc,
)
from .selection import SelectionError, SelectionPlan, select, select_full, select_iboss, select_random

__version__ = "0.1.0"

__all__ = [
    "ClrParams", "CsvFormatError", "Dataset", "InvalidParamsError", "RngSpec", "SelectionResult",
    "param_dim", "read_csv", "theta_flatten", "theta_unflatten", "validate_params", "write_csv",
    "DegenerateFitError", "EmControls", "FitError", "FitResult", "align_labels", "e_step", "em_fit",
    "log_density_point", "loglik", "m_step", "select_g",
    "asymptotic_limit", "complete_info_point", "d_criterion", "f1", "f2", "f3", "missing_info_diag",
    "subdata_info", "surrogate_q", "true_info_point_mc",
    "SelectionError", "SelectionPlan", "select", "select_full", "select_iboss", "select_random",
]
