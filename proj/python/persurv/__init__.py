"""Topological shape features of label images and functional Cox survival models."""

from ._core import (
    FpcaModel,
    PersurvError,
    SurfaceGrid,
    assign_risk_groups,
    chi_square_sf,
    default_padding,
    denoise,
    filter_finite,
    fit_cox,
    fit_fpca,
    kaplan_meier,
    load_label_image,
    log_partial_likelihood,
    log_rank,
    persistence,
    persistence_surface,
    run_study,
    sedt2,
    sedt3,
    shared_grid,
)

__version__ = "0.1.0"
