"""Grouped functional time series forecasting.

Smoothing of age-specific log mortality curves, dynamic (multivariate)
functional principal component analysis on kernel long-run covariance
estimates, ARIMA score forecasting, bootstrap prediction intervals,
exposure-weighted forecast reconciliation and expanding-window evaluation.
"""

from gfts.panel import (
    AgeGrid,
    MortalityPanel,
    SeriesData,
    SeriesId,
    SyntheticSpec,
    load_panel,
    save_panel,
    synthesize_panel,
    to_log,
)

__all__ = [
    "AgeGrid",
    "MortalityPanel",
    "SeriesData",
    "SeriesId",
    "SyntheticSpec",
    "load_panel",
    "save_panel",
    "synthesize_panel",
    "to_log",
]

__version__ = "0.1.0"
