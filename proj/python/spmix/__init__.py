"""Spatial product-mixture model for threshold exceedances."""

from ._core import (
    Error,
    __version__,
    chi,
    crps,
    ess,
    fit,
    main,
    rhat,
    simulate,
    thresholds,
    twcrps,
)

__all__ = [
    "Error",
    "__version__",
    "chi",
    "crps",
    "ess",
    "fit",
    "main",
    "rhat",
    "simulate",
    "thresholds",
    "twcrps",
]
