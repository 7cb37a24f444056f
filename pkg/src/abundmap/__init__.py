"""Fine-scale abundance mapping from marked presence-only point data."""

from .distributions import (
    HurdleLogNormalParams,
    ThinningSpec,
    ZinbParams,
    hurdle_lognormal_logpdf,
    hurdle_lognormal_mean,
    sample_hurdle_lognormal,
    sample_zinb,
    thin_count,
    thinned_zinb_oracle,
    zinb_logpmf,
    zinb_pmf,
)
from .draws import PosteriorDraws, read_draws, write_draws
from .estimators import HurdleSizeModel, ThinnedCountModel
from .gp_basis import GpConfig, HilbertBasis
from .grid import Grid, build_grid
from .kriging import MaternKriging

__version__ = "0.1.0"

__all__ = [
    "ZinbParams",
    "HurdleLogNormalParams",
    "ThinningSpec",
    "zinb_pmf",
    "zinb_logpmf",
    "hurdle_lognormal_logpdf",
    "hurdle_lognormal_mean",
    "thin_count",
    "thinned_zinb_oracle",
    "sample_zinb",
    "sample_hurdle_lognormal",
    "PosteriorDraws",
    "read_draws",
    "write_draws",
    "HurdleSizeModel",
    "ThinnedCountModel",
    "MaternKriging",
    "Grid",
    "build_grid",
    "GpConfig",
    "HilbertBasis",
    "__version__",
]
