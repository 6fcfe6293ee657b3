import numpy as np
import pytest

from hawkesmf import ExponentialBasis, HawkesParams, simulate_hawkes
from hawkesmf.aux_stats import compute_aux_stats
from hawkesmf.diagnostics import (
    empirical_covariance_density,
    fluctuation_ratio_empirical,
)
from hawkesmf.estimators import fit_contrast, fit_mle


@pytest.fixture(scope="session", autouse=True)
def _warm_compiled_kernels():
    """Trigger every jitted kernel once so compilation never lands inside a
    timed test."""
    params = HawkesParams(np.array([1.0, 0.8]), np.full((2, 2, 1), 0.1),
                          ExponentialBasis([1.0]))
    events = simulate_hawkes(params, 50.0, seed=0)
    compute_aux_stats(events, params.basis)
    fluctuation_ratio_empirical(events, params, grid_step=0.5)
    empirical_covariance_density(events, 1.0, 0.5)
    fit_contrast(events, params.basis, quad_step=0.5)
    fit_mle(events, params.basis, max_iter=5)
