import warnings

import numpy as np
import pytest
from hypothesis import settings

from lfdr.density import BasisSpec, fit_mixture_density
from lfdr.ingest import bin_z_values
from lfdr.nulls import central_matching, mle_from_counts, theoretical_null
from lfdr.simulate import SimModel, generate

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

GRID = (-4.0, 7.4)


@pytest.fixture(scope="session")
def model_draw():
    return generate(SimModel(), np.random.default_rng(20240611)).values


@pytest.fixture(scope="session")
def model_fit(model_draw):
    return fit_mixture_density(bin_z_values(model_draw, 120, GRID), BasisSpec("natural-spline", 7))


@pytest.fixture(scope="session")
def nulls(model_fit):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {
            "theoretical": theoretical_null(model_fit),
            "central-matching": central_matching(model_fit),
            "mle": mle_from_counts(model_fit.counts, 2.0),
        }
