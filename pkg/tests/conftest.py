import numpy as np
import pytest

from flipvdl import synth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def normal_forward():
    """One forward-solved normal window with the true fit."""
    ph = synth.draw_phenotype("normal-peristaltic", synth.sample_rng(3, 0))
    fit = synth.true_fit(1.4e7, -2000.0)
    th = synth.theta_field(ph)
    res = synth.forward_solve(th, fit, 55e-6, ph.duration(fit.length))
    return ph, fit, th, res
