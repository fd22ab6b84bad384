import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flipvdl import synth
from flipvdl.calibrate import (
    CalibrationError,
    TubeLawFit,
    calibrate_recording,
    find_pressure_minima,
    fit_tube_law,
)
from flipvdl.ingest import FlipRecording


def _plateau_recording(traces_mmhg, volumes_ml, dt=0.5):
    t, p, v = [], [], []
    for trace, vol in zip(traces_mmhg, volumes_ml):
        for x in trace:
            t.append(len(t) * dt)
            p.append(x)
            v.append(vol)
    n = len(t)
    return FlipRecording(np.array(t), np.full((16, n), 15.0), np.array(p, float), np.array(v, float))


def test_minima_of_two_plateaus():
    rec = _plateau_recording([[10, 8, 9], [14, 11, 13]], [30.0, 50.0])
    pts = find_pressure_minima(rec)
    assert [round(p.pressure / 133.322, 9) for p in pts] == [8.0, 11.0]
    assert pts[0].area == pytest.approx(30e-6 / 0.15)


def test_single_plateau_is_rejected():
    rec = _plateau_recording([[10, 8, 9, 9]], [30.0])
    with pytest.raises(CalibrationError, match="2 volume plateaus"):
        find_pressure_minima(rec)


def test_minima_fall_where_activation_is_one():
    for i in range(3):
        ph = synth.draw_phenotype("absent-contractility", synth.sample_rng(1, i))
        ses = synth.simulate_session(ph, synth.true_fit(1.2e7, -2000.0), [40, 60])
        dt = ses.recording.time[1] - ses.recording.time[0]
        for p, (w0, w1) in zip(find_pressure_minima(ses.recording), ses.windows):
            rest_before = p.time <= w0 - 1.0 + dt
            rest_after = p.time >= w1 + 1.0 - dt
            assert rest_before or rest_after


def test_exact_line():
    fit = fit_tube_law([(1.0, 7.0), (2.0, 9.0), (4.0, 13.0)])
    assert fit.k_over_ao == pytest.approx(2.0, rel=1e-14)
    assert fit.po_minus_k == pytest.approx(5.0, rel=1e-14)
    assert fit.r_squared == 1.0


def test_two_points_interpolate():
    fit = fit_tube_law([(1e-4, 1000.0), (3e-4, 3500.0)])
    np.testing.assert_allclose(fit.pressure([1e-4, 3e-4]), [1000.0, 3500.0], rtol=1e-12)
    assert fit.r_squared == 1.0


def test_noisy_line_matches_normal_equations(rng):
    x = rng.uniform(1e-4, 5e-4, 12)
    y = 1.3e7 * x - 1800.0 + rng.normal(0, 40.0, x.size)
    fit = fit_tube_law(list(zip(x, y)))
    design = np.column_stack([x, np.ones_like(x)])
    beta = np.linalg.solve(design.T @ design, design.T @ y)
    assert fit.k_over_ao == pytest.approx(beta[0], rel=1e-10)
    assert fit.po_minus_k == pytest.approx(beta[1], rel=1e-10)


@pytest.mark.filterwarnings("ignore:non-physical")
@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(1e-4, 6e-4), min_size=3, max_size=10, unique=True),
    st.floats(1e6, 3e7),
    st.floats(-4000.0, 0.0),
    st.integers(0, 2**31 - 1),
)
def test_residuals_orthogonal_to_regressor(x, slope, icpt, seed):
    x = np.array(x)
    if np.ptp(x) < 1e-6:
        return
    y = slope * x + icpt + np.random.default_rng(seed).normal(0, 50.0, x.size)
    fit = fit_tube_law(list(zip(x, y)))
    r = y - fit.pressure(x)
    xc = x - x.mean()
    assert abs(np.dot(r, xc)) <= 1e-10 * np.linalg.norm(r * 0 + y) * np.linalg.norm(xc) + 1e-12
    assert abs(r.sum()) <= 1e-10 * np.abs(y).sum()


def test_identical_areas_are_rank_deficient():
    with pytest.raises(CalibrationError, match="rank"):
        fit_tube_law([(2e-4, 100.0), (2e-4, 200.0)])


def test_negative_slope_is_flagged():
    with pytest.warns(UserWarning, match="non-physical"):
        fit = fit_tube_law([(1e-4, 500.0), (2e-4, 100.0)])
    assert fit.nonphysical


def test_scales_follow_from_slope():
    fit = TubeLawFit(1.5e7, -2000.0, 1.0, length=0.15)
    assert fit.area_scale == pytest.approx(1000.0 * 0.03**2 / 1.5e7)
    assert fit.gamma == pytest.approx(8 * np.pi * 1e-3 * 0.15 / (1000.0**2 * 0.03**3) * 1.5e7)
    assert fit.time_scale == pytest.approx(5.0)


def test_fit_json_round_trip():
    fit = fit_tube_law([(1e-4, 1000.0), (2e-4, 2300.0), (3e-4, 3500.0)])
    data = json.loads(json.dumps(fit.to_json()))
    assert {"k_over_ao_pa_per_m2", "po_minus_k_pa", "r2", "c_m_per_s", "rho", "mu", "gamma"} <= set(data)
    back = TubeLawFit.from_json(data)
    assert back == fit
    assert back.fit_id == fit.fit_id


def test_four_fill_recovery_within_two_percent():
    ph = synth.draw_phenotype("weak-peristaltic", synth.sample_rng(5, 2))
    fit = synth.true_fit(1.1e7, -2500.0)
    ses = synth.simulate_session(ph, fit, [30, 40, 50, 60])
    got = calibrate_recording(ses.recording)
    assert abs(got.k_over_ao / fit.k_over_ao - 1) < 0.02
    assert got.r_squared > 0.99
