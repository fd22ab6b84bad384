import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flipvdl.metrics import PrimaryParams
from flipvdl.neural import VAE
from flipvdl.vdl import (
    N_COORDS,
    ParamStats,
    StatsError,
    VdlVector,
    assemble_vdl,
    band_contrast,
    distance_matrix,
    extrapolate_trajectory,
    fisher_criterion,
    group_centroid,
    interpolate,
    lda_reduce,
    pca_reduce,
    read_vdl,
    scatter_matrices,
    traverse_latent,
    treatment_vector,
    write_vdl,
)


def blobs(rng, centers, n=30, scale=0.3):
    x = np.vstack([c + scale * rng.standard_normal((n, len(c))) for c in centers])
    labels = np.repeat(np.arange(len(centers)), n)
    return x, labels


def test_pca_matches_dense_eigen():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.standard_normal((60, 8)) @ rng.standard_normal((8, 8))
        space, proj = pca_reduce(x, 3)
        xc = x - x.mean(axis=0)
        evals, evecs = np.linalg.eigh(xc.T @ xc)
        order = np.argsort(evals)[::-1][:3]
        for j, k in enumerate(order):
            v = evecs[:, k]
            assert min(np.abs(space.projection[:, j] - v).max(), np.abs(space.projection[:, j] + v).max()) < 1e-8
        np.testing.assert_allclose(space.explained, evals[order] / evals.sum(), rtol=1e-10)
        np.testing.assert_allclose(proj, xc @ space.projection, atol=1e-12)


def test_pca_collinear_and_isotropic():
    t = np.linspace(-1, 1, 20)[:, None]
    with pytest.warns(UserWarning, match="rank 1"):
        space, _ = pca_reduce(t * np.array([[1.0, 2.0, -1.0]]), 3)
    assert space.explained[0] == pytest.approx(1.0, abs=1e-12)
    x = np.random.default_rng(1).standard_normal((20000, 3))
    space, _ = pca_reduce(x, 3)
    np.testing.assert_allclose(space.explained, 1 / 3, atol=0.02)
    with pytest.raises(ValueError):
        pca_reduce(np.zeros((3, 4)))


def test_lda_recovers_separating_direction():
    rng = np.random.default_rng(2)
    d = np.array([1.0, -2.0, 0.5, 0.0, 1.0])
    x, labels = blobs(rng, [np.zeros(5), 3 * d / np.linalg.norm(d)], n=200, scale=0.2)
    with pytest.warns(UserWarning, match="at most 1"):
        space, _ = lda_reduce(x, labels, 3)
    w = space.projection[:, 0]
    assert abs(w @ d) / np.linalg.norm(d) > 0.99


def test_lda_fisher_beats_random_projections():
    rng = np.random.default_rng(3)
    centers = [rng.uniform(-4, 4, 10) for _ in range(5)]
    x, labels = blobs(rng, centers, n=40, scale=0.5)
    space, _ = lda_reduce(x, labels, 3)
    sw, sb, _, _ = scatter_matrices(x, labels)
    best = fisher_criterion(space.projection, sw, sb)
    for _ in range(100):
        q, _ = np.linalg.qr(rng.standard_normal((10, 3)))
        assert fisher_criterion(q, sw, sb) < best
    # the criterion depends only on the spanned subspace
    mix = rng.standard_normal((3, 3))
    assert fisher_criterion(space.projection @ mix, sw, sb) == pytest.approx(best, rel=1e-8)


def test_lda_needs_two_classes():
    with pytest.raises(ValueError):
        lda_reduce(np.random.default_rng(0).random((10, 3)), np.zeros(10))


def test_distance_rows_sum_to_100():
    rng = np.random.default_rng(4)
    x, labels = blobs(rng, [rng.uniform(-3, 3, 3) for _ in range(6)], n=25)
    d, groups = distance_matrix(x, labels)
    np.testing.assert_allclose(d.sum(axis=1), 100.0, atol=1e-9)
    assert groups == list(range(6))


def test_distance_two_identical_groups():
    x = np.array([[0.0, 1.0], [0.0, -1.0]] * 2)
    d, _ = distance_matrix(x, ["a", "a", "b", "b"])
    np.testing.assert_array_equal(d, [[50.0, 50.0], [50.0, 50.0]])


def test_distance_hand_computed_three_groups():
    # centroids at 0, 10, 20 on a line; every group has spread 1 about its centroid
    pts = np.array([[-1.0], [1.0], [9.0], [11.0], [19.0], [21.0]])
    labels = ["a", "a", "b", "b", "c", "c"]
    d, groups = distance_matrix(pts, labels)
    # row a raw medians: a 1, b 10, c 20 -> sum 31
    raw = np.array([[1.0, 10.0, 20.0], [10.0, 1.0, 10.0], [20.0, 10.0, 1.0]])
    assert groups == ["a", "b", "c"]
    np.testing.assert_array_equal(d, 100.0 * raw / raw.sum(axis=1, keepdims=True))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_distance_permutation_consistent(seed):
    rng = np.random.default_rng(seed)
    x, labels = blobs(rng, [rng.uniform(-3, 3, 2) for _ in range(4)], n=5)
    d, groups = distance_matrix(x, labels)
    perm = rng.permutation(len(groups))
    new_groups = [groups[i] for i in perm]
    d2, _ = distance_matrix(x, labels, new_groups)
    np.testing.assert_allclose(d2, d[np.ix_(perm, perm)], rtol=1e-12)


def test_distance_errors():
    with pytest.raises(ValueError, match="no points"):
        distance_matrix(np.zeros((2, 2)), ["a", "a"], ["a", "b"])


def test_interpolate_endpoints_exact():
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal(30), rng.standard_normal(30)
    for steps in (2, 5, 11):
        pts = interpolate(a, b, steps)
        assert pts.shape == (steps, 30)
        assert np.array_equal(pts[0], a) and np.array_equal(pts[-1], b)
    np.testing.assert_allclose(interpolate(a, b, 3)[1], 0.5 * (a + b), rtol=1e-15)
    with pytest.raises(ValueError):
        interpolate(a, b, 1)


def test_traversal_endpoints_decode_like_direct():
    vae = VAE(seed=2)
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal(N_COORDS), rng.standard_normal(N_COORDS)
    tr = traverse_latent(vae, a, b, 5)
    assert np.array_equal(tr.images[0], vae.decode(a[None, :24])[0])
    assert np.array_equal(tr.images[-1], vae.decode(b[None, :24])[0])
    assert tr.work is None


def test_band_contrast():
    img = np.zeros((4, 4))
    mask = np.zeros((4, 4), bool)
    mask[1] = True
    img[1] = 1.0
    assert band_contrast(img, mask) == 1.0
    assert band_contrast(np.ones((4, 4)), mask) == 0.0


def test_extrapolation_cases():
    t = np.array([0.0, 1.0, 2.0])
    slope, icpt = np.array([0.5, -1.0, 2.0]), np.array([1.0, 3.0, -2.0])
    pts = icpt + t[:, None] * slope
    ex = extrapolate_trajectory(t, pts, 5.0)
    np.testing.assert_allclose(ex.point, icpt + 5.0 * slope, atol=1e-8)
    assert ex.extrapolated
    ex2 = extrapolate_trajectory([0.0, 2.0], pts[[0, 2]], 1.0)
    np.testing.assert_allclose(ex2.point, pts[1], atol=1e-12)
    assert not ex2.extrapolated
    with pytest.raises(ValueError):
        extrapolate_trajectory([1.0], pts[:1], 2.0)
    with pytest.raises(ValueError, match="equal"):
        extrapolate_trajectory([1.0, 1.0], pts[:2], 2.0)


def _vec(coords, disease="Normal", stats_id="s"):
    return VdlVector(np.asarray(coords, dtype=float), disease=disease, stats_id=stats_id)


def test_treatment_vector():
    pre = _vec(np.zeros(N_COORDS))
    assert treatment_vector(pre, pre).magnitude == 0.0
    post = _vec(np.r_[3.0, 4.0, np.zeros(N_COORDS - 2)])
    rep = treatment_vector(pre, post, reference_centroid=post.coords, reference="Normal")
    assert rep.magnitude == 5.0
    np.testing.assert_array_equal(rep.direction[:2], [0.6, 0.8])
    assert rep.distance_before == 5.0 and rep.distance_after == 0.0 and rep.distance_change == -5.0
    with pytest.raises(StatsError):
        treatment_vector(pre, _vec(np.ones(N_COORDS), stats_id="other"))


def test_assemble_normalises_and_requires_stats():
    lo = PrimaryParams(1e6, -4000.0, 100.0, 0.0, 0.0, 2.0)
    hi = PrimaryParams(3e6, -2000.0, 300.0, 1.0, 4.0, 6.0)
    stats = ParamStats.fit([lo, hi])
    mid = PrimaryParams(*(0.5 * (lo.as_array() + hi.as_array())))
    v = assemble_vdl(np.zeros(24), mid, stats, disease="Normal")
    np.testing.assert_allclose(v.coords[24:], 0.5, rtol=1e-15)
    assert v.stats_id == stats.stats_id
    with pytest.raises(StatsError):
        assemble_vdl(np.zeros(24), mid, None)
    with pytest.raises(ValueError):
        assemble_vdl(np.zeros(23), mid, stats)
    assert ParamStats.from_json(stats.to_json()) == stats


def test_vdl_csv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    vecs = [VdlVector(rng.standard_normal(N_COORDS), "Normal", 1, "s1", 0.5, "a", "x"),
            VdlVector(rng.standard_normal(N_COORDS), None, None, "s2", 1.0, "b", "x")]
    write_vdl(vecs, tmp_path / "v.csv")
    back = read_vdl(tmp_path / "v.csv")
    for v, w in zip(vecs, back):
        assert np.array_equal(v.coords, w.coords)
        assert (v.disease, v.peristalsis, v.subject, v.timestamp) == (w.disease, w.peristalsis, w.subject, w.timestamp)
    np.testing.assert_array_equal(group_centroid(back, "Normal"), vecs[0].coords)
    with pytest.raises(ValueError):
        group_centroid(back, "Scleroderma")
