import struct

import numpy as np
import pytest

from limfb.feedback import build_pilot_matrix
from limfb.formats import BadMagicError
from limfb.gmm import (EmOptions, GmmModel, fit_em, load_model, log_density,
                       param_count, project_to_observation, responsibilities,
                       sample_component, save_model)
from limfb.scene import ArrayGeometry, ChannelDataset, normalize_dataset
from limfb.toeplitz import check_structure


def _random_model(n_components, dim, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 1.5, n_components)
    weights /= weights.sum()
    means = scale * (rng.standard_normal((n_components, dim))
                     + 1j * rng.standard_normal((n_components, dim)))
    covs = np.empty((n_components, dim, dim), dtype=complex)
    for k in range(n_components):
        raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        covs[k] = raw @ raw.conj().T / dim + 0.1 * np.eye(dim)
    return GmmModel(weights, means, covs)


# -- densities ---------------------------------------------------------------

def test_log_density_unit_scalar_peak():
    assert abs(log_density(0.0, 0.0, 1.0) - (-np.log(np.pi))) < 1e-12


def test_log_density_determinant_scaling():
    s = 2.5
    expected = -np.log(np.pi) - np.log(s)
    assert abs(log_density(0.0, 0.0, s) - expected) < 1e-12


def test_log_density_matches_dense_oracle():
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    cov = raw @ raw.conj().T + np.eye(3)
    mean = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    diff = x - mean
    quad = (diff.conj() @ np.linalg.inv(cov) @ diff).real
    oracle = -3 * np.log(np.pi) - np.log(np.linalg.det(cov).real) - quad
    assert abs(log_density(x, mean, cov) - oracle) < 1e-10


def test_log_density_rejects_non_pd():
    with pytest.raises(np.linalg.LinAlgError):
        log_density(np.zeros(2), np.zeros(2), -np.eye(2))


# -- responsibilities --------------------------------------------------------

def test_responsibilities_single_component():
    model = _random_model(1, 3, seed=1)
    x = np.ones(3) + 0j
    np.testing.assert_allclose(responsibilities(model, x), [1.0])


def test_responsibilities_identical_components_reduce_to_weights():
    rng = np.random.default_rng(2)
    mean = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    cov = np.eye(2) * 0.7
    model = GmmModel([0.3, 0.7], [mean, mean], [cov, cov])
    x = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    np.testing.assert_allclose(responsibilities(model, x), [0.3, 0.7],
                               atol=1e-12)


def test_responsibilities_match_scalar_bayes_oracle():
    model = GmmModel([0.4, 0.6], [[0.0], [2.0]], [[[1.0]], [[2.0]]])
    x = np.array([1.0 + 0.5j])

    def scalar_density(x, mu, var):
        return np.exp(-abs(x - mu) ** 2 / var) / (np.pi * var)

    num = np.array([0.4 * scalar_density(x[0], 0.0, 1.0),
                    0.6 * scalar_density(x[0], 2.0, 2.0)])
    np.testing.assert_allclose(responsibilities(model, x), num / num.sum(),
                               rtol=1e-12)


def test_responsibilities_form_a_simplex():
    rng = np.random.default_rng(3)
    for n_comp in (1, 2, 16):
        model = _random_model(n_comp, 4, seed=n_comp)
        for _ in range(50):
            x = 10 * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
            r = responsibilities(model, x)
            assert abs(r.sum() - 1.0) < 1e-9
            assert np.all(r >= 0)


def test_responsibilities_invariant_to_common_score_scale():
    # multiplying every unnormalized score by a constant cancels in the
    # normalization; equivalent to shifting all log scores
    model = _random_model(4, 3, seed=4)
    x = np.ones(3) * (1 + 1j)
    scores = np.log(model.weights) + model.component_log_densities(x)
    shifted = scores + np.log(123.456)

    def softmax(s):
        e = np.exp(s - s.max())
        return e / e.sum()

    np.testing.assert_allclose(softmax(scores), softmax(shifted), rtol=1e-12)
    np.testing.assert_allclose(responsibilities(model, x), softmax(scores),
                               rtol=1e-9)
    assert np.argmax(softmax(shifted)) == np.argmax(responsibilities(model, x))


# -- EM ----------------------------------------------------------------------

def _toy_dataset(samples):
    arr = np.asarray(samples, dtype=complex)
    scale = np.sqrt(arr.shape[1] / np.mean(np.sum(np.abs(arr) ** 2, axis=1)))
    return ChannelDataset(arr * scale, normalized=True)


def test_fit_em_single_component_closed_form():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((400, 3)) + 1j * rng.standard_normal((400, 3))
    ds = normalize_dataset(ChannelDataset(x))
    model = fit_em(ds, 1, options=EmOptions(max_iters=5, seed=0))
    data = ds.samples.astype(complex)
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered.conj() / len(data)
    np.testing.assert_allclose(model.weights, [1.0])
    np.testing.assert_allclose(model.means[0], mean, atol=1e-10)
    np.testing.assert_allclose(model.covariances[0], cov, atol=1e-8)


def test_fit_em_recovers_separated_clusters():
    rng = np.random.default_rng(6)
    n_per, dim, std = 600, 4, 0.3
    mu_a = np.array([4.0, 0, 0, 0], dtype=complex)
    mu_b = np.array([0, 0, 0, -4.0], dtype=complex)
    noise = (rng.standard_normal((2 * n_per, dim))
             + 1j * rng.standard_normal((2 * n_per, dim))) * std / np.sqrt(2)
    x = np.concatenate([mu_a + noise[:n_per], mu_b + noise[n_per:]])
    scale = np.sqrt(dim / np.mean(np.sum(np.abs(x) ** 2, axis=1)))
    ds = ChannelDataset(x * scale, normalized=True)
    model = fit_em(ds, 2, options=EmOptions(max_iters=100, seed=1))
    targets = np.array([mu_a, mu_b]) * scale
    tol = 3 * std / np.sqrt(n_per)
    # match components to targets up to permutation
    dists = np.array([[np.linalg.norm(model.means[k] - targets[t])
                       for t in range(2)] for k in range(2)])
    best = min(dists[0, 0] + dists[1, 1], dists[0, 1] + dists[1, 0])
    assert best / 2 < tol


def test_fit_em_full_loglik_is_nondecreasing(desk_model):
    lls = np.asarray(desk_model.fit_log_likelihoods)
    assert len(lls) == 50
    assert np.all(np.diff(lls) >= -1e-8 * np.abs(lls[:-1]))


def test_fit_em_toeplitz_structure_and_stability(desk_tmodel, desk_geometry):
    for cov in desk_tmodel.covariances:
        assert check_structure(cov, desk_geometry)
    lls = np.asarray(desk_tmodel.fit_log_likelihoods)
    # approximate M-step: small decreases allowed, bounded at 1e-3 relative
    assert np.all(np.diff(lls) >= -1e-3 * np.abs(lls[:-1]))


def test_fit_em_is_deterministic(desk_train):
    opts = EmOptions(max_iters=5, seed=12)
    small = ChannelDataset(desk_train.samples[:1500], normalized=True)
    a = fit_em(small, 4, options=opts)
    b = fit_em(small, 4, options=opts)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.covariances, b.covariances)


def test_fit_em_reseeds_collapsed_components(caplog):
    # tight specular clusters make the structured M-step starve components;
    # collapse handling re-seeds them and the fit completes
    import logging

    from limfb.scene import ArrayGeometry, SceneConfig, generate_channels

    geom = ArrayGeometry(2, 8, 1.0, 0.5)
    scene = SceneConfig(geom, num_clusters=4, paths_per_cluster=2,
                        azimuth_spread=0.01, elevation_spread=0.005,
                        diffuse_power=0.02, seed=5)
    ds = normalize_dataset(generate_channels(scene, 600, sample_seed=8))
    with caplog.at_level(logging.WARNING, logger="limfb.gmm"):
        model = fit_em(ds, 8, constraint="toeplitz",
                       options=EmOptions(max_iters=20, seed=0))
    assert any("re-seeding" in rec.message for rec in caplog.records)
    assert abs(model.weights.sum() - 1.0) < 1e-12
    assert np.all(model.weights > 0)


def test_fit_em_validates_inputs(desk_train):
    unnormalized = ChannelDataset(desk_train.samples, normalized=False)
    with pytest.raises(ValueError):
        fit_em(unnormalized, 2)
    tiny = ChannelDataset(desk_train.samples[:3], normalized=True)
    with pytest.raises(ValueError):
        fit_em(tiny, 8)


# -- observation domain ------------------------------------------------------

def test_identity_pilot_matches_channel_model(desk_geometry):
    model = _random_model(3, desk_geometry.n, seed=7)
    setup = build_pilot_matrix(desk_geometry, desk_geometry.n).with_noise(0.0)
    # rows of the pilot matrix are scaled DFT rows; undo to get the identity
    eye_setup = setup.with_noise(0.0)
    eye_setup.pilot_matrix = np.eye(desk_geometry.n)
    obs = project_to_observation(model, eye_setup)
    x = np.ones(desk_geometry.n) * (0.3 - 0.1j)
    np.testing.assert_allclose(obs.responsibilities(x),
                               model.responsibilities(x), rtol=1e-9)


def test_single_pilot_row_variance():
    model = GmmModel([1.0], np.zeros((1, 4)), [np.eye(4)])
    rng = np.random.default_rng(8)
    row = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    row *= np.sqrt(1.0 / np.sum(np.abs(row) ** 2))
    setup_cls = build_pilot_matrix(ArrayGeometry(2, 2), 1)
    setup_cls.pilot_matrix = row[None, :]
    setup = setup_cls.with_noise(0.25)
    obs = project_to_observation(model, setup)
    expected = np.sum(np.abs(row) ** 2) + 0.25
    np.testing.assert_allclose(obs.covariances[0], [[expected]], rtol=1e-12)


def test_projection_matches_dense_oracle():
    model = _random_model(2, 4, seed=9)
    rng = np.random.default_rng(9)
    pilot = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    pilot /= np.linalg.norm(pilot, axis=1, keepdims=True)
    setup = build_pilot_matrix(ArrayGeometry(2, 2), 2)
    setup.pilot_matrix = pilot
    setup = setup.with_noise(0.3)
    obs = project_to_observation(model, setup)
    for k in range(2):
        oracle = pilot @ model.covariances[k] @ pilot.conj().T + 0.3 * np.eye(2)
        np.testing.assert_allclose(obs.covariances[k], oracle, rtol=1e-12)
        np.testing.assert_allclose(obs.means[k], pilot @ model.means[k],
                                   rtol=1e-12)


def test_projection_requires_pd_at_zero_noise():
    # rank-deficient channel covariance makes P C P^H singular at sigma=0
    model = GmmModel([1.0], np.zeros((1, 4)),
                     [np.diag([1.0, 0.0, 0.0, 0.0]).astype(complex)])
    setup = build_pilot_matrix(ArrayGeometry(2, 2), 2).with_noise(0.0)
    with pytest.raises(ValueError, match="sigma_n2"):
        project_to_observation(model, setup)


def test_single_component_observation_responsibility(desk_geometry):
    model = _random_model(1, desk_geometry.n, seed=10)
    setup = build_pilot_matrix(desk_geometry, 4).with_noise(0.5)
    obs = project_to_observation(model, setup)
    rng = np.random.default_rng(10)
    for _ in range(10):
        y = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        np.testing.assert_allclose(obs.responsibilities(y), [1.0])


# -- sampling ----------------------------------------------------------------

def test_sampling_degenerate_covariance_returns_mean():
    mean = np.array([1.0 + 2.0j, -0.5j, 0.25, 1.0])
    model = GmmModel([1.0], [mean], [1e-12 * np.eye(4)])
    draws = sample_component(model, 1, 100, seed=0)
    assert np.max(np.abs(draws - mean)) < 1e-5


def test_sampling_is_deterministic():
    model = _random_model(2, 3, seed=11)
    a = sample_component(model, 2, 50, seed=4)
    b = sample_component(model, 2, 50, seed=4)
    assert np.array_equal(a, b)


def test_sampling_moments():
    model = _random_model(1, 4, seed=12)
    count = 100_000
    draws = sample_component(model, 1, count, seed=5)
    mean_err = np.linalg.norm(draws.mean(axis=0) - model.means[0])
    assert mean_err < 5.0 / np.sqrt(count) * np.sqrt(
        np.trace(model.covariances[0]).real)
    centered = draws - draws.mean(axis=0)
    emp = centered.T @ centered.conj() / count
    rel = np.linalg.norm(emp - model.covariances[0]) \
        / np.linalg.norm(model.covariances[0])
    assert rel < 0.05


def test_sampling_falls_back_to_eigen_root(caplog):
    import logging

    # rank-one covariance: Cholesky fails, eigen square root takes over and
    # all draws stay in the span of the single eigenvector
    direction = np.array([1.0, 1j, -1.0, 0.5]) / np.sqrt(3.25)
    cov = np.outer(direction, direction.conj())
    model = GmmModel([1.0], [np.zeros(4)], [cov])
    with caplog.at_level(logging.WARNING, logger="limfb.gmm"):
        draws = sample_component(model, 1, 200, seed=1)
    assert any("eigen" in rec.message for rec in caplog.records)
    projector = np.eye(4) - np.outer(direction, direction.conj())
    # leakage out of the span is sqrt(clipped eigenvalue noise) ~ 1e-8
    assert np.max(np.abs(draws @ projector.T)) < 1e-6


def test_sampling_validates_component_index():
    model = _random_model(2, 3, seed=13)
    with pytest.raises(ValueError):
        sample_component(model, 0, 1, seed=0)
    with pytest.raises(ValueError):
        sample_component(model, 3, 1, seed=0)


# -- parameter counting and serialization ------------------------------------

def test_param_count_table_values():
    assert param_count(16, 64, "full") == 33_280
    assert param_count(64, 64, "full") == 133_120
    assert param_count(256, 64, "full") == 532_480
    assert param_count(16, 64, "toeplitz") == 4_096
    assert param_count(64, 64, "toeplitz") == 16_384
    assert param_count(256, 64, "toeplitz") == 65_536


def test_param_count_matches_serialized_scalars(tmp_path, desk_geometry):
    n_comp, dim = 4, desk_geometry.n
    model = _random_model(n_comp, dim, seed=14)
    path = tmp_path / "model.lfbm"
    save_model(model, path)
    header = 4 + struct.calcsize("<HBIB")
    per_comp = path.stat().st_size - header
    cov_bytes = per_comp - n_comp * (8 + 16 * dim)
    assert cov_bytes // 16 == param_count(n_comp, dim, "full")

    spectral = np.random.default_rng(0).uniform(0.1, 1.0, (n_comp, 4 * dim))
    from limfb.toeplitz import realize_spectral
    covs = np.array([realize_spectral(c, desk_geometry) for c in spectral])
    tmodel = GmmModel(model.weights, model.means, covs, constraint="toeplitz",
                      spectral=spectral, geometry=desk_geometry)
    tpath = tmp_path / "tmodel.lfbm"
    save_model(tmodel, tpath)
    cov_bytes = tpath.stat().st_size - header - n_comp * (8 + 16 * dim)
    assert cov_bytes // 8 == param_count(n_comp, dim, "toeplitz")


def test_model_roundtrip_full(tmp_path):
    model = _random_model(4, 5, seed=15)
    path = tmp_path / "m.lfbm"
    save_model(model, path)
    loaded = load_model(path)
    np.testing.assert_array_equal(loaded.weights, model.weights)
    np.testing.assert_array_equal(loaded.means, model.means)
    np.testing.assert_allclose(loaded.covariances, model.covariances,
                               atol=1e-15)
    assert loaded.constraint == "full"


def test_model_roundtrip_toeplitz(tmp_path, desk_tmodel, desk_geometry):
    path = tmp_path / "t.lfbm"
    save_model(desk_tmodel, path)
    with pytest.raises(ValueError, match="geometry"):
        load_model(path)
    loaded = load_model(path, geometry=desk_geometry)
    np.testing.assert_array_equal(loaded.spectral, desk_tmodel.spectral)
    np.testing.assert_allclose(loaded.covariances, desk_tmodel.covariances,
                               atol=1e-12)


def test_model_requires_power_of_two_components(tmp_path):
    model = _random_model(3, 2, seed=16)
    with pytest.raises(ValueError):
        save_model(model, tmp_path / "bad.lfbm")


def test_model_bad_magic(tmp_path):
    path = tmp_path / "x.lfbm"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(BadMagicError):
        load_model(path)


def test_model_truncation_detected(tmp_path):
    from limfb.formats import TruncatedError
    model = _random_model(4, 3, seed=17)
    path = tmp_path / "m.lfbm"
    save_model(model, path)
    clipped = tmp_path / "clipped.lfbm"
    clipped.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TruncatedError):
        load_model(clipped)


def test_model_validation():
    with pytest.raises(ValueError):
        GmmModel([0.5, 0.6], np.zeros((2, 2)), np.stack([np.eye(2)] * 2))
    with pytest.raises(ValueError):
        GmmModel([1.0], np.zeros((1, 2)), [np.eye(2)], constraint="toeplitz")
