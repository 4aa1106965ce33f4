import numpy as np
import pytest

from limfb.evaluate import (Experiment, ExperimentConfig, SweepResult,
                            dump_raw, emit_csv, export_trajectory_csv,
                            parse_scheme, read_sweep_csv, run_constellation,
                            run_sweep, sum_rate)
from limfb.feedback import FeedbackReport
from limfb.gmm import GmmModel, project_to_observation
from limfb.precoding import (PrecoderSet, SwmmseOptions,
                             directional_representatives, rci_precoders,
                             swmmse_precoders)
from limfb.scene import load_dataset


def _experiment(desk_train, desk_eval, desk_model, desk_tmodel=None,
                **overrides):
    models = {("full", 4): desk_model}
    if desk_tmodel is not None:
        models[("toeplitz", 4)] = desk_tmodel
    defaults = dict(users=4, constellations=8, seed=17, snr_db=(10.0,),
                    schemes=("gmm-obs", "dft:lmmse", "dft:omp"))
    defaults.update(overrides)
    config = ExperimentConfig.desk_profile(**defaults)
    return Experiment(config, train_dataset=desk_train,
                      eval_dataset=desk_eval, models=models)


# -- sum_rate ------------------------------------------------------------------

def test_sum_rate_unit_sinr():
    h = np.array([[np.exp(0.7j), 0.0]])
    v = PrecoderSet(np.array([[np.exp(-0.7j), 0.0]]), rho=1.0, designer="rci")
    assert abs(sum_rate(h, v, sigma_n2=1.0) - 1.0) < 1e-12


def test_sum_rate_zero_precoders():
    h = np.ones((3, 4), dtype=complex)
    v = PrecoderSet(np.zeros((3, 4), dtype=complex), rho=1.0, designer="rci")
    assert sum_rate(h, v, 0.5) == 0.0


def test_sum_rate_matches_term_by_term_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        v = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        v *= np.sqrt(1.0 / np.sum(np.abs(v) ** 2))
        sigma_n2 = rng.uniform(0.05, 1.0)
        oracle = 0.0
        for j in range(2):
            signal = abs(h[j] @ v[j]) ** 2
            interference = sum(abs(h[j] @ v[m]) ** 2 for m in range(2)
                               if m != j)
            oracle += np.log2(1.0 + signal / (interference + sigma_n2))
        got = sum_rate(h, PrecoderSet(v, 1.0, "rci"), sigma_n2)
        assert abs(got - oracle) <= 1e-12 * max(1.0, abs(oracle))


def test_sum_rate_invariant_to_user_phase():
    rng = np.random.default_rng(1)
    h = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    v = PrecoderSet(0.5 * (rng.standard_normal((2, 3))
                           + 1j * rng.standard_normal((2, 3))), 10.0, "rci")
    phased = h.copy()
    phased[0] *= np.exp(1.23j)
    assert abs(sum_rate(h, v, 0.3) - sum_rate(phased, v, 0.3)) < 1e-12


# -- scheme parsing --------------------------------------------------------------

def test_parse_scheme_variants():
    assert parse_scheme("gmm-obs") == ("mixture", ("gmm", "obs"), None)
    assert parse_scheme("tgmm-perfect+rci") == \
        ("mixture", ("tgmm", "perfect"), "rci")
    assert parse_scheme("dft:omp") == ("codebook", "omp", None)
    for bad in ("gmm", "dft:fancy", "gmm-obs+zf"):
        with pytest.raises(ValueError):
            parse_scheme(bad)


# -- constellation runs ----------------------------------------------------------

def test_run_constellation_deterministic(desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model)
    a, _ = exp.run_constellation([17, 0])
    b, _ = exp.run_constellation([17, 0])
    assert a == b


def test_run_constellation_matches_hand_driven_pipeline(
        desk_train, desk_eval, desk_model):
    """Composition oracle: replay the pipeline with public module calls."""
    exp = _experiment(desk_train, desk_eval, desk_model,
                      schemes=("gmm-obs",))
    seed = [17, 3]
    rates, _ = exp.run_constellation(seed)

    cfg = exp.config
    sigma_n2 = cfg.rho / 10.0 ** (cfg.snr_db[0] / 10.0)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(desk_eval), size=cfg.users, replace=False)
    channels = desk_eval.samples[picks].astype(np.complex128)
    unit = (rng.standard_normal((cfg.users, cfg.pilots))
            + 1j * rng.standard_normal((cfg.users, cfg.pilots))) / np.sqrt(2)
    setup = exp.pilot_setup(cfg.pilots, sigma_n2)
    observations = channels @ setup.pilot_matrix.T + np.sqrt(sigma_n2) * unit

    obs_model = project_to_observation(desk_model, setup)
    reps = directional_representatives(desk_model)
    chosen = []
    for j in range(cfg.users):
        idx = int(np.argmax(obs_model.log_responsibilities(observations[j])))
        chosen.append(reps[idx])
    precoders = rci_precoders(np.vstack(chosen), sigma_n2, cfg.rho)
    assert rates["gmm-obs"] == sum_rate(channels, precoders, sigma_n2)


def test_perfect_equals_observed_with_invertible_noiseless_pilots(
        desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model,
                      schemes=("gmm-obs", "gmm-perfect"))
    rates, _ = exp.run_constellation([17, 5], n_pilots=16, sigma_n2=1e-12)
    assert rates["gmm-obs"] == rates["gmm-perfect"]


def test_skipped_schemes_are_reported(desk_eval, desk_model):
    config = ExperimentConfig.desk_profile(
        users=4, constellations=2, seed=1,
        schemes=("gmm-obs", "tgmm-obs", "dft:lmmse"))
    exp = Experiment(config, eval_dataset=desk_eval,
                     models={("full", 4): desk_model})
    rates, skipped = exp.run_constellation([1, 0])
    assert "gmm-obs" in rates
    assert set(skipped) == {"tgmm-obs", "dft:lmmse"}


def test_module_level_wrapper(desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model)
    a, _ = run_constellation(exp, [17, 1])
    b, _ = exp.run_constellation([17, 1])
    assert a == b


# -- sweeps ----------------------------------------------------------------------

def test_single_value_sweep_equals_constellation_mean(
        desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model)
    result = run_sweep(exp, "snr", values=[10.0])
    direct = [exp.run_constellation([17, i])[0]["gmm-obs"] for i in range(8)]
    assert result.means["gmm-obs"][0] == np.mean(direct)


def test_sweep_prefix_stability(desk_train, desk_eval, desk_model):
    short = _experiment(desk_train, desk_eval, desk_model, constellations=4)
    long = _experiment(desk_train, desk_eval, desk_model, constellations=8)
    a = run_sweep(short, "pilots", values=[4, 8])
    b = run_sweep(long, "pilots", values=[4, 8])
    np.testing.assert_array_equal(a.per_constellation["gmm-obs"],
                                  b.per_constellation["gmm-obs"][:, :4])


def test_sweep_standard_error_matches_recomputation(
        desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model)
    result = run_sweep(exp, "pilots", values=[4, 8])
    for tag in result.schemes:
        raw = result.per_constellation[tag]
        np.testing.assert_allclose(
            result.std_errors[tag],
            raw.std(axis=1, ddof=1) / np.sqrt(raw.shape[1]), rtol=1e-12)


def test_users_axis(desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model,
                      schemes=("gmm-obs",))
    result = run_sweep(exp, "users", values=[2, 4])
    assert result.per_constellation["gmm-obs"].shape == (2, 8)


def test_bits_axis_uses_models_per_width(desk_train, desk_eval, desk_model):
    from limfb.gmm import EmOptions, fit_em
    small = fit_em(desk_train, 4, options=EmOptions(max_iters=10, seed=2),
                   geometry=desk_model.geometry)
    config = ExperimentConfig.desk_profile(
        users=4, constellations=3, seed=17, schemes=("gmm-obs",))
    exp = Experiment(config, train_dataset=desk_train,
                     eval_dataset=desk_eval,
                     models={("full", 4): desk_model, ("full", 2): small})
    result = run_sweep(exp, "bits", values=[2, 4])
    assert result.per_constellation["gmm-obs"].shape == (2, 3)
    assert np.all(np.isfinite(result.means["gmm-obs"]))


def test_iterations_axis_reuses_trajectory(desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model, constellations=3,
                      schemes=("gmm-obs+swmmse", "gmm-obs+rci"), iters=20)
    result = run_sweep(exp, "iterations", values=[1, 10, 20])
    swmmse = result.per_constellation["gmm-obs+swmmse"]
    rci = result.per_constellation["gmm-obs+rci"]
    assert swmmse.shape == (3, 3)
    # the RCI designer does not iterate: identical value at every checkpoint
    assert np.all(rci == rci[0])
    assert not np.all(swmmse == swmmse[0])


def test_monotone_snr_for_perfect_feedback(desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model, constellations=30,
                      schemes=("gmm-perfect",))
    result = run_sweep(exp, "snr", values=[0.0, 5.0, 10.0, 15.0, 20.0])
    means = result.means["gmm-perfect"]
    ses = result.std_errors["gmm-perfect"]
    for i in range(len(means) - 1):
        pooled = np.hypot(ses[i], ses[i + 1])
        assert means[i + 1] - means[i] >= -2.0 * pooled


# -- CSV and raw dumps -------------------------------------------------------------

def test_emit_csv_round_trip(tmp_path, desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model, constellations=4)
    result = run_sweep(exp, "pilots", values=[2, 4, 6, 8, 10, 12, 14, 16])
    path = tmp_path / "sweep.csv"
    emit_csv(result, path)
    axis, header, rows = read_sweep_csv(path)
    assert axis == "pilots"
    assert len(rows) == 8
    assert len(header) == 1 + 2 * len(result.schemes)
    for i, row in enumerate(rows):
        assert row[0] == result.values[i]
        for s_idx, tag in enumerate(result.schemes):
            assert row[1 + 2 * s_idx] == result.means[tag][i]
            assert row[2 + 2 * s_idx] == result.std_errors[tag][i]


def test_emit_csv_empty_schemes(tmp_path):
    result = SweepResult(axis="snr", values=[10.0], schemes=[], means={},
                         std_errors={}, per_constellation={},
                         metadata={"constellations": 0})
    path = tmp_path / "empty.csv"
    emit_csv(result, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "snr"


def test_emit_csv_deterministic_bytes(tmp_path, desk_train, desk_eval,
                                      desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model, constellations=3)
    result = run_sweep(exp, "snr", values=[10.0])
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_csv(result, a)
    emit_csv(result, b)
    assert a.read_bytes() == b.read_bytes()


def test_dump_raw_round_trip(tmp_path, desk_train, desk_eval, desk_model):
    exp = _experiment(desk_train, desk_eval, desk_model, constellations=4)
    result = run_sweep(exp, "pilots", values=[4, 8])
    path = tmp_path / "raw.lfbd"
    dump_raw(result, path)
    container = load_dataset(path)
    assert container.samples.shape == (8, len(result.schemes))
    for s_idx, tag in enumerate(result.schemes):
        np.testing.assert_allclose(
            container.samples[:, s_idx].real,
            result.per_constellation[tag].reshape(-1), rtol=1e-6)
    sidecar = (str(path) + ".jsonl")
    import json
    with open(sidecar) as fh:
        head = json.loads(fh.readline())
    assert head["schemes"] == result.schemes


def test_export_trajectory_csv(tmp_path):
    mean = np.array([1.0, 0.5j, -0.25, 0.1], dtype=complex)
    model = GmmModel([1.0], [mean], [1e-10 * np.eye(4)])
    out = swmmse_precoders(model, [FeedbackReport(0, 1, "t")], 0.1, 1.0,
                           SwmmseOptions(max_iters=12, seed=0))
    path = tmp_path / "traj.csv"
    export_trajectory_csv(out, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,sum_rate,power"
    assert len(lines) == 13


# -- config ------------------------------------------------------------------------

def test_experiment_config_from_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "profile = desk\n"
        "train_data = train.lfbd\n"
        "eval_data = eval.lfbd\n"
        "users = 4\n"
        "pilots = 8\n"
        "snr_db = 0,10,20\n"
        "schemes = gmm-obs, dft:omp\n"
        "constellations = 10\n"
        "seed = 5\n"
        "model.full = m.lfbm\n")
    config = ExperimentConfig.from_file(path)
    assert config.geometry.n == 16
    assert config.bits == 4
    assert config.snr_db == (0.0, 10.0, 20.0)
    assert config.schemes == ("gmm-obs", "dft:omp")
    assert config.model_paths == {"full": "m.lfbm"}
    assert config.seed == 5


def test_experiment_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("profile = desk\nnonsense = 1\n")
    with pytest.raises(ValueError, match="nonsense"):
        ExperimentConfig.from_file(path)


def test_config_hash_tracks_fields():
    a = ExperimentConfig.desk_profile(seed=1)
    b = ExperimentConfig.desk_profile(seed=1)
    c = ExperimentConfig.desk_profile(seed=2)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_experiment_validates_eval_size(desk_eval, desk_model):
    config = ExperimentConfig.desk_profile(users=5000, constellations=1)
    with pytest.raises(ValueError):
        Experiment(config, eval_dataset=desk_eval,
                   models={("full", 4): desk_model})
