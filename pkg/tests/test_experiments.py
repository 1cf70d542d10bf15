import json
import math
from fractions import Fraction

import numpy as np
import pytest

from dpac import experiments as ex
from dpac import privacy as pv

BASE = ex.ExperimentConfig(backend="plaintext", trials=50, seed=2)


def test_config_roundtrip_and_validation():
    cfg = BASE.replace(algorithm="dishuf-laplace", h=1.1, k_star=3)
    assert ex.ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ex.ConfigError, match="unknown key"):
        ex.ExperimentConfig.from_dict({"run": {"trials": 3, "shots": 1}})
    with pytest.raises(ex.ConfigError, match="unknown config block"):
        ex.ExperimentConfig.from_dict({"extra": {}})
    with pytest.raises(ex.ConfigError, match="h must exceed 1"):
        BASE.replace(algorithm="dishuf-laplace", h=1.0)
    with pytest.raises(ex.ConfigError):
        BASE.replace(trials=0)
    with pytest.raises(ex.ConfigError):
        BASE.replace(k_star=11)
    with pytest.raises(ex.ConfigError, match="abar"):
        ex.ExperimentConfig.from_dict({"algorithm": {"abar": 10.5}})


def test_generated_data_has_requested_mean():
    d = ex.make_data({"mean": ex.REFERENCE_DATA_MEAN, "spread": 10, "seed": 1}, 10)
    assert ex.exact_average(d) == pytest.approx(13.1336, abs=1e-14)
    assert list(ex.make_data({"values": [1, 2]}, 2)) == [1.0, 2.0]


def test_trial_is_deterministic():
    a, _ = ex.run_trial(BASE, 7)
    b, _ = ex.run_trial(BASE, 7)
    assert a.mse == b.mse and a.delta_int == b.delta_int
    c, _ = ex.run_trial(BASE, 8)
    assert c.mse != a.mse


def test_gaussian_trial_error_is_squared_mean_gamma():
    res, _ = ex.run_trial(BASE, 3)
    mean_gamma = float(sum(map(Fraction, res.noise["gamma"])) / 10)
    assert res.mse == pytest.approx(mean_gamma**2, rel=1e-6)


def test_zero_noise_trial_has_zero_error():
    cfg = BASE.replace(algorithm="dpca-laplace", epsilon=1e300)
    res, _ = ex.run_trial(cfg, 0)
    assert res.mse < 1e-280


def test_plaintext_and_paillier_backends_agree():
    cfg = BASE.replace(algorithm="dishuf-laplace", h=2.0, key_bits=512)
    plain, _ = ex.run_trial(cfg, 1)
    crypto, _ = ex.run_trial(cfg.replace(backend="paillier"), 1)
    assert plain.delta_int == crypto.delta_int and plain.mse == crypto.mse


def test_reused_keys_still_agree():
    cfg = BASE.replace(algorithm="dishuf-gaussian", key_bits=512, backend="paillier", reuse_keys=True)
    a, _ = ex.run_trial(cfg, 4)
    b, _ = ex.run_trial(cfg.replace(backend="plaintext"), 4)
    assert a.delta_int == b.delta_int


def test_batched_summary_matches_single_trials():
    s = ex.monte_carlo(BASE, chunk=16)
    singles = [ex.run_trial(BASE, k)[0].mse for k in range(BASE.trials)]
    assert s.errors == singles
    assert s.mse_se == pytest.approx(np.std(singles, ddof=1) / math.sqrt(50))
    assert s.mse_theory == pytest.approx(0.0202536, rel=1e-5)
    assert s.converged == 50


def test_limit_mode_matches_iteration():
    it = ex.monte_carlo(BASE)
    lim = ex.monte_carlo(BASE.replace(iterate=False))
    np.testing.assert_allclose(lim.errors, it.errors, rtol=1e-6)
    assert lim.iters_mean == 0


def test_threads_do_not_change_results():
    a = ex.monte_carlo(BASE, threads=1, chunk=10)
    b = ex.monte_carlo(BASE, threads=2, chunk=10)
    assert a.errors == b.errors


def test_non_split_precision_path():
    s = ex.monte_carlo(BASE.replace(trials=3, precision="exact"))
    t = ex.monte_carlo(BASE.replace(trials=3))
    np.testing.assert_allclose(s.errors, t.errors, rtol=1e-9)


def test_sweep_shapes_and_emit(tmp_path):
    rows = ex.sweep(BASE.replace(trials=20), "g", [3, 2, 1, 0.01], baselines=["dpca-gaussian"])
    assert len(rows) == 5 and rows[-1].param_value is None
    csv_path = ex.emit(rows, "csv", str(tmp_path / "t.csv"))
    lines = open(csv_path).read().splitlines()
    assert lines[0].startswith("algorithm,param_name,param_value,trials,mse_mean,mse_se,mse_theory,iters_mean")
    assert len(lines) == 6
    json_path = ex.emit(rows, "json", str(tmp_path / "t.json"))
    back = ex.load_summaries(json_path)
    assert [b.to_dict() for b in back] == [r.to_dict() for r in rows]


def test_csv_is_reproducible(tmp_path):
    for name in ("a", "b"):
        ex.emit([ex.monte_carlo(BASE)], "csv", str(tmp_path / f"{name}.csv"))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_empty_sweep_gives_header_only(tmp_path):
    path = ex.emit(ex.sweep(BASE, "g", []), "csv", str(tmp_path / "e.csv"))
    assert open(path).read().count("\n") == 1


def test_epsilon_sweep_has_one_row_per_value_and_algorithm():
    rows = ex.sweep(BASE.replace(trials=5), "eps", [0.1, 1, 10], baselines=["osp-gaussian", "dpca-gaussian"])
    assert len(rows) == 9
    assert [r.param_value for r in rows[:3]] == [0.1, 1.0, 10.0]


def test_sweep_records_failures_and_continues():
    cfg = BASE.replace(algorithm="dishuf-laplace", trials=5, iterate=False)
    rows = ex.sweep(cfg, "n", [10, 250])
    assert rows[0].error is None
    assert rows[1].error.startswith("OverflowError")
    with pytest.raises(ex.ConfigError):
        ex.sweep(cfg, "abar", [1])


def test_error_trajectories_decay_to_limit():
    cfg = BASE.replace(algorithm="osp-laplace", trials=30)
    curve = ex.error_trajectories(cfg, 30, 400)
    assert curve[0] > curve[-1]
    s = ex.monte_carlo(cfg)
    assert curve[-1] == pytest.approx(s.mse_mean, rel=1e-6)
    flat = ex.error_trajectories(cfg.replace(algorithm="dpca-laplace"), 30, 5)
    assert np.all(flat == flat[0])


def test_resolve_threads_env(monkeypatch):
    monkeypatch.setenv(ex.THREADS_ENV, "3")
    assert ex.resolve_threads(None) == 3
    assert ex.resolve_threads(2) == 2
    with pytest.raises(ex.ConfigError):
        ex.resolve_threads(0)
