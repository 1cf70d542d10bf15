import io
import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpac import consensus as cs
from dpac import dishuf as ds
from dpac import netgraph as ng
from dpac import privacy as pv
from dpac import simnet as sn

G10 = ng.cycle(10, 0.3)
GAUSS = pv.PrivacyBudget(10, 0.1, 5)
LAP = pv.PrivacyBudget(10, 0, 5)


def _shuffle(data, plan, seed=0):
    rng = np.random.default_rng(seed)
    eta = cs.sample_noise(plan.family, plan.sigma_eta, len(data), rng)
    out = ds.run_dishuf(sn.Network(G10), data, eta, 10**4, ds.ShuffleConfig(backend=ds.PLAINTEXT),
                        gain_rng=random.Random(seed))
    return out, rng


@pytest.mark.parametrize("precision", cs.PRECISIONS)
def test_plain_consensus_reaches_average(precision):
    x0 = np.arange(10, dtype=float)
    run = cs.iterate(G10, x0, precision=precision)
    assert run.converged
    np.testing.assert_allclose(run.final, 4.5, atol=1e-8)
    assert run.mean == 4.5


def test_already_agreeing_needs_no_iterations():
    run = cs.iterate(G10, np.full(10, 13.1336))
    assert run.iterations == 0 and run.converged


def test_iteration_cap_reports_unconverged():
    run = cs.iterate(G10, np.arange(10.0), cs.StopRule(max_iters=3))
    assert not run.converged and run.iterations == 3


def test_split_and_exact_agree_on_huge_noise():
    data = np.linspace(0, 26, 10)
    plan = pv.design(pv.DISHUF_GAUSSIAN, GAUSS, 10, 1e4, g=0.01)
    out, rng = _shuffle(data, plan)
    init = cs.init_dishuf_gaussian(data, out, plan, rng)
    split = cs.iterate(G10, init, precision=cs.SPLIT)
    exact = cs.iterate(G10, init, precision=cs.EXACT)
    assert split.iterations == exact.iterations
    np.testing.assert_allclose(split.deviation, exact.deviation, atol=1e-12)
    assert exact.exact_final is not None


def test_limit_is_data_average_plus_mean_gamma():
    data = np.linspace(0, 26, 10)
    plan = pv.design(pv.DISHUF_GAUSSIAN, GAUSS, 10, 1e4, g=1)
    out, rng = _shuffle(data, plan, seed=4)
    init = cs.init_dishuf_gaussian(data, out, plan, rng)
    target = sum(map(Fraction, data)) / 10 + sum(map(Fraction, init.noise)) / 10
    assert init.exact_mean() == target
    run = cs.iterate(G10, init)
    d_star = float(sum(map(Fraction, data)) / 10)
    err = cs.error_metrics(run, d_star)
    assert err.mse == pytest.approx(float(sum(map(Fraction, init.noise)) / 10) ** 2, rel=1e-6)


def test_laplace_init_perturbs_only_k_star():
    data = np.zeros(10)
    plan = pv.design(pv.DISHUF_LAPLACE, LAP, 10, 1e4, h=2)
    out, rng = _shuffle(data, plan)
    init = cs.init_dishuf_laplace(data, out, plan, 3, rng)
    assert np.count_nonzero(init.noise) == 1 and init.noise[3] != 0
    assert init.exact_mean() == Fraction(init.noise[3]) / 10
    with pytest.raises(ValueError):
        cs.init_dishuf_laplace(data, out, plan, 10, rng)


def test_osp_and_dpca():
    data = np.full(10, 13.1336)
    rng = np.random.default_rng(0)
    osp = cs.init_osp(data, pv.design(pv.OSP_LAPLACE, LAP, 10), rng)
    assert osp.delta_int is None and np.count_nonzero(osp.noise) == 10
    zero = pv.design(pv.DPCA_LAPLACE, LAP, 10).replace(sigma_xi=0.0)
    assert cs.run_dpca(data, zero, rng) == pytest.approx(13.1336, abs=1e-14)
    with pytest.raises(ValueError):
        cs.init_osp(data, zero, rng)


def test_noise_sampler_moments():
    rng = np.random.default_rng(1)
    g = cs.sample_noise("gaussian", 2.0, 200_000, rng)
    lap = cs.sample_noise("laplace", 2.0, 200_000, rng)
    assert g.var() == pytest.approx(4.0, rel=0.02)
    assert lap.var() == pytest.approx(8.0, rel=0.03)
    assert not cs.sample_noise("laplace", 0.0, 3, rng).any()
    with pytest.raises(ValueError):
        cs.sample_noise("cauchy", 1.0, 3, rng)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=10, max_size=10))
def test_split_mode_conserves_the_exact_average(x0):
    run = cs.iterate(G10, np.array(x0))
    assert run.mean == float(sum(map(Fraction, x0)) / 10)
    assert run.converged
    assert np.abs(run.deviation).max() < cs.StopRule().tolerance(run.mean)


def test_network_backed_iteration_matches_and_is_recorded():
    x0 = np.arange(10, dtype=float)
    net = sn.Network(G10)
    run = cs.iterate(G10, x0, precision=cs.FLOAT, network=net)
    plain = cs.iterate(G10, x0, precision=cs.FLOAT)
    np.testing.assert_allclose(run.final, plain.final, atol=1e-12)
    rounds = sn.consensus_rounds(net.transcript)
    assert len(rounds) == run.iterations and rounds[0] == {i: float(i) for i in range(10)}


def test_exact_mode_over_the_network_keeps_fractions():
    net = sn.Network(G10)
    run = cs.iterate(G10, np.arange(10.0), cs.StopRule(max_iters=5), precision=cs.EXACT, network=net)
    assert sum(run.exact_final) == 45
    assert isinstance(net.transcript[-1].payload, Fraction)


def test_trajectory_export():
    run = cs.iterate(G10, np.arange(10.0), thin=10)
    buf = io.StringIO()
    cs.write_trajectory(run, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t," + ",".join(f"x_{i}" for i in range(1, 11))
    assert lines[1].startswith("0,0.0,1.0")
    assert len(lines) == 1 + len(run.trajectory)


def test_split_batch_rows_match_single_runs():
    rng = np.random.default_rng(5)
    rows = [rng.normal(0, 10.0 ** k, 10) for k in (0, 50, 200)]
    single = [cs.iterate(G10, r) for r in rows]
    inits = [cs.as_initial_state(r).split() for r in rows]
    res = cs.converge_split_batch(G10, np.array([i[1] for i in inits]), np.array([i[2] for i in inits]),
                                  np.array([cs.StopRule().tolerance(i[0]) for i in inits]), 10**6)
    for k, s in enumerate(single):
        assert res.iterations[k] == s.iterations
        assert np.array_equal(res.deviation[k], s.deviation)


def test_error_metrics_for_scalar():
    m = cs.error_metrics(13.5, 13.0)
    assert m.mse == m.network_error == 0.25
    assert math.isclose(cs.error_metrics(13.0, 13.0).mse, 0)


@pytest.mark.parametrize("precision", cs.PRECISIONS)
def test_every_mode_broadcasts_one_round_per_iteration(precision):
    net = sn.Network(G10)
    run = cs.iterate(G10, np.arange(10.0), precision=precision, network=net)
    rounds = sn.consensus_rounds(net.transcript)
    assert len(rounds) == run.iterations
    assert rounds[0] == {i: i for i in range(10)}
