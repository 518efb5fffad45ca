import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from retime.errors import NonFinite
from retime.surrogate import (
    DTYPE, LHS_DIMS, Mlp, MlpSpec, ScalingSet, Surrogate, TrainConfig, TrainingSet,
    _count_widths, load_checkpoint, predict, sample_configs, save_checkpoint,
    segment_loss, solve_widths, train,
)
from conftest import reparam


def identity_scaling(d, n_param=1):
    """Network coordinates equal raw ones: y~ = y, f = o, log alpha = o."""
    return ScalingSet(np.full(d, -1.0), np.full(d, 2.0), np.full(n_param, -1.0), np.full(n_param, 2.0),
                      np.full(d, -1.0), np.full(d, 2.0), -1.0, 2.0, 5.0)


def constant_net(net, bias):
    with torch.no_grad():
        for lin in net.layers:
            lin.weight.zero_()
            lin.bias.zero_()
        net.layers[-1].bias.copy_(torch.as_tensor(bias, dtype=DTYPE))


def tiny_model(seed=0, d=2, hidden=(4,)):
    return Surrogate(MlpSpec(d, 1, hidden), identity_scaling(d), seed=seed)


def test_log_c_dilation_gives_linear_clock():
    model = tiny_model()
    c = 2.5
    constant_net(model.dilation_net, [math.log(c)])
    dtau = 0.01
    y0 = torch.tensor([[0.3, -0.2]], dtype=DTYPE)
    _, t = model.unroll(y0, torch.zeros(1, dtype=DTYPE), torch.zeros(1, 1, dtype=DTYPE), 200, dtau)
    tau = dtau * np.arange(201)
    np.testing.assert_allclose(t[0].detach().numpy(), c * tau, rtol=1e-13, atol=1e-14)


def test_zero_state_output_freezes_state():
    model = tiny_model(seed=3)
    constant_net(model.state_net, [0.0, 0.0])
    y0 = torch.tensor([[0.3, -0.2]], dtype=DTYPE)
    y, _ = model.unroll(y0, torch.zeros(1, dtype=DTYPE), torch.zeros(1, 1, dtype=DTYPE), 50, 0.1)
    assert torch.equal(y[0], y0.expand(51, 2))


def test_tiny_mlp_forward_matches_hand_evaluation():
    net = Mlp([2, 4, 2], torch.Generator().manual_seed(0))
    with torch.no_grad():
        for lin in net.layers:
            lin.weight.fill_(0.1)
    x = np.array([0.7, -0.3])
    h = np.tanh(0.1 * x.sum()) * np.ones(4)
    expected = np.full(2, 0.1 * h.sum())
    out = net(torch.as_tensor(x)).detach().numpy()
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-16)


def test_single_euler_step_by_hand():
    # d = 2, no parameter: the state net is 3-4-2 with every weight 0.1
    model = Surrogate(MlpSpec(2, 0, (4,)), identity_scaling(2, n_param=0))
    for net in (model.state_net, model.dilation_net):
        with torch.no_grad():
            for lin in net.layers:
                lin.weight.fill_(0.1)
    y0 = np.array([0.4, -0.1])
    dtau = 0.05
    x = np.array([*y0, -1.0])  # tau = 0 enters as -1
    h = np.tanh(0.1 * x.sum())
    o = 0.1 * 4 * h
    y1_hand = y0 + dtau * o
    t1_hand = dtau * math.exp(o)
    y, t = model.unroll(torch.as_tensor(y0)[None], torch.zeros(1, dtype=DTYPE),
                        torch.zeros(1, 0, dtype=DTYPE), 1, dtau)
    np.testing.assert_allclose(y[0, 1].detach().numpy(), y1_hand, rtol=1e-15)
    assert float(t[0, 1].detach()) == pytest.approx(t1_hand, rel=1e-15)


def test_dilation_positive_on_random_inputs():
    model = tiny_model(seed=11, d=3, hidden=(16, 16))
    gen = torch.Generator().manual_seed(5)
    u = 2 * torch.rand(100_000, 5, generator=gen, dtype=DTYPE) - 1
    tau = (u[:, 3] + 1) * model.tau_f / 2
    with torch.no_grad():
        _, alpha = model.derivatives(u[:, :3], tau, u[:, 4:])
    assert torch.all(alpha > 0)


@given(st.integers(0, 10_000), st.integers(1, 60))
def test_rollout_clock_never_runs_backwards(seed, n):
    model = tiny_model(seed=seed, hidden=(6, 6))
    tau, y, t = model.rollout([0.1, -0.4], 10.0, n, 5.0 / n, T=3.0)
    assert np.all(np.diff(t) >= 0)
    assert y.shape == (n + 1, 2)


def test_rollout_reports_blow_up_step():
    model = tiny_model()
    constant_net(model.state_net, [1e308, 0.0])
    with pytest.raises(NonFinite) as err:
        model.rollout([0.0, 0.0], 1.0, 10, 5.0, T=1.0)
    assert err.value.step == 1


def test_rollout_gradient_matches_central_differences():
    model = tiny_model(seed=2, hidden=(3,))
    sc = model.scaling
    gen = torch.Generator().manual_seed(1)
    n = 6
    yt = torch.rand(1, n, 2, generator=gen, dtype=DTYPE)
    tt = torch.cumsum(torch.rand(1, n, generator=gen, dtype=DTYPE), dim=1)
    data = TrainingSet(yt, tt, torch.zeros(1, 1, dtype=DTYPE), 0.2, sc, np.array([1.0]), np.array([1.0]))
    cases, starts = [0, 0], [0, 2]

    def loss():
        return segment_loss(model, data, cases, starts, 3)

    model.zero_grad()
    loss().backward()
    eps = 1e-6
    for p in model.parameters():
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            old = float(flat[i])
            with torch.no_grad():
                flat[i] = old + eps
                up = float(loss())
                flat[i] = old - eps
                dn = float(loss())
                flat[i] = old
            fd = (up - dn) / (2 * eps)
            g = float(p.grad.view(-1)[i])
            assert abs(g - fd) <= 1e-4 * max(abs(fd), 1e-8), (g, fd)


@given(arrays(np.float64, (7, 3), elements=st.floats(-1e3, 1e3)))
def test_scaling_round_trip(y):
    states = [np.array([[-5.0, 0.0, 1.0], [7.0, 2.0, 1.5], [1.0, 1.0, 1.2]])]
    sc = ScalingSet.fit(states, np.array([[1.0]]), [np.array([0.0, 1.0, 3.0])], [3.0], 2.5)
    back = sc.descale_state(sc.scale_state(y))
    np.testing.assert_allclose(back, y, rtol=1e-12, atol=1e-12 * 1e3)
    t = np.abs(y[:, 0])
    np.testing.assert_allclose(sc.descale_time(sc.scale_time(t, 3.0), 3.0), t, rtol=1e-12, atol=1e-12)
    assert sc.descale_param(sc.scale_param(0.37))[0] == pytest.approx(0.37, abs=1e-12)


def test_scaling_maps_training_extrema_to_unit_interval():
    res = reparam("sls", 1.05, "totr")
    data = TrainingSet.from_results([res])
    yt = data.yt.numpy()
    np.testing.assert_allclose(yt.min(axis=(0, 1)), -1.0, atol=1e-15)
    np.testing.assert_allclose(yt.max(axis=(0, 1)), 1.0, atol=1e-15)
    assert float(data.tt[0, 0]) == 0.0
    assert float(data.tt[0, -1]) == pytest.approx(5.0, rel=1e-14)


def test_zero_epochs_leave_networks_untouched():
    res = reparam("sls", 1.05, "totr")
    data = TrainingSet.from_results([res])
    spec = MlpSpec(5, 1, (8, 8))
    before = Surrogate(spec, data.scaling, seed=4).state_payload()
    out = train(data, TrainConfig(epochs=0, pretrain_iters=50, seed=4), spec)
    assert len(out.history) == 1
    assert out.pretrain_history == []
    assert out.model.state_payload() == before


def test_pretraining_descends_on_sls_totr():
    res = reparam("sls", 1.05, "totr")
    data = TrainingSet.from_results([res])
    out = train(data, TrainConfig(epochs=1, pretrain_iters=200, budget=20, seed=0), MlpSpec(5, 1, (16, 16)))
    assert out.pretrain_history[-1] < out.pretrain_history[0]
    assert len(out.history) == 2
    assert all(np.isfinite(out.history))


def test_training_is_deterministic():
    res = reparam("sls", 1.05, "totr")
    data = TrainingSet.from_results([res])
    cfg = TrainConfig(epochs=3, pretrain_iters=20, budget=30, seed=9)
    a = train(data, cfg, MlpSpec(5, 1, (6,)))
    b = train(data, cfg, MlpSpec(5, 1, (6,)))
    assert a.history == b.history
    assert a.model.state_payload() == b.model.state_payload()


def test_horizon_and_lr_schedules():
    cfg = TrainConfig(lr=1e-2, epochs=11, initial_horizon=3, horizon_interval=4)
    assert [cfg.horizon_at(e, 100) for e in (1, 4, 5, 9, 11)] == [3, 3, 4, 5, 5]
    assert cfg.horizon_at(11, 4) == 4
    assert cfg.lr_at(1) == 1e-2
    assert cfg.lr_at(11) == pytest.approx(1e-8, rel=1e-12)
    assert cfg.lr_at(6) == pytest.approx(math.sqrt(1e-2 * 1e-8), rel=1e-12)


@pytest.mark.parametrize("kw", [dict(lr=0.0), dict(epochs=-1), dict(initial_horizon=0), dict(budget=0)])
def test_train_config_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


@pytest.mark.parametrize("seed", [0, 1, 42])
def test_lhs_one_sample_per_quartile(seed):
    samples = sample_configs(4, seed=seed)
    units = np.array([s.unit for s in samples])
    assert units.shape == (4, len(LHS_DIMS))
    for col in units.T:
        assert sorted(np.floor(col * 4).astype(int)) == [0, 1, 2, 3]


def test_lhs_ranges_and_determinism():
    a = sample_configs(8, seed=3)
    assert a == sample_configs(8, seed=3)
    assert a != sample_configs(8, seed=4)
    for s in a:
        assert 1 <= len(s.mlp.hidden) <= 10
        assert 100 <= s.target_params <= 2500
        assert 5e-5 <= s.train.lr <= 5e-1
        assert 2 <= s.train.initial_horizon <= 50
        assert 1 <= s.train.horizon_interval <= 10


@pytest.mark.parametrize("n_state", [2, 3, 5, 8])
def test_depth_three_width_hits_budget(n_state):
    for budget in np.linspace(100, 2500, 241):
        widths = solve_widths(budget, 3, n_state + 2, n_state)
        assert len(widths) == 3
        assert abs(_count_widths(widths, n_state + 2, n_state) / budget - 1) <= 0.10
        assert MlpSpec(n_state, 1, widths).n_params() == _count_widths(widths, n_state + 2, n_state)


def test_checkpoint_round_trip(tmp_path):
    res = reparam("sls", 1.05, "totr")
    data = TrainingSet.from_results([res])
    model = Surrogate(MlpSpec(5, 1, (7, 5)), data.scaling, seed=8)
    save_checkpoint(tmp_path / "model.json", model, TrainConfig())
    back = load_checkpoint(tmp_path / "model.json")
    assert back.state_payload() == model.state_payload()
    a, b = predict(model, res), predict(back, res)
    assert np.array_equal(a.y_of_tau, b.y_of_tau) and np.array_equal(a.t_of_tau, b.t_of_tau)
