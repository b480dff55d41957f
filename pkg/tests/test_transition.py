import numpy as np
import pytest

from mo2lab import autodiff as ad
from mo2lab import transition as tr


def _model(sigma=1e-3, sigma_is_std=False, seed=0):
    cfg = tr.TransitionModelConfig(
        state_dim=2, action_dim=2, n_options=3, n_components=4,
        hidden=(16,), sigma=sigma, sigma_is_std=sigma_is_std, seed=seed,
    )
    return tr.TransitionModel(cfg)


def test_density_integrates_to_one_on_grid():
    model = _model()
    state = np.array([[0.3, -0.2]])
    action = np.array([[0.1, 0.4]])
    xs = np.linspace(-6, 6, 481)
    cell = (xs[1] - xs[0]) ** 2
    gx, gy = np.meshgrid(xs, xs)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    n = len(pts)
    ll = model.log_density(
        np.repeat(state, n, axis=0), np.zeros(n, dtype=int),
        np.repeat(action, n, axis=0), pts, graph=False,
    )
    total = np.exp(ll).sum() * cell
    assert total == pytest.approx(1.0, abs=0.02)


def test_log_density_never_exceeds_ceiling():
    for sigma_is_std in (False, True):
        model = _model(sigma_is_std=sigma_is_std, seed=3)
        ceiling = model.log_density_ceiling()
        rng = np.random.default_rng(0)
        n = 200
        states = rng.standard_normal((n, 2))
        actions = rng.standard_normal((n, 2))
        options = rng.integers(0, 3, n)
        # evaluating at the mixture means probes the peaks
        _, mean, _ = model.heads(states, options, actions, graph=False)
        for k in range(4):
            ll = model.log_density(states, options, actions, mean[:, k], graph=False)
            assert np.all(ll <= ceiling + 1e-9)


def test_ceiling_values_for_both_floor_readings():
    var_floor = _model(sigma=1e-3, sigma_is_std=False)
    assert var_floor.log_density_ceiling() == pytest.approx(
        -np.log(2 * np.pi * 1e-3), abs=1e-12
    )
    std_floor = _model(sigma=1e-3, sigma_is_std=True)
    assert std_floor.log_density_ceiling() == pytest.approx(
        -np.log(2 * np.pi * 1e-6), abs=1e-12
    )
    assert var_floor.log_density_ceiling() < 13.0
    assert std_floor.log_density_ceiling() < 13.0


def test_graph_and_numpy_density_agree():
    model = _model(seed=1)
    rng = np.random.default_rng(2)
    states = rng.standard_normal((6, 2))
    actions = rng.standard_normal((6, 2))
    options = rng.integers(0, 3, 6)
    terms = rng.standard_normal((6, 2))
    g = model.log_density(states, options, actions, terms, graph=True)
    n = model.log_density(states, options, actions, terms, graph=False)
    np.testing.assert_allclose(g.value, n, atol=1e-12)


def test_model_loss_gradients_match_finite_differences():
    model = _model(seed=2)
    rng = np.random.default_rng(4)
    states = rng.standard_normal((5, 2))
    actions = rng.standard_normal((5, 2))
    options = rng.integers(0, 3, 5)
    terms = states + 0.3 * rng.standard_normal((5, 2))

    loss = tr.model_loss(model, states, options, actions, terms)
    loss.backward()
    params = model.params()
    analytic = [p.grad.copy() for p in params]
    ad.zero_grads(params)

    fd = ad.finite_difference_gradients(
        lambda: float(tr.model_loss(model, states, options, actions, terms).value),
        params,
    )
    for g_a, g_fd in zip(analytic, fd):
        denom = np.maximum(np.abs(g_a), np.maximum(np.abs(g_fd), 1e-7))
        assert np.max(np.abs(g_a - g_fd) / denom) < 1e-4


def test_means_start_near_query_state():
    model = _model(seed=5)
    states = np.array([[3.0, -4.0], [0.5, 2.0]])
    actions = np.zeros((2, 2))
    _, mean, _ = model.heads(states, [0, 1], actions, graph=False)
    # fresh net has small offsets, so means should hug the query states
    assert np.max(np.abs(mean - states[:, None, :])) < 1.0


def test_sample_matches_mixture_mean():
    model = _model(seed=6)
    rng = np.random.default_rng(7)
    state = np.array([0.2, 0.8])
    action = np.array([-0.3, 0.1])
    n = 20_000
    samples = model.sample(
        np.repeat(state[None], n, axis=0), np.zeros(n, dtype=int),
        np.repeat(action[None], n, axis=0), rng,
    )
    log_w, mean, std = model.heads(state[None], [0], action[None], graph=False)
    w = np.exp(log_w[0])
    want = (w[:, None] * mean[0]).sum(axis=0)
    spread = np.sqrt((w[:, None] * (std[0] ** 2 + mean[0] ** 2)).sum(axis=0) - want ** 2)
    err = samples.mean(axis=0) - want
    assert np.all(np.abs(err) < 4 * spread / np.sqrt(n))


def test_hindsight_walk_follows_geometric_law():
    rng = np.random.default_rng(8)
    beta = np.full(40, 0.3)
    counts = np.zeros(40)
    n = 30_000
    for _ in range(n):
        counts[tr.hindsight_terminal_index(beta, 0, rng)] += 1
    freqs = counts / n
    for k in range(1, 6):
        want = 0.3 * 0.7 ** (k - 1)
        se = np.sqrt(want * (1 - want) / n)
        assert abs(freqs[k] - want) < 3.5 * se
    assert counts[0] == 0  # the walk starts after the query step


def test_hindsight_walk_falls_back_to_window_end():
    rng = np.random.default_rng(9)
    beta = np.zeros(10)
    assert tr.hindsight_terminal_index(beta, 3, rng) == 9
    beta2 = np.ones(10)
    assert tr.hindsight_terminal_index(beta2, 3, rng) == 4


def test_mle_recovers_a_corridor_end_terminal():
    # walks along a corridor always terminate at its end: the fitted
    # mixture must move its mass there, regardless of the query point
    from mo2lab import nets

    end = np.array([8.5, 0.5])
    rng = np.random.default_rng(11)
    cfg = tr.TransitionModelConfig(
        state_dim=2, action_dim=2, n_options=2, n_components=3,
        hidden=(16,), sigma=1e-2, seed=11,
    )
    model = tr.TransitionModel(cfg)
    opt = nets.adam_init(model.params())
    for _ in range(1200):
        n = 64
        xs = rng.uniform(0.5, 8.0, n)
        states = np.stack([xs, np.full(n, 0.5)], axis=1)
        actions = np.stack([np.ones(n), np.zeros(n)], axis=1)
        options = rng.integers(0, 2, n)
        terms = end + 0.05 * rng.standard_normal((n, 2))
        loss = tr.model_loss(model, states, options, actions, terms)
        loss.backward()
        nets.apply_gradients(model.params(), opt, 1e-2)

    probe = np.array([[1.0, 0.5], [4.0, 0.5], [7.5, 0.5]])
    log_w, mean, _ = model.heads(probe, [0, 1, 0],
                                 np.repeat([[1.0, 0.0]], 3, axis=0), graph=False)
    w = np.exp(log_w)
    fitted = (w[:, :, None] * mean).sum(axis=1)
    assert np.max(np.abs(fitted - end)) < 0.1


def test_checkpoint_roundtrip(tmp_path):
    from mo2lab import nets

    model = _model(seed=10)
    rng = np.random.default_rng(1)
    states = rng.standard_normal((3, 2))
    actions = rng.standard_normal((3, 2))
    terms = rng.standard_normal((3, 2))
    before = model.log_density(states, [0, 1, 2], actions, terms, graph=False)
    path = tmp_path / "model.bin"
    nets.save_checkpoint(path, model.state_arrays())
    model2 = _model(seed=99)
    arrays, _ = nets.load_checkpoint(path)
    model2.load_state_arrays(arrays)
    after = model2.log_density(states, [0, 1, 2], actions, terms, graph=False)
    np.testing.assert_array_equal(before, after)
