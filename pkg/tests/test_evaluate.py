import json

import numpy as np
import pytest

from mo2lab import evaluate as ev
from mo2lab.envs import Episode, MazeLayout, junction_cells, load_layout
from mo2lab.options import OptionPolicy, OptionPolicyConfig, forward_pass

LAYOUT = load_layout("two_corridor_synthetic")


def make_policy(seed=0, bias=None, n_options=3):
    pol = OptionPolicy(OptionPolicyConfig(
        state_dim=2, action_dim=2, n_options=n_options, hidden=(8,), seed=seed))
    if bias is not None:
        pol.term.weights[-1].value[...] = bias
    return pol


def make_episodes(rng, n=6, t=30):
    w = rng.standard_normal((2, 2)) * 0.5
    episodes = []
    for _ in range(n):
        s = np.empty((t + 1, 2))
        a = np.empty((t, 2))
        s[0] = rng.uniform(-1, 1, 2)
        for k in range(t):
            a[k] = np.clip(w @ s[k] + 0.05 * rng.standard_normal(2), -1, 1)
            s[k + 1] = np.clip(s[k] + 0.1 * a[k], -2, 2)
        episodes.append(Episode(states=s, actions=a))
    return episodes


# -- switch rate -------------------------------------------------------------

def test_switch_rate_is_one_when_beta_saturates_high():
    eps = make_episodes(np.random.default_rng(0))
    pol = make_policy(bias=1000.0)
    assert ev.average_switch_rate(eps, pol, "expectation", window=10) == 1.0
    assert ev.average_switch_rate(eps, pol, "sampled", window=10,
                                  rng=np.random.default_rng(1)) == 1.0


def test_switch_rate_is_zero_when_beta_saturates_low():
    eps = make_episodes(np.random.default_rng(2))
    pol = make_policy(bias=-1000.0)
    assert ev.average_switch_rate(eps, pol, "expectation", window=10) == 0.0
    assert ev.average_switch_rate(eps, pol, "sampled", window=10,
                                  rng=np.random.default_rng(3)) == 0.0


def test_switch_rate_modes_agree_within_three_standard_errors():
    eps = make_episodes(np.random.default_rng(4), n=20, t=50)
    pol = make_policy(seed=5)
    expectation = ev.average_switch_rate(eps, pol, "expectation", window=25)
    sampled = ev.average_switch_rate(eps, pol, "sampled", window=25,
                                     rng=np.random.default_rng(6))
    n_decisions = 20 * 2 * 24
    se = np.sqrt(max(sampled * (1 - sampled), 1e-12) / n_decisions)
    assert abs(expectation - sampled) <= 3 * se


def test_switch_rate_rejects_bad_inputs():
    pol = make_policy()
    with pytest.raises(ValueError, match="mode"):
        ev.average_switch_rate(make_episodes(np.random.default_rng(0)), pol, "exact")
    with pytest.raises(ValueError, match="empty"):
        ev.average_switch_rate([], pol)


# -- clone score -------------------------------------------------------------

def test_bc_score_matches_direct_forward_on_one_window():
    eps = make_episodes(np.random.default_rng(7), n=1, t=12)
    pol = make_policy(seed=8)
    heads = pol.head_tensors(eps[0].states[None, :12], eps[0].actions[None, :12],
                             graph=False)
    fwd = forward_pass(heads["log_pl"], heads["beta_logit"], heads["log_pic"])
    assert ev.expected_bc_score(eps, pol, window=12) == pytest.approx(
        float(np.mean(fwd.action_ll)), abs=1e-12)


def test_bc_score_covers_window_remainders():
    # 25 steps at window 10 -> chunks of 10, 10, 5; every step is scored once
    eps = make_episodes(np.random.default_rng(9), n=1, t=25)
    pol = make_policy(seed=10)
    total, count = 0.0, 0
    for t0, ln in ((0, 10), (10, 10), (20, 5)):
        heads = pol.head_tensors(eps[0].states[None, t0:t0 + ln],
                                 eps[0].actions[None, t0:t0 + ln], graph=False)
        fwd = forward_pass(heads["log_pl"], heads["beta_logit"], heads["log_pic"])
        total += float(np.sum(fwd.action_ll))
        count += ln
    assert count == 25
    assert ev.expected_bc_score(eps, pol, window=10) == pytest.approx(
        total / count, abs=1e-12)


def test_bc_score_rejects_empty_split():
    with pytest.raises(ValueError, match="empty"):
        ev.expected_bc_score([], make_policy())


# -- switch-mass maps ----------------------------------------------------------

def test_switch_mass_matches_direct_forward_on_one_window():
    eps = make_episodes(np.random.default_rng(11), n=1, t=12)
    pol = make_policy(seed=12)
    heads = pol.head_tensors(eps[0].states[None, :12], eps[0].actions[None, :12],
                             graph=False)
    fwd = forward_pass(heads["log_pl"], heads["beta_logit"], heads["log_pic"])
    by_cell: dict = {}
    for t in range(11):
        x, y = eps[0].states[t + 1]
        by_cell.setdefault((int(np.floor(y)), int(np.floor(x))), []).append(
            fwd.switch_prob[0, t])

    mass = ev.switch_mass_by_cell(eps, pol, window=12)
    assert set(mass) == set(by_cell)
    for cell, vals in by_cell.items():
        mean, count = mass[cell]
        assert count == len(vals)
        assert mean == pytest.approx(float(np.mean(vals)), abs=1e-12)


def test_switch_mass_counts_every_step_once():
    eps = make_episodes(np.random.default_rng(13), n=4, t=30)
    mass = ev.switch_mass_by_cell(eps, make_policy(seed=14), window=10)
    # three 10-step windows per episode, each scoring 9 arrival states
    assert sum(n for _, n in mass.values()) == 4 * 3 * 9
    assert all(0.0 <= m <= 1.0 for m, _ in mass.values())


def test_junction_concentration_pools_step_weighted_means():
    cross = junction_cells(LAYOUT)[0]
    mass = {cross: (0.5, 10), (1, 1): (0.1, 30), (1, 2): (0.2, 10)}
    conc = ev.junction_concentration(mass, LAYOUT)
    assert conc["junction_mean"] == pytest.approx(0.5, rel=1e-12)
    assert conc["other_mean"] == pytest.approx(0.125, rel=1e-12)
    assert conc["ratio"] == pytest.approx(4.0, rel=1e-12)
    assert conc["argmax_cell"] == cross


def test_saturated_policy_has_flat_switch_mass():
    # walk the horizontal corridor straight through the crossing cell
    row, _ = junction_cells(LAYOUT)[0]
    xs = np.linspace(1.5, 9.5, 25)
    states = np.column_stack([xs, np.full_like(xs, row + 0.5)])
    eps = [Episode(states=states, actions=np.zeros((24, 2)))]
    mass = ev.switch_mass_by_cell(eps, make_policy(bias=1000.0), window=12)
    conc = ev.junction_concentration(mass, LAYOUT)
    assert all(m == 1.0 for m, _ in mass.values())
    assert conc["ratio"] == pytest.approx(1.0)


def test_switch_mass_rejects_empty_inputs():
    with pytest.raises(ValueError, match="empty"):
        ev.switch_mass_by_cell([], make_policy())
    with pytest.raises(ValueError, match="empty"):
        ev.junction_concentration({}, LAYOUT)


# -- call-and-return rollouts ------------------------------------------------

def test_run_episode_records_every_termination():
    pol = make_policy(bias=1000.0)  # terminate at every step
    trace, transitions = ev.run_episode(LAYOUT, pol,
                                        np.random.default_rng(0), horizon=10)
    assert len(trace.options) == 10
    assert len(transitions) == 9  # no decision after the final step
    for (s, o, a, f), nxt in zip(transitions, transitions[1:]):
        assert np.array_equal(f, nxt[0])  # terminal is the next initiation
    times = [ev_["t"] for ev_ in trace.switches]
    assert times == list(range(10))


def test_run_episode_without_terminations_has_single_event():
    pol = make_policy(bias=-1000.0)
    trace, transitions = ev.run_episode(LAYOUT, pol,
                                        np.random.default_rng(1), horizon=20)
    assert transitions == []
    assert len(trace.switches) == 1 and trace.switches[0]["t"] == 0
    assert np.all(trace.options == trace.options[0])


def test_rollout_trace_validates_events():
    pos = np.zeros((3, 2))
    opts = np.zeros(2, dtype=int)
    with pytest.raises(ValueError, match="t=0"):
        ev.RolloutTrace(pos, opts, [{"t": 1, "x": 0.0, "y": 0.0, "o": 0}])
    with pytest.raises(ValueError, match="increase"):
        ev.RolloutTrace(pos, opts, [{"t": 0, "x": 0.0, "y": 0.0, "o": 0},
                                    {"t": 0, "x": 0.0, "y": 0.0, "o": 1}])
    with pytest.raises(ValueError, match="position"):
        ev.RolloutTrace(pos, np.zeros(3, dtype=int), [])


# -- cumulative prediction error ----------------------------------------------

def build_model(seed=0, n_options=3):
    from mo2lab.transition import TransitionModel, TransitionModelConfig
    return TransitionModel(TransitionModelConfig(
        state_dim=2, action_dim=2, n_options=n_options, n_components=2,
        hidden=(8,), seed=seed))


def test_ce_is_zero_without_realized_transitions():
    pol = make_policy(bias=-1000.0)
    model = build_model()
    ce = ev.cumulative_prediction_error(LAYOUT, pol, model, n_episodes=3,
                                        seed=4, horizon=15)
    assert ce == 0.0


def test_ce_mean_matches_per_episode_values_and_is_deterministic():
    pol = make_policy(seed=11, bias=0.5)
    model = build_model(seed=12)
    kw = dict(n_episodes=4, seed=5, horizon=25)
    per = ev.cumulative_prediction_error(LAYOUT, pol, model, per_episode=True, **kw)
    again = ev.cumulative_prediction_error(LAYOUT, pol, model, per_episode=True, **kw)
    scalar = ev.cumulative_prediction_error(LAYOUT, pol, model, **kw)
    assert np.array_equal(per, again)
    assert scalar == pytest.approx(per.mean(), abs=1e-12)
    assert per.shape == (4,) and np.all(per > 0)  # switching policy realizes tuples


def test_ce_rejects_zero_episodes():
    with pytest.raises(ValueError, match="zero completed"):
        ev.cumulative_prediction_error(LAYOUT, make_policy(), build_model(),
                                       n_episodes=0)


# -- trace files ---------------------------------------------------------------

def test_trace_export_roundtrip(tmp_path):
    pol = make_policy(seed=13, bias=0.0)
    path = ev.export_rollout_traces(LAYOUT, pol, 3, tmp_path / "t.jsonl",
                                    seed=6, horizon=30)
    traces = ev.read_rollout_traces(path)
    assert len(traces) == 3
    direct = [ev.run_episode(LAYOUT, pol, rng, horizon=30)[0]
              for rng in ev._episode_rngs(6, 3)]
    for a, b in zip(traces, direct):
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.options, b.options)
        assert a.switches == b.switches
        assert a.episode_return == b.episode_return


def test_trace_export_zero_episodes_writes_header_only(tmp_path):
    path = ev.export_rollout_traces(LAYOUT, make_policy(), 0, tmp_path / "e.jsonl")
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 1
    header = json.loads(lines[0])
    assert header["format"] == ev.TRACE_FORMAT and header["episodes"] == 0
    assert ev.read_rollout_traces(path) == []


# -- bottleneck alignment -------------------------------------------------------

def _trace_with_switches(events):
    pos = np.zeros((len(events) + 2, 2))
    opts = np.zeros(len(events) + 1, dtype=int)
    evs = [{"t": 0, "x": 0.5, "y": 0.5, "o": 0}] + [
        {"t": i + 1, "x": float(x), "y": float(y), "o": 0}
        for i, (x, y) in enumerate(events)]
    return ev.RolloutTrace(pos, opts, evs)


def test_alignment_extremes_and_undefined_case():
    on = _trace_with_switches([(5.5, 5.5), (5.6, 5.4)])
    off = _trace_with_switches([(1.5, 5.5), (5.5, 9.5)])
    assert ev.bottleneck_alignment([on], LAYOUT) == 1.0
    assert ev.bottleneck_alignment([off], LAYOUT, radius=1.0) == 0.0
    assert ev.bottleneck_alignment([_trace_with_switches([])], LAYOUT) is None


def test_alignment_chance_floor_matches_disk_area():
    # radius 0.5 disk around the single junction center lies inside open
    # cells, so the exact chance level is (pi/4) / 17 open cells
    exact = (np.pi / 4) / 17
    mc = ev.alignment_chance_floor(LAYOUT, radius=0.5, n_samples=100_000, seed=0)
    se = np.sqrt(exact * (1 - exact) / 100_000)
    assert abs(mc - exact) <= 4 * se
    assert ev.alignment_chance_floor(LAYOUT, radius=0.25, n_samples=2000) < \
        ev.alignment_chance_floor(LAYOUT, radius=1.5, n_samples=2000)
    assert ev.alignment_chance_floor(LAYOUT, radius=0.5, n_samples=500, seed=3) == \
        ev.alignment_chance_floor(LAYOUT, radius=0.5, n_samples=500, seed=3)


# -- metric reports --------------------------------------------------------------

def test_metric_report_population_stats_and_roundtrip(tmp_path):
    rep = ev.metric_report("switch_rate", [1.0, 2.0, 3.0, 4.0], reference=0.03)
    assert rep.mean == 2.5 and rep.std == pytest.approx(np.sqrt(1.25))
    assert rep.n_seeds == 4
    other = ev.metric_report("ce", [7.0])
    assert other.std == 0.0 and other.reference is None

    path = ev.write_metric_reports(tmp_path / "m.csv", [rep, other])
    back = ev.read_metric_reports(path)
    assert back == [rep, other]


def test_metric_report_rejects_degenerate_fields():
    with pytest.raises(ValueError, match="seed"):
        ev.MetricReport("x", 0.0, 0.0, 0)
    with pytest.raises(ValueError, match="negative"):
        ev.MetricReport("x", 0.0, -1.0, 2)
