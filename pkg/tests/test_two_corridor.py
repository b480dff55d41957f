"""Bottleneck discovery on the plus-shaped two-corridor layout.

The behaviour data is episodic point-to-point travel between the four arm
tips.  Within an episode the tracker never reverses, so the crossing cell is
the only state where identically approached trajectories diverge; episode
starts are forced switches that the predictability term already excludes.
Training must therefore concentrate switch probability at the crossing, and
raising the term's weight must lower the overall switch rate.

These are end-to-end optimizer runs, minutes each, by far the slowest tests
in the suite.
"""
import numpy as np
import pytest

from mo2lab.config import RunConfig
from mo2lab.envs import (generate_point_to_point_dataset, junction_cells,
                         load_layout)
from mo2lab.evaluate import junction_concentration, switch_mass_by_cell
from mo2lab.offline import train_offline

LAYOUT = load_layout("two_corridor_synthetic")
JUNCTION = junction_cells(LAYOUT)[0]
WINDOW = 40
# -ln(2*pi*var) at the 0.02 variance floor; the margin sits exactly on the
# ceiling so a switch into a perfectly predicted terminal costs nothing
VAR_FLOOR = 0.02
CEILING = -np.log(2 * np.pi * VAR_FLOOR)


def corridor_config(alpha, seed, steps, ramp):
    cfg = RunConfig()
    cfg.seed = seed
    cfg.mo2.alpha = alpha
    cfg.mo2.margin = CEILING
    cfg.mo2.n_options = 4
    cfg.mo2.sequence_length = WINDOW
    cfg.mo2.batch_size = 8
    cfg.mo2.learning_rate = 3e-4
    cfg.model.sigma = VAR_FLOOR
    cfg.model.learning_rate = 3e-3
    cfg.model.samples_per_window = 8
    cfg.policy.hidden = (32, 32)
    cfg.model.hidden = (32, 32)
    cfg.offline.steps = steps
    cfg.offline.model_warmup = 1000
    cfg.offline.pred_ramp = ramp
    cfg.offline.log_every = max(1, steps // 4)
    return cfg


def train_corridor(alpha, seed, steps, ramp):
    episodes = generate_point_to_point_dataset(LAYOUT, seed=seed, n_episodes=400)
    arts = train_offline(episodes, corridor_config(alpha, seed, steps, ramp))
    return episodes, arts.policy


def test_switch_probability_concentrates_at_the_crossing():
    episodes, policy = train_corridor(alpha=1.0, seed=0, steps=8000, ramp=2000)
    mass = switch_mass_by_cell(episodes, policy, window=WINDOW)
    conc = junction_concentration(mass, LAYOUT)

    assert conc["junction_mean"] >= 5.0 * conc["other_mean"]
    assert conc["argmax_cell"] == JUNCTION


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_switch_rate_decreases_with_predictability_weight(seed):
    rates = []
    for alpha in (0.0, 0.5, 1.0):
        episodes, policy = train_corridor(alpha, seed, steps=2500, ramp=1000)
        mass = switch_mass_by_cell(episodes, policy, window=WINDOW)
        total = sum(m * n for m, n in mass.values())
        steps = sum(n for _, n in mass.values())
        rates.append(total / steps)
    assert rates[0] > rates[1] > rates[2]
