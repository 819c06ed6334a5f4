import numpy as np
import pytest

from red_offline.dataset import DatasetMeta, OfflineDataset
from red_offline.envsuite import PRESETS, generate_dataset

_PRESET_CACHE = {}


@pytest.fixture(scope="session")
def preset_dataset():
    """Factory returning cached generated datasets for the named presets."""
    def get(name):
        if name not in _PRESET_CACHE:
            _PRESET_CACHE[name] = generate_dataset(PRESETS[name])
        return _PRESET_CACHE[name]
    return get


def make_dataset(rewards_per_traj, obs_dim=1, n_actions=2, seed=0, returns_as_rewards=False):
    """Tiny synthetic dataset: one reward list per trajectory.

    Observations and actions are arbitrary but deterministic; the final
    transition of each trajectory is flagged as a timeout unless
    returns_as_rewards marks it terminal.
    """
    rng = np.random.default_rng(seed)
    obs, actions, rewards, next_obs, terminals, timeouts, bounds = [], [], [], [], [], [], []
    cursor = 0
    for traj in rewards_per_traj:
        m = len(traj)
        obs.append(rng.random((m, obs_dim)))
        next_obs.append(rng.random((m, obs_dim)))
        actions.append(rng.integers(0, n_actions, m))
        rewards.append(np.asarray(traj, dtype=float))
        t = np.zeros(m, dtype=bool)
        to = np.zeros(m, dtype=bool)
        if returns_as_rewards:
            t[-1] = True
        else:
            to[-1] = True
        terminals.append(t)
        timeouts.append(to)
        bounds.append((cursor, cursor + m))
        cursor += m
    meta = DatasetMeta(obs_dim=obs_dim, action={"discrete": n_actions},
                       env_name="synthetic", seed=seed)
    return OfflineDataset(
        obs=np.concatenate(obs), actions=np.concatenate(actions),
        rewards=np.concatenate(rewards), next_obs=np.concatenate(next_obs),
        terminals=np.concatenate(terminals), timeouts=np.concatenate(timeouts),
        traj_bounds=bounds, meta=meta)


@pytest.fixture
def tiny_dataset():
    return make_dataset([[1.0, 2.0, 3.0], [0.5], [-1.0, 1.0]])
