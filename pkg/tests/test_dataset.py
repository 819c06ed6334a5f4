import numpy as np
import pytest

from red_offline.dataset import (DatasetError, DatasetMeta, OfflineDataset,
                                 compute_trajectory_returns, dataset_equal,
                                 load_dataset, normalized_return,
                                 return_histogram, save_dataset)
from conftest import make_dataset


def brute_force_returns(ds):
    # independent second pass: explicit python loop over episode boundaries
    out = []
    for start, end in ds.traj_bounds:
        total = 0.0
        for i in range(start, end):
            total += float(ds.rewards[i])
        out.append(total)
    return out


def test_single_trajectory_sum():
    ds = make_dataset([[1.0, 2.0, 3.0]])
    tr = compute_trajectory_returns(ds)
    assert tr.returns.tolist() == [6.0]
    assert tr.per_transition_return.tolist() == [6.0, 6.0, 6.0]
    assert tr.r_min == tr.r_max == 6.0


def test_single_transition_trajectory():
    ds = make_dataset([[-2.5]])
    tr = compute_trajectory_returns(ds)
    assert tr.returns.tolist() == [-2.5]


def test_returns_match_bruteforce_oracle(preset_dataset):
    for name in ("replay_analog", "sparse_analog"):
        ds = preset_dataset(name)
        tr = compute_trajectory_returns(ds)
        expected = brute_force_returns(ds)
        assert np.allclose(tr.returns, expected, rtol=0, atol=1e-9)
        # broadcast consistency
        for j, (s, e) in enumerate(ds.traj_bounds[:50]):
            assert np.all(tr.per_transition_return[s:e] == tr.returns[j])


def test_empty_dataset_rejected():
    meta = DatasetMeta(obs_dim=1, action={"discrete": 2}, env_name="x", seed=0)
    ds = OfflineDataset(obs=np.zeros((0, 1)), actions=np.zeros(0, dtype=int),
                        rewards=np.zeros(0), next_obs=np.zeros((0, 1)),
                        terminals=np.zeros(0, bool), timeouts=np.zeros(0, bool),
                        traj_bounds=[], meta=meta)
    with pytest.raises(DatasetError, match="empty dataset"):
        compute_trajectory_returns(ds)


def test_normalized_return_endpoints_and_midpoint():
    ds = make_dataset([[0.0], [5.0], [10.0]])
    tr = compute_trajectory_returns(ds)
    assert normalized_return(tr, 0.0).tolist() == [0.0, 0.5, 1.0]


def test_normalized_return_binary_with_floor():
    ds = make_dataset([[0.0], [1.0], [0.0], [1.0]])
    tr = compute_trajectory_returns(ds)
    weights = normalized_return(tr, 0.2)
    assert set(np.round(weights, 12).tolist()) == {0.2, 1.2}


def test_normalized_return_degenerate_uniform():
    ds = make_dataset([[7.0], [3.5, 3.5], [7.0]])
    tr = compute_trajectory_returns(ds)
    for p_base in (0.0, 0.3, 2.0):
        assert normalized_return(tr, p_base).tolist() == [1.0 + p_base] * 4


def test_normalized_return_rejects_negative_floor(tiny_dataset):
    tr = compute_trajectory_returns(tiny_dataset)
    with pytest.raises(ValueError):
        normalized_return(tr, -0.1)


def test_affine_invariance_of_weights():
    rng = np.random.default_rng(3)
    base = [list(rng.normal(size=rng.integers(1, 6))) for _ in range(12)]
    ds = make_dataset(base)
    tr = compute_trajectory_returns(ds)
    ref = normalized_return(tr, 0.1)
    for a, b in ((2.0, 0.0), (0.5, 10.0), (3.7, -4.2)):
        shifted = make_dataset([[a * r + b / len(t) for r in t] for t in base])
        # scaling rewards by a and adding b to the trajectory total
        tr2 = compute_trajectory_returns(shifted)
        assert np.allclose(normalized_return(tr2, 0.1), ref, atol=1e-9)


def test_weight_monotonicity_and_range():
    rng = np.random.default_rng(4)
    ds = make_dataset([list(rng.normal(size=3)) for _ in range(20)])
    tr = compute_trajectory_returns(ds)
    w = normalized_return(tr, 0.25)
    assert np.all(w >= 0.25) and np.all(w <= 1.25)
    order = np.argsort(tr.per_transition_return)
    assert np.all(np.diff(w[order]) >= -1e-15)
    ri = tr.per_transition_return
    for i in range(0, len(ds), 7):
        for j in range(0, len(ds), 11):
            if ri[i] > ri[j]:
                assert w[i] > w[j]
            elif ri[i] == ri[j]:
                assert w[i] == w[j]


def test_histogram_basic_counts():
    ds = make_dataset([[0.0], [0.0], [0.0], [1.0]])
    tr = compute_trajectory_returns(ds)
    hist = return_histogram(tr, 2)
    assert hist["counts"].tolist() == [3, 1]


def test_histogram_degenerate_single_bin():
    ds = make_dataset([[4.0]] * 6)
    tr = compute_trajectory_returns(ds)
    hist = return_histogram(tr, 5)
    assert len(hist["counts"]) == 1
    assert hist["counts"].tolist() == [6]


def test_histogram_conserves_trajectories(preset_dataset):
    for name in ("replay_analog", "expert_analog", "sparse_hard_analog"):
        tr = compute_trajectory_returns(preset_dataset(name))
        for bins in (1, 7, 30):
            assert return_histogram(tr, bins)["counts"].sum() == len(tr.returns)


def test_histogram_long_tailed_shape(preset_dataset):
    # the failure-heavy sparse preset: mode in the lowest quarter of the
    # value range, with mass remaining in the top tenth
    tr = compute_trajectory_returns(preset_dataset("sparse_hard_analog"))
    counts = return_histogram(tr, 20)["counts"]
    assert np.argmax(counts) < 5
    assert counts[18:].sum() > 0
    assert np.median(tr.returns) < tr.returns.mean()


def test_histogram_rejects_bad_bins(tiny_dataset):
    tr = compute_trajectory_returns(tiny_dataset)
    with pytest.raises(ValueError):
        return_histogram(tr, 0)


def test_round_trip_minimal(tmp_path, tiny_dataset):
    path = tmp_path / "tiny.ords"
    save_dataset(tiny_dataset, path)
    loaded = load_dataset(path)
    assert dataset_equal(tiny_dataset, loaded)


def test_round_trip_generated_field_by_field(tmp_path, preset_dataset):
    ds = preset_dataset("sparse_analog")
    path = tmp_path / "gen.ords"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.meta == ds.meta
    assert loaded.traj_bounds == ds.traj_bounds
    for field in ("obs", "actions", "rewards", "next_obs", "terminals", "timeouts"):
        assert np.array_equal(getattr(loaded, field), getattr(ds, field)), field
    # bit-exact file round trip
    path2 = tmp_path / "gen2.ords"
    save_dataset(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_truncated_file_is_rejected(tmp_path, tiny_dataset):
    path = tmp_path / "trunc.ords"
    save_dataset(tiny_dataset, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 9])
    with pytest.raises(DatasetError):
        load_dataset(path)


def test_bad_magic_rejected(tmp_path, tiny_dataset):
    path = tmp_path / "bad.ords"
    save_dataset(tiny_dataset, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetError, match="magic"):
        load_dataset(path)


def test_invariant_violations_rejected():
    meta = DatasetMeta(obs_dim=1, action={"discrete": 2}, env_name="x", seed=0)
    base = dict(obs=np.zeros((2, 1)), actions=np.zeros(2, dtype=int),
                rewards=np.zeros(2), next_obs=np.zeros((2, 1)), meta=meta)
    # terminal and timeout both set
    with pytest.raises(DatasetError, match="both"):
        OfflineDataset(terminals=np.array([False, True]),
                       timeouts=np.array([False, True]),
                       traj_bounds=[(0, 2)], **base)
    # missing end flag
    with pytest.raises(DatasetError, match="no end flag"):
        OfflineDataset(terminals=np.array([False, False]),
                       timeouts=np.array([False, False]),
                       traj_bounds=[(0, 2)], **base)
    # interior end flag
    with pytest.raises(DatasetError, match="interior"):
        OfflineDataset(terminals=np.array([True, True]),
                       timeouts=np.array([False, False]),
                       traj_bounds=[(0, 2)], **base)
    # bounds not partitioning
    with pytest.raises(DatasetError, match="bounds"):
        OfflineDataset(terminals=np.array([True, True]),
                       timeouts=np.array([False, False]),
                       traj_bounds=[(0, 1)], **base)
