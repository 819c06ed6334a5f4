"""Offline transition datasets with trajectory indexing and return statistics.

An :class:`OfflineDataset` is a flat, immutable store of transitions plus the
trajectory boundaries that partition it. Uniform sampling over it realizes the
data-collection policy; reweighted sampling (see :mod:`red_offline.sampler`)
realizes an alternative policy with the same support. Episode returns are
undiscounted sums; trajectories cut off by the horizon contribute their
partial sum (a known, documented bias).
"""

from dataclasses import dataclass, field

import numpy as np

from .io_envelope import EnvelopeError, read_envelope, write_envelope

ORDS_MAGIC = b"ORDS"
ORDS_VERSION = 1


class DatasetError(ValueError):
    """Dataset construction or file-format violation."""


@dataclass(frozen=True)
class Transition:
    """Single step: (obs, action, reward, next_obs, terminal, timeout).

    ``terminal`` marks true environment termination; ``timeout`` marks a
    horizon cutoff. They are never both set.
    """

    obs: np.ndarray
    action: int | np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: bool
    timeout: bool


@dataclass(frozen=True)
class DatasetMeta:
    obs_dim: int
    action: dict  # {"discrete": n} or {"box": d}
    env_name: str
    seed: int

    @property
    def discrete_actions(self) -> int | None:
        return self.action.get("discrete")

    @property
    def action_width(self) -> int:
        # columns occupied by the action in packed/array form
        return 1 if "discrete" in self.action else int(self.action["box"])


class OfflineDataset:
    """Flat transition arrays plus trajectory bounds.

    Immutable after construction; safe to share across concurrent runs.
    Arrays are float64 (observations, rewards), actions int64 for discrete
    spaces or float64 for box spaces, flags bool.
    """

    def __init__(self, obs, actions, rewards, next_obs, terminals, timeouts,
                 traj_bounds, meta: DatasetMeta):
        self.obs = np.ascontiguousarray(obs, dtype=np.float64)
        if meta.discrete_actions is not None:
            self.actions = np.ascontiguousarray(actions, dtype=np.int64)
        else:
            self.actions = np.ascontiguousarray(actions, dtype=np.float64)
        self.rewards = np.ascontiguousarray(rewards, dtype=np.float64)
        self.next_obs = np.ascontiguousarray(next_obs, dtype=np.float64)
        self.terminals = np.ascontiguousarray(terminals, dtype=bool)
        self.timeouts = np.ascontiguousarray(timeouts, dtype=bool)
        self.traj_bounds = [(int(s), int(e)) for s, e in traj_bounds]
        self.meta = meta
        self._validate()
        for a in (self.obs, self.actions, self.rewards, self.next_obs,
                  self.terminals, self.timeouts):
            a.setflags(write=False)

    def _validate(self) -> None:
        n = len(self.rewards)
        if self.obs.ndim != 2 or self.obs.shape != (n, self.meta.obs_dim):
            raise DatasetError(
                f"obs shape {self.obs.shape} does not match (N={n}, obs_dim={self.meta.obs_dim})")
        if self.next_obs.shape != self.obs.shape:
            raise DatasetError("next_obs shape differs from obs shape")
        if len(self.actions) != n or len(self.terminals) != n or len(self.timeouts) != n:
            raise DatasetError("transition arrays have inconsistent lengths")
        both = np.flatnonzero(self.terminals & self.timeouts)
        if both.size:
            raise DatasetError(f"transition {both[0]}: terminal and timeout both set")
        cursor = 0
        for j, (s, e) in enumerate(self.traj_bounds):
            if s != cursor or e <= s:
                raise DatasetError(
                    f"trajectory {j}: bounds ({s}, {e}) do not continue partition at {cursor}")
            ends = self.terminals[s:e] | self.timeouts[s:e]
            if not ends[-1]:
                raise DatasetError(f"trajectory {j}: final transition {e - 1} has no end flag")
            interior = np.flatnonzero(ends[:-1])
            if interior.size:
                raise DatasetError(
                    f"trajectory {j}: interior transition {s + interior[0]} has an end flag")
            cursor = e
        if cursor != n:
            raise DatasetError(f"trajectory bounds cover [0, {cursor}) but N={n}")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def n_trajectories(self) -> int:
        return len(self.traj_bounds)

    def transition(self, i: int) -> Transition:
        action = self.actions[i]
        return Transition(
            obs=self.obs[i],
            action=int(action) if self.meta.discrete_actions is not None else action,
            reward=float(self.rewards[i]),
            next_obs=self.next_obs[i],
            terminal=bool(self.terminals[i]),
            timeout=bool(self.timeouts[i]),
        )

    def batch(self, idx: np.ndarray) -> dict:
        """Gather a training batch by transition indices."""
        return {
            "obs": self.obs[idx],
            "action": self.actions[idx],
            "reward": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "terminal": self.terminals[idx],
            "timeout": self.timeouts[idx],
        }

    def trajectory_index(self) -> np.ndarray:
        """Trajectory id of every transition, length N."""
        out = np.empty(len(self), dtype=np.int64)
        for j, (s, e) in enumerate(self.traj_bounds):
            out[s:e] = j
        return out


@dataclass(frozen=True)
class TrajectoryReturns:
    """Per-trajectory episodic returns and their per-transition broadcast."""

    returns: np.ndarray            # (n_trajectories,)
    r_min: float
    r_max: float
    per_transition_return: np.ndarray = field(repr=False)  # (N,)


def compute_trajectory_returns(ds: OfflineDataset) -> TrajectoryReturns:
    """Undiscounted reward sum per trajectory, broadcast back to transitions."""
    if len(ds) == 0:
        raise DatasetError("empty dataset")
    bounds = np.array(ds.traj_bounds, dtype=np.int64)
    csum = np.concatenate([[0.0], np.cumsum(ds.rewards)])
    returns = csum[bounds[:, 1]] - csum[bounds[:, 0]]
    lengths = bounds[:, 1] - bounds[:, 0]
    per_transition = np.repeat(returns, lengths)
    returns.setflags(write=False)
    per_transition.setflags(write=False)
    return TrajectoryReturns(
        returns=returns,
        r_min=float(returns.min()),
        r_max=float(returns.max()),
        per_transition_return=per_transition,
    )


def normalized_return(tr: TrajectoryReturns, p_base: float) -> np.ndarray:
    """Min-max normalized trajectory return per transition, plus the additive floor.

    With all returns equal the normalization is undefined; every weight
    becomes ``1 + p_base`` so downstream sampling degenerates to uniform.
    """
    if p_base < 0:
        raise ValueError(f"p_base must be >= 0, got {p_base}")
    ptr = tr.per_transition_return
    span = tr.r_max - tr.r_min
    if span == 0.0:
        return np.full(len(ptr), 1.0 + p_base)
    return (ptr - tr.r_min) / span + p_base


def return_histogram(tr: TrajectoryReturns, bins: int) -> dict:
    """Equal-width histogram of trajectory returns over [r_min, r_max].

    Returns {"bin_edges": (bins+1,), "counts": (bins,)}; counts sum to the
    number of trajectories. All-equal returns collapse to one unit-width bin.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    if tr.r_max == tr.r_min:
        edges = np.array([tr.r_min - 0.5, tr.r_max + 0.5])
        return {"bin_edges": edges, "counts": np.array([len(tr.returns)])}
    counts, edges = np.histogram(tr.returns, bins=bins, range=(tr.r_min, tr.r_max))
    return {"bin_edges": edges, "counts": counts}


def histogram_csv(hist: dict) -> str:
    lines = ["bin_lo,bin_hi,count"]
    edges, counts = hist["bin_edges"], hist["counts"]
    for i, c in enumerate(counts):
        lines.append(f"{edges[i]!r},{edges[i + 1]!r},{int(c)}")
    return "\n".join(lines) + "\n"


def _record_dtype(meta: DatasetMeta) -> np.dtype:
    return np.dtype([
        ("obs", "<f8", (meta.obs_dim,)),
        ("action", "<f8", (meta.action_width,)),
        ("reward", "<f8"),
        ("next_obs", "<f8", (meta.obs_dim,)),
        ("terminal", "u1"),
        ("timeout", "u1"),
    ])


def save_dataset(ds: OfflineDataset, path) -> None:
    """Write a dataset as a versioned binary file with bit-exact round-trip."""
    meta = ds.meta
    rec = np.zeros(len(ds), dtype=_record_dtype(meta))
    rec["obs"] = ds.obs
    rec["action"] = ds.actions.reshape(len(ds), meta.action_width).astype(np.float64)
    rec["reward"] = ds.rewards
    rec["next_obs"] = ds.next_obs
    rec["terminal"] = ds.terminals
    rec["timeout"] = ds.timeouts
    bounds = np.array(ds.traj_bounds, dtype="<u8").reshape(-1, 2)
    header = {
        "obs_dim": meta.obs_dim,
        "action": meta.action,
        "env_name": meta.env_name,
        "seed": meta.seed,
        "n_transitions": len(ds),
        "n_trajectories": ds.n_trajectories,
    }
    write_envelope(path, ORDS_MAGIC, ORDS_VERSION, header, rec.tobytes() + bounds.tobytes())


def load_dataset(path) -> OfflineDataset:
    """Read a dataset file; raises DatasetError naming the offending record."""
    try:
        _, header, payload = read_envelope(path, ORDS_MAGIC, ORDS_VERSION)
    except EnvelopeError as exc:
        raise DatasetError(str(exc)) from exc
    try:
        meta = DatasetMeta(
            obs_dim=int(header["obs_dim"]),
            action=dict(header["action"]),
            env_name=str(header["env_name"]),
            seed=int(header["seed"]),
        )
        n = int(header["n_transitions"])
        n_traj = int(header["n_trajectories"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: header missing or malformed field: {exc}") from exc
    dtype = _record_dtype(meta)
    body = n * dtype.itemsize
    tail = n_traj * 16
    if len(payload) != body + tail:
        got_records = len(payload) // dtype.itemsize
        raise DatasetError(
            f"{path}: payload has {len(payload)} bytes, expected {body + tail}; "
            f"transitions block ends inside record {min(got_records, n)}")
    rec = np.frombuffer(payload[:body], dtype=dtype)
    bounds = np.frombuffer(payload[body:], dtype="<u8").reshape(n_traj, 2)
    actions = rec["action"]
    if meta.discrete_actions is not None:
        flat = actions.reshape(-1)
        rounded = np.rint(flat)
        bad = np.flatnonzero(np.abs(flat - rounded) > 0)
        if bad.size:
            raise DatasetError(f"{path}: record {bad[0]}: non-integer discrete action {flat[bad[0]]}")
        actions = rounded.astype(np.int64)
    try:
        return OfflineDataset(
            obs=rec["obs"].copy(),
            actions=actions.copy(),
            rewards=rec["reward"].copy(),
            next_obs=rec["next_obs"].copy(),
            terminals=rec["terminal"].astype(bool),
            timeouts=rec["timeout"].astype(bool),
            traj_bounds=bounds.astype(np.int64),
            meta=meta,
        )
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def dataset_equal(a: OfflineDataset, b: OfflineDataset) -> bool:
    """Bit-level equality: same transitions, order, bounds, and meta."""
    return (
        a.meta == b.meta
        and a.traj_bounds == b.traj_bounds
        and np.array_equal(a.obs, b.obs)
        and np.array_equal(a.actions, b.actions)
        and np.array_equal(a.rewards, b.rewards)
        and np.array_equal(a.next_obs, b.next_obs)
        and np.array_equal(a.terminals, b.terminals)
        and np.array_equal(a.timeouts, b.timeouts)
    )
