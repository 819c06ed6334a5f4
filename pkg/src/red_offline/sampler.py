"""Static weighted sampling over offline datasets.

Per-transition weights (return-based, reward-based, or a top-fraction filter)
are turned into a categorical distribution ``P(i) = w_i^alpha / sum_k w_k^alpha``
once, before training; batches are then drawn i.i.d. with replacement. The
alias method gives O(N) build and O(1) draws, which is all a static
distribution needs.
"""

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import OfflineDataset, TrajectoryReturns, normalized_return

MODES = ("uniform", "return_resample", "reward_resample", "top_fraction")


@dataclass(frozen=True)
class SamplerSpec:
    """How to rebalance: mode, exponent, additive floor, and RNG seed.

    ``alpha`` sets the rebalance strength (0 = uniform, large = concentrate
    on the best trajectories). ``p_base`` keeps low-return transitions
    reachable; 0.2 is the working value for 0/1-return tasks. ``fraction``
    only applies to top_fraction mode.
    """

    mode: str = "return_resample"
    alpha: float = 1.0
    p_base: float = 0.0
    fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown sampler mode {self.mode!r}, expected one of {MODES}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.p_base < 0:
            raise ValueError(f"p_base must be >= 0, got {self.p_base}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")


def sampling_distribution(p: np.ndarray, alpha: float) -> np.ndarray:
    """Normalize weights to probabilities: P(i) = p_i^alpha / sum_k p_k^alpha.

    Convention 0^0 = 1, so alpha = 0 is exactly uniform even with zero
    weights. If alpha > 0 zeroes out all mass, falls back to uniform with a
    warning rather than dividing by zero.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("weights must be a non-empty 1-D array")
    if not np.all(np.isfinite(p)):
        raise ValueError("weights contain non-finite entries")
    if np.any(p < 0):
        raise ValueError("weights contain negative entries")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0.0:
        return np.full(p.size, 1.0 / p.size)
    powered = p ** alpha
    total = powered.sum()
    if total == 0.0:
        warnings.warn("all weights are zero under alpha > 0; falling back to uniform",
                      RuntimeWarning, stacklevel=2)
        return np.full(p.size, 1.0 / p.size)
    return powered / total


def reward_weights(ds: OfflineDataset, p_base: float) -> np.ndarray:
    """Min-max normalization over per-transition rewards instead of returns."""
    if p_base < 0:
        raise ValueError(f"p_base must be >= 0, got {p_base}")
    r = ds.rewards
    lo, hi = float(r.min()), float(r.max())
    if hi == lo:
        return np.full(len(r), 1.0 + p_base)
    return (r - lo) / (hi - lo) + p_base


def top_fraction_filter(ds: OfflineDataset, tr: TrajectoryReturns, fraction: float) -> np.ndarray:
    """Indices of the ceil(fraction * N) transitions with highest trajectory return.

    Ties at the cutoff break by (trajectory index, transition index), i.e. in
    storage order. Result is sorted ascending.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(ds)
    k = int(np.ceil(fraction * n))
    # stable sort on -return keeps storage order among ties, which is exactly
    # the (trajectory, transition) lexicographic rule
    order = np.argsort(-tr.per_transition_return, kind="stable")
    return np.sort(order[:k])


_ALIAS_CACHE: dict = {}  # probs digest -> (accept, alias); tables are immutable
_ALIAS_CACHE_MAX = 16


class WeightedSampler:
    """Alias-table categorical sampler over a fixed probability vector.

    The distribution is immutable and shareable; the RNG stream is owned by
    this instance, so concurrent runs each build their own sampler. Alias
    tables are cached by probability-vector digest, since comparison arms
    rebuild the same static distribution once per seed.
    """

    def __init__(self, probs: np.ndarray, seed: int, fell_back_uniform: bool = False):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty 1-D array")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probs must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs sum to {probs.sum()!r}, expected 1 within 1e-12")
        self.probs = probs.copy()
        self.probs.setflags(write=False)
        self.seed = int(seed)
        self.fell_back_uniform = fell_back_uniform
        self._rng = np.random.default_rng(self.seed)
        key = hashlib.blake2b(self.probs.tobytes(), digest_size=16).digest()
        cached = _ALIAS_CACHE.get(key)
        if cached is None:
            cached = self._build_alias(self.probs)
            if len(_ALIAS_CACHE) >= _ALIAS_CACHE_MAX:
                _ALIAS_CACHE.pop(next(iter(_ALIAS_CACHE)))
            _ALIAS_CACHE[key] = cached
        self._accept, self._alias = cached

    @staticmethod
    def _build_alias(probs: np.ndarray):
        n = probs.size
        scaled_arr = probs * float(n)
        # python floats in the pairing loop; numpy scalars are ~10x slower
        scaled = scaled_arr.tolist()
        accept = [1.0] * n
        alias = list(range(n))
        # zero-mass columns must pair while donors remain, so they go last in
        # the list (pop() serves them first); they end with accept 0 and an
        # alias carrying positive mass, so they can never return themselves
        small = np.flatnonzero((scaled_arr > 0.0) & (scaled_arr < 1.0)).tolist()
        small += np.flatnonzero(scaled_arr == 0.0).tolist()
        large = np.flatnonzero(scaled_arr >= 1.0).tolist()
        while small and large:
            s = small.pop()
            g = large.pop()
            accept[s] = scaled[s]
            alias[s] = g
            rest = scaled[g] - (1.0 - scaled[s])
            scaled[g] = rest
            (small if rest < 1.0 else large).append(g)
        # leftovers on either side are exactly 1 up to rounding; a zero-mass
        # leftover cannot occur in exact arithmetic, but guard anyway
        fallback = int(np.argmax(probs)) if small else 0
        for s in small:
            if probs[s] > 0.0:
                accept[s] = 1.0
            else:
                accept[s] = 0.0
                alias[s] = fallback
        return np.asarray(accept), np.asarray(alias)

    def __len__(self) -> int:
        return self.probs.size

    def sample_batch(self, batch_size: int) -> np.ndarray:
        """Draw batch_size indices i.i.d. with replacement."""
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        cols = self._rng.integers(0, len(self), size=batch_size)
        u = self._rng.random(batch_size)
        return np.where(u < self._accept[cols], cols, self._alias[cols])


def build_sampler(spec: SamplerSpec, ds: OfflineDataset, tr: TrajectoryReturns) -> WeightedSampler:
    """Build the static distribution for a dataset once, before training."""
    n = len(ds)
    if len(tr.per_transition_return) != n:
        raise ValueError("trajectory returns are inconsistent with the dataset")
    fell_back = False
    if spec.mode == "uniform":
        probs = np.full(n, 1.0 / n)
    elif spec.mode == "return_resample":
        weights = normalized_return(tr, spec.p_base)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            probs = sampling_distribution(weights, spec.alpha)
        fell_back = any(issubclass(w.category, RuntimeWarning) for w in caught)
        if fell_back:
            warnings.warn("return weights were all zero; sampler is uniform",
                          RuntimeWarning, stacklevel=2)
    elif spec.mode == "reward_resample":
        weights = reward_weights(ds, spec.p_base)
        probs = sampling_distribution(weights, spec.alpha)
    elif spec.mode == "top_fraction":
        keep = top_fraction_filter(ds, tr, spec.fraction)
        probs = np.zeros(n)
        probs[keep] = 1.0 / keep.size
    else:  # pragma: no cover - SamplerSpec already rejects unknown modes
        raise ValueError(f"unknown sampler mode {spec.mode!r}")
    return WeightedSampler(probs, seed=spec.seed, fell_back_uniform=fell_back)


def distribution_csv(sampler: WeightedSampler, weights: np.ndarray | None = None) -> str:
    """CSV export of the distribution: index, weight, probability."""
    lines = ["index,weight,probability"]
    w = weights if weights is not None else sampler.probs
    for i in range(len(sampler)):
        lines.append(f"{i},{w[i]!r},{sampler.probs[i]!r}")
    return "\n".join(lines) + "\n"
