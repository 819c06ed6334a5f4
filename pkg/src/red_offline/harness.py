"""Experiment orchestration: training runs, evaluation protocol, reports.

Every run is a pure function of (config, root seed). All randomness derives
from the root seed through named streams: ``stream_seed(root, name)`` hashes
``"{root}:{name}"`` with blake2b and takes the low 64 bits. Stream names are
``"init/{seed}"``, ``"sampler/{seed}"`` and ``"dataset"``, so comparison arms
share dataset bits and net initializations by construction and differ only in
their sampler specification.

Scores follow the usual normalization 100 * (raw - random) / (expert -
random) against the environment's reference policies, and aggregates are the
mean over the final K evaluations, then over seeds.

Report JSON is byte-deterministic; wall-clock measurements live in a separate
timing structure (written as timing.json) so repeated runs produce identical
report bytes while still recording the sampler-build overhead.
"""

import dataclasses
import hashlib
import json
import os
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .algos import AlgoConfig, NanLossError, extract_policy, init_learner, train_step
from .dataset import OfflineDataset, compute_trajectory_returns, load_dataset
from .envsuite import env_from_name, generate_dataset, preset_config
from .nncore import load_checkpoint, save_checkpoint
from .sampler import SamplerSpec, build_sampler


class ConfigError(ValueError):
    """Invalid experiment configuration or override."""


def stream_seed(root: int, name: str) -> int:
    """Derive a 64-bit seed for a named stream from the root seed."""
    digest = hashlib.blake2b(f"{root}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class DatasetSource:
    """Either a generator preset (with optional overrides) or a dataset file."""

    preset: str | None = None
    path: str | None = None
    seed: int | None = None
    n_trajectories: int | None = None

    def __post_init__(self):
        if (self.preset is None) == (self.path is None):
            raise ConfigError("dataset needs exactly one of 'preset' or 'path'")

    @property
    def label(self) -> str:
        return self.preset if self.preset is not None else self.path


@dataclass(frozen=True)
class EvalConfig:
    eval_every: int = 1000
    episodes_per_eval: int = 10
    final_k: int = 10
    seeds: tuple = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if min(self.eval_every, self.episodes_per_eval, self.final_k) < 1:
            raise ConfigError("eval_every, episodes_per_eval and final_k must be >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


@dataclass(frozen=True)
class DeredConfig:
    """Two-stage schedule: uniform pretrain, then rebalanced finetune.

    Stage two multiplies the backbone learning rate (0.1 by default) and,
    unless ``freeze_head`` is disabled, leaves every head bitwise untouched.
    """

    stage1_steps: int = 10_000
    stage2_steps: int = 4_000
    backbone_lr_mult: float = 0.1
    freeze_head: bool = True

    def __post_init__(self):
        if self.stage1_steps < 1 or self.stage2_steps < 0:
            raise ConfigError("stage1_steps must be >= 1 and stage2_steps >= 0")
        if self.backbone_lr_mult < 0:
            raise ConfigError("backbone_lr_mult must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSource
    algo: AlgoConfig = AlgoConfig()
    sampler: SamplerSpec = SamplerSpec()
    eval: EvalConfig = EvalConfig()
    dered: DeredConfig | None = None
    root_seed: int = 0


# ---------------------------------------------------------------------------
# config <-> JSON

def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["eval"]["seeds"] = list(cfg.eval.seeds)
    return out


def _build_dataclass(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce_field(fields[name], value, f"{path}.{name}")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_NESTED = {
    "dataset": DatasetSource,
    "algo": AlgoConfig,
    "sampler": SamplerSpec,
    "eval": EvalConfig,
    "dered": DeredConfig,
}


def _coerce_field(fld, value, path: str):
    if value is None:
        return None
    if fld.name in _NESTED and isinstance(value, dict):
        return _build_dataclass(_NESTED[fld.name], value, path)
    if fld.type in ("int", int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if fld.type in ("float", float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if fld.type in ("bool", bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if fld.type in ("str", str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if fld.name == "seeds":
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list of integers")
        return tuple(value)
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build_dataclass(ExperimentConfig, data, "config")


def apply_overrides(data: dict, overrides) -> dict:
    """Apply dotted-path key=value overrides to a raw config dict.

    Values parse as JSON when possible (so ``eval.seeds=[0,1]`` works) and
    fall back to strings. Unknown paths are rejected during validation.
    """
    out = json.loads(json.dumps(data))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = {}
                node[part] = nxt
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {dotted!r}: {part!r} is not an object")
            node = nxt
        node[parts[-1]] = value
    return out


# ---------------------------------------------------------------------------
# dataset / environment plumbing

def prepare_dataset(source: DatasetSource):
    """Resolve a dataset source to (dataset, trajectory returns, environment)."""
    if source.path is not None:
        ds = load_dataset(source.path)
    else:
        ds = generate_dataset(preset_config(source.preset, seed=source.seed,
                                            n_trajectories=source.n_trajectories))
    tr = compute_trajectory_returns(ds)
    mdp = env_from_name(ds.meta.env_name)
    return ds, tr, mdp


def dataset_checksum(ds: OfflineDataset) -> str:
    h = hashlib.blake2b(digest_size=16)
    for arr in (ds.obs, ds.actions, ds.rewards, ds.next_obs, ds.terminals, ds.timeouts):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(json.dumps(ds.traj_bounds).encode())
    h.update(json.dumps(dataclasses.asdict(ds.meta), sort_keys=True).encode())
    return h.hexdigest()


def normalized_score(raw: float, refs: dict) -> float:
    """100 * (raw - random) / (expert - random); negative scores allowed."""
    random_ref, expert_ref = refs["random"], refs["expert"]
    if not expert_ref > random_ref:
        raise ValueError(f"degenerate reference scores: {refs}")
    return 100.0 * (raw - random_ref) / (expert_ref - random_ref)


def evaluate_policy(mdp, policy_fn, episodes: int) -> float:
    """Mean return of the greedy policy over the given number of rollouts."""
    actions = np.asarray(policy_fn(mdp.obs_table), dtype=np.int64)
    states = np.full(episodes, mdp.start_state, dtype=np.int64)
    alive = np.ones(episodes, dtype=bool)
    total = np.zeros(episodes)
    for _ in range(mdp.horizon):
        a = actions[states]
        total += np.where(alive, mdp.reward[states, a], 0.0)
        ended = alive & mdp.terminal[states, a]
        states = np.where(alive, mdp.next_state[states, a], states)
        alive &= ~ended
        if not alive.any():
            break
    return float(total.mean())


# ---------------------------------------------------------------------------
# single-seed training

@dataclass
class SeedResult:
    seed: int
    eval_steps: list
    eval_returns: list
    final_k_mean_raw: float | None
    final_k_mean_normalized: float | None
    aborted: bool
    abort_step: int | None
    flags: list
    losses: list          # rows of (step, {loss name: value})
    timing: dict
    state: object = None  # final LearnerState; not serialized


def _eval_points(total_steps: int, eval_every: int) -> list:
    if total_steps == 0:
        return [0]
    points = list(range(eval_every, total_steps + 1, eval_every))
    if not points or points[-1] != total_steps:
        points.append(total_steps)
    return points


def train_single_seed(ds, tr, mdp, algo_cfg: AlgoConfig, sampler_spec: SamplerSpec,
                      eval_cfg: EvalConfig, root_seed: int, seed: int,
                      total_steps: int | None = None, resume_nets: dict | None = None,
                      freeze_head: bool = False, backbone_mult: float = 1.0) -> SeedResult:
    """Train one seed: build the sampler once, step, evaluate on schedule."""
    steps = algo_cfg.total_steps if total_steps is None else total_steps
    refs = mdp.reference_scores
    flags = []

    spec = replace(sampler_spec, seed=stream_seed(root_seed, f"sampler/{seed}"))
    # build three times and keep the minimum: construction is a pure function
    # and the minimum strips scheduler preemption out of the measurement
    build_times = []
    for _ in range(3):
        t0 = time.perf_counter()
        sampler = build_sampler(spec, ds, tr)
        build_times.append(time.perf_counter() - t0)
    build_s = min(build_times)
    if sampler.fell_back_uniform:
        flags.append("sampler fell back to uniform (all weights zero)")

    state = init_learner(algo_cfg, ds.meta.obs_dim, mdp.n_actions,
                         stream_seed(root_seed, f"init/{seed}"),
                         backbone_mult=backbone_mult)
    if resume_nets is not None:
        for name, net in resume_nets.items():
            if name in state.nets:
                state.nets[name].copy_from(net)
        state.targets["q"].copy_from(state.nets["q"])

    eval_points = set(_eval_points(steps, eval_cfg.eval_every))
    eval_steps, eval_returns, losses = [], [], []
    aborted, abort_step = False, None
    train_s = 0.0
    eval_s = 0.0

    if steps == 0:
        t1 = time.perf_counter()
        ret = evaluate_policy(mdp, extract_policy(state), eval_cfg.episodes_per_eval)
        eval_s += time.perf_counter() - t1
        eval_steps, eval_returns = [0], [ret]

    for step in range(1, steps + 1):
        t1 = time.perf_counter()
        idx = sampler.sample_batch(algo_cfg.batch_size)
        batch = ds.batch(idx)
        try:
            step_losses = train_step(state, algo_cfg, batch, freeze_head=freeze_head)
        except NanLossError as exc:
            aborted, abort_step = True, step
            flags.append(f"nan abort at step {step}: {exc.losses}")
            train_s += time.perf_counter() - t1
            break
        train_s += time.perf_counter() - t1
        losses.append((step, step_losses))
        if step in eval_points:
            t1 = time.perf_counter()
            ret = evaluate_policy(mdp, extract_policy(state), eval_cfg.episodes_per_eval)
            eval_s += time.perf_counter() - t1
            eval_steps.append(step)
            eval_returns.append(ret)

    if eval_returns:
        k = min(eval_cfg.final_k, len(eval_returns))
        if k < eval_cfg.final_k:
            flags.append(f"final_k clamped from {eval_cfg.final_k} to {k} "
                         f"(only {len(eval_returns)} evaluations)")
            warnings.warn(flags[-1], RuntimeWarning, stacklevel=2)
        raw = float(np.mean(eval_returns[-k:]))
        final_raw, final_norm = raw, normalized_score(raw, refs)
    else:
        final_raw = final_norm = None

    total_s = build_s + train_s + eval_s
    timing = {
        "sampler_build_s": build_s,
        "sampler_build_first_s": build_times[0],
        "train_s": train_s,
        "eval_s": eval_s,
        "total_s": total_s,
        "overhead_fraction": build_s / total_s if total_s > 0 else 0.0,
    }
    return SeedResult(seed=seed, eval_steps=eval_steps, eval_returns=eval_returns,
                      final_k_mean_raw=final_raw, final_k_mean_normalized=final_norm,
                      aborted=aborted, abort_step=abort_step, flags=flags,
                      losses=losses, timing=timing, state=state)


# ---------------------------------------------------------------------------
# reports

@dataclass
class ExperimentReport:
    """Single-stage result: per-seed curves plus the protocol aggregate.

    ``payload()`` is the deterministic part (report.json); ``timing`` holds
    wall-clock measurements and is serialized separately.
    """

    config: dict
    task: str
    refs: dict
    checksum: str
    per_seed: list
    aggregate: dict
    flags: list
    timing: dict

    def payload(self) -> dict:
        return {
            "kind": "experiment",
            "config": self.config,
            "task": self.task,
            "refs": self.refs,
            "dataset_checksum": self.checksum,
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
            "flags": self.flags,
        }


def _aggregate(per_seed: list) -> dict:
    norm = [s["final_k_mean_normalized"] for s in per_seed
            if s["final_k_mean_normalized"] is not None]
    raw = [s["final_k_mean_raw"] for s in per_seed if s["final_k_mean_raw"] is not None]
    agg = {
        "mean_normalized": float(np.mean(norm)) if norm else None,
        "std_normalized": float(np.std(norm)) if norm else None,
        "mean_raw": float(np.mean(raw)) if raw else None,
        "std_raw": float(np.std(raw)) if raw else None,
        "aborted_seeds": [s["seed"] for s in per_seed if s["aborted"]],
    }
    return agg


def _seed_payload(res: SeedResult, refs: dict) -> dict:
    return {
        "seed": res.seed,
        "eval_steps": res.eval_steps,
        "eval_returns": res.eval_returns,
        "eval_normalized": [normalized_score(r, refs) for r in res.eval_returns],
        "final_k_mean_raw": res.final_k_mean_raw,
        "final_k_mean_normalized": res.final_k_mean_normalized,
        "aborted": res.aborted,
        "abort_step": res.abort_step,
        "flags": res.flags,
    }


def _seed_job(args):
    ds, tr, mdp_name, algo_cfg, spec, eval_cfg, root, seed = args
    mdp = env_from_name(mdp_name)
    return train_single_seed(ds, tr, mdp, algo_cfg, spec, eval_cfg, root, seed)


def run_training(cfg: ExperimentConfig, jobs: int = 1,
                 collect_states: bool = False):
    """Single-stage run over all seeds; returns (report, seed results)."""
    ds, tr, mdp = prepare_dataset(cfg.dataset)
    refs = mdp.reference_scores
    args = [(ds, tr, mdp.name, cfg.algo, cfg.sampler, cfg.eval, cfg.root_seed, s)
            for s in cfg.eval.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_seed_job, args))
    else:
        results = [_seed_job(a) for a in args]
    per_seed = [_seed_payload(r, refs) for r in results]
    flags = sorted({f for r in results for f in r.flags})
    report = ExperimentReport(
        config=config_to_dict(cfg),
        task=cfg.dataset.label,
        refs=refs,
        checksum=dataset_checksum(ds),
        per_seed=per_seed,
        aggregate=_aggregate(per_seed),
        flags=flags,
        timing={"per_seed": {str(r.seed): r.timing for r in results}},
    )
    if not collect_states:
        for r in results:
            r.state = None
    return report, results


def two_stage_train(cfg: ExperimentConfig, out_dir=None, jobs: int = 1):
    """Uniform pretrain, checkpoint, then rebalanced head-frozen finetune.

    Stage two resumes from the stage-one checkpoint file, multiplies the
    backbone learning rate by ``backbone_lr_mult`` and freezes the heads when
    configured. Optimizer moments restart fresh in stage two. Returns a
    two-stage report whose stage-2 payload records, per seed, whether the
    head parameters stayed bitwise identical to the checkpoint.
    """
    if cfg.dered is None:
        raise ConfigError("two_stage_train requires the 'dered' config block")
    ds, tr, mdp = prepare_dataset(cfg.dataset)
    refs = mdp.reference_scores
    dered = cfg.dered
    uniform = replace(cfg.sampler, mode="uniform")
    stage2_spec = cfg.sampler if cfg.sampler.mode != "uniform" else replace(
        cfg.sampler, mode="return_resample")

    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory()
        ckpt_dir = tmp.name
    else:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_dir = out_dir

    stage1_seed_payloads, stage2_seed_payloads = [], []
    head_checks, flags1, flags2 = [], set(), set()
    timing = {"stage1": {}, "stage2": {}}
    args = [(ds, tr, mdp.name, cfg, ckpt_dir, seed) for seed in cfg.eval.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_two_stage_seed_job, args))
    else:
        results = [_two_stage_seed_job(a) for a in args]
    for seed, (res1, res2, heads_equal) in zip(cfg.eval.seeds, results):
        head_checks.append({"seed": seed, "heads_bitwise_equal": bool(heads_equal)})
        if dered.freeze_head and not heads_equal:
            raise RuntimeError(f"seed {seed}: frozen heads changed during stage 2")
        stage1_seed_payloads.append(_seed_payload(res1, refs))
        stage2_seed_payloads.append(_seed_payload(res2, refs))
        flags1.update(res1.flags)
        flags2.update(res2.flags)
        timing["stage1"][str(seed)] = res1.timing
        timing["stage2"][str(seed)] = res2.timing
    if tmp is not None:
        tmp.cleanup()

    checksum = dataset_checksum(ds)
    base = {"config": config_to_dict(cfg), "task": cfg.dataset.label,
            "refs": refs, "dataset_checksum": checksum}
    report = {
        "kind": "two_stage",
        **base,
        "stage1": {"per_seed": stage1_seed_payloads,
                   "aggregate": _aggregate(stage1_seed_payloads),
                   "flags": sorted(flags1)},
        "stage2": {"per_seed": stage2_seed_payloads,
                   "aggregate": _aggregate(stage2_seed_payloads),
                   "flags": sorted(flags2),
                   "head_checks": head_checks},
    }
    improvement = None
    m1 = report["stage1"]["aggregate"]["mean_normalized"]
    m2 = report["stage2"]["aggregate"]["mean_normalized"]
    if m1 is not None and m2 is not None:
        improvement = m2 - m1
    report["stage2_minus_stage1"] = improvement
    return report, timing


def sweep_pbase(cfg: ExperimentConfig, values, jobs: int = 1):
    """One run per p_base value; the infinity column is the uniform sampler."""
    if not values:
        raise ConfigError("need at least one p_base value")
    columns, reports = [], {}
    timing = {}
    for v in values:
        if isinstance(v, str) and v.lower() in ("inf", "infinity"):
            label = "inf"
            arm = replace(cfg, sampler=replace(cfg.sampler, mode="uniform"))
        else:
            label = repr(float(v))
            arm = replace(cfg, sampler=replace(cfg.sampler, mode="return_resample",
                                               p_base=float(v)))
        report, _ = run_training(arm, jobs=jobs)
        columns.append(label)
        reports[label] = report
        timing[label] = report.timing
    table = {
        "kind": "pbase_sweep",
        "task": cfg.dataset.label,
        "columns": columns,
        "scores": {label: reports[label].aggregate["mean_normalized"] for label in columns},
        "stds": {label: reports[label].aggregate["std_normalized"] for label in columns},
        "reports": {label: reports[label].payload() for label in columns},
    }
    return table, timing


COMPARE_ARMS = ("uniform", "return_resample", "reward_resample", "top_fraction")


def compare_rebalance_methods(cfg: ExperimentConfig, fraction: float = 0.1, jobs: int = 1):
    """Four arms (uniform / return / reward / top-fraction), same seeds and data."""
    reports = {}
    timing = {}
    for arm_mode in COMPARE_ARMS:
        spec = replace(cfg.sampler, mode=arm_mode)
        if arm_mode == "top_fraction":
            spec = replace(spec, fraction=fraction)
        report, _ = run_training(replace(cfg, sampler=spec), jobs=jobs)
        reports[arm_mode] = report
        timing[arm_mode] = report.timing
    checksums = {m: reports[m].checksum for m in COMPARE_ARMS}
    if len(set(checksums.values())) != 1:
        raise RuntimeError(f"comparison arms saw different dataset bits: {checksums}")
    table = {
        "kind": "rebalance_compare",
        "task": cfg.dataset.label,
        "arms": list(COMPARE_ARMS),
        "scores": {m: reports[m].aggregate["mean_normalized"] for m in COMPARE_ARMS},
        "stds": {m: reports[m].aggregate["std_normalized"] for m in COMPARE_ARMS},
        "dataset_checksum": checksums["uniform"],
        "reports": {m: reports[m].payload() for m in COMPARE_ARMS},
    }
    return table, timing


# ---------------------------------------------------------------------------
# serialization helpers

def dump_json(payload: dict) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def curves_csv(per_seed: list) -> str:
    lines = ["seed,step,raw_return,normalized"]
    for entry in per_seed:
        for step, raw, norm in zip(entry["eval_steps"], entry["eval_returns"],
                                   entry["eval_normalized"]):
            lines.append(f"{entry['seed']},{step},{raw!r},{norm!r}")
    return "\n".join(lines) + "\n"


def losses_csv(losses: list) -> str:
    if not losses:
        return "step\n"
    keys = sorted(losses[0][1])
    lines = ["step," + ",".join(keys)]
    for step, row in losses:
        lines.append(f"{step}," + ",".join(repr(row.get(k, float('nan'))) for k in keys))
    return "\n".join(lines) + "\n"
