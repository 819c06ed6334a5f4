import json

import pytest

from red_offline.cli import main
from red_offline.dataset import load_dataset


def write_config(tmp_path, name="cfg.json", **updates):
    cfg = {
        "dataset": {"preset": "replay_analog", "n_trajectories": 60},
        "algo": {"family": "q_plus_bc", "total_steps": 60, "batch_size": 32,
                 "lr": 1e-3, "hidden_units": 16, "target_update_period": 20},
        "sampler": {"mode": "return_resample", "alpha": 1.0, "p_base": 0.1},
        "eval": {"eval_every": 20, "episodes_per_eval": 2, "final_k": 3, "seeds": [1]},
        "root_seed": 9,
    }
    for key, value in updates.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_gen_round_trip_and_determinism(tmp_path, capsys):
    out1, out2 = tmp_path / "a.ords", tmp_path / "b.ords"
    assert main(["gen", "--preset", "sparse_analog", "--n-trajectories", "40",
                 "--out", str(out1)]) == 0
    printed = capsys.readouterr().out
    assert "trajectories" in printed and "min=" in printed
    ds = load_dataset(out1)
    assert ds.n_trajectories == 40
    assert main(["gen", "--preset", "sparse_analog", "--n-trajectories", "40",
                 "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_gen_unknown_preset_usage_error(tmp_path, capsys):
    code = main(["gen", "--preset", "warp_maze", "--out", str(tmp_path / "x.ords")])
    assert code == 1
    err = capsys.readouterr().err
    assert "usage" in err.lower()


def test_stats_sparse_dataset(tmp_path, capsys):
    path = tmp_path / "sparse.ords"
    main(["gen", "--preset", "sparse_analog", "--n-trajectories", "50", "--out", str(path)])
    capsys.readouterr()
    csv_out = tmp_path / "hist.csv"
    assert main(["stats", "--dataset", str(path), "--bins", "10",
                 "--out", str(csv_out)]) == 0
    lines = csv_out.read_text().strip().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count"
    counts = [int(row.split(",")[2]) for row in lines[1:]]
    nonzero = [i for i, c in enumerate(counts) if c > 0]
    assert nonzero == [0, len(counts) - 1]
    ds = load_dataset(path)
    assert sum(counts) == ds.n_trajectories


def test_stats_flags_right_skew(tmp_path, capsys):
    path = tmp_path / "replay.ords"
    main(["gen", "--preset", "replay_analog", "--out", str(path)])
    capsys.readouterr()
    assert main(["stats", "--dataset", str(path), "--bins", "15"]) == 0
    out = capsys.readouterr().out
    assert "right-skewed" in out


def test_rebalance_preview_uniform_and_zero_mass(tmp_path, capsys):
    path = tmp_path / "sparse.ords"
    main(["gen", "--preset", "sparse_hard_analog", "--out", str(path)])
    capsys.readouterr()

    assert main(["rebalance-preview", "--dataset", str(path), "--alpha", "0"]) == 0
    out = capsys.readouterr().out
    assert "uniform, deviation 0" in out

    assert main(["rebalance-preview", "--dataset", str(path), "--alpha", "1",
                 "--p-base", "0"]) == 0
    out = capsys.readouterr().out
    zero_frac = float([l for l in out.splitlines() if "zero-mass" in l][0].split(":")[1])
    ds = load_dataset(path)
    from red_offline.dataset import compute_trajectory_returns
    tr = compute_trajectory_returns(ds)
    failed_frac = float((tr.per_transition_return == tr.r_min).mean())
    assert zero_frac == pytest.approx(failed_frac, abs=1e-4)


def test_rebalance_preview_deviation_decreases(tmp_path, capsys):
    path = tmp_path / "replay.ords"
    main(["gen", "--preset", "replay_analog", "--n-trajectories", "80", "--out", str(path)])
    capsys.readouterr()
    devs = []
    for p_base in ("0", "0.2", "0.5", "1.0"):
        assert main(["rebalance-preview", "--dataset", str(path),
                     "--alpha", "1", "--p-base", p_base]) == 0
        out = capsys.readouterr().out
        line = [l for l in out.splitlines() if "max deviation" in l][0]
        devs.append(float(line.split(":")[1]))
    assert all(a > b for a, b in zip(devs, devs[1:]))


def test_train_is_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    out_a, out_b = tmp_path / "runA", tmp_path / "runB"
    assert main(["train", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(out_b)]) == 0
    assert (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()
    assert (out_a / "curves.csv").read_bytes() == (out_b / "curves.csv").read_bytes()
    assert (out_a / "losses_seed1.csv").exists()
    assert (out_a / "timing.json").exists()


def test_train_override_changes_report(tmp_path):
    cfg = write_config(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(out_b),
                 "sampler.mode=uniform"]) == 0
    ra = json.loads((out_a / "report.json").read_text())
    rb = json.loads((out_b / "report.json").read_text())
    assert ra["config"]["sampler"]["mode"] == "return_resample"
    assert rb["config"]["sampler"]["mode"] == "uniform"


def test_env_var_overrides_root_seed(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(cfg), "--out", str(out_a)]) == 0
    monkeypatch.setenv("RED_OFFLINE_ROOT_SEED", "777")
    assert main(["train", "--config", str(cfg), "--out", str(out_b)]) == 0
    ra = json.loads((out_a / "report.json").read_text())
    rb = json.loads((out_b / "report.json").read_text())
    assert ra["config"]["root_seed"] == 9
    assert rb["config"]["root_seed"] == 777


def test_dered_stage2_zero_steps_identity(tmp_path):
    cfg = write_config(tmp_path, algo={"family": "expectile_awr"},
                       dered={"stage1_steps": 40, "stage2_steps": 0,
                              "backbone_lr_mult": 0.1, "freeze_head": True})
    out = tmp_path / "dered"
    assert main(["dered", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    s1 = report["stage1"]["per_seed"][0]
    s2 = report["stage2"]["per_seed"][0]
    assert s2["final_k_mean_raw"] == pytest.approx(s1["eval_returns"][-1])
    assert (out / "curves_stage1.csv").exists()
    assert (out / "stage1_seed1.orck").exists()


def test_compare_emits_four_arm_csv(tmp_path):
    cfg = write_config(tmp_path, algo={"family": "conservative_q"})
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(cfg), "--out", str(out)]) == 0
    header = (out / "compare.csv").read_text().splitlines()[0]
    assert header == "task,uniform,return_resample,reward_resample,top_fraction"


def test_sweep_emits_table(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--out", str(out),
                 "--values", "0,0.5,inf"]) == 0
    header, row = (out / "sweep.csv").read_text().strip().splitlines()
    assert header == "task,0.0,0.5,inf"
    assert row.startswith("replay_analog,")


def test_report_merges_and_marks_best(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out_a, out_b = tmp_path / "uniform", tmp_path / "red"
    main(["train", "--config", str(cfg), "--out", str(out_a), "sampler.mode=uniform"])
    main(["train", "--config", str(cfg), "--out", str(out_b)])
    capsys.readouterr()
    merged = tmp_path / "merged.csv"
    assert main(["report", str(out_a), str(out_b), "--out", str(merged)]) == 0
    out = capsys.readouterr().out
    assert "*" in out
    header = merged.read_text().splitlines()[0]
    assert header.startswith("task,")
    assert "q_plus_bc+uniform" in header and "q_plus_bc+return_resample" in header


def test_report_single_run_passthrough(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out_a = tmp_path / "solo"
    main(["train", "--config", str(cfg), "--out", str(out_a)])
    capsys.readouterr()
    assert main(["report", str(out_a)]) == 0
    out = capsys.readouterr().out
    report = json.loads((out_a / "report.json").read_text())
    assert repr(report["aggregate"]["mean_normalized"]) in out


def test_report_mismatched_runs_error(tmp_path, capsys):
    cfg_a = write_config(tmp_path, "a.json")
    cfg_b = write_config(tmp_path, "b.json",
                         dataset={"preset": "expert_analog", "n_trajectories": 60},
                         algo={"family": "conservative_q"})
    out_a, out_b, out_c = tmp_path / "ra", tmp_path / "rb", tmp_path / "rc"
    main(["train", "--config", str(cfg_a), "--out", str(out_a)])
    main(["train", "--config", str(cfg_b), "--out", str(out_b)])
    main(["train", "--config", str(cfg_a), "--out", str(out_c),
          "dataset.preset=expert_analog"])
    capsys.readouterr()
    code = main(["report", str(out_a), str(out_b)])
    assert code == 2
    err = capsys.readouterr().err
    assert "missing task/arm cells" in err
    assert "expert_analog" in err or "replay_analog" in err


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    code = main(["gen", "--preset", "sparse_analog", "--out", "x", "--turbo"])
    assert code == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for sub in ("gen", "stats", "rebalance-preview", "train", "dered",
                "sweep", "compare", "report"):
        assert sub in out


def test_config_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o2"),
                 "algo.bogus_knob=1"]) == 2
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"algo": {"family": "q_plus_bc"}}))
    assert main(["train", "--config", str(missing), "--out", str(tmp_path / "o3")]) == 2


def test_runtime_abort_exits_three(tmp_path, monkeypatch):
    from red_offline import harness as hmod
    from red_offline.algos import NanLossError

    def exploding(state, cfg, batch, freeze_head=False):
        raise NanLossError(cfg.family, 1, {"q_loss": float("nan")})

    monkeypatch.setattr(hmod, "train_step", exploding)
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
