import json
import subprocess
import sys
from pathlib import Path

import pytest

from cfeval.cli import main

FAST_TRAIN = {"max_epochs": 3, "patience": 2,
              "search": {"hidden_dims": [8], "learning_rates": [1e-2],
                         "batch_sizes": [64], "budget": 1}}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


def test_no_arguments_prints_usage_exits_1(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().out.lower()


def test_unknown_subcommand_exits_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_master_seed_is_usage_error(tmp_path, capsys):
    config = write_config(tmp_path, {"simulate": {}})
    assert main(["simulate", "--config", config]) == 1


def test_simulate_then_train_then_generate_smoke(tmp_path, capsys):
    out = tmp_path / "logs"
    config = write_config(tmp_path, {
        "master_seed": 5,
        "simulate": {"intervention": "set_rate", "deltas": [0.9],
                     "n_train": 60, "n_test": 20, "out_dir": str(out)},
    })
    assert main(["simulate", "--config", config]) == 0
    train_csv = out / "train_delta0.9.csv"
    assert train_csv.exists() and (out / "test_delta0.9.csv").exists()

    bundle_path = tmp_path / "bundle.json"
    train_config = write_config(tmp_path, {
        "master_seed": 6,
        "data": {"log_csv": str(train_csv)},
        "intervention": "set_rate",
        "learner": {"kind": "s", "base": "mlp"},
        "head": {"kind": "mixed_flow", "atoms": [0.0], "components": 3},
        "train": FAST_TRAIN,
        "outputs": {"bundle": str(bundle_path),
                    "reports_dir": str(tmp_path / "reports")},
    }, "train.json")
    assert main(["train-evaluator", "--config", train_config]) == 0
    assert bundle_path.exists()
    assert (tmp_path / "reports" / "fit_s.csv").exists()
    assert (tmp_path / "reports" / "fit_treatment.csv").exists()

    gen_config = write_config(tmp_path, {
        "master_seed": 7,
        "data": {"log_csv": str(out / "test_delta0.9.csv")},
        "generate": {"bundle": str(bundle_path), "n_samples": 3,
                     "out_csv": str(tmp_path / "gen.csv")},
    }, "gen.json")
    assert main(["generate", "--config", gen_config]) == 0
    lines = (tmp_path / "gen.csv").read_text().strip().split("\n")
    assert lines[0] == "case_id,sample_index,treatment,outcome"
    assert len(lines) == 1 + 20 * 3


def test_generate_with_actions_file(tmp_path):
    out = tmp_path / "logs"
    config = write_config(tmp_path, {
        "master_seed": 5,
        "simulate": {"intervention": "set_rate", "deltas": [0.9],
                     "n_train": 60, "n_test": 10, "out_dir": str(out)},
    })
    assert main(["simulate", "--config", config]) == 0
    bundle_path = tmp_path / "bundle.json"
    train_config = write_config(tmp_path, {
        "master_seed": 6,
        "data": {"log_csv": str(out / "train_delta0.9.csv")},
        "intervention": "set_rate",
        "learner": {"kind": "s", "base": "mlp"},
        "head": {"kind": "mixed_flow", "atoms": [0.0], "components": 3},
        "train": FAST_TRAIN,
        "outputs": {"bundle": str(bundle_path)},
    }, "train.json")
    assert main(["train-evaluator", "--config", train_config]) == 0

    test_text = (out / "test_delta0.9.csv").read_text()
    case_ids = sorted({line.split(",")[0] for line in test_text.strip().split("\n")[1:]})
    actions = tmp_path / "actions.csv"
    actions.write_text("case_id,treatment\n" +
                       "\n".join(f"{cid},2" for cid in case_ids[:4]) + "\n")
    gen_config = write_config(tmp_path, {
        "master_seed": 8,
        "data": {"log_csv": str(out / "test_delta0.9.csv")},
        "generate": {"bundle": str(bundle_path), "n_samples": 2,
                     "actions_csv": str(actions),
                     "out_csv": str(tmp_path / "cf.csv")},
    }, "gen2.json")
    assert main(["generate", "--config", gen_config]) == 0
    lines = (tmp_path / "cf.csv").read_text().strip().split("\n")
    assert len(lines) == 1 + 4 * 2
    assert all(line.split(",")[2] == "2" for line in lines[1:])


def test_corrupt_bundle_exits_2(tmp_path, capsys):
    bundle_path = tmp_path / "bad.json"
    bundle_path.write_text('{"format": "cfeval-bundle", "version"')
    log = tmp_path / "log.csv"
    log.write_text("case_id,activity,timestamp,score,amount,sector,"
                   "treatment,treatment_step,outcome\nc1,start,0,,1,x,1,1,0\n")
    config = write_config(tmp_path, {
        "master_seed": 1,
        "data": {"log_csv": str(log)},
        "generate": {"bundle": str(bundle_path), "out_csv": str(tmp_path / "o.csv")},
    })
    assert main(["generate", "--config", config]) == 2
    assert "byte" in capsys.readouterr().err


def test_set_overrides_scalar_keys(tmp_path):
    out = tmp_path / "logs"
    config = write_config(tmp_path, {
        "master_seed": 5,
        "simulate": {"intervention": "set_rate", "deltas": [0.9],
                     "n_train": 100, "out_dir": str(out)},
    })
    assert main(["simulate", "--config", config, "--set", "simulate.n_train=10"]) == 0
    lines = (out / "train_delta0.9.csv").read_text().strip().split("\n")
    case_ids = {line.split(",")[0] for line in lines[1:]}
    assert len(case_ids) == 10


def test_stattest_on_pair_files(tmp_path, capsys):
    gen = __import__("numpy").random.default_rng(3)
    rows = ["t,y"] + [f"{int(gen.random() < 0.5)},{gen.normal()!r}" for _ in range(120)]
    real = tmp_path / "real.csv"
    real.write_text("\n".join(rows) + "\n")
    config = write_config(tmp_path, {
        "master_seed": 2,
        "stattest": {"real_pairs_csv": str(real), "gen_pairs_csv": str(real),
                     "n_perm": 60, "out_csv": str(tmp_path / "grid.csv")},
    })
    assert main(["stattest", "--config", config]) == 0
    grid = (tmp_path / "grid.csv").read_text().strip().split("\n")
    assert len(grid) == 10
    assert "pass" in capsys.readouterr().out


def test_evaluate_subcommand_smoke(tmp_path):
    config = write_config(tmp_path, {
        "master_seed": 3,
        "learner": {"base": "mlp"},
        "head": {"kind": "mixed_flow", "atoms": [0.0], "components": 3},
        "train": FAST_TRAIN,
        "evaluate": {"intervention": "set_rate", "n_train": 80, "n_test": 5,
                     "deltas": [0.9], "seeds": [1], "n_samples": 3,
                     "policies": [{"name": "random", "kind": "random"},
                                  {"name": "greedy", "kind": "argmax",
                                   "learner": "s", "base": "mlp"}],
                     "out_dir": str(tmp_path / "ev")},
    })
    assert main(["evaluate", "--config", config]) == 0
    summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
    assert set(summary["0.9"]["1"]) == {"s", "t", "tarnet", "ensemble"}
    assert (tmp_path / "ev" / "delta0.9_seed1_ensemble_cases.csv").exists()


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "primitive:matmul" in out and "head:mixed_flow" in out


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cfeval.cli"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "usage" in proc.stdout.lower()
