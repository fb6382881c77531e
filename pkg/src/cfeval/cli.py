"""Command-line entry point.

Subcommands:
  simulate        emit observational train/test logs over a confounding grid
  train-evaluator fit a generative evaluator bundle on an event-log CSV
  generate        sample counterfactual outcomes for a log (+ optional actions file)
  evaluate        full accuracy pipeline against the simulator oracle
  stattest        nine-row realism grid on real vs generated (T, Y) pairs
  gradcheck       finite-difference verification of the differentiation core

Exit codes: 0 success, 1 usage error, 2 data/model error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from . import gradcheck as gc
from . import learners as ln
from .bundle_io import load_bundle, save_bundle
from .errors import DataError, UsageError
from .evalpipe import EvaluationReport
from .eventlog import (extract_prefix_dataset, intervention_points,
                       parse_event_log, write_event_log)
from .pipeline import (PolicySpec, _point_sample, generate_case_pair,
                       generate_pairs, run_accuracy_pipeline)
from .simulate import SimConfig, generate_log
from .stattests import realism_suite
from .train import fit_evaluator


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="cfeval", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command")
    for name in ("simulate", "train-evaluator", "generate", "evaluate", "stattest"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE",
                       help="override a scalar config key")
        p.add_argument("--threads", type=int, default=None,
                       help="bound worker parallelism (default from config)")
    p = sub.add_parser("gradcheck")
    p.add_argument("--seeds", type=int, default=5)
    return parser


def _write(path: str | Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")


def _threads(config: dict, args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(cfg.get(config, "threads", default=1)))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(config: dict, args) -> int:
    block = cfg.get(config, "simulate", required=True)
    seed = config["master_seed"]
    out_dir = Path(block.get("out_dir", "out/logs"))
    intervention = block.get("intervention", "set_rate")
    for delta in block["deltas"]:
        train = generate_log(SimConfig(block["n_train"], delta, intervention,
                                       seed=(seed, "train", repr(delta))))
        _write(out_dir / f"train_delta{delta}.csv", write_event_log(train))
        if block.get("n_test"):
            test = generate_log(SimConfig(block["n_test"], delta, intervention,
                                          seed=(seed, "test", repr(delta))))
            _write(out_dir / f"test_delta{delta}.csv", write_event_log(test))
    return 0


def _load_log(config: dict):
    path = cfg.get(config, "data.log_csv", required=True)
    schema = cfg.schema_from_config(config)
    delimiter = cfg.get(config, "data.delimiter", default=",")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read log {path}: {exc}") from exc
    return parse_event_log(text, schema, delimiter)


def _cmd_train_evaluator(config: dict, args) -> int:
    log = _load_log(config)
    spec = cfg.intervention_from_config(config)
    samples = extract_prefix_dataset(log, spec, training=True)
    learner = cfg.get(config, "learner.kind", default="ensemble")
    base = cfg.get(config, "learner.base", default="mlp")
    options = cfg.fit_options_from_config(config)
    seed = config["master_seed"]
    bundle, reports = fit_evaluator(samples, log.schema, spec, learner, base,
                                    cfg.head_template_from_config(config),
                                    options, seed=seed)
    bundle.metadata["config_hash"] = cfg.config_hash(config)
    bundle_path = cfg.get(config, "outputs.bundle", required=True)
    save_bundle(bundle, bundle_path)
    print(f"wrote {bundle_path}")
    report_dir = cfg.get(config, "outputs.reports_dir")
    if report_dir:
        for name, report in sorted(reports.items()):
            _write(Path(report_dir) / f"fit_{name}.csv", report.to_csv())
    return 0


def _read_actions(path: str) -> dict[str, tuple[int, int | None]]:
    reader = csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8")))
    if reader.fieldnames is None or "case_id" not in reader.fieldnames \
            or "treatment" not in reader.fieldnames:
        raise DataError("actions file needs case_id and treatment columns")
    actions = {}
    for row in reader:
        step = row.get("step", "")
        actions[row["case_id"]] = (int(float(row["treatment"])),
                                   int(float(step)) if step else None)
    return actions


def _cmd_generate(config: dict, args) -> int:
    block = cfg.get(config, "generate", required=True)
    bundle = load_bundle(block["bundle"])
    log = _load_log(config)
    n_samples = int(block.get("n_samples", 50))
    alpha = float(block.get("alpha", 0.0))
    seed = config["master_seed"]
    actions = _read_actions(block["actions_csv"]) if block.get("actions_csv") else None

    lines = ["case_id,sample_index,treatment,outcome"]
    spec = bundle.intervention
    for case in log.cases:
        points = intervention_points(spec, case.events)
        if not points:
            raise DataError(f"case {case.case_id!r} has no intervention point")
        if actions is not None:
            if case.case_id not in actions:
                continue
            treatment, step = actions[case.case_id]
            if treatment not in spec.levels:
                raise DataError(f"action {treatment} not in levels {spec.levels}")
            if step is None:
                if spec.kind == "timed" and treatment != 0:
                    raise DataError(
                        f"case {case.case_id!r}: timed treatment needs a step")
                step = points[0] if spec.kind == "fixed_point" else points[-1]
            elif step not in points:
                raise DataError(f"case {case.case_id!r}: step {step} is not an "
                                f"intervention point {points}")
            x = ln.encoded_row(bundle.base, bundle.encoder,
                               _point_sample(case, step))
            draws = ln.sample_outcome(bundle.outcome, x, treatment, n_samples,
                                      key=(seed, "generate", case.case_id))
            for i, y in enumerate(draws):
                lines.append(f"{case.case_id},{i},{treatment},{float(y)!r}")
        else:
            for i in range(n_samples):
                t, y = generate_case_pair(bundle, case, alpha,
                                          (seed, "generate", i))
                lines.append(f"{case.case_id},{i},{t},{y!r}")
    _write(block["out_csv"], "\n".join(lines) + "\n")
    return 0


def _summary_payload(report: EvaluationReport) -> dict:
    return {"kendall_tau": report.kendall,
            "mean_w1": report.mean_w1,
            "mean_w1_informed": report.mean_w1_informed,
            "mean_w1_random": report.mean_w1_random,
            "totals_true": report.totals_true,
            "totals_est": report.totals_est,
            "true_ranking": report.true_ranking,
            "est_ranking": report.est_ranking}


def _cmd_evaluate(config: dict, args) -> int:
    block = cfg.get(config, "evaluate", required=True)
    out_dir = Path(block.get("out_dir", "out/evaluate"))
    policies = [PolicySpec(p["name"], p["kind"], p.get("learner", "s"),
                           p.get("base", "mlp")) for p in block["policies"]]
    options = cfg.fit_options_from_config(config)
    head = cfg.head_template_from_config(config)
    threads = _threads(config, args)
    grid: dict = {}
    for delta in block["deltas"]:
        for seed in block["seeds"]:
            result = run_accuracy_pipeline(
                block.get("intervention", "set_rate"), block["n_train"],
                block["n_test"], delta, seed, policies, options, head,
                evaluator_base=cfg.get(config, "learner.base", default="mlp"),
                n_samples=block.get("n_samples", 50), threads=threads)
            for name, report in sorted(result.reports.items()):
                stem = f"delta{delta}_seed{seed}_{name}"
                _write(out_dir / f"{stem}_cases.csv", report.to_case_csv())
                _write(out_dir / f"{stem}_summary.json", report.to_summary_json())
                grid.setdefault(str(delta), {}).setdefault(str(seed), {})[name] = \
                    _summary_payload(report)
    _write(out_dir / "summary.json", json.dumps(grid, sort_keys=True, indent=2) + "\n")
    return 0


def _read_pairs_csv(path: str) -> np.ndarray:
    reader = csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8")))
    if reader.fieldnames is None or "t" not in reader.fieldnames \
            or "y" not in reader.fieldnames:
        raise DataError(f"pairs file {path} needs t and y columns")
    rows = [(float(r["t"]), float(r["y"])) for r in reader]
    return np.array(rows, dtype=float)


def _cmd_stattest(config: dict, args) -> int:
    block = cfg.get(config, "stattest", required=True)
    seed = config["master_seed"]
    n_perm = int(block.get("n_perm", 1000))
    if block.get("real_pairs_csv"):
        real = _read_pairs_csv(block["real_pairs_csv"])
        gen = _read_pairs_csv(block["gen_pairs_csv"])
    else:
        bundle = load_bundle(block["bundle"])
        log = _load_log(config)
        real, gen = generate_pairs(bundle, log, float(block.get("alpha", 0.0)),
                                   seed=(seed, "pairs"))
    report = realism_suite(real, gen, seed=(seed, "suite"), n_perm=n_perm)
    for row in report.rows:
        verdict = "pass" if row.p_value > 0.1 else "FAIL"
        print(f"{row.name:14s} stat={row.statistic:12.6g} p={row.p_value:8.6f} {verdict}")
    _write(block["out_csv"], report.to_csv())
    return 0


def _cmd_gradcheck(args) -> int:
    worst = 0.0
    for name, err in gc.run_battery(args.seeds):
        status = "ok" if err < gc.TOLERANCE else "FAIL"
        print(f"{name:22s} max rel err {err:.3e}  {status}")
        worst = max(worst, err)
    if worst >= gc.TOLERANCE:
        print(f"gradcheck failed: worst {worst:.3e} >= {gc.TOLERANCE}")
        return 2
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        config = cfg.load_config(args.config, args.set)
        handler = {"simulate": _cmd_simulate,
                   "train-evaluator": _cmd_train_evaluator,
                   "generate": _cmd_generate,
                   "evaluate": _cmd_evaluate,
                   "stattest": _cmd_stattest}[args.command]
        return handler(config, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
