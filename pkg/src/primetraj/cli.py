"""Command-line driver: predict, train, eval, audit and sweep.

Every subcommand writes into the directory given by --out:

    predict  predictions.json, full_state.csv, manifest.json
    train    params.json, loss_history.csv, manifest.json
    eval     metrics.json, per_scenario.csv, manifest.json
    audit    audit.csv, manifest.json
    sweep    sweep.csv, manifest.json

CSV column orders:

    full_state.csv    mode,step,t,x,y,v,a,kappa,theta,s,d,probability
    loss_history.csv  epoch,loss
    per_scenario.csv  scenario_id,status,min_ade,min_fde,miss_rate,p_min_ade,p_min_fde,infeasibility
    audit.csv         scenario_id,status,n_predictions,n_infeasible,max_curvature,feasible
    sweep.csv         drop_rate,min_ade,min_fde,miss_rate,p_min_ade,p_min_fde,infeasibility,n_scenarios,n_failed

Exit codes: 0 success, 1 input error, 2 empty feasible set (predict),
3 training diverged. Diagnostics go to standard error; PRIME_LOG sets the
log level (DEBUG, INFO, WARNING, ERROR; default WARNING).

Apart from the manifest's timestamp and wall-clock timings, outputs are a
deterministic function of the inputs and --seed.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import EmptyFeasibleSet, PrimeError, TrainingDiverged
from .evaluator.model import ModelParams
from .evaluator.training import OPTIMIZERS, SCHEDULES, load_params, save_params, train
from .metrics import audit_curvature
from .pipeline import FILL_MODES, build_training_set, harness, oracle_scorer, predict
from .scene import FULL_STATE_KEYS, Scenario, load_dataset, load_scenario_file, save_predictions

log = logging.getLogger("primetraj")

EXIT_OK, EXIT_INPUT, EXIT_EMPTY, EXIT_DIVERGED = 0, 1, 2, 3
DEFAULT_DROP_RATES = (0.0, 0.2, 0.4, 0.6)
METRIC_KEYS = ("min_ade", "min_fde", "miss_rate", "p_min_ade", "p_min_fde", "infeasibility")


class InputError(Exception):
    pass


def _fmt(x) -> str:
    """Full-precision, locale-free number formatting for CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _configs(scenarios: Sequence[Scenario]) -> list[dict]:
    """Distinct resolved configs, in first-seen order."""
    out: list[dict] = []
    for sc in scenarios:
        d = sc.config.to_dict()
        if d not in out:
            out.append(d)
    return out


def _manifest(out: Path, args, inputs: dict, scenarios: Sequence[Scenario], timings: dict,
              extra: dict | None = None) -> None:
    doc = {
        "subcommand": args.command,
        "inputs": inputs,
        "config": _configs(scenarios),
        "seed": args.seed,
        "tool_version": __version__,
        "options": {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "func")},
        "timings": {k: round(v, 6) for k, v in timings.items()},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        doc.update(extra)
    _write_json(out / "manifest.json", doc)


def _out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {path}: {exc}") from None
    return p


def _load_scenario(path: str) -> Scenario:
    if not Path(path).is_file():
        raise InputError(f"scenario file {path} does not exist")
    return load_scenario_file(path)


def _load_dataset(path: str) -> list[Scenario]:
    if not Path(path).is_dir():
        raise InputError(f"dataset directory {path} does not exist")
    return load_dataset(path)


def _scorer(args):
    if args.oracle:
        return oracle_scorer(args.tau)
    if not args.params:
        raise InputError("--params is required unless --oracle is given")
    if not Path(args.params).is_file():
        raise InputError(f"params file {args.params} does not exist")
    try:
        return load_params(args.params)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.params}: {exc}") from None


# --------------------------------------------------------------------------- subcommands

def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    sc = _load_scenario(args.scenario)
    scorer = _scorer(args)
    out = _out_dir(args.out)
    timings = {"load": time.perf_counter() - t0}
    res = predict(sc, scorer, args.drop_rate, args.seed, args.fill, args.k, args.nms_threshold)
    timings.update(res.prepared.timings)
    pred = res.prediction
    save_predictions(pred, out / "predictions.json")
    fs = pred.full_state
    rows = []
    for i in range(len(pred)):
        t = pred.trajectories[i].t
        for j in range(pred.positions.shape[1]):
            rows.append([i, j, t[j], pred.positions[i, j, 0], pred.positions[i, j, 1],
                         *(fs[k][i, j] for k in FULL_STATE_KEYS), pred.probabilities[i]])
    _write_csv(out / "full_state.csv", ["mode", "step", "t", "x", "y", *FULL_STATE_KEYS, "probability"],
               rows)
    _manifest(out, args, {"scenario": args.scenario, "params": args.params}, [sc], timings,
              {"n_paths": len(res.feasible.paths), "n_feasible": len(res.feasible.trajectories)})
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    scenarios = _load_dataset(args.dataset)
    missing = [sc.scenario_id for sc in scenarios if sc.ground_truth is None]
    if missing:
        raise InputError(f"scenarios without ground truth: {', '.join(missing)}")
    out = _out_dir(args.out)
    timings = {"load": time.perf_counter() - t0}
    t0 = time.perf_counter()
    examples = build_training_set(scenarios, args.drop_rate, args.seed, args.copies, args.tau)
    if not examples:
        raise InputError("no usable training scenario (all failed to generate candidates)")
    timings["prepare"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    init = ModelParams.init(args.width, args.seed)
    try:
        params, history = train(examples, init, args.epochs, args.lr, seed=args.seed,
                                 batch_size=args.batch_size, max_grad_norm=args.max_grad_norm,
                                 optimizer=args.optimizer, schedule=args.schedule)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    timings["train"] = time.perf_counter() - t0
    save_params(params, out / "params.json")
    _write_csv(out / "loss_history.csv", ["epoch", "loss"], enumerate(history))
    _manifest(out, args, {"dataset": args.dataset}, scenarios, timings,
              {"n_examples": len(examples), "final_loss": history[-1]})
    return EXIT_OK


def _harness_rows(report):
    for o in report.outcomes:
        if o.report is None:
            yield [o.scenario_id, o.error, *([""] * len(METRIC_KEYS))]
        else:
            yield [o.scenario_id, "ok", *(getattr(o.report, k) for k in METRIC_KEYS)]


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    scenarios = _load_dataset(args.dataset)
    scorer = _scorer(args)
    out = _out_dir(args.out)
    timings = {"load": time.perf_counter() - t0}
    t0 = time.perf_counter()
    rep = harness(scenarios, scorer, args.drop_rate, args.seed, args.fill, args.k, args.nms_threshold)
    timings["harness"] = time.perf_counter() - t0
    _write_json(out / "metrics.json", rep.aggregate.to_dict())
    _write_csv(out / "per_scenario.csv", ["scenario_id", "status", *METRIC_KEYS], _harness_rows(rep))
    _manifest(out, args, {"dataset": args.dataset, "params": args.params}, scenarios, timings)
    return EXIT_OK


def cmd_audit(args) -> int:
    t0 = time.perf_counter()
    scenarios = _load_dataset(args.dataset)
    scorer = _scorer(args)
    out = _out_dir(args.out)
    timings = {"load": time.perf_counter() - t0}
    t0 = time.perf_counter()
    rep = harness(scenarios, scorer, args.drop_rate, args.seed, args.fill, args.k, args.nms_threshold,
                  keep_results=True)
    rows = []
    for o in rep.outcomes:
        if o.result is None:
            rows.append([o.scenario_id, o.error, "", "", "", ""])
            continue
        audits = [audit_curvature(p) for p in o.result.prediction.positions]
        n_bad = sum(not a.feasible for a in audits)
        rows.append([o.scenario_id, "ok", len(audits), n_bad,
                     max(a.max_curvature for a in audits), n_bad == 0])
    timings["audit"] = time.perf_counter() - t0
    _write_csv(out / "audit.csv", ["scenario_id", "status", "n_predictions", "n_infeasible",
                                   "max_curvature", "feasible"], rows)
    agg = rep.aggregate
    _manifest(out, args, {"dataset": args.dataset, "params": args.params}, scenarios, timings,
              {"infeasibility": agg.infeasibility, "n_predictions": agg.n_predictions})
    return EXIT_OK


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    scenarios = _load_dataset(args.dataset)
    scorer = _scorer(args)
    out = _out_dir(args.out)
    timings = {"load": time.perf_counter() - t0}
    rows = []
    for rate in args.drop_rates:
        t0 = time.perf_counter()
        agg = harness(scenarios, scorer, rate, args.seed, args.fill, args.k, args.nms_threshold).aggregate
        timings[f"drop_{rate:g}"] = time.perf_counter() - t0
        rows.append([rate, *(getattr(agg, k) for k in METRIC_KEYS), agg.n_scenarios, agg.n_failed])
    _write_csv(out / "sweep.csv", ["drop_rate", *METRIC_KEYS, "n_scenarios", "n_failed"], rows)
    _manifest(out, args, {"dataset": args.dataset, "params": args.params}, scenarios, timings)
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def _rate(text: str) -> float:
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"drop rate must be in [0, 1), got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="primetraj", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset: bool, scoring: bool = True):
        if dataset:
            p.add_argument("--dataset", required=True, help="directory of scenario *.json files")
        else:
            p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tau", type=float, default=None, help="label temperature (default: config)")
        if scoring:
            p.add_argument("--params", help="evaluator parameter JSON")
            p.add_argument("--oracle", action="store_true",
                           help="score with soft labels against the ground truth instead of a model")
            p.add_argument("--drop-rate", type=_rate, default=0.0,
                           help="fraction of target observations dropped before padding")
            p.add_argument("--fill", choices=FILL_MODES, default="nearest",
                           help="how dropped observations are filled (zero = no-padding ablation)")
            p.add_argument("--k", type=_positive_int, default=None, help="number of modes (default: config)")
            p.add_argument("--nms-threshold", type=float, default=None, help="NMS distance in m (default: config)")

    p = sub.add_parser("predict", help="predict one scenario")
    common(p, dataset=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("train", help="train the evaluator on a dataset")
    common(p, dataset=True, scoring=False)
    p.add_argument("--epochs", type=int, default=900)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--width", type=_positive_int, default=16)
    p.add_argument("--optimizer", choices=sorted(OPTIMIZERS), default="adam")
    p.add_argument("--schedule", choices=SCHEDULES, default="cosine", help="step-size schedule")
    p.add_argument("--batch-size", type=_positive_int, default=1,
                   help="scenes per step; a value >= the dataset size means full batch")
    p.add_argument("--max-grad-norm", type=float, default=None)
    p.add_argument("--drop-rate", type=_rate, default=0.0,
                   help="each training copy drops a rate drawn uniformly from [0, this]")
    p.add_argument("--copies", type=_positive_int, default=1, help="training copies per scenario")
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "metrics over a dataset"),
                             ("audit", cmd_audit, "curvature audit of the predictions over a dataset"),
                             ("sweep", cmd_sweep, "metrics versus target drop rate")):
        p = sub.add_parser(name, help=text)
        common(p, dataset=True)
        if name == "sweep":
            p.add_argument("--drop-rates", type=_rate, nargs="+", default=list(DEFAULT_DROP_RATES))
        p.set_defaults(func=func)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("PRIME_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "epochs", 0) < 0 or getattr(args, "lr", 0.0) < 0:
        print("error: --epochs and --lr must be non-negative", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except EmptyFeasibleSet as exc:
        print(f"error: empty feasible set: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (InputError, PrimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
