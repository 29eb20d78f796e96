"""``csne``: experiment runner for the contrastive / neighbor-embedding models.

    csne <subcommand> [--preset NAME] [--config FILE] [--out DIR] [--key value ...]

Subcommands: gen, train, eval, sweep, verify, plot. Output goes to ``--out``
or, when that is absent, to ``$CSNE_OUTPUT_DIR``. Summaries are printed to
stdout as ``key=value`` lines (gen, train, eval) or CSV (verify, sweep).

Exit codes: 0 success, 2 usage error, 3 invalid configuration or input,
4 verification failure, 5 runtime or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import plotting
from .embedopt import project_sphere, uniformity_score
from .evaltheory import (EvalReport, class_cosine_heatmap, class_means, knn_classify, linear_probe,
                         lipschitz_estimate, order_cycle_check, write_eval_reports, write_heatmap_csv)
from .numkit import CheckpointError
from .simdata import LabeledDataset, mean_shift, read_dataset_csv, write_dataset_csv
from .suites import SUITES, run_suite
from .trainer import (ConfigError, TrainingDiverged, augment_pairs, alignment_metric, embed,
                      load_checkpoint, save_checkpoint, train_encoder, write_training_log)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_VERIFY, EXIT_RUNTIME = 0, 2, 3, 4, 5
OUTPUT_ENV = "CSNE_OUTPUT_DIR"
CHECKPOINT_NAME = "checkpoint.ckpt"


class VerificationFailed(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV)
    if not out:
        raise cfgmod.UsageError(f"no output location: pass --out or set {OUTPUT_ENV}")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args, extra) -> dict:
    return cfgmod.load_config(args.preset, args.config, cfgmod.parse_overrides(extra))


def _emit(**items) -> None:
    for k, v in items.items():
        print(f"{k}={v}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def _write_embedding_csv(path, Z: np.ndarray, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"z{j}" for j in range(Z.shape[1])] + ["label"])
        for z, y in zip(Z, labels):
            w.writerow([repr(float(v)) for v in z] + [int(y)])


def _knn_metric(cfg: dict, d_z: int) -> str:
    metric = cfg["knn_metric"]
    if metric == "auto":
        return "cosine" if d_z >= 2 else "euclidean"
    if metric not in ("cosine", "euclidean"):
        raise ConfigError(f"knn_metric must be auto, cosine or euclidean, got {metric!r}")
    return metric


def _load_data(path) -> LabeledDataset:
    try:
        return read_dataset_csv(path)
    except FileNotFoundError:
        raise cfgmod.UsageError(f"dataset not found: {path}") from None


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_gen(args, extra) -> int:
    cfg = _config(args, extra)
    out = _out_dir(args)
    train, test = cfgmod.train_data(cfg), cfgmod.test_data(cfg)
    write_dataset_csv(out / "dataset.csv", train)
    write_dataset_csv(out / "test.csv", test)
    if train.X.shape[1] in (1, 2):
        plotting.scatter2d(train.X, train.labels, out / "dataset.svg", "input data")
    _emit(dataset=out / "dataset.csv", test=out / "test.csv", n=len(train), d=train.X.shape[1],
          m=int(train.labels.max()) + 1)
    return EXIT_OK


def _train(cfg: dict, data_path=None):
    tcfg = cfgmod.train_config(cfg)
    gmm = cfgmod.gmm_spec(cfg)
    data = _load_data(data_path) if data_path else cfgmod.train_data(cfg)
    report = train_encoder(data, tcfg, gmm=gmm)
    report.extra = {"experiment": cfg}
    return report, data


def cmd_train(args, extra) -> int:
    cfg = _config(args, extra)
    cfgmod.train_config(cfg)  # reject a bad combination before touching the disk
    out = _out_dir(args)
    report, _ = _train(cfg, args.data)
    save_checkpoint(report, out / CHECKPOINT_NAME)
    write_training_log(out / "train_log.csv", report)
    (out / "config.yaml").write_text(cfgmod.dump_config(cfg))
    epochs = np.arange(1, len(report.losses) + 1)
    plotting.line(epochs, {"loss": report.losses}, out / "loss.svg", "epoch", "loss")
    plotting.line(epochs, {"alignment": report.align, "uniformity": report.uniform},
                  out / "metrics.svg", "epoch")
    _emit(checkpoint=out / CHECKPOINT_NAME, log=out / "train_log.csv", epochs=len(report.losses),
          final_loss=repr(report.losses[-1]), final_alignment=repr(report.align[-1]),
          final_uniformity=repr(report.uniform[-1]))
    print(f"wall_clock_seconds={report.wall_clock:.2f}", file=sys.stderr)
    return EXIT_OK


def _report_names(paths) -> list[str]:
    stems = [Path(p).stem for p in paths]
    if len(set(stems)) == len(stems):
        return stems
    return [f"{Path(p).parent.name}-{Path(p).stem}" if stems.count(s) > 1 else s
            for p, s in zip(paths, stems)]


def evaluate(report, cfg: dict, train: LabeledDataset, test: LabeledDataset, name: str) -> tuple:
    """All metrics for one model; returns ``(EvalReport, train features)``."""
    tc = report.config
    Ztr, Zte = embed(report, train.X), embed(report, test.X)
    metric = _knn_metric(cfg, tc.d_z)
    _, knn_acc = knn_classify(Ztr, train.labels, Zte, k=int(cfg["k"]), query_y=test.labels, metric=metric)
    probe = linear_probe(Ztr, train.labels, Zte, test.labels, int(cfg["probe_epochs"]), float(cfg["probe_lr"]))
    ev = cfgmod.streams(cfg["seed"])[5]
    aug_rng, lip_rng = ev.split(2)
    gmm = cfgmod.gmm_spec(cfg)
    views = augment_pairs(tc, train, gmm, aug_rng).views
    rep = EvalReport(name=name, knn_accuracy=knn_acc, probe_accuracy=probe,
                     alignment=alignment_metric(Ztr, embed(report, views)))
    if cfg["shift"] is not None:
        shift = np.asarray(cfg["shift"], dtype=float)
        if shift.shape != (train.X.shape[1],):
            raise ConfigError(f"shift must have {train.X.shape[1]} entries")
        shifted = mean_shift(test, shift)
        rep.ood_probe_accuracy = linear_probe(Ztr, train.labels, embed(report, shifted.X), shifted.labels,
                                              int(cfg["probe_epochs"]), float(cfg["probe_lr"]))
    M = class_means(Ztr, train.labels)
    if tc.d_z >= 2 and np.all(np.linalg.norm(M, axis=1) > 0):
        rep.min_angle, rep.simplex_deviation = uniformity_score(project_sphere(M))
    rep.lipschitz, rep.lipschitz_se = lipschitz_estimate(lambda X: embed(report, X), train.X,
                                                         int(cfg["lipschitz_pairs"]), lip_rng)
    if cfg["expected_order"] is not None and tc.d_z == 2:
        geometry = "sphere" if tc.normalize_output == "sphere" else "euclidean"
        rep.order_check = order_cycle_check(Ztr, train.labels, cfg["expected_order"], geometry)
    rep.heatmap = class_cosine_heatmap(Ztr, train.labels)
    return rep, Ztr


def cmd_eval(args, extra) -> int:
    if not args.checkpoint:
        raise cfgmod.UsageError("eval needs at least one --checkpoint")
    out = _out_dir(args)
    overrides = cfgmod.parse_overrides(extra)
    names = _report_names(args.checkpoint)
    reports = []
    for path, name in zip(args.checkpoint, names):
        if not Path(path).is_file():
            raise CheckpointError(f"checkpoint not found: {path}")
        model = load_checkpoint(path)
        if args.preset or args.config:
            cfg = cfgmod.load_config(args.preset, args.config, overrides)
        else:
            cfg = cfgmod.load_config(overrides={**model.extra.get("experiment", {}), **overrides})
        train = _load_data(args.data) if args.data else cfgmod.train_data(cfg)
        test = _load_data(args.test) if args.test else cfgmod.test_data(cfg)
        rep, Ztr = evaluate(model, cfg, train, test, name)
        reports.append(rep)
        write_heatmap_csv(out / f"heatmap_{name}.csv", rep.heatmap)
        plotting.heatmap(rep.heatmap, out / f"heatmap_{name}.svg", title=f"{name}: class-mean cosine")
        _write_embedding_csv(out / f"embedding_{name}.csv", Ztr, train.labels)
        if Ztr.shape[1] <= 2:
            plotting.scatter2d(Ztr, train.labels, out / f"embedding_{name}.svg", f"{name}: features")
        for key, value in rep.items():
            print(f"{name}.{key}={_fmt(value)}")
    write_eval_reports(out / "report.txt", reports)
    _emit(report=out / "report.txt")
    return EXIT_OK


def _cell_id(assignment: dict) -> str:
    return "_".join(f"{k}={_fmt(v)}" for k, v in assignment.items()).replace("/", "-").replace(" ", "")


def sweep_cells(cfg: dict) -> list[dict]:
    grid = cfg["grid"]
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep needs a non-empty grid mapping, e.g. {t_df: [1, 5], d_z: [1, 2]}")
    for key, values in grid.items():
        if key not in cfgmod.DEFAULTS or key in ("grid", "trials"):
            raise ConfigError(f"grid key {key!r} is not a configuration key")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid values for {key!r} must be a non-empty list")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


SWEEP_METRICS = ("knn_accuracy", "probe_accuracy", "final_loss", "final_alignment")


def _run_cell(cfg: dict, cell: dict) -> list:
    cell_cfg = {**cfg, **cell, "grid": None}
    report, train = _train(cell_cfg)
    test = cfgmod.test_data(cell_cfg)
    Ztr, Zte = embed(report, train.X), embed(report, test.X)
    _, knn = knn_classify(Ztr, train.labels, Zte, k=int(cfg["k"]), query_y=test.labels,
                          metric=_knn_metric(cell_cfg, report.config.d_z))
    probe = linear_probe(Ztr, train.labels, Zte, test.labels, int(cfg["probe_epochs"]), float(cfg["probe_lr"]))
    return [knn, probe, report.losses[-1], report.align[-1]]


def cmd_sweep(args, extra) -> int:
    cfg = _config(args, extra)
    cells = sweep_cells(cfg)
    for cell in cells:
        cfgmod.train_config({**cfg, **cell})
    out = _out_dir(args)
    cell_dir = out / "cells"
    cell_dir.mkdir(exist_ok=True)
    echo = sorted(k for k in cfgmod.DEFAULTS if k not in ("grid", "trials"))
    header = ["cell"] + echo + list(SWEEP_METRICS)
    for cell in cells:
        cid = _cell_id(cell)
        target = cell_dir / f"{cid}.csv"
        if target.exists():
            print(f"skip {cid} (done)", file=sys.stderr)
            continue
        metrics = _run_cell(cfg, cell)
        merged = {**cfg, **cell}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerow([cid] + [_fmt(merged[k]) for k in echo] + [_fmt(float(v)) for v in metrics])
        tmp = target.with_suffix(".partial")
        tmp.write_text(buf.getvalue())
        os.replace(tmp, target)
    rows = []
    for cell in cells:
        with open(cell_dir / f"{_cell_id(cell)}.csv", newline="") as fh:
            rows.append(list(csv.reader(fh))[1])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    (out / "sweep.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_verify(args, extra) -> int:
    cfg = _config(args, extra)
    rows = run_suite(args.suite, cfg["trials"], int(cfg["seed"]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["suite", "case", "value", "tolerance", "status"])
    for r in rows:
        w.writerow([args.suite, r.case, repr(r.value), repr(r.tolerance), "pass" if r.passed else "FAIL"])
    sys.stdout.write(buf.getvalue())
    if args.out or os.environ.get(OUTPUT_ENV):
        (_out_dir(args) / f"verify_{args.suite}.csv").write_text(buf.getvalue())
    failed = sum(not r.passed for r in rows)
    print(f"{args.suite}: {len(rows) - failed}/{len(rows)} checks passed", file=sys.stderr)
    if failed:
        raise VerificationFailed(f"{failed} of {len(rows)} {args.suite} checks failed")
    return EXIT_OK


def cmd_plot(args, extra) -> int:
    if extra:
        raise cfgmod.UsageError(f"plot takes no configuration keys (got {' '.join(extra)})")
    if args.out and args.out.endswith(".svg"):
        target = Path(args.out)
        target.parent.mkdir(parents=True, exist_ok=True)
    else:
        target = _out_dir(args) / f"{Path(args.input).stem}_{args.kind}.svg"
    if not Path(args.input).is_file():
        raise cfgmod.UsageError(f"input not found: {args.input}")
    plotting.plot_csv(args.input, args.kind, target, args.title)
    _emit(figure=target)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csne", description=__doc__.split("\n\n")[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, preset=True):
        if preset:
            p.add_argument("--preset", choices=cfgmod.PRESETS)
            p.add_argument("--config", help="YAML file of configuration keys")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV})")
        return p

    common(sub.add_parser("gen", allow_abbrev=False, help="sample a mixture dataset to CSV"))
    p = common(sub.add_parser("train", allow_abbrev=False, help="train an encoder, write checkpoint and log"))
    p.add_argument("--data", help="training dataset CSV instead of sampling from the config")
    p = common(sub.add_parser("eval", allow_abbrev=False, help="evaluate checkpoints, write report.txt and figures"))
    p.add_argument("--checkpoint", action="append", help="checkpoint file; repeat for several models")
    p.add_argument("--data", help="reference (training) dataset CSV")
    p.add_argument("--test", help="test dataset CSV")
    common(sub.add_parser("sweep", allow_abbrev=False, help="grid sweep, one CSV row per cell, resumable"))
    p = common(sub.add_parser("verify", allow_abbrev=False, help="run a numerical oracle suite"))
    p.add_argument("suite", choices=SUITES)
    p = common(sub.add_parser("plot", allow_abbrev=False, help="render a CSV as an SVG figure"), preset=False)
    p.add_argument("--input", required=True)
    p.add_argument("--kind", required=True, choices=plotting.PLOT_KINDS)
    p.add_argument("--title", default="")
    return parser


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "verify": cmd_verify, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, extra)
    except cfgmod.UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, plotting.PlotError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (CheckpointError, TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
