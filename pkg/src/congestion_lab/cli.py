"""Command-line entry point: ``congestion-lab <command> [options]``.

Every option can also be set in a TOML config file passed with ``--config``;
flags given on the command line win over the file. Keys may sit at the top
level or inside any table, and use the option's long name with dashes or
underscores (``svr-c`` or ``svr_c``).
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CongestionLabError, ExtractionError, SchemaError, UsageError
from .evaluation import AGGREGATE, evaluate, fmt_float
from .experiment_runner import (DEFAULT_TOP_K, GridSpec, RunResult, rank_combinations,
                                read_results_csv, run_grid, suite_splits, write_manifest,
                                write_results_csv)
from .forecasters import MODEL_NAMES, Hyperparameters, TrainingData, load_model, make_forecaster, save_model
from .frame_extraction import (DEFAULT_PALETTE, SegmentIndex, TrafficPalette, extract_frame,
                               parse_frame_timestamp, read_extraction_csv, write_extraction_csv)
from .road_network import load_mask, load_network
from .series_store import (CalendarSplit, IntensityMatrix, SampleGrid, assemble_matrix, resample,
                           split_days, window)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("congestion_lab")

WORKERS_ENV = "CONGESTION_LAB_WORKERS"
PREDICTION_HEADER = ("timestamp", "node", "model", "interval_min", "seq_min", "pred_min", "truth", "pred")


# ------------------------------------------------------------------ helpers

def _atomic_path(path: Path) -> Path:
    return path.with_name(path.name + ".tmp")


def _write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _atomic_path(path)
    tmp.write_text(text)
    tmp.replace(path)


def _write_csv(path: str | Path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _atomic_path(path)
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    tmp.replace(path)


def _save_atomic(path: str | Path, saver) -> None:
    """Run ``saver(tmp)`` then move the temporary file into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _atomic_path(path)
    saver(tmp)
    tmp.replace(path)


def _need_file(path, flag: str) -> Path:
    if path is None:
        raise UsageError(f"missing required option --{flag}")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"--{flag}: {p} does not exist")
    return p


def _workers(args) -> int:
    if args.workers is not None:
        n = args.workers
    elif os.environ.get(WORKERS_ENV):
        try:
            n = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("worker count must be at least 1")
    return n


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _model_list(text: str) -> tuple[str, ...]:
    names = tuple(v.strip().upper() for v in str(text).split(",") if v.strip())
    bad = [n for n in names if n not in MODEL_NAMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown model(s) {bad}; choose from {','.join(MODEL_NAMES)}")
    return names


def _order(text: str) -> tuple[int, int, int]:
    try:
        p, d, q = (int(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected p,d,q, got {text!r}") from None
    return (p, d, q)


def _sigma(text: str) -> float | str:
    if str(text).lower() == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"sigma must be a number or 'auto', got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("sigma must be positive")
    return value


def _hyper(args) -> Hyperparameters:
    return Hyperparameters(svr_c=args.svr_c, svr_epsilon=args.svr_eps, svr_sigma=args.svr_sigma,
                           svr_tol=args.svr_tol, svr_max_rows=args.svr_max_rows,
                           arima_order=args.arima_order, fit_timeout_s=args.fit_timeout)


def _palette(args) -> TrafficPalette:
    return TrafficPalette.load(args.palette) if args.palette else DEFAULT_PALETTE


def _network(args, required: bool = True):
    if args.registry is None and args.mask is None and not required:
        return None
    return load_network(_need_file(args.registry, "registry"), _need_file(args.mask, "mask"))


def _load_matrix(args) -> IntensityMatrix:
    return IntensityMatrix.load_csv(_need_file(args.matrix, "matrix"))


def _split(args, m: IntensityMatrix) -> CalendarSplit:
    if args.split_file:
        return CalendarSplit.load(_need_file(args.split_file, "split-file"))
    return split_days(m, args.split)


# ------------------------------------------------------------------ extract

def _extract_batch(job):
    registry, mask_path, palette_dict, paths, skip_bad = job
    net = load_network(registry, mask_path)
    index = SegmentIndex(net, load_mask(mask_path))
    palette = TrafficPalette.from_mapping(palette_dict)
    frames, errors = [], []
    for p in paths:
        try:
            frames.append(extract_frame(p, net, index, palette))
        except ExtractionError as exc:
            if not skip_bad:
                raise
            errors.append(str(exc))
    return frames, errors


def cmd_extract(args) -> int:
    frames_dir = _need_file(args.frames, "frames")
    registry, mask = _need_file(args.registry, "registry"), _need_file(args.mask, "mask")
    out = args.out or "extraction.csv"
    palette = _palette(args)
    load_network(registry, mask)  # fail early on a bad registry
    paths = sorted(p for p in frames_dir.iterdir() if p.suffix.lower() == ".png")
    bad_names = []
    good = []
    for p in paths:
        try:
            parse_frame_timestamp(p)
            good.append(p)
        except ExtractionError as exc:
            bad_names.append(str(exc))
    if bad_names and not args.skip_bad:
        raise ExtractionError(bad_names[0])
    workers = min(_workers(args), max(1, len(good)))
    chunk = max(1, -(-len(good) // (workers * 4)))
    pal = {f"level{k}": "#%02X%02X%02X" % palette.level_colors[k] for k in (1, 2, 3, 4)}
    pal["tolerance"] = palette.tolerance
    jobs = [(str(registry), str(mask), pal, [str(p) for p in good[i:i + chunk]], args.skip_bad)
            for i in range(0, len(good), chunk)]
    if workers <= 1:
        results = [_extract_batch(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_batch, jobs))
    frames = [f for batch, _ in results for f in batch]
    errors = bad_names + [e for _, errs in results for e in errs]
    for e in errors:
        log.warning("skipped frame: %s", e)
    _save_atomic(out, lambda tmp: write_extraction_csv(frames, tmp))
    print(f"extracted {len(frames)} frames ({len(errors)} skipped) -> {out}")
    return 0


# ------------------------------------------------------------------ assemble / resample

def cmd_assemble(args) -> int:
    net = _network(args)
    frames = read_extraction_csv(_need_file(args.extraction, "extraction"))
    m = assemble_matrix(frames, net, aggregation=args.aggregation, fill_gaps=args.fill_gaps)
    out = args.out or "matrix.csv"
    _save_atomic(out, m.save_csv)
    print(f"assembled {len(m)} rows x {len(m.columns)} intersections -> {out}")
    return 0


def cmd_resample(args) -> int:
    m = resample(_load_matrix(args), args.interval, args.agg)
    out = args.out or "matrix_resampled.csv"
    _save_atomic(out, m.save_csv)
    print(f"resampled to {args.interval:g} min: {len(m)} rows -> {out}")
    return 0


# ------------------------------------------------------------------ train / predict / evaluate

def _one_model(args) -> str:
    models = args.models or ("HA",)
    if len(models) != 1:
        raise UsageError("train takes exactly one model in --models")
    return models[0]


def cmd_train(args) -> int:
    m = _load_matrix(args)
    model = _one_model(args)
    net = _network(args, required=(model == "SVR_GRAPH"))
    grid = SampleGrid(args.interval, args.seq, args.pred)
    if not grid.is_consistent():
        raise UsageError(f"interval {args.interval:g} must divide sequence and horizon lengths")
    split = _split(args, m)
    train_m = resample(m.select_days(split.train_days), grid.interval)
    nodes = args.node or list(m.columns)
    out_dir = Path(args.out or "models")
    out_dir.mkdir(parents=True, exist_ok=True)
    hyper = _hyper(args)
    for node in nodes:
        if node not in m.columns:
            raise UsageError(f"unknown intersection {node!r}")
        forecaster = make_forecaster(model, hyper).fit(TrainingData(train_m, node, grid, net))
        path = out_dir / f"{model}_{node}.json"
        _save_atomic(path, lambda tmp: save_model(forecaster, tmp))
        log.info("saved %s", path)
    print(f"trained {model} for {len(nodes)} intersection(s) -> {out_dir}")
    return 0


def cmd_predict(args) -> int:
    m = _load_matrix(args)
    if not args.model_file:
        raise UsageError("missing required option --model-file")
    forecasters = [load_model(_need_file(p, "model-file")) for p in args.model_file]
    net = _network(args, required=any(f.name == "SVR_GRAPH" for f in forecasters))
    if args.split_file or args.split_given:
        m = m.select_days(_split(args, m).test_days)
    rows = []
    for f in forecasters:
        if f.node not in m.columns:
            raise SchemaError(f"matrix has no column {f.node!r} required by the model")
        g = f.grid
        test = window(resample(m, g.interval), f.node, g, net is not None, net)
        pred = f.predict(test)
        for t, y, p in zip(test.target_times, test.targets, pred):
            rows.append([str(t.astype("datetime64[s]")), f.node, f.name, f"{g.interval:g}",
                         f"{g.sequence_length:g}", f"{g.prediction_length:g}", fmt_float(y), repr(float(p))])
    rows.sort(key=lambda r: (r[2], r[1], r[0]))
    out = args.out or "predictions.csv"
    _write_csv(out, PREDICTION_HEADER, rows)
    print(f"wrote {len(rows)} predictions -> {out}")
    return 0


def _read_predictions(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        for col in ("timestamp", "node", "truth", "pred"):
            if col not in reader.fieldnames:
                raise SchemaError(f"{path}: predictions file lacks column {col!r}")
        rows = list(reader)
    for lineno, r in enumerate(rows, start=2):
        try:
            r["truth"], r["pred"] = float(r["truth"]), float(r["pred"])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return rows


def cmd_evaluate(args) -> int:
    rows = _read_predictions(_need_file(args.predictions, "predictions"))
    if args.models:
        rows = [r for r in rows if r.get("model", "").upper() in args.models]
    kinds = {r.get("model", "") for r in rows}
    if len(kinds) > 1:
        raise UsageError(f"predictions mix models {sorted(kinds)}; pick one with --models")
    truth, pred = defaultdict(list), defaultdict(list)
    for r in rows:
        truth[r["node"]].append(r["truth"])
        pred[r["node"]].append(r["pred"])
    if not truth:
        print("no predictions to evaluate")
        return 0
    report = evaluate({k: np.array(v) for k, v in truth.items()}, {k: np.array(v) for k, v in pred.items()})
    out = args.out or "report.csv"
    _save_atomic(out, report.save_csv)
    for node, r, mae_, c, n in report.rows():
        print(f"{node:<20} rmse {r:8.2f}  mae {mae_:8.2f}  corr {_fmt2(c):>6}  n {n}")
    return 0


# ------------------------------------------------------------------ grid

def _prediction_rows(results: list[RunResult]) -> list[list[str]]:
    rows = []
    for r in results:
        g = r.grid
        for node, (times, truth, pred) in sorted(r.predictions.items()):
            for t, y, p in zip(times, truth, pred):
                rows.append([str(t.astype("datetime64[s]")), node, r.model, f"{g.interval:g}",
                             f"{g.sequence_length:g}", f"{g.prediction_length:g}", fmt_float(y),
                             repr(float(p))])
    return rows


def cmd_grid(args) -> int:
    matrix_path = _need_file(args.matrix, "matrix")
    m = IntensityMatrix.load_csv(matrix_path)
    spec = GridSpec(args.intervals, args.seqs, args.preds, args.models or MODEL_NAMES)
    net = _network(args, required="SVR_GRAPH" in spec.models)
    hyper = _hyper(args)
    workers = _workers(args)
    out_dir = Path(args.out or "results")
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.suite:
        splits = suite_splits(m)
    else:
        splits = [_split(args, m)]
    results: list[RunResult] = []
    for split in splits:
        results += run_grid(m, net, spec, split, hyper, workers, keep_predictions=args.save_predictions)
    results_path = out_dir / "results.csv"
    write_results_csv(results, results_path, include_nodes=True, record_timing=args.record_timing)

    ranked = rank_combinations(results, args.top_k)
    _write_csv(out_dir / "top_k.csv", ("rank", "interval_min", "seq_min", "pred_min", "avg_rmse",
                                       "avg_mae", "models"),
               [[i + 1, f"{c.interval:g}", f"{c.sequence_length:g}", f"{c.prediction_length:g}",
                 fmt_float(c.avg_rmse), fmt_float(c.avg_mae), "+".join(c.models)]
                for i, c in enumerate(ranked)])
    if args.save_predictions:
        _write_csv(out_dir / "predictions.csv", PREDICTION_HEADER, _prediction_rows(results))
    inputs = {"matrix": matrix_path}
    if net is not None:
        inputs.update(registry=args.registry, mask=args.mask)
    extra = {"splits": [s.label or "custom" for s in splits], "top_k": args.top_k}
    _save_atomic(out_dir / "manifest.txt",
                 lambda tmp: write_manifest(tmp, grid=spec, hyper=hyper, split=splits[0],
                                            inputs=inputs, seed=args.seed, extra=extra))
    failed = [r for r in results if r.status == "failed"]
    print(f"{len(results)} cells ({len(failed)} failed) -> {results_path}")
    for i, c in enumerate(ranked, start=1):
        print(f"{i:>2}. {c.interval:g} min / {c.sequence_length:g} min / {c.prediction_length:g} min  "
              f"avg rmse {c.avg_rmse:.2f}  avg mae {c.avg_mae:.2f}")
    return 0


# ------------------------------------------------------------------ synth

def cmd_synth(args) -> int:
    from .synth_oracle import ProfileSpec, make_scene, render_frames, simulate_process

    out = Path(args.out or "synth")
    profile = ProfileSpec(weekday_noise=args.weekday_noise, weekend_noise=args.weekend_noise)
    seed = args.seed if args.seed is not None else 0
    scene = make_scene(args.intersections, seed=seed, profile=profile, palette=_palette(args))
    paths = scene.write_inputs(out)
    start = dt.date.fromisoformat(args.start)
    sim = simulate_process(scene, args.days, args.cadence, seed, start)
    _save_atomic(out / "truth.csv", sim.matrix.save_csv)
    n_frames = 0
    if not args.no_render:
        n_frames = len(render_frames(scene, sim, out / "frames", _workers(args)))
    print(f"scene with {len(scene.net.segments)} segments, {len(scene.net.intersections)} intersections; "
          f"{len(sim.timestamps)} instants, {n_frames} frames -> {out}")
    log.info("inputs: %s", ", ".join(str(p) for p in paths.values()))
    return 0


# ------------------------------------------------------------------ report

def _fmt2(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.2f}"


def render_tables(rows) -> str:
    """Markdown tables, one per split: combination rows by model columns.

    Rows run by interval, then sequence length, then horizon. The best value in
    each metric column is bold (lowest RMSE/MAE, highest CORR).
    """
    agg = [r for r in rows if r.node == AGGREGATE]
    if not agg:
        return "no results\n"
    out = []
    for split in sorted({r.split for r in agg}):
        cells = {(r.combo, r.model): r for r in agg if r.split == split}
        models = [m for m in MODEL_NAMES if any(k[1] == m for k in cells)]
        models += sorted({k[1] for k in cells} - set(models))
        combos = sorted({k[0] for k in cells})
        best = {}
        for model in models:
            col = [cells[(c, model)] for c in combos if (c, model) in cells]
            for metric, pick in (("rmse", min), ("mae", min), ("corr", max)):
                vals = [getattr(r, metric) for r in col if getattr(r, metric) is not None]
                if vals:
                    best[(model, metric)] = round(pick(vals), 2)
        out.append(f"## split {split}\n")
        head = ["interval (min)", "sequence (min)", "horizon (min)"]
        for model in models:
            head += [f"{model} RMSE", f"{model} MAE", f"{model} CORR"]
        out.append("| " + " | ".join(head) + " |")
        out.append("|" + "---|" * len(head))
        for c in combos:
            line = [f"{c[0]:g}", f"{c[1]:g}", f"{c[2]:g}"]
            for model in models:
                r = cells.get((c, model))
                for metric in ("rmse", "mae", "corr"):
                    v = getattr(r, metric) if r is not None else None
                    text = _fmt2(v)
                    if v is not None and best.get((model, metric)) == round(v, 2):
                        text = f"**{text}**"
                    line.append(text)
            out.append("| " + " | ".join(line) + " |")
        out.append("")
    return "\n".join(out) + "\n"


def plot_predictions(rows: list[dict], out_dir: Path, limit: int | None = None) -> list[Path]:
    """One SVG per (model, combination, node): truth and prediction over time."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "congestion-lab"
    groups = defaultdict(list)
    for r in rows:
        key = (r.get("model", ""), r.get("interval_min", ""), r.get("seq_min", ""), r.get("pred_min", ""),
               r["node"])
        groups[key].append(r)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key in sorted(groups)[:limit]:
        model, iv, sq, pr, node = key
        g = sorted(groups[key], key=lambda r: r["timestamp"])
        t = np.array([np.datetime64(r["timestamp"]) for r in g])
        fig, ax = plt.subplots(figsize=(10, 3.5))
        ax.plot(t, [r["truth"] for r in g], lw=0.8, label="truth")
        ax.plot(t, [r["pred"] for r in g], lw=0.8, label="prediction")
        title = f"{node} {model}".strip()
        if iv:
            title += f"  ({iv} / {sq} / {pr} min)"
        ax.set_title(title)
        ax.set_ylabel("intensity")
        ax.legend(loc="upper right")
        fig.autofmt_xdate()
        stem = "_".join(p for p in (model, iv, sq, pr, node) if p).replace("/", "-")
        path = out_dir / f"{stem}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def cmd_report(args) -> int:
    rows = read_results_csv(_need_file(args.results, "results"))
    text = render_tables(rows)
    print(text, end="")
    out_dir = Path(args.out or "report")
    if rows:
        _write_text(out_dir / "tables.md", text)
    if args.predictions:
        preds = _read_predictions(_need_file(args.predictions, "predictions"))
        if args.models:
            preds = [r for r in preds if r.get("model", "").upper() in args.models]
        paths = plot_predictions(preds, out_dir / "plots", args.plot_limit)
        print(f"wrote {len(paths)} plot(s) -> {out_dir / 'plots'}")
    return 0


# ------------------------------------------------------------------ parser

def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", metavar="PATH", help="TOML config file; flags override its keys")
    g.add_argument("--workers", type=int, metavar="N",
                   help=f"worker processes (default ${WORKERS_ENV}, else CPU count)")
    g.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    g.add_argument("-q", "--quiet", action="store_true", help="only log errors")


def _add_network(p, required_note: str = "") -> None:
    p.add_argument("--registry", metavar="CSV", help="segment registry CSV" + required_note)
    p.add_argument("--mask", metavar="PNG", help="annotation mask PNG" + required_note)


def _add_palette(p) -> None:
    p.add_argument("--palette", metavar="TOML", help="palette file (default: built-in palette)")


def _add_hyper(p) -> None:
    g = p.add_argument_group("model hyperparameters")
    g.add_argument("--svr-c", type=float, default=1.0, help="SVR box constraint C (default 1)")
    g.add_argument("--svr-eps", type=float, default=0.1,
                   help="SVR tube width on standardized targets (default 0.1)")
    g.add_argument("--svr-sigma", type=_sigma, default="auto",
                   help="RBF bandwidth or 'auto' for the median heuristic (default auto)")
    g.add_argument("--svr-tol", type=float, default=1e-7, help="SMO KKT tolerance (default 1e-7)")
    g.add_argument("--svr-max-rows", type=int, default=5000,
                   help="cap on SVR training rows, thinned uniformly (default 5000)")
    g.add_argument("--arima-order", type=_order, default=(1, 0, 0), metavar="P,D,Q",
                   help="ARIMA order (default 1,0,0)")
    g.add_argument("--fit-timeout", type=float, default=600.0, metavar="SEC",
                   help="abort a single fit after this many seconds (default 600)")


class _SplitAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        namespace.split_given = True


def _add_split(p, default: str = "first-k-train:20") -> None:
    p.add_argument("--split", default=default, action=_SplitAction, metavar="POLICY",
                   help="calendar split: first-k-train[:k], weekdays-only[:k], weekdays-train/weekends-test, "
                        f"weekends-train/weekdays-test[:k_test], weekends-only[:k] (default {default})")
    p.add_argument("--split-file", metavar="PATH", help="explicit split file ([train]/[test] date lists)")
    p.set_defaults(split_given=False)


def _add_combo(p) -> None:
    p.add_argument("--interval", type=float, default=0.5, help="sampling interval in minutes (default 0.5)")
    p.add_argument("--seq", type=float, default=45.0, help="sequence length in minutes (default 45)")
    p.add_argument("--pred", type=float, default=5.0, help="prediction horizon in minutes (default 5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="congestion-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("extract", help="classify frame pixels into per-segment level histograms")
    _add_common(p)
    p.add_argument("--frames", metavar="DIR", help="directory of YYYYMMDD_HHMMSS.png frames")
    _add_network(p)
    _add_palette(p)
    p.add_argument("--out", metavar="CSV", help="extraction CSV (default extraction.csv)")
    p.add_argument("--skip-bad", action="store_true", help="log and skip unreadable frames")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("assemble", help="build the intensity matrix from an extraction CSV")
    _add_common(p)
    p.add_argument("--extraction", metavar="CSV", help="extraction CSV")
    _add_network(p)
    p.add_argument("--aggregation", choices=("count", "value-sum"), default="count",
                   help="intensity rule (default count of level 3/4 pixels)")
    p.add_argument("--fill-gaps", action="store_true",
                   help="emit a row for every 30 s slot, missing where no frame exists")
    p.add_argument("--out", metavar="CSV", help="matrix CSV (default matrix.csv)")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("resample", help="decimate (or average) a matrix to a coarser interval")
    _add_common(p)
    p.add_argument("--matrix", metavar="CSV", help="input matrix CSV")
    p.add_argument("--interval", type=float, default=1.0, help="target interval in minutes (default 1)")
    p.add_argument("--agg", choices=("decimate", "mean"), default="decimate",
                   help="sample selection or block mean (default decimate)")
    p.add_argument("--out", metavar="CSV", help="output CSV (default matrix_resampled.csv)")
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("train", help="fit one model per intersection and save the models")
    _add_common(p)
    p.add_argument("--matrix", metavar="CSV", help="intensity matrix CSV")
    _add_network(p, " (needed for SVR_GRAPH)")
    p.add_argument("--models", type=_model_list, metavar="NAME", help=f"one of {','.join(MODEL_NAMES)}")
    p.add_argument("--node", action="append", metavar="ID", help="intersection (repeatable; default all)")
    _add_combo(p)
    _add_split(p)
    _add_hyper(p)
    p.add_argument("--out", metavar="DIR", help="model directory (default models)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast with saved models")
    _add_common(p)
    p.add_argument("--matrix", metavar="CSV", help="intensity matrix CSV")
    _add_network(p, " (needed for SVR_GRAPH)")
    p.add_argument("--model-file", action="append", metavar="JSON", help="saved model (repeatable)")
    _add_split(p)
    p.add_argument("--out", metavar="CSV", help="predictions CSV (default predictions.csv)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="RMSE/MAE/CORR per intersection from a predictions CSV")
    _add_common(p)
    p.add_argument("--predictions", metavar="CSV", help="predictions CSV")
    p.add_argument("--models", type=_model_list, metavar="NAME", help="only rows of this model")
    p.add_argument("--out", metavar="CSV", help="report CSV (default report.csv)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", help="run the interval x sequence x horizon x model grid")
    _add_common(p)
    p.add_argument("--matrix", metavar="CSV", help="intensity matrix CSV")
    _add_network(p, " (needed for SVR_GRAPH)")
    p.add_argument("--intervals", type=_float_list, default=GridSpec.intervals, metavar="LIST",
                   help="sampling intervals in minutes (default 0.5,1,5)")
    p.add_argument("--seqs", type=_float_list, default=GridSpec.sequence_lengths, metavar="LIST",
                   help="sequence lengths in minutes (default 15,30,45,60)")
    p.add_argument("--preds", type=_float_list, default=GridSpec.prediction_lengths, metavar="LIST",
                   help="horizons in minutes (default 5,15,30,45,60)")
    p.add_argument("--models", type=_model_list, metavar="LIST",
                   help=f"comma-separated subset of {','.join(MODEL_NAMES)} (default all)")
    _add_split(p)
    p.add_argument("--suite", action="store_true",
                   help="run the four weekday/weekend splits instead of --split")
    _add_hyper(p)
    p.add_argument("--top-k", type=int, default=DEFAULT_TOP_K, help=f"ranked combinations kept (default {DEFAULT_TOP_K})")
    p.add_argument("--record-timing", action="store_true",
                   help="fill duration_ms (makes the results file run-dependent)")
    p.add_argument("--save-predictions", action="store_true", help="also write predictions.csv")
    p.add_argument("--seed", type=int, help="seed recorded in the manifest")
    p.add_argument("--out", metavar="DIR", help="output directory (default results)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("synth", help="generate a synthetic scene, ground truth and frames")
    _add_common(p)
    _add_palette(p)
    p.add_argument("--days", type=int, default=1, help="days to simulate (default 1)")
    p.add_argument("--start", default="2019-11-01", help="first day, ISO date (default 2019-11-01)")
    p.add_argument("--intersections", type=int, default=5, help="ring size (default 5)")
    p.add_argument("--cadence", type=int, default=30, help="seconds between frames (default 30)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--weekday-noise", type=float, default=1.0, help="weekday noise factor (default 1)")
    p.add_argument("--weekend-noise", type=float, default=1.0, help="weekend noise factor (default 1)")
    p.add_argument("--no-render", action="store_true", help="write inputs and truth only")
    p.add_argument("--out", metavar="DIR", help="output directory (default synth)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="render result tables and truth-vs-prediction plots")
    _add_common(p)
    p.add_argument("--results", metavar="CSV", help="results CSV from grid")
    p.add_argument("--predictions", metavar="CSV", help="predictions CSV to plot as SVG")
    p.add_argument("--models", type=_model_list, metavar="LIST", help="plot only these models")
    p.add_argument("--plot-limit", type=int, default=50, help="maximum number of plots (default 50)")
    p.add_argument("--out", metavar="DIR", help="output directory (default report)")
    p.set_defaults(func=cmd_report)
    return parser


def _load_config(path: str, sub: argparse.ArgumentParser) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"--config: {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"--config: {path}: {exc}") from None
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "func")}
    flat = {}

    def walk(d, prefix):
        for k, v in d.items():
            k = k.replace("-", "_")
            if isinstance(v, dict):
                walk(v, prefix + k + "_")
            else:
                # [svr] c = 1 means svr_c; a table may also just group plain keys.
                key = prefix + k if prefix + k in actions or k not in actions else k
                flat[key] = v

    walk(data, "")
    out = {}
    for key, value in flat.items():
        if key not in actions:
            raise UsageError(f"--config: unknown key {key!r} for {sub.prog}")
        action = actions[key]
        if isinstance(value, list) and action.type is not None:
            value = ",".join(str(v) for v in value)
        if action.type is not None and not isinstance(value, bool):
            try:
                value = action.type(value if action.type in (int, float) else str(value))
            except (argparse.ArgumentTypeError, ValueError, TypeError) as exc:
                raise UsageError(f"--config: bad value for {key!r}: {exc}") from None
        if isinstance(action, argparse._AppendAction) and not isinstance(value, list):
            value = [value]
        out[key] = value
    if "split" in out:
        out["split_given"] = True
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            sub.set_defaults(**_load_config(args.config, sub))
            args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"congestion-lab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CongestionLabError as exc:
        print(f"congestion-lab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"congestion-lab: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"congestion-lab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
