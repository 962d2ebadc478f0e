"""Command-line entry point: ``selfimpute train|detect|localize|eval|synth|plotdata``.

Every subcommand exits 0 on success. Failures exit non-zero and print a single
JSON object ``{"error": <kind>, "message": <text>}`` on stderr.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .data import DataError, DatasetSpec, SyntheticSpec, generate_synthetic, load_csv, read_csv, write_series_csv
from .detection import DetectionConfig, intervals_to_flags, read_intervals_csv, runs, write_intervals_csv
from .metrics import evaluate
from .persistence import CheckpointError, load_checkpoint, save_checkpoint
from .pipeline import HEAD_FOR_MODE, detect as run_detect, fit
from .scoring import POINT, SEQUENCE, AnomalyScoreTrace
from .training import TrainConfig

EXIT_FAILURE = 1
EXIT_USAGE = 2


def _fail(kind: str, message: str, code: int) -> None:
    click.echo(json.dumps({"error": kind, "message": message}), err=True)
    sys.exit(code)


class JsonErrorGroup(click.Group):
    """Click group that reports every failure as JSON on stderr."""

    def main(self, args=None, prog_name=None, **extra):
        try:
            return super().main(args=args, prog_name=prog_name, standalone_mode=False, **extra)
        except click.exceptions.Exit as exc:
            sys.exit(exc.exit_code)
        except click.Abort:
            _fail("aborted", "aborted", EXIT_FAILURE)
        except click.ClickException as exc:
            _fail("usage", exc.format_message(), EXIT_USAGE)
        except (DataError, CheckpointError) as exc:
            _fail(type(exc).__name__, str(exc), EXIT_FAILURE)
        except FloatingPointError as exc:
            _fail("diverged", str(exc), EXIT_FAILURE)
        except (ValueError, KeyError, TypeError) as exc:
            _fail("invalid", str(exc), EXIT_FAILURE)
        except OSError as exc:
            _fail("io", str(exc), EXIT_FAILURE)


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise DataError(f"{path} must contain a JSON object")
    return data


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


@click.group(cls=JsonErrorGroup)
@click.option("-v", "--verbose", count=True, help="Log progress to stderr (-vv for debug).")
def main(verbose: int) -> None:
    """Self-imputation anomaly detection for multivariate time series."""
    level = logging.WARNING if not verbose else (logging.INFO if verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
def train(config_path: str) -> None:
    """Train a model and write its checkpoint and metrics log.

    The config holds ``data`` (path, label_column, splits, normalize),
    ``train`` (model and optimiser settings), optional ``detect`` settings used
    for threshold calibration, and ``output`` (checkpoint, metrics_log).
    Relative paths are taken from the config file's directory.
    """
    base = Path(config_path).resolve().parent
    cfg = _read_json(config_path)
    data = dict(cfg.get("data") or {})
    if "path" not in data:
        raise DataError("config needs data.path")
    data["path"] = str(_resolve(base, data["path"]))
    spec = DatasetSpec(**data)
    tcfg = TrainConfig.from_dict(cfg.get("train") or {})
    mode = POINT if HEAD_FOR_MODE[POINT] == tcfg.head else SEQUENCE
    dcfg = DetectionConfig(**{"window": tcfg.window, "mode": mode, **(cfg.get("detect") or {})})
    output = cfg.get("output") or {}
    ckpt_path = _resolve(base, output.get("checkpoint", "model.ckpt"))
    log_path = _resolve(base, output.get("metrics_log", "metrics.json"))

    train_part, val, _ = load_csv(spec)
    history: list = []
    ckpt = fit([train_part], [val], tcfg, dcfg, use_normalization=spec.normalize, history=history)
    save_checkpoint(ckpt_path, ckpt)
    log_path.write_text(json.dumps({
        "train_config": tcfg.to_dict(),
        "epochs": history,
        "best_val_loss": min((h["val_loss"] for h in history), default=None),
        "thresholds": ckpt.thresholds,
    }, indent=2))
    click.echo(json.dumps({"checkpoint": str(ckpt_path), "metrics_log": str(log_path),
                           "thresholds": ckpt.thresholds}))


def _detect_options(fn):
    opts = [
        click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--label-column", default=None, help="Column to ignore as ground-truth labels."),
        click.option("--threshold", type=float, default=None, help="Override the calibrated threshold."),
        click.option("--window", type=int, default=None, help="Window length (default: training window)."),
        click.option("--stride", type=int, default=8, show_default=True),
        click.option("--no-localize", is_flag=True, help="Report flagged windows without boundary search."),
        click.option("--scoring", type=click.Choice(["dtw", "residual"]), default="dtw", show_default=True),
        click.option("--scheme", type=click.Choice(["full", "trailing"]), default="full", show_default=True),
        click.option("--period", type=int, default=4, show_default=True, help="Point-mode masking period."),
        click.option("--no-refine", is_flag=True, help="Point mode: skip peak-exclusion re-scoring."),
        click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
                     help="Interval CSV (default: stdout)."),
        click.option("--scores", "scores_path", type=click.Path(dir_okay=False), default=None,
                     help="Also write the score trace CSV here."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _run_detection(mode, model_path, input_path, label_column, threshold, window, stride,
                   no_localize, scoring, scheme, period, no_refine, out_path, scores_path) -> None:
    ckpt = load_checkpoint(model_path)
    series = read_csv(input_path, label_column)
    dcfg = DetectionConfig(
        window=window or ckpt.model.window, stride=stride, mode=mode, localize=not no_localize,
        scoring=scoring, scheme=scheme, period=period, refine=not no_refine,
    )
    intervals, trace = run_detect(ckpt, series, dcfg, threshold)
    rows = [(series.id, iv) for iv in intervals]
    if out_path:
        write_intervals_csv(out_path, rows)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["series_id", "start", "end", "peak_score"])
        for sid, iv in rows:
            writer.writerow([sid, iv.start, iv.end, repr(float(iv.score))])
    if scores_path:
        trace.to_csv(scores_path)


@main.command()
@click.option("--mode", type=click.Choice([POINT, SEQUENCE]), required=True)
@_detect_options
def detect(mode, **kwargs) -> None:
    """Flag anomalies in a CSV series with a trained checkpoint."""
    _run_detection(mode, **kwargs)


@main.command()
@_detect_options
def localize(**kwargs) -> None:
    """Sequence detection with start/end localization (same options as detect)."""
    _run_detection(SEQUENCE, **kwargs)


def _scores_per_step(trace: AnomalyScoreTrace, T: int) -> np.ndarray:
    if trace.mode == POINT:
        return np.asarray(trace.scores, dtype=np.float64)
    out = np.zeros(T)
    for (a, b), s in zip(trace.windows, trace.scores):
        out[a:b + 1] = np.maximum(out[a:b + 1], s)
    return out


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Interval CSV written by detect/localize.")
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Series CSV with a 0/1 label column.")
@click.option("--label-column", default="label", show_default=True)
@click.option("--series-id", default=None, help="Which series of the interval file to score.")
@click.option("--scores", "scores_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Score trace CSV; enables AUROC/AUPRC.")
@click.option("--point-adjust", is_flag=True, help="Also report point-adjusted P/R/F1.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def eval_(pred_path, truth_path, label_column, series_id, scores_path, point_adjust, out_path) -> None:
    """Score detections against ground-truth labels; prints a JSON report."""
    truth_series = read_csv(truth_path, label_column)
    by_id = read_intervals_csv(pred_path)
    if series_id is not None:
        pred_intervals = by_id.get(series_id, [])
    elif len(by_id) > 1:
        raise DataError(f"interval file holds several series {sorted(by_id)}; pass --series-id")
    else:
        pred_intervals = next(iter(by_id.values()), [])
    T = truth_series.T
    if any(iv.end >= T for iv in pred_intervals):
        raise DataError("predicted interval extends past the end of the truth series")
    truth = truth_series.labels.astype(bool)
    scores = None
    if scores_path:
        scores = _scores_per_step(AnomalyScoreTrace.from_csv(scores_path), T)
        if scores.size != T:
            raise DataError(f"score trace has {scores.size} steps, truth has {T}")
    report = evaluate(intervals_to_flags(pred_intervals, T), truth, scores,
                      pred_intervals, runs(truth), point_adjusted=point_adjust)
    text = report.to_json()
    if out_path:
        Path(out_path).write_text(text)
    click.echo(text)


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Series CSV.")
@click.option("--intervals", "intervals_path", type=click.Path(dir_okay=False), default=None,
              help="Also write the planted intervals as an interval CSV.")
def synth(spec_path, out_path, intervals_path) -> None:
    """Generate a labelled synthetic series from a JSON recipe."""
    spec = SyntheticSpec.from_dict(_read_json(spec_path))
    syn = generate_synthetic(spec)
    write_series_csv(syn.series, out_path)
    if intervals_path:
        write_intervals_csv(intervals_path, [(Path(out_path).stem, iv) for iv in syn.truth])
    click.echo(json.dumps({"series": out_path, "length": syn.series.T, "variates": syn.series.d,
                           "anomalies": len(syn.truth)}))


@main.command()
@click.option("--scores", "scores_paths", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Score trace CSV; repeat to overlay variants (named by file stem).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def plotdata(scores_paths, out_path) -> None:
    """Long-form CSV (variant, x, measure, value) for plotting score traces."""
    fh = open(out_path, "w", newline="") if out_path else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(["variant", "x", "measure", "value"])
        for path in scores_paths:
            trace = AnomalyScoreTrace.from_csv(path)
            name = Path(path).stem
            xs = range(len(trace.scores)) if trace.mode == POINT else [a for a, _ in trace.windows]
            for x, s in zip(xs, trace.scores):
                writer.writerow([name, x, "score", repr(float(s))])
                writer.writerow([name, x, "threshold", repr(float(trace.threshold))])
                writer.writerow([name, x, "flag", int(s > trace.threshold)])
    finally:
        if out_path:
            fh.close()


if __name__ == "__main__":
    main()
