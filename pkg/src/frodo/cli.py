"""Pipeline driver: fit, score, eval, and calibrate over manifests.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 I/O failure. The commands add no computation of their own; every
number they emit is reproducible by direct library calls.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import evaluation, gaussian_stats, scoring, tensor_io
from .errors import (
    DegenerateLabels,
    FrodoError,
    InsufficientSamples,
    IoError,
    NumericalError,
    ValidationError,
)
from .layers import LAYER_ORDER

SCORE_COLUMNS = ("sample_id", "label") + LAYER_ORDER + ("fused", "baseline")


def _exit_code(err: FrodoError) -> int:
    if isinstance(err, NumericalError):
        return 3
    if isinstance(err, IoError):
        return 4
    return 2


def _frodo_command(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except FrodoError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(_exit_code(err))

    return wrapper


def _worker_count() -> int:
    raw = os.environ.get("FRODO_THREADS")
    if raw is None:
        return 1
    n = int(raw)
    return os.cpu_count() or 1 if n == 0 else n


def _parse_layers(text: str) -> list[str]:
    layers = [t.strip() for t in text.split(",") if t.strip()]
    if not layers:
        raise ValidationError("no layers requested")
    for layer in layers:
        if layer not in LAYER_ORDER:
            raise ValidationError(f"unknown layer {layer!r}")
    return layers


@click.group()
def main():
    """Out-of-distribution detection from per-layer feature activations."""


@main.command("fit")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--layers", default=",".join(LAYER_ORDER), show_default=True)
@click.option("--lambda", "lam", default=0.01, show_default=True, type=float)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_frodo_command
def cmd_fit(manifest_path, layers, lam, out_dir):
    """Fit per-layer Gaussian statistics over in-distribution manifest rows."""
    layer_list = _parse_layers(layers)
    manifest = tensor_io.read_manifest(manifest_path)
    fit_rows = [r for r in manifest if r.label == "in"]
    if len(fit_rows) < 2:
        raise InsufficientSamples(
            f"manifest has {len(fit_rows)} in-distribution rows; need at least 2"
        )
    bundle = {}
    for layer in layer_list:
        feats = (
            gaussian_stats.pool_spatial(tensor_io.load_layer_tensor(rec, layer), layer)
            for rec in fit_rows
        )
        bundle[layer] = gaussian_stats.fit_stats(feats, lam)
    gaussian_stats.save_stats_bundle(bundle, out_dir)
    for layer in layer_list:
        s = bundle[layer]
        click.echo(
            f"{layer}: n={s.n} d={s.d} lambda={s.lam} jitter_used={s.jitter_used}"
        )


def _score_record(rec, bundle, rule, calib):
    features = {
        layer: gaussian_stats.pool_spatial(
            tensor_io.load_layer_tensor(rec, layer), layer
        )
        for layer in bundle
        if layer in rec.tensor_paths
    }
    if not features:
        raise ValidationError(f"sample {rec.sample_id!r} has no tensors for fitted layers")
    score = scoring.score_sample(bundle, features, rule, calib, sample_id=rec.sample_id)
    baseline = None
    if rec.softmax_path is not None:
        baseline = scoring.baseline_msp(tensor_io.load_softmax(rec))
    return score, baseline


@main.command("score")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--stats", "stats_dir", required=True, type=click.Path())
@click.option("--fusion", default="single:L3", show_default=True)
@click.option("--calib", "calib_path", default=None, type=click.Path())
@click.option("--out", "out_csv", required=True, type=click.Path())
@_frodo_command
def cmd_score(manifest_path, stats_dir, fusion, calib_path, out_csv):
    """Score every manifest row against a fitted stats bundle."""
    rule = scoring.FusionRule.parse(fusion)
    manifest = tensor_io.read_manifest(manifest_path)
    bundle = gaussian_stats.load_stats_bundle(stats_dir)
    calib = scoring.load_calibration(calib_path) if calib_path else None

    workers = _worker_count()
    task = lambda rec: _score_record(rec, bundle, rule, calib)
    results: list = [None] * len(manifest)
    failures: list[tuple[str, str]] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(task, rec) for rec in manifest]
        for i, (rec, fut) in enumerate(zip(manifest, futures)):
            try:
                results[i] = fut.result()
            except FrodoError as err:
                failures.append((rec.sample_id, str(err)))
    else:
        for i, rec in enumerate(manifest):
            try:
                results[i] = task(rec)
            except FrodoError as err:
                failures.append((rec.sample_id, str(err)))
    if failures:
        for sid, msg in failures:
            click.echo(f"failed: {sid}: {msg}", err=True)
        raise ValidationError(f"{len(failures)} sample(s) failed to score")

    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        for rec, (score, baseline) in zip(manifest, results):
            row = [rec.sample_id, rec.label]
            for layer in LAYER_ORDER:
                v = score.per_layer.get(layer)
                row.append("" if v is None else repr(v))
            row.append(repr(score.fused))
            row.append("" if baseline is None else repr(baseline))
            writer.writerow(row)
    sidecar = {
        "fusion_rule": str(rule),
        "lambda": {layer: bundle[layer].lam for layer in sorted(bundle)},
        "calibration": str(calib_path) if calib_path else None,
        "stats_bundle": str(stats_dir),
    }
    with open(str(out_csv) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    click.echo(f"scored {len(manifest)} samples -> {out_csv}")


def read_scores_csv(path) -> tuple[list[dict], list[str]]:
    """Rows of a scores CSV plus the method columns that carry any value."""
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            rows = list(reader)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    methods = [
        col
        for col in LAYER_ORDER + ("fused", "baseline")
        if any((row.get(col) or "").strip() for row in rows)
    ]
    return rows, methods


def _method_scores(rows, method) -> list[evaluation.LabeledScore]:
    out = []
    for row in rows:
        cell = (row.get(method) or "").strip()
        if not cell or row["label"] not in ("in", "ood"):
            continue
        out.append(evaluation.LabeledScore(row["sample_id"], float(cell), row["label"]))
    return out


@main.command("eval")
@click.option("--scores", "scores_csv", required=True, type=click.Path())
@click.option("--sensitivity", default=0.99, show_default=True, type=float)
@click.option("--out", "out_json", required=True, type=click.Path())
@click.option("--roc-dir", default=None, type=click.Path())
@_frodo_command
def cmd_eval(scores_csv, sensitivity, out_json, roc_dir):
    """ROC/AUC per method plus the operating point at the sensitivity target."""
    rows, methods = read_scores_csv(scores_csv)
    if not methods:
        raise DegenerateLabels(f"{scores_csv}: no score columns populated")
    per_method = {}
    operating_points = {}
    for method in methods:
        labeled = _method_scores(rows, method)
        result = evaluation.roc_auc(labeled)
        per_method[method] = result
        ood = [s.score for s in labeled if s.label == "ood"]
        t = evaluation.threshold_at_sensitivity(ood, sensitivity)
        tp, fp, tn, fn = evaluation.confusion_at(labeled, t)
        operating_points[method] = {
            "threshold": t,
            "sensitivity_target": sensitivity,
            "tp": tp,
            "fp": fp,
            "tn": tn,
            "fn": fn,
        }
    evaluation.emit_report(
        per_method,
        operating_points,
        out_json,
        roc_dir,
        config={"sensitivity": sensitivity, "scores": str(scores_csv)},
    )
    for method in methods:
        click.echo(f"{method}: auc={per_method[method].auc:.6f}")


@main.command("calibrate")
@click.option("--scores", "scores_csv", required=True, type=click.Path())
@click.option("--sensitivity", default=0.99, show_default=True, type=float)
@click.option("--out", "out_json", default=None, type=click.Path())
@_frodo_command
def cmd_calibrate(scores_csv, sensitivity, out_json):
    """Per-method rejection threshold at the target OOD sensitivity."""
    rows, methods = read_scores_csv(scores_csv)
    thresholds = {}
    for method in methods:
        ood = [
            float(row[method])
            for row in rows
            if row["label"] == "ood" and (row.get(method) or "").strip()
        ]
        if not ood:
            raise DegenerateLabels(f"{scores_csv}: no ood rows for {method}")
        thresholds[method] = evaluation.threshold_at_sensitivity(ood, sensitivity)
        click.echo(f"{method}: threshold={thresholds[method]!r}")
    if out_json:
        with open(out_json, "w") as f:
            json.dump(
                {"sensitivity_target": sensitivity, "thresholds": thresholds},
                f,
                indent=2,
                sort_keys=True,
            )
            f.write("\n")


if __name__ == "__main__":
    main()
