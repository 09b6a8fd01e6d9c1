"""Command-line experiment harness.

Single binary with subcommands: generate synthetic data, run the pipeline
(in-process or as the simulated multi-node protocol), run ablation
baselines, audit a transcript for privacy violations, recompute bound
diagnostics, and evaluate a saved ensemble. Every run echoes its fully
resolved configuration into the output directory so results are
reconstructible from the artifacts alone.

Exit codes: 0 success, 1 configuration error, 2 runtime error. Errors go
to stderr.
"""

from __future__ import annotations

import csv
import functools
import os
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from .datasets import LabeledDataset, blobs3, read_csv, read_features, write_csv, write_features
from .errors import ConfigError, ProtoAdaptError
from .nets import TrainConfig, accuracy
from .pipeline import (
    AdaptationRecord,
    AdaptationReport,
    PseudoTargetDecision,
    RunConfig,
    bound_report,
    direct_adapt_baseline,
    run_algorithm1,
    source_combined_baseline,
    verify_ensemble_bound,
)
from .presets import BLOBS3_SEED, blobs3_config
from .protocol import Transcript, audit_privacy, load_ensemble, run_distributed, save_ensemble

OUTDIR_ENV = "PROTOADAPT_OUTDIR"

_DEFAULT_CONFIG = {
    "preset": None,
    "preset_n": 500,
    "sources": [],
    "target": None,
    "arch": {"hidden": [64], "latent_dim": 16},
    "train": {"epochs": 200, "batch_size": 16, "lr": 1e-3, "optimizer": "adam"},
    "adapt": {
        "steps": 500,
        "batch": 64,
        "lr": 1e-3,
        "optimizer": "adam",
        "projections": 100,
        "pairing": "sorted",
        "fixed_intermediate": False,
    },
    "thresholds": {"confidence": 0.8, "fraction": 0.8},
    "weighting": "swd",
    "bound": {"xi": 0.05, "zeta": 1.0},
    "mode": "local",
    "seed": 0,
    "workers": 1,
}


# --------------------------------------------------------------------------
# Config plumbing
# --------------------------------------------------------------------------


def _merge(base: dict, override: dict, path: str = "") -> dict:
    """Recursive merge; keys absent from the schema are hard errors."""
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _runconfig_overrides(rc: RunConfig) -> dict:
    """Express a RunConfig in the config-file shape (used by presets)."""
    return {
        "arch": {"hidden": list(rc.hidden), "latent_dim": rc.latent_dim},
        "train": {
            "epochs": rc.train.epochs,
            "batch_size": rc.train.batch_size,
            "lr": rc.train.lr,
            "optimizer": rc.train.optimizer,
        },
        "adapt": {
            "steps": rc.adapt_steps,
            "batch": rc.adapt_batch,
            "lr": rc.adapt_lr,
            "optimizer": rc.adapt_optimizer,
            "projections": rc.n_projections,
            "pairing": rc.pairing,
            "fixed_intermediate": rc.fixed_intermediate,
        },
        "thresholds": {"confidence": rc.conf_threshold, "fraction": rc.frac_threshold},
        "weighting": rc.weight_strategy,
        "seed": rc.seed,
    }


def _to_runconfig(cfg: dict) -> RunConfig:
    try:
        return RunConfig(
            hidden=tuple(int(h) for h in cfg["arch"]["hidden"]),
            latent_dim=int(cfg["arch"]["latent_dim"]),
            train=TrainConfig(
                epochs=int(cfg["train"]["epochs"]),
                batch_size=int(cfg["train"]["batch_size"]),
                lr=float(cfg["train"]["lr"]),
                optimizer=cfg["train"]["optimizer"],
            ),
            n_projections=int(cfg["adapt"]["projections"]),
            adapt_steps=int(cfg["adapt"]["steps"]),
            adapt_batch=int(cfg["adapt"]["batch"]),
            adapt_lr=float(cfg["adapt"]["lr"]),
            adapt_optimizer=cfg["adapt"]["optimizer"],
            conf_threshold=float(cfg["thresholds"]["confidence"]),
            frac_threshold=float(cfg["thresholds"]["fraction"]),
            weight_strategy=cfg["weighting"],
            fixed_intermediate=bool(cfg["adapt"]["fixed_intermediate"]),
            pairing=cfg["adapt"]["pairing"],
            seed=int(cfg["seed"]),
            workers=int(cfg["workers"]),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from None


def _resolve_config(config_path, preset, flag_overrides: dict) -> dict:
    """defaults < preset bundle < config file < command-line flags."""
    resolved = dict(_DEFAULT_CONFIG)
    file_cfg = {}
    if config_path is not None:
        try:
            with open(config_path) as fh:
                file_cfg = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must contain a mapping")
    preset = preset or file_cfg.get("preset")
    if preset is not None:
        if preset != "blobs3":
            raise ConfigError(f"unknown preset {preset!r}")
        seed = flag_overrides.get("seed", file_cfg.get("seed", BLOBS3_SEED))
        resolved = _merge(resolved, _runconfig_overrides(blobs3_config(int(seed))))
        resolved["preset"] = preset
    resolved = _merge(resolved, file_cfg)
    resolved = _merge(resolved, flag_overrides)
    return resolved


def _load_dataset(path) -> LabeledDataset:
    path = str(path)
    ds = read_csv(path) if path.endswith(".csv") else read_features(path)
    ds.name = Path(path).name
    return ds


def _gather_data(cfg: dict):
    """Returns (source datasets, target dataset) per the resolved config."""
    if cfg["preset"] == "blobs3":
        return blobs3(int(cfg["seed"]), int(cfg["preset_n"]))
    if not cfg["sources"]:
        raise ConfigError("no sources configured (set 'sources' or use --preset)")
    if cfg["target"] is None:
        raise ConfigError("no target configured")
    sources = [_load_dataset(p) for p in cfg["sources"]]
    for ds in sources:
        if not ds.labeled:
            raise ConfigError(f"source file {ds.name!r} has no labels")
    return sources, _load_dataset(cfg["target"])


def _guard(fn):
    """Map exception classes to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(1)
        except (ProtoAdaptError, OSError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


# --------------------------------------------------------------------------
# Output writers
# --------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        # cast first: numpy float64 is a float subclass but reprs as np.float64(...)
        return repr(float(v))
    return str(v)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


REPORT_COLUMNS = [
    "source",
    "n_samples",
    "e_source",
    "d_source",
    "d_target_initial",
    "d_target_final",
    "weight",
    "steps_run",
    "pseudo_mode",
    "fraction_confident",
]

BOUND_COLUMNS = [
    "source",
    "weight",
    "source_risk",
    "w_target",
    "w_source",
    "confidence_term",
    "rhs",
]


def _write_report(outdir: Path, report: AdaptationReport):
    rows = []
    for rec, w in zip(report.records, report.weights):
        rows.append(
            [
                rec.source_index,
                rec.n_samples,
                rec.source_risk,
                rec.d_source,
                rec.d_target_initial,
                rec.d_target_final,
                float(w),
                rec.steps_run,
                rec.pseudo.mode,
                rec.pseudo.fraction_confident,
            ]
        )
    _write_rows(outdir / "report.csv", REPORT_COLUMNS, rows)
    if report.excluded:
        _write_rows(outdir / "excluded.csv", ["source", "reason"], report.excluded)


def _write_bound(path, bound):
    rows = []
    for t, w in zip(bound.rhs_terms, bound.weights):
        rhs = t["source_risk"] + t["w_target"] + t["w_source"] + t["confidence"]
        rows.append(
            [
                t["source_index"],
                float(w),
                t["source_risk"],
                t["w_target"],
                t["w_source"],
                t["confidence"],
                rhs,
            ]
        )
    rows.append(["TOTAL", 1.0, "", "", "", "", bound.rhs_total])
    if bound.measured_target_risk is not None:
        rows.append(["MEASURED", "", "", "", "", "", bound.measured_target_risk])
    _write_rows(path, BOUND_COLUMNS, rows)


def _write_outputs(outdir: Path, resolved: dict, result, target: LabeledDataset, transcript=None):
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "config.yaml", "w") as fh:
        yaml.safe_dump(resolved, fh, sort_keys=True)
    _write_report(outdir, result.report)
    for rec in result.report.records:
        _write_rows(
            outdir / f"trace_{rec.source_index}.csv",
            ["step", "objective"],
            list(enumerate(rec.step_trace)),
        )
    for model, rec in zip(result.models, result.report.records):
        z = model.encode(target.x)
        _write_rows(
            outdir / f"embeddings_{rec.source_index}.csv",
            [f"z{i}" for i in range(z.shape[1])],
            z.tolist(),
        )
    probs = result.predict_proba(target.x)
    pred = np.argmax(probs, axis=1)
    header = ["row", "pred"] + [f"p{c}" for c in range(probs.shape[1])]
    rows = [[i, int(pred[i]), *probs[i]] for i in range(len(pred))]
    if target.labeled:
        header.append("true")
        for i, row in enumerate(rows):
            row.append(int(target.y[i]))
    _write_rows(outdir / "predictions.csv", header, rows)
    bnd = bound_report(
        result.report,
        n_target=target.n,
        xi=float(resolved["bound"]["xi"]),
        zeta=float(resolved["bound"]["zeta"]),
        target_eval=(target.x, target.y) if target.labeled else None,
        models=result.models if target.labeled else None,
    )
    _write_bound(outdir / "bound.csv", bnd)
    save_ensemble(result, outdir / "ensemble.bin")
    meta = {
        "n_target": int(target.n),
        "n_classes": int(result.n_classes),
        "mode": resolved["mode"],
        "private": bool(result.report.private),
        "excluded": [[int(k), reason] for k, reason in result.report.excluded],
    }
    if transcript is not None:
        transcript.dump(outdir / "transcript.log")
        meta["bytes_by_sender"] = transcript.bytes_by_sender()
    if target.labeled:
        lhs, rhs = verify_ensemble_bound(result.models, result.weights, target.x, target.y)
        meta["target_accuracy"] = accuracy(probs, target.y)
        meta["target_ce_risk"] = float(lhs)
        meta["jensen_rhs"] = float(rhs)
    with open(outdir / "run_meta.yaml", "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=True)
    return meta


def _echo_summary(result, meta):
    w = ", ".join(f"{v:.4f}" for v in result.weights)
    click.echo(f"sources retained: {len(result.models)}  weights: [{w}]")
    if "target_accuracy" in meta:
        click.echo(f"target accuracy: {meta['target_accuracy']:.4f}")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


@click.group()
def main():
    """Privacy-preserving multi-source domain adaptation experiments."""


_run_options = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="YAML config file; unknown keys are errors."),
    click.option("--preset", type=click.Choice(["blobs3"]), default=None,
                 help="Built-in synthetic benchmark."),
    click.option("--seed", type=int, default=None, help="Master seed override."),
    click.option("--weighting", type=click.Choice(["swd", "uniform", "single-best"]),
                 default=None, help="Ensemble weighting strategy."),
    click.option("--epochs", type=int, default=None, help="Source training epochs."),
    click.option("--adapt-steps", type=int, default=None, help="Max adaptation steps."),
    click.option("--workers", type=int, default=None, help="Threads for per-source stages."),
    click.option("--n", "preset_n", type=int, default=None, help="Samples per preset domain."),
    click.option("--outdir", type=click.Path(), envvar=OUTDIR_ENV, default="protoadapt-out",
                 show_default=True, help=f"Output directory (env {OUTDIR_ENV})."),
]


def _with_run_options(fn):
    for opt in reversed(_run_options):
        fn = opt(fn)
    return fn


def _flag_dict(seed, weighting, epochs, adapt_steps, workers, preset_n, mode=None) -> dict:
    flags: dict = {}
    if seed is not None:
        flags["seed"] = seed
    if weighting is not None:
        flags["weighting"] = weighting
    if epochs is not None:
        flags["train"] = {"epochs": epochs}
    if adapt_steps is not None:
        flags["adapt"] = {"steps": adapt_steps}
    if workers is not None:
        flags["workers"] = workers
    if preset_n is not None:
        flags["preset_n"] = preset_n
    if mode is not None:
        flags["mode"] = mode
    return flags


@main.command()
@_with_run_options
@click.option("--mode", type=click.Choice(["local", "distributed"]), default=None,
              help="In-process pipeline or simulated multi-node protocol.")
@_guard
def run(config_path, preset, seed, weighting, epochs, adapt_steps, workers, preset_n,
        outdir, mode):
    """Run the full adaptation pipeline and write its reports."""
    flags = _flag_dict(seed, weighting, epochs, adapt_steps, workers, preset_n, mode)
    resolved = _resolve_config(config_path, preset, flags)
    rc = _to_runconfig(resolved)
    sources, target = _gather_data(resolved)
    pairs = [(ds.x, ds.y) for ds in sources]
    transcript = None
    if resolved["mode"] == "distributed":
        result, transcript = run_distributed(pairs, target.x, rc)
    else:
        result = run_algorithm1(pairs, target.x, rc)
    meta = _write_outputs(Path(outdir), resolved, result, target, transcript)
    _echo_summary(result, meta)


@main.command()
@_with_run_options
@click.argument("kind", type=click.Choice(["direct", "source-combined"]))
@_guard
def baseline(config_path, preset, seed, weighting, epochs, adapt_steps, workers,
             preset_n, outdir, kind):
    """Run an ablation baseline (non-private) with the same reporting."""
    flags = _flag_dict(seed, weighting, epochs, adapt_steps, workers, preset_n)
    resolved = _resolve_config(config_path, preset, flags)
    rc = _to_runconfig(resolved)
    sources, target = _gather_data(resolved)
    pairs = [(ds.x, ds.y) for ds in sources]
    fn = direct_adapt_baseline if kind == "direct" else source_combined_baseline
    result = fn(pairs, target.x, rc)
    meta = _write_outputs(Path(outdir), resolved, result, target, None)
    _echo_summary(result, meta)


@main.command()
@click.option("--preset", type=click.Choice(["blobs3"]), default="blobs3", show_default=True)
@click.option("--seed", type=int, default=BLOBS3_SEED, show_default=True)
@click.option("--n", type=int, default=500, show_default=True, help="Samples per domain.")
@click.option("--format", "fmt", type=click.Choice(["smft", "csv"]), default="smft",
              show_default=True)
@click.option("--outdir", type=click.Path(), envvar=OUTDIR_ENV, default="protoadapt-out",
              show_default=True)
@_guard
def gen(preset, seed, n, fmt, outdir):
    """Generate a synthetic benchmark's domains as feature files."""
    del preset  # only blobs3 exists; the option documents the extension point
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sources, target = blobs3(seed, n)
    write = write_features if fmt == "smft" else write_csv
    for i, ds in enumerate(sources):
        write(ds, outdir / f"source_{i}.{fmt}")
    write(target, outdir / f"target.{fmt}")
    click.echo(f"wrote {len(sources)} sources + target to {outdir}")


@main.command()
@click.option("--transcript", "transcript_path", type=click.Path(), required=True,
              help="Transcript log from a distributed run.")
@click.option("--data", "data_paths", type=click.Path(), multiple=True,
              help="Participating datasets; every row is a forbidden pattern.")
@click.option("--canary", "canary_paths", type=click.Path(), multiple=True,
              help="Feature files whose rows are planted canaries.")
@_guard
def audit(transcript_path, data_paths, canary_paths):
    """Scan a transcript for leaked sample bytes and schema violations."""
    transcript = Transcript.load(transcript_path)
    datasets = [_load_dataset(p) for p in data_paths]
    canaries = []
    for p in canary_paths:
        canaries.extend(list(_load_dataset(p).x))
    report = audit_privacy(transcript, datasets, canaries)
    click.echo(report.summary())
    for m in report.matches[:20]:
        click.echo(
            f"  match: entry {m['entry']} contains {m['kind']} "
            f"(dataset={m['dataset']}, row={m['row']}) at byte {m['offset']}",
            err=True,
        )
    if not report.passed:
        sys.exit(2)


@main.command()
@click.option("--run", "run_dir", type=click.Path(), required=True,
              help="Output directory of a previous run.")
@click.option("--xi", type=float, default=0.05, show_default=True)
@click.option("--zeta", type=float, default=1.0, show_default=True)
@_guard
def bound(run_dir, xi, zeta):
    """Recompute the bound diagnostics of a finished run with new ξ, ζ."""
    run_dir = Path(run_dir)
    with open(run_dir / "run_meta.yaml") as fh:
        meta = yaml.safe_load(fh)
    records, weights = [], []
    with open(run_dir / "report.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            placeholder = PseudoTargetDecision(
                fraction_confident=float(row["fraction_confident"]),
                mode=row["pseudo_mode"],
                conf_threshold=0.8,
                frac_threshold=0.8,
                labels=np.empty(0, dtype=np.int64),
                distribution=np.empty(0),
            )
            records.append(
                AdaptationRecord(
                    source_index=int(row["source"]),
                    n_samples=int(row["n_samples"]),
                    source_risk=float(row["e_source"]),
                    d_source=float(row["d_source"]),
                    d_target_initial=float(row["d_target_initial"]),
                    d_target_final=float(row["d_target_final"]),
                    steps_run=int(row["steps_run"]),
                    step_trace=[],
                    pseudo=placeholder,
                )
            )
            weights.append(float(row["weight"]))
    report = AdaptationReport(records, np.asarray(weights), "swd")
    bnd = bound_report(report, n_target=int(meta["n_target"]), xi=xi, zeta=zeta)
    _write_bound(run_dir / "bound.csv", bnd)
    click.echo(f"rhs_total = {bnd.rhs_total!r} (xi={xi}, zeta={zeta})")
    if meta.get("target_ce_risk") is not None:
        click.echo(f"measured target CE risk = {meta['target_ce_risk']!r}")


@main.command("eval")
@click.option("--ensemble", "ensemble_path", type=click.Path(), required=True,
              help="ensemble.bin from a previous run.")
@click.option("--data", "data_path", type=click.Path(), required=True,
              help="Labeled feature file to score.")
@_guard
def eval_cmd(ensemble_path, data_path):
    """Score a saved ensemble on a labeled dataset."""
    models, weights, n_classes = load_ensemble(ensemble_path)
    ds = _load_dataset(data_path)
    if not ds.labeled:
        raise ProtoAdaptError(f"{data_path} has no labels to score against")
    if int(ds.y.max()) >= n_classes:
        raise ProtoAdaptError("dataset labels exceed the ensemble's class count")
    probs = sum(w * m.predict_proba(ds.x) for w, m in zip(weights, models))
    lhs, rhs = verify_ensemble_bound(models, weights, ds.x, ds.y)
    click.echo(f"accuracy = {accuracy(probs, ds.y):.6f}")
    click.echo(f"ce_risk = {lhs!r} (per-model weighted mean {rhs!r})")


if __name__ == "__main__":
    main()
