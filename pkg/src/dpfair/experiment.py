"""Config-driven sweeps over objective x privacy level x seed, with
persisted per-run reports and table/curve emission.

A sweep cell is one (objective, privacy level[, tau]) triple. Noise scales
are calibrated once per (privacy level, dataset size, batch size, steps)
and shared by every seed in the cell. Each run derives its own random
stream from a stable hash of (base seed, objective, privacy label, seed
index), so any single run can be reproduced in isolation. Run artifacts
carry no timestamps: re-running the same config rewrites byte-identical
files.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import datalab
from .accounting import calibrate_sigma
from .data import CLASSIFICATION, REGRESSION, Dataset
from .datalab import CsvSchema, SyntheticSpec
from .dp import (
    DEFAULT_CLIP_CLASSIFICATION,
    DEFAULT_CLIP_REGRESSION,
    DEFAULT_DELTA,
    PrivacySpec,
)
from .metrics import evaluate_groups, group_disparity, _METRIC_FNS
from .models import Model, predict_batch
from .objectives import ERM, GROUP_DRO, TrainConfig, train_dro, train_erm
from .rng import stable_hash64

__all__ = [
    "ConfigError",
    "PrivacyLevel",
    "ExperimentConfig",
    "RunReport",
    "CellSummary",
    "SweepSummary",
    "CurveSeries",
    "load_config",
    "run_sweep",
    "aggregate_reports",
    "load_reports",
    "load_summary",
    "emit_table",
    "emit_disparity_curves",
    "curves_to_json",
]


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending key."""


@dataclass(frozen=True)
class PrivacyLevel:
    label: str
    target_epsilon: Optional[float] = None  # None = no privacy


@dataclass
class ExperimentConfig:
    dataset: dict
    objectives: list
    privacy_levels: list
    seeds: list
    metric_kind: str
    output_dir: str
    model_family: str = "logistic"
    hidden_size: int = 8
    steps: int = 300
    lr: float = 0.5
    batch_size: int = 64
    dro_step_size: float = 0.01
    delta: float = DEFAULT_DELTA
    clipping_bound: Optional[float] = None  # default picked by task kind
    tau_list: Optional[list] = None

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunReport:
    """One trained model's scorecard: the contents of a single table cell."""

    config_fingerprint: str
    objective: str
    privacy_label: str
    tau: Optional[int]
    target_epsilon: Optional[float]
    noise_scale: Optional[float]
    realized_epsilon: Optional[float]
    seed_index: int
    run_seed: int
    metric_kind: str
    overall_score: float
    group_scores: list
    disparity_delta: float
    best_group: int
    worst_group: int
    epoch_losses: list
    final_group_weights: Optional[list]
    accountant_steps: int
    wall_clock_sec: float = 0.0  # in memory only; never persisted

    def to_persisted_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock_sec")  # timings would break byte-identical reruns
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(wall_clock_sec=0.0, **d)


@dataclass
class CellSummary:
    objective: str
    privacy_label: str
    tau: Optional[int]
    target_epsilon: Optional[float]
    n_seeds: int
    score_mean: Optional[float]
    score_std: Optional[float]
    disparity_mean: Optional[float]
    disparity_std: Optional[float]
    realized_epsilon: Optional[float]
    error: Optional[str] = None


@dataclass
class SweepSummary:
    config_fingerprint: str
    metric_kind: str
    cells: list

    def to_dict(self) -> dict:
        return {
            "config_fingerprint": self.config_fingerprint,
            "metric_kind": self.metric_kind,
            "cells": [asdict(c) for c in self.cells],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSummary":
        return cls(
            config_fingerprint=d["config_fingerprint"],
            metric_kind=d["metric_kind"],
            cells=[CellSummary(**c) for c in d["cells"]],
        )

    @property
    def has_failures(self) -> bool:
        return any(c.error is not None for c in self.cells)


# ---------------------------------------------------------------------------
# config parsing


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"{where}.{key}: missing required key")
    return mapping[key]


def _validate_number(value, where: str, minimum=None, strict=False):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if minimum is not None and (value <= minimum if strict else value < minimum):
        op = ">" if strict else ">="
        raise ConfigError(f"{where}: must be {op} {minimum}")
    return value


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment config."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    dataset = _require(raw, "dataset", "config")
    if not isinstance(dataset, dict) or "kind" not in dataset:
        raise ConfigError("config.dataset: must be a mapping with a 'kind'")
    if dataset["kind"] not in ("synthetic", "csv", "prices"):
        raise ConfigError(f"config.dataset.kind: unknown kind {dataset['kind']!r}")

    objectives = _require(raw, "objectives", "config")
    if not objectives or not all(o in (ERM, GROUP_DRO) for o in objectives):
        raise ConfigError(
            f"config.objectives: must be a non-empty list drawn from ['{ERM}', '{GROUP_DRO}']"
        )

    levels_raw = _require(raw, "privacy_levels", "config")
    if not levels_raw:
        raise ConfigError("config.privacy_levels: must be non-empty")
    levels = []
    for i, lv in enumerate(levels_raw):
        where = f"config.privacy_levels[{i}]"
        if not isinstance(lv, dict) or "label" not in lv:
            raise ConfigError(f"{where}: must be a mapping with a 'label'")
        target = lv.get("target_epsilon")
        if target is not None:
            _validate_number(target, f"{where}.target_epsilon", minimum=0, strict=True)
        levels.append(PrivacyLevel(label=str(lv["label"]), target_epsilon=target))
    labels = [lv.label for lv in levels]
    if len(set(labels)) != len(labels):
        raise ConfigError("config.privacy_levels: labels must be unique")

    seeds = _require(raw, "seeds", "config")
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("config.seeds: must be a non-empty list of integers")

    metric = _require(raw, "metric", "config")
    if metric not in _METRIC_FNS:
        raise ConfigError(f"config.metric: unknown metric {metric!r}")

    train = raw.get("train", {})
    model = raw.get("model", {})
    family = model.get("family", "logistic")
    if family not in ("linear", "logistic", "mlp"):
        raise ConfigError(f"config.model.family: unknown family {family!r}")

    tau_list = None
    if dataset["kind"] == "prices":
        tau_list = [int(t) for t in dataset.get("taus", [])]
        if not tau_list:
            raise ConfigError("config.dataset.taus: prices datasets need >= 1 tau")

    cfg = ExperimentConfig(
        dataset=dataset,
        objectives=list(objectives),
        privacy_levels=levels,
        seeds=list(seeds),
        metric_kind=metric,
        output_dir=str(_require(raw, "output_dir", "config")),
        model_family=family,
        hidden_size=int(model.get("hidden_size", 8)),
        steps=int(_validate_number(train.get("steps", 300), "config.train.steps", 1)),
        lr=float(_validate_number(train.get("lr", 0.5), "config.train.lr", 0)),
        batch_size=int(
            _validate_number(train.get("batch_size", 64), "config.train.batch_size", 1)
        ),
        dro_step_size=float(
            _validate_number(
                train.get("dro_step_size", 0.01), "config.train.dro_step_size", 0
            )
        ),
        delta=float(
            _validate_number(train.get("delta", DEFAULT_DELTA), "config.train.delta", 0, True)
        ),
        clipping_bound=train.get("clipping_bound"),
        tau_list=tau_list,
    )
    if cfg.delta >= 1.0:
        raise ConfigError("config.train.delta: must be < 1")
    if cfg.clipping_bound is not None:
        _validate_number(cfg.clipping_bound, "config.train.clipping_bound", 0, True)
    return cfg


# ---------------------------------------------------------------------------
# dataset assembly


def _build_datasets(cfg: ExperimentConfig, tau: Optional[int]) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    kind = ds["kind"]
    if kind == "synthetic":
        spec = SyntheticSpec(
            group_sizes=tuple(ds.get("group_sizes", (669, 14, 716, 229))),
            core_mean=float(ds.get("core_mean", 1.0)),
            spurious_mean=float(ds.get("spurious_mean", 3.0)),
            noise_std=float(ds.get("noise_std", 1.0)),
            spurious_agreement=float(ds.get("spurious_agreement", 1.0)),
            extra_noise_dims=int(ds.get("extra_noise_dims", 2)),
            seed=int(ds.get("seed", 0)),
        )
        per_cell = int(ds.get("eval_per_cell", 250))
        eval_spec = SyntheticSpec(
            group_sizes=(per_cell,) * 4,
            core_mean=spec.core_mean,
            spurious_mean=spec.spurious_mean,
            noise_std=spec.noise_std,
            spurious_agreement=spec.spurious_agreement,
            extra_noise_dims=spec.extra_noise_dims,
            seed=stable_hash64(spec.seed, "eval"),
        )
        return datalab.generate_synthetic(spec), datalab.generate_synthetic(eval_spec)
    if kind == "csv":
        schema = CsvSchema(
            feature_cols=list(_require(ds, "feature_cols", "config.dataset")),
            group_col=str(_require(ds, "group_col", "config.dataset")),
            label_col=str(_require(ds, "label_col", "config.dataset")),
            task_kind=ds.get("task", CLASSIFICATION),
        )
        train_ds = datalab.load_csv(_require(ds, "train_path", "config.dataset"), schema)
        # eval reuses the training token order so group ids line up
        eval_schema = CsvSchema(
            feature_cols=schema.feature_cols,
            group_col=schema.group_col,
            label_col=schema.label_col,
            task_kind=schema.task_kind,
            group_tokens=train_ds.group_names,
        )
        eval_ds = datalab.load_csv(_require(ds, "eval_path", "config.dataset"), eval_schema)
        return train_ds, eval_ds
    series = datalab.load_price_csv(_require(ds, "path", "config.dataset"))
    return datalab.volatility_split(
        series,
        tau=int(tau),
        feature_window=int(ds.get("feature_window", 8)),
        train_fraction=float(ds.get("train_fraction", 0.8)),
    )


def _build_model(cfg: ExperimentConfig, train_ds: Dataset) -> Model:
    if cfg.model_family == "mlp":
        return Model(
            "mlp", train_ds.dim, hidden_size=cfg.hidden_size, task=train_ds.task_kind
        )
    return Model(cfg.model_family, train_ds.dim)


def _clip_for(cfg: ExperimentConfig, task_kind: str) -> float:
    if cfg.clipping_bound is not None:
        return float(cfg.clipping_bound)
    if task_kind == REGRESSION:
        return DEFAULT_CLIP_REGRESSION
    return DEFAULT_CLIP_CLASSIFICATION


# ---------------------------------------------------------------------------
# sweep execution


def _run_one(
    cfg: ExperimentConfig,
    model: Model,
    train_ds: Dataset,
    eval_ds: Dataset,
    objective: str,
    level: PrivacyLevel,
    tau: Optional[int],
    sigma: Optional[float],
    seed_index: int,
) -> RunReport:
    run_seed = stable_hash64(cfg.seeds[seed_index], objective, level.label, seed_index)
    privacy = None
    if level.target_epsilon is not None:
        privacy = PrivacySpec(
            noise_scale=sigma,
            clipping_bound=_clip_for(cfg, train_ds.task_kind),
            sampling_rate=min(1.0, cfg.batch_size / len(train_ds)),
            total_steps=cfg.steps,
            delta=cfg.delta,
            target_epsilon=level.target_epsilon,
        )
    tc = TrainConfig(
        objective=objective,
        steps=cfg.steps,
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        dro_step_size=cfg.dro_step_size,
        privacy=privacy,
        seed=run_seed,
    )
    start = time.perf_counter()
    trainer = train_dro if objective == GROUP_DRO else train_erm
    params, trace = trainer(model, train_ds, tc)
    elapsed = time.perf_counter() - start

    preds = predict_batch(model, params, eval_ds)
    overall = _METRIC_FNS[cfg.metric_kind](preds, eval_ds.labels_array)
    scores = evaluate_groups(model, params, eval_ds, cfg.metric_kind)
    disp = group_disparity(scores)
    return RunReport(
        config_fingerprint=cfg.fingerprint(),
        objective=objective,
        privacy_label=level.label,
        tau=tau,
        target_epsilon=level.target_epsilon,
        noise_scale=privacy.noise_scale if privacy else None,
        realized_epsilon=trace.realized_epsilon,
        seed_index=seed_index,
        run_seed=run_seed,
        metric_kind=cfg.metric_kind,
        overall_score=float(overall),
        group_scores=[float(v) for v in scores.per_group],
        disparity_delta=disp.delta,
        best_group=disp.best_group,
        worst_group=disp.worst_group,
        epoch_losses=[float(v) for v in trace.epoch_losses],
        final_group_weights=trace.final_group_weights,
        accountant_steps=trace.accountant_steps,
        wall_clock_sec=elapsed,
    )


def _cell_tag(objective: str, label: str, tau: Optional[int]) -> str:
    tag = f"{objective}_{label}"
    return tag if tau is None else f"{tag}_tau{tau}"


def _write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, sort_keys=True, indent=1)
    path.write_text(text + "\n", encoding="utf-8")


def run_sweep(cfg: ExperimentConfig) -> SweepSummary:
    """Execute every (objective, privacy level[, tau], seed) run.

    Failures are confined to their cell: the error string lands in the
    summary and the sweep moves on. Completed runs are persisted as one
    JSON file each under output_dir/runs/, plus summary.json.
    """
    out = Path(cfg.output_dir)
    taus: Sequence[Optional[int]] = cfg.tau_list if cfg.tau_list else [None]
    reports: list[RunReport] = []
    failures: dict[tuple, str] = {}
    cell_order: list[tuple] = []

    for tau in taus:
        try:
            train_ds, eval_ds = _build_datasets(cfg, tau)
            model = _build_model(cfg, train_ds)
        except Exception as exc:  # dataset failure poisons every cell of this tau
            for objective in cfg.objectives:
                for level in cfg.privacy_levels:
                    key = (objective, level.label, tau)
                    cell_order.append(key)
                    failures[key] = f"dataset: {exc}"
            continue
        if train_ds.group_names:
            _write_json(
                out / ("group_mapping.json" if tau is None else f"group_mapping_tau{tau}.json"),
                {"groups": list(train_ds.group_names)},
            )
        sigma_cache: dict = {}
        for objective in cfg.objectives:
            for level in cfg.privacy_levels:
                key = (objective, level.label, tau)
                cell_order.append(key)
                sigma = None
                if level.target_epsilon is not None:
                    cache_key = (level.label, len(train_ds), cfg.batch_size, cfg.steps)
                    try:
                        if cache_key not in sigma_cache:
                            sigma_cache[cache_key] = calibrate_sigma(
                                level.target_epsilon,
                                cfg.delta,
                                min(1.0, cfg.batch_size / len(train_ds)),
                                cfg.steps,
                            )
                        sigma = sigma_cache[cache_key]
                    except Exception as exc:
                        failures[key] = f"calibration: {exc}"
                        continue
                try:
                    for seed_index in range(len(cfg.seeds)):
                        report = _run_one(
                            cfg, model, train_ds, eval_ds, objective, level, tau,
                            sigma, seed_index,
                        )
                        reports.append(report)
                        _write_json(
                            out / "runs" / f"run_{_cell_tag(*key)}_s{seed_index}.json",
                            report.to_persisted_dict(),
                        )
                except Exception as exc:
                    failures[key] = f"run: {exc}"

    summary = aggregate_reports(
        reports, cfg.fingerprint(), cfg.metric_kind, cell_order, failures
    )
    _write_json(out / "summary.json", summary.to_dict())
    return summary


def aggregate_reports(
    reports: Sequence[RunReport],
    fingerprint: str,
    metric_kind: str,
    cell_order: Optional[Sequence[tuple]] = None,
    failures: Optional[dict] = None,
) -> SweepSummary:
    """Fold per-seed reports into per-cell mean/std rows."""
    failures = failures or {}
    by_cell: dict[tuple, list[RunReport]] = {}
    for r in reports:
        by_cell.setdefault((r.objective, r.privacy_label, r.tau), []).append(r)
    if cell_order is None:
        cell_order = sorted(
            set(by_cell) | set(failures),
            key=lambda k: (k[2] if k[2] is not None else -1, k[0], k[1]),
        )
    cells = []
    for key in cell_order:
        objective, label, tau = key
        runs = sorted(by_cell.get(key, []), key=lambda r: r.seed_index)
        if runs:
            scores = np.array([r.overall_score for r in runs])
            disps = np.array([r.disparity_delta for r in runs])
            realized = [r.realized_epsilon for r in runs if r.realized_epsilon is not None]
            cells.append(
                CellSummary(
                    objective=objective,
                    privacy_label=label,
                    tau=tau,
                    target_epsilon=runs[0].target_epsilon,
                    n_seeds=len(runs),
                    score_mean=float(scores.mean()),
                    score_std=float(scores.std(ddof=1)) if len(runs) > 1 else 0.0,
                    disparity_mean=float(disps.mean()),
                    disparity_std=float(disps.std(ddof=1)) if len(runs) > 1 else 0.0,
                    realized_epsilon=max(realized) if realized else None,
                    error=failures.get(key),
                )
            )
        else:
            cells.append(
                CellSummary(
                    objective=objective,
                    privacy_label=label,
                    tau=tau,
                    target_epsilon=None,
                    n_seeds=0,
                    score_mean=None,
                    score_std=None,
                    disparity_mean=None,
                    disparity_std=None,
                    realized_epsilon=None,
                    error=failures.get(key, "no runs"),
                )
            )
    return SweepSummary(fingerprint, metric_kind, cells)


def load_reports(output_dir) -> list[RunReport]:
    runs_dir = Path(output_dir) / "runs"
    reports = []
    for path in sorted(runs_dir.glob("run_*.json")):
        reports.append(RunReport.from_dict(json.loads(path.read_text(encoding="utf-8"))))
    return reports


def load_summary(output_dir) -> SweepSummary:
    path = Path(output_dir) / "summary.json"
    return SweepSummary.from_dict(json.loads(path.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# emission


def _fmt_cell(mean, std, eps) -> str:
    if mean is None:
        return "failed"
    cell = f"{mean:.3f} ± {std:.3f}"
    if eps is not None:
        cell += f" (ε={eps:.2f})"
    return cell


def emit_table(summary: SweepSummary, format: str = "text") -> str:
    """Two blocks (performance, disparity): rows objectives, columns privacy levels."""
    if not summary.cells:
        raise ValueError("empty summary")
    if format == "json":
        return json.dumps(summary.to_dict(), sort_keys=True, indent=1)
    if format != "text":
        raise ValueError(f"unknown format {format!r}")

    taus = sorted({c.tau for c in summary.cells}, key=lambda t: (t is not None, t))
    lines = []
    for tau in taus:
        cells = [c for c in summary.cells if c.tau == tau]
        objectives = list(dict.fromkeys(c.objective for c in cells))
        labels = list(dict.fromkeys(c.privacy_label for c in cells))
        lookup = {(c.objective, c.privacy_label): c for c in cells}
        suffix = f" (tau={tau})" if tau is not None else ""
        for title, mean_of in (
            (f"Performance [{summary.metric_kind}]{suffix}", "score"),
            (f"Group disparity [{summary.metric_kind} gap]{suffix}", "disparity"),
        ):
            lines.append(title)
            widths = {}
            rows = []
            for obj in objectives:
                row = [obj]
                for label in labels:
                    c = lookup.get((obj, label))
                    if c is None:
                        row.append("-")
                    else:
                        row.append(
                            _fmt_cell(
                                getattr(c, f"{mean_of}_mean"),
                                getattr(c, f"{mean_of}_std"),
                                c.realized_epsilon,
                            )
                        )
                rows.append(row)
            header = ["objective"] + labels
            for row in [header] + rows:
                for i, cell in enumerate(row):
                    widths[i] = max(widths.get(i, 0), len(cell))
            for row in [header] + rows:
                lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
            lines.append("")
    failed = [c for c in summary.cells if c.error]
    for c in failed:
        lines.append(f"FAILED {c.objective}/{c.privacy_label}"
                     + (f"/tau{c.tau}" if c.tau is not None else "")
                     + f": {c.error}")
    return "\n".join(lines).rstrip() + "\n"


@dataclass
class CurveSeries:
    """One disparity-vs-tau line at a fixed privacy level."""

    privacy_label: str
    target_epsilon: Optional[float]
    points: list  # (tau, disparity_mean, disparity_std)


def emit_disparity_curves(summaries) -> list:
    """Disparity-versus-tau series for tau sweeps: one per privacy level,
    split further by objective when the summaries cover more than one."""
    if isinstance(summaries, SweepSummary):
        summaries = [summaries]
    cells = [c for s in summaries for c in s.cells if c.tau is not None]
    if len({c.tau for c in cells}) < 2:
        raise ValueError("need >= 2 tau values to draw disparity curves")
    multi_objective = len({c.objective for c in cells}) > 1
    by_label: dict[str, list] = {}
    targets: dict[str, Optional[float]] = {}
    for c in cells:
        if c.disparity_mean is None:
            continue
        label = f"{c.objective}/{c.privacy_label}" if multi_objective else c.privacy_label
        by_label.setdefault(label, []).append(
            (c.tau, c.disparity_mean, c.disparity_std)
        )
        targets[label] = c.target_epsilon
    series = []
    for label in sorted(by_label):
        pts = sorted(by_label[label])
        series.append(CurveSeries(label, targets[label], pts))
    return series


def curves_to_json(series: Sequence[CurveSeries]) -> str:
    payload = [
        {
            "privacy_label": s.privacy_label,
            "target_epsilon": s.target_epsilon,
            "points": [
                {"tau": t, "disparity_mean": m, "disparity_std": sd}
                for t, m, sd in s.points
            ],
        }
        for s in series
    ]
    return json.dumps(payload, sort_keys=True, indent=1)
