"""Dataset construction: synthetic spurious-correlation cells, CSV ingestion,
group tallies, and the rolling log-volatility target pipeline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import CLASSIFICATION, REGRESSION, Dataset, Example
from .rng import RngStream

__all__ = [
    "SyntheticSpec",
    "PriceSeries",
    "GroupDistribution",
    "CsvSchema",
    "CsvParseError",
    "DegenerateVolatilityError",
    "generate_synthetic",
    "default_classification_spec",
    "balanced_classification_spec",
    "load_csv",
    "load_price_csv",
    "group_distribution",
    "return_series",
    "log_volatility",
    "volatility_dataset",
    "volatility_split",
]


class CsvParseError(ValueError):
    """Malformed CSV input; the message names the offending row."""


class DegenerateVolatilityError(ValueError):
    """All returns in the window are identical, so log(0) would result."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a four-cell binary classification dataset.

    Cells are (attribute, label) pairs ordered (a=0,y=0), (a=0,y=1),
    (a=1,y=0), (a=1,y=1); the group id of an example is its cell index
    2*a + y. Features are [core, shortcut, extra noise dims]: the core
    channel is centered at +-core_mean by the label and the shortcut
    channel at +-spurious_mean by the attribute, so skewed cell sizes make
    the shortcut predictive of the label on the majority of the data while
    anti-correlated minority cells break it. spurious_agreement is the
    per-example probability that the shortcut channel actually tracks the
    cell's attribute (in cells where attribute == label, the probability
    it matches the label); below 1.0 the shortcut is a noisy proxy.
    """

    group_sizes: tuple[int, int, int, int]
    core_mean: float = 1.0
    spurious_mean: float = 3.0
    noise_std: float = 1.0
    spurious_agreement: float = 1.0
    extra_noise_dims: int = 2
    seed: int = 0

    def __post_init__(self):
        if len(self.group_sizes) != 4 or any(s < 1 for s in self.group_sizes):
            raise ValueError("group_sizes needs four cells, each >= 1")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be > 0")
        if not (0.5 <= self.spurious_agreement <= 1.0):
            raise ValueError("spurious_agreement must be in [0.5, 1]")
        if self.extra_noise_dims < 0:
            raise ValueError("extra_noise_dims must be >= 0")


# Cell proportions mirror the face-attribute skew: the anti-correlated
# (a=0, y=1) cell is ~0.86% of the data.
def default_classification_spec(seed: int = 0, scale: float = 1.0) -> SyntheticSpec:
    base = (669, 14, 716, 229)
    sizes = tuple(max(1, round(s * scale)) for s in base)
    return SyntheticSpec(group_sizes=sizes, seed=seed)


def balanced_classification_spec(
    per_cell: int = 250, seed: int = 0, **overrides
) -> SyntheticSpec:
    return SyntheticSpec(group_sizes=(per_cell,) * 4, seed=seed, **overrides)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw the dataset described by spec; cell counts are hit exactly."""
    rng = RngStream(spec.seed, "synthetic")
    gen = rng.gen
    examples = []
    for cell, size in enumerate(spec.group_sizes):
        a, y = divmod(cell, 2)
        core = gen.normal((2 * y - 1) * spec.core_mean, spec.noise_std, size=size)
        tracks = gen.random(size) < spec.spurious_agreement
        eff_attr = np.where(tracks, a, 1 - a)
        shortcut = gen.normal(0.0, spec.noise_std, size=size) + (
            2 * eff_attr - 1
        ) * spec.spurious_mean
        extra = gen.normal(0.0, spec.noise_std, size=(size, spec.extra_noise_dims))
        feats = np.column_stack([core, shortcut, extra])
        for i in range(size):
            examples.append(Example(feats[i], group=cell, label=float(y)))
    return Dataset(examples, num_groups=4, task_kind=CLASSIFICATION)


@dataclass
class CsvSchema:
    """Column roles for a (features, group, label) CSV."""

    feature_cols: Sequence[str]
    group_col: str
    label_col: str
    task_kind: str = CLASSIFICATION
    group_tokens: Optional[Sequence[str]] = None  # pre-pinned id order, else first appearance


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a header CSV into a Dataset, re-indexing groups densely.

    Group ids follow first appearance unless schema.group_tokens pins the
    order; a token outside a pinned list is a parse error. Row numbers in
    errors count the header as row 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CsvParseError(f"{path}: empty file")
        needed = list(schema.feature_cols) + [schema.group_col, schema.label_col]
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise CsvParseError(f"{path}: missing column(s) {missing}")
        token_to_id: dict[str, int] = {}
        pinned = schema.group_tokens is not None
        if pinned:
            token_to_id = {tok: i for i, tok in enumerate(schema.group_tokens)}
        examples = []
        groups = []
        for rownum, row in enumerate(reader, start=2):
            feats = np.empty(len(schema.feature_cols))
            for j, col in enumerate(schema.feature_cols):
                try:
                    feats[j] = float(row[col])
                except (TypeError, ValueError):
                    raise CsvParseError(
                        f"{path}: row {rownum}: non-numeric feature {col}={row[col]!r}"
                    ) from None
            token = row[schema.group_col]
            if token not in token_to_id:
                if pinned:
                    raise CsvParseError(
                        f"{path}: row {rownum}: unknown group token {token!r}"
                    )
                token_to_id[token] = len(token_to_id)
            try:
                label = float(row[schema.label_col])
            except (TypeError, ValueError):
                raise CsvParseError(
                    f"{path}: row {rownum}: non-numeric label {row[schema.label_col]!r}"
                ) from None
            if schema.task_kind == CLASSIFICATION and label not in (0.0, 1.0):
                raise CsvParseError(
                    f"{path}: row {rownum}: classification label must be 0 or 1, got {label}"
                )
            examples.append((feats, token_to_id[token], label))
            groups.append(token_to_id[token])
    if not examples:
        raise CsvParseError(f"{path}: no data rows")
    names = tuple(sorted(token_to_id, key=token_to_id.get))
    return Dataset(
        [Example(f, g, y) for f, g, y in examples],
        num_groups=len(token_to_id),
        task_kind=schema.task_kind,
        group_names=names,
    )


@dataclass
class GroupDistribution:
    """Per-group example counts."""

    counts: tuple[int, ...]
    total: int
    group_names: Optional[tuple[str, ...]] = None


def group_distribution(dataset: Dataset) -> GroupDistribution:
    counts = np.bincount(dataset.groups_array, minlength=dataset.num_groups)
    return GroupDistribution(
        counts=tuple(int(c) for c in counts),
        total=len(dataset),
        group_names=dataset.group_names,
    )


@dataclass
class PriceSeries:
    """Daily closing prices for one instrument, tagged with a group."""

    series_id: str
    group: str
    prices: np.ndarray

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=np.float64)
        if self.prices.ndim != 1 or self.prices.size < 2:
            raise ValueError("need at least two days of prices")
        if np.any(self.prices <= 0):
            raise ValueError("prices must be strictly positive")


def return_series(prices) -> np.ndarray:
    """Simple returns r_t = P_t / P_{t-1} - 1 for consecutive days."""
    p = prices.prices if isinstance(prices, PriceSeries) else np.asarray(prices, float)
    if p.size < 2:
        raise ValueError("need at least two days of prices")
    return p[1:] / p[:-1] - 1.0


def log_volatility(prices, t: int, tau: int) -> float:
    """Log of the realized return dispersion over the window ending at day t.

    Uses the tau+1 returns r_{t-tau}..r_t around their window mean, with
    divisor tau:  ln( sqrt( sum_{i=0..tau} (r_{t-i} - rbar)^2 / tau ) ).
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    r = return_series(prices)
    # r[j] is the return of day j+1; day-t window needs days t-tau-? .. t
    if t - tau < 1 or t > r.size:
        raise ValueError(
            f"window [t-tau, t] = [{t - tau}, {t}] not inside days 1..{r.size}"
        )
    window = r[t - tau - 1 : t]  # returns of days t-tau .. t
    rbar = window.mean()
    ss = float(np.sum((window - rbar) ** 2))
    if ss == 0.0:
        raise DegenerateVolatilityError(
            f"returns in window ending at day {t} are all identical"
        )
    return math.log(math.sqrt(ss / tau))


def load_price_csv(path) -> list[PriceSeries]:
    """Read (series_id, group, day, close_price) rows into per-series prices.

    Days must be strictly increasing within each series; rows of one series
    need not be contiguous in the file.
    """
    rows: dict[str, list[tuple[int, float, str]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        needed = ["series_id", "group", "day", "close_price"]
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in needed):
            raise CsvParseError(f"{path}: expected columns {needed}")
        for rownum, row in enumerate(reader, start=2):
            try:
                day = int(row["day"])
                price = float(row["close_price"])
            except (TypeError, ValueError):
                raise CsvParseError(f"{path}: row {rownum}: bad day or price") from None
            if price <= 0:
                raise CsvParseError(f"{path}: row {rownum}: price must be > 0")
            rows.setdefault(row["series_id"], []).append((day, price, row["group"]))
    series = []
    for sid, entries in rows.items():
        days = [d for d, _, _ in entries]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise CsvParseError(f"{path}: series {sid}: days not strictly increasing")
        groups = {g for _, _, g in entries}
        if len(groups) != 1:
            raise CsvParseError(f"{path}: series {sid}: inconsistent group labels")
        series.append(
            PriceSeries(sid, entries[0][2], np.array([p for _, p, _ in entries]))
        )
    if not series:
        raise CsvParseError(f"{path}: no data rows")
    return series


def _volatility_examples_per_series(
    series_list: Sequence[PriceSeries], tau: int, feature_window: int
):
    token_to_id: dict[str, int] = {}
    per_series = []
    for s in series_list:
        if s.group not in token_to_id:
            token_to_id[s.group] = len(token_to_id)
        g = token_to_id[s.group]
        r = return_series(s)
        last_day = r.size  # returns exist for days 1..r.size
        examples = []
        for t in range(feature_window, last_day - tau + 1):
            feats = r[t - feature_window : t]  # returns of days t-W+1 .. t
            try:
                target = log_volatility(s, t + tau, tau)
            except DegenerateVolatilityError:
                continue
            examples.append(Example(feats.copy(), group=g, label=target))
        per_series.append(examples)
    names = tuple(sorted(token_to_id, key=token_to_id.get))
    return per_series, len(token_to_id), names


def volatility_dataset(
    series_list: Sequence[PriceSeries],
    tau: int,
    feature_window: int = 8,
) -> Dataset:
    """Regression examples: trailing returns as features, forward log
    volatility as the target.

    For each series and each anchor day t, the features are the
    feature_window returns ending at day t and the target is
    log_volatility over the window ending at day t+tau (the tau days that
    follow the anchor). Anchors whose forward window has zero return
    variance are skipped. Groups are re-indexed by first appearance over
    the given series order.
    """
    per_series, num_groups, names = _volatility_examples_per_series(
        series_list, tau, feature_window
    )
    examples = [ex for chunk in per_series for ex in chunk]
    if not examples:
        raise ValueError("no usable anchors; series too short for this tau/window")
    return Dataset(
        examples, num_groups=num_groups, task_kind=REGRESSION, group_names=names
    )


def volatility_split(
    series_list: Sequence[PriceSeries],
    tau: int,
    feature_window: int = 8,
    train_fraction: float = 0.8,
) -> tuple[Dataset, Dataset]:
    """Temporal train/eval split: each series' earliest anchors train, the
    tail evaluates."""
    if not (0.0 < train_fraction < 1.0):
        raise ValueError("train_fraction must be in (0, 1)")
    per_series, num_groups, names = _volatility_examples_per_series(
        series_list, tau, feature_window
    )
    train, evaln = [], []
    for chunk in per_series:
        cut = int(len(chunk) * train_fraction)
        train.extend(chunk[:cut])
        evaln.extend(chunk[cut:])
    if not train or not evaln:
        raise ValueError("split left an empty side; series too short for this tau")
    return (
        Dataset(train, num_groups=num_groups, task_kind=REGRESSION, group_names=names),
        Dataset(evaln, num_groups=num_groups, task_kind=REGRESSION, group_names=names),
    )
