"""Dataset assembly: temporal splits, negative sampling and sample building.

Anchors (positive = accident, negative = random spatio-temporal point) become
one sample each: the label, the region's accident and regional features, and
the eight preceding hourly temporal vectors at the region's center. The
negative:positive ratio is exact per split and no feature may look across the
train/test boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .cluster import RegionId, RegionModel
from .features import (
    ACCIDENT_TYPES, ROAD_CONDITIONS, CellFeatureTable, RegionalNormalizer,
    TemporalEncoder, Vocabulary, aggregate_accident_features,
    aggregate_regional, month_index,
)
from .geocode import GeoPoint, cells_in_bbox, decode, encode
from .ingest import Event, StudyArea
from .model import ArrayDataset


class PipelineError(ValueError):
    """Invalid sampling or split configuration."""


# ------------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test boundaries in whole months."""
    train_months: int = 29
    test_months: int = 7
    val_fraction: float = 0.1

    def resolve(self, first_month: int, last_month: int) -> "SplitRanges":
        total = last_month - first_month + 1
        if total < 3:
            raise PipelineError(f"need at least 3 months of data, got {total}")
        if total == self.train_months + self.test_months:
            train = self.train_months
        else:
            # Preserve the 29:7 proportion on shorter or longer streams.
            frac = self.train_months / (self.train_months + self.test_months)
            train = min(total - 1, max(2, round(frac * total)))
        val = max(1, round(self.val_fraction * train))
        if val >= train:
            raise PipelineError("validation window swallowed the training window")
        return SplitRanges(
            train=(first_month, first_month + train - val),
            val=(first_month + train - val, first_month + train),
            test=(first_month + train, first_month + total),
        )


@dataclass(frozen=True)
class SplitRanges:
    """Half-open month-index ranges; disjoint, exhaustive, ordered."""
    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]

    @property
    def train_window(self) -> tuple[int, int]:
        """The full training period (including validation months); static
        per-region features may only be derived from events inside it."""
        return (self.train[0], self.val[1])

    def of(self, m: int) -> str:
        if self.train[0] <= m < self.train[1]:
            return "train"
        if self.val[0] <= m < self.val[1]:
            return "val"
        if self.test[0] <= m < self.test[1]:
            return "test"
        raise PipelineError(f"month index {m} outside the covered period")


def temporal_split(events: list[Event],
                   spec: SplitSpec = SplitSpec()) -> tuple[dict[str, list[Event]], SplitRanges]:
    """Partition events chronologically; every event lands in exactly one split."""
    if not events:
        raise PipelineError("no events to split")
    months = [ev.month_index for ev in events]
    ranges = spec.resolve(min(months), max(months))
    out: dict[str, list[Event]] = {"train": [], "val": [], "test": []}
    for ev in events:
        out[ranges.of(ev.month_index)].append(ev)
    return out, ranges


# -------------------------------------------------------------- negatives

@dataclass(frozen=True)
class Anchor:
    """A spatio-temporal point posed as one classification sample."""
    location: GeoPoint
    year: int
    month: int
    day_of_week: int
    hour: int
    label: int

    @property
    def month_index(self) -> int:
        return month_index(self.year, self.month)


def event_anchor(ev: Event) -> Anchor:
    return Anchor(ev.location, ev.year, ev.month, ev.day_of_week, ev.hour, label=1)


def accident_exclusion_keys(events) -> set[tuple[str, int, int, int]]:
    """(detail cell, year, month, hour) of every accident; negatives may not
    coincide with any of them."""
    return {(encode(ev.location, 7).code, ev.year, ev.month, ev.hour)
            for ev in events}


def iter_negative_anchors(study_area: StudyArea, month_range: tuple[int, int],
                          rng: np.random.Generator,
                          excluded: set[tuple[str, int, int, int]]) -> Iterator[Anchor]:
    """Endless stream of valid negative anchors: uniform detail cell in the
    area, uniform point inside it, uniform (month, day-of-week, hour)."""
    cells = cells_in_bbox(study_area.lat_min, study_area.lat_max,
                          study_area.lon_min, study_area.lon_max, 7)
    if not cells:
        raise PipelineError(f"study area {study_area.name!r} contains no detail cells")
    boxes = [decode(c) for c in cells]
    lo, hi = month_range
    if lo >= hi:
        raise PipelineError("empty month range for negative sampling")
    while True:
        i = int(rng.integers(len(cells)))
        box = boxes[i]
        point = GeoPoint(rng.uniform(box.lat_min, box.lat_max),
                         rng.uniform(box.lon_min, box.lon_max))
        m = int(rng.integers(lo, hi))
        year, month = 2016 + m // 12, m % 12 + 1
        hour = int(rng.integers(24))
        if (cells[i].code, year, month, hour) in excluded:
            continue
        yield Anchor(point, year, month, int(rng.integers(1, 8)), hour, label=0)


def negative_sample(events: list[Event], ratio: int, study_area: StudyArea,
                    rng: np.random.Generator,
                    month_range: tuple[int, int] | None = None) -> list[Anchor]:
    """ratio x |events| negative anchors, none coinciding with an accident's
    (cell, year, month, hour) and no two on the same full anchor key."""
    if not events:
        raise PipelineError("cannot sample negatives for zero events")
    if ratio < 1:
        raise PipelineError("ratio must be >= 1")
    if month_range is None:
        months = [ev.month_index for ev in events]
        month_range = (min(months), max(months) + 1)
    excluded = accident_exclusion_keys(events)
    need = ratio * len(events)
    out: list[Anchor] = []
    seen: set[tuple] = set()
    stream = iter_negative_anchors(study_area, month_range, rng, excluded)
    attempts = 0
    while len(out) < need:
        anchor = next(stream)
        attempts += 1
        if attempts > 1000 * need:
            raise PipelineError("negative sampling cannot satisfy the quota; "
                                "study area or time range too constrained")
        key = (encode(anchor.location, 7).code, anchor.year, anchor.month,
               anchor.day_of_week, anchor.hour)
        if key in seen:
            continue
        seen.add(key)
        out.append(anchor)
    return out


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True)
class SamplingConfig:
    negative_ratio: int = 3
    history_len: int = 8
    split: SplitSpec = field(default_factory=SplitSpec)
    accident_types: Vocabulary = ACCIDENT_TYPES
    road_conditions: Vocabulary = ROAD_CONDITIONS


@dataclass
class SampleSplit:
    data: ArrayDataset
    month_idx: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    regions: list[str]

    def __len__(self) -> int:
        return len(self.data)

    def subset(self, idx) -> "SampleSplit":
        idx = np.asarray(idx)
        return SampleSplit(self.data.subset(idx), self.month_idx[idx],
                           self.lat[idx], self.lon[idx],
                           [self.regions[i] for i in idx])


@dataclass
class SampleSet:
    """All splits plus the shared feature metadata (the R_max regions and
    feature dimensions are those observed while building)."""
    train: SampleSplit
    val: SampleSplit
    test: SampleSplit
    ranges: SplitRanges
    regional_feature_names: list[str]
    region_count: int

    def split(self, name: str) -> SampleSplit:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


class _SequenceBuilder:
    """Temporal history sequences with caching per (region, time) step."""

    def __init__(self, encoder: TemporalEncoder, history_len: int):
        self.encoder = encoder
        self.history_len = history_len
        self._cache: dict[tuple, np.ndarray] = {}

    def _step(self, year, month, dow, hour, region_key, center) -> np.ndarray:
        key = (year, month, dow, hour, region_key)
        vec = self._cache.get(key)
        if vec is None:
            vec = self.encoder.encode(year, month, dow, hour, center)
            self._cache[key] = vec
        return vec

    def sequence(self, anchor: Anchor, region_key: str, center: GeoPoint) -> np.ndarray:
        steps = []
        for k in range(self.history_len, 0, -1):
            offset = anchor.hour - k
            hour = offset % 24
            # Wrapping below midnight steps back one weekday.
            dow = anchor.day_of_week if offset >= 0 else (anchor.day_of_week - 2) % 7 + 1
            steps.append(self._step(anchor.year, anchor.month, dow, hour,
                                    region_key, center))
        return np.stack(steps)


def build_samples(model: RegionModel, events: list[Event],
                  study_area: StudyArea, cell_features: CellFeatureTable,
                  config: SamplingConfig, rng: np.random.Generator) -> SampleSet:
    """Assemble the full train/val/test sample matrices for one aggregation.

    Positives are the accidents; negatives are drawn per split (times come
    from the split's own month range) until the exact 1:ratio balance holds
    with no duplicated (region, time) key anywhere.
    """
    if not events:
        raise PipelineError("no events supplied")
    split_events, ranges = temporal_split(events, config.split)
    if not split_events["train"] or not split_events["test"]:
        raise PipelineError("temporal split produced an empty train or test set")
    excluded = accident_exclusion_keys(events)
    encoder = TemporalEncoder()
    seq_builder = _SequenceBuilder(encoder, config.history_len)

    # Static per-region accident features come from the training window only.
    train_window = ranges.train_window
    window_events = [ev for ev in events
                     if train_window[0] <= ev.month_index < train_window[1]]
    events_by_region: dict[str, list[Event]] = {}
    for ev in window_events:
        key = str(model.assign(ev.location))
        events_by_region.setdefault(key, []).append(ev)

    accident_dim = config.accident_types.dim + config.road_conditions.dim
    accident_cache: dict[str, np.ndarray] = {}

    def accident_features(region_key: str) -> np.ndarray:
        vec = accident_cache.get(region_key)
        if vec is None:
            vec = aggregate_accident_features(
                events_by_region.get(region_key, []), train_window,
                config.accident_types, config.road_conditions)
            accident_cache[region_key] = vec
        return vec

    centers: dict[str, GeoPoint] = {}
    regions_by_key: dict[str, RegionId] = {}

    def center_of(region: RegionId) -> GeoPoint:
        key = str(region)
        if key not in centers:
            centers[key] = model.region_center(region)
            regions_by_key[key] = region
        return centers[key]

    # Pass 1: anchors -> (region, time)-keyed rows per split.
    rows: dict[str, dict[tuple, Anchor]] = {"train": {}, "val": {}, "test": {}}
    region_keys: dict[str, dict[tuple, str]] = {"train": {}, "val": {}, "test": {}}
    range_of = {"train": ranges.train, "val": ranges.val, "test": ranges.test}
    for name in ("train", "val", "test"):
        for ev in split_events[name]:
            anchor = event_anchor(ev)
            region = model.assign(anchor.location)
            center_of(region)
            key = (str(region), anchor.year, anchor.month, anchor.day_of_week,
                   anchor.hour)
            # Multiple accidents on one (region, time) collapse into one row.
            if key not in rows[name]:
                rows[name][key] = anchor
                region_keys[name][key] = str(region)
        n_pos = len(rows[name])
        if n_pos == 0:
            continue
        need = config.negative_ratio * n_pos
        stream = iter_negative_anchors(study_area, range_of[name], rng, excluded)
        got = 0
        attempts = 0
        while got < need:
            anchor = next(stream)
            attempts += 1
            if attempts > 1000 * need:
                raise PipelineError(f"cannot place {need} negatives in split {name}")
            region = model.assign(anchor.location)
            key = (str(region), anchor.year, anchor.month, anchor.day_of_week,
                   anchor.hour)
            if key in rows[name]:
                continue
            rows[name][key] = anchor
            region_keys[name][key] = str(region)
            center_of(region)
            got += 1

    # Regional features and min-max normalization over every observed region.
    raw_regional = {
        key: aggregate_regional(model.member_cells(regions_by_key[key], 7),
                                cell_features)
        for key in centers
    }
    normalizer = RegionalNormalizer(raw_regional)
    regional_cache = {key: normalizer.transform(raw) for key, raw in raw_regional.items()}

    # Pass 2: materialize arrays.
    splits = {}
    for name in ("train", "val", "test"):
        items = sorted(rows[name].items(), key=lambda kv: (kv[0][1:], kv[0][0]))
        n = len(items)
        temporal = np.zeros((n, config.history_len, encoder.dim))
        accident = np.zeros((n, accident_dim))
        regional = np.zeros((n, normalizer.dim))
        labels = np.zeros(n, dtype=int)
        month_idx = np.zeros(n, dtype=int)
        lat = np.zeros(n)
        lon = np.zeros(n)
        region_list = []
        for i, (key, anchor) in enumerate(items):
            region_key = region_keys[name][key]
            temporal[i] = seq_builder.sequence(anchor, region_key, centers[region_key])
            accident[i] = accident_features(region_key)
            regional[i] = regional_cache[region_key]
            labels[i] = anchor.label
            month_idx[i] = anchor.month_index
            lat[i] = anchor.location.lat
            lon[i] = anchor.location.lon
            region_list.append(region_key)
        splits[name] = SampleSplit(
            ArrayDataset(temporal, accident, regional, labels),
            month_idx, lat, lon, region_list)

    sample_set = SampleSet(splits["train"], splits["val"], splits["test"],
                           ranges, list(normalizer.feature_names), len(centers))
    _check_invariants(sample_set, config.negative_ratio)
    return sample_set


def _check_invariants(s: SampleSet, ratio: int) -> None:
    for name in ("train", "val", "test"):
        split = s.split(name)
        pos = int(split.data.labels.sum())
        neg = len(split) - pos
        if pos and neg != ratio * pos:
            raise PipelineError(f"{name}: ratio {neg}:{pos} is not {ratio}:1")
    if len(s.train) and len(s.val):
        if s.train.month_idx.max() >= s.val.month_idx.min():
            raise PipelineError("temporal leakage: training months overlap validation")
    if len(s.train) and len(s.test):
        if s.train.month_idx.max() >= s.test.month_idx.min():
            raise PipelineError("temporal leakage: training months overlap test months")
    if len(s.val) and len(s.test):
        if s.val.month_idx.max() >= s.test.month_idx.min():
            raise PipelineError("temporal leakage: validation months overlap test months")


# ------------------------------------------------------------------ metrics

def f1_accident(predictions, labels) -> float:
    """F1 of the positive (accident) class; degenerate cases score 0."""
    pred = np.asarray(predictions, dtype=int)
    true = np.asarray(labels, dtype=int)
    if pred.shape != true.shape:
        raise PipelineError("predictions and labels disagree in length")
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def confusion(predictions, labels) -> dict[str, int]:
    pred = np.asarray(predictions, dtype=int)
    true = np.asarray(labels, dtype=int)
    return {
        "tp": int(np.sum((pred == 1) & (true == 1))),
        "fp": int(np.sum((pred == 1) & (true == 0))),
        "fn": int(np.sum((pred == 0) & (true == 1))),
        "tn": int(np.sum((pred == 0) & (true == 0))),
    }
