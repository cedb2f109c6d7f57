"""Synthetic city generation for desk-scale verification.

The generator plants Gaussian accident hotspots with injected hour-of-day
and regional-feature structure, so that (a) grid growing has real clusters
to find, (b) the prediction task is learnable, and (c) coarse grids get
genuinely hurt by hotspots straddling their cell borders. Ground truth is
returned for oracle checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import (
    HIGHWAY_FEATURES, REGIONAL_COUNT_FEATURES, SPEED_FEATURE, CellFeatureTable,
    TemporalEncoder,
)
from .geocode import GeoPoint, cell_sizes, cells_in_bbox, decode, encode
from .ingest import Event, StudyArea
from .model import ArrayDataset
from .pipeline import PipelineError, SampleSet, SampleSplit, SplitRanges


@dataclass(frozen=True)
class Hotspot:
    center_lat: float
    center_lon: float
    sigma_deg: float
    events: int
    active_hours: tuple[int, ...]      # accidents cluster in these hours
    junction_level: float = 0.5        # 0..1, scales infrastructure counts

    @property
    def center(self) -> GeoPoint:
        return GeoPoint(self.center_lat, self.center_lon)


@dataclass(frozen=True)
class CitySpec:
    name: str
    area: StudyArea
    hotspots: tuple[Hotspot, ...]
    month_range: tuple[int, int] = (0, 36)
    accident_types: tuple[str, ...] = tuple(str(i) for i in range(1, 11))
    road_conditions: tuple[str, ...] = ("0", "1", "2")
    background_cells_fraction: float = 0.02  # sprinkle of non-hotspot features
    # Cycle accident attributes deterministically instead of sampling them:
    # every hotspot then shares the same type/condition composition, so the
    # per-region accident means carry membership but no hotspot fingerprint.
    cycle_attributes: bool = False


def synth_city(spec: CitySpec, rng: np.random.Generator
               ) -> tuple[list[Event], CellFeatureTable, dict]:
    """Events, a regional-feature table and the generating ground truth."""
    total = sum(h.events for h in spec.hotspots)
    if total <= 0:
        raise PipelineError("city spec has zero event rate everywhere")
    lo, hi = spec.month_range
    if lo >= hi:
        raise PipelineError("empty month range")

    events: list[Event] = []
    eid = 0
    for h_idx, hot in enumerate(spec.hotspots):
        for _ in range(hot.events):
            while True:
                d_lat = rng.normal(0.0, hot.sigma_deg)
                d_lon = rng.normal(0.0, hot.sigma_deg * 1.6)
                # Truncate at 2 sigma so each hotspot stays 8-connected on
                # the detail grid instead of shedding isolated tail cells.
                radius = math.hypot(d_lat / hot.sigma_deg, d_lon / (1.6 * hot.sigma_deg))
                if radius > 2.0:
                    continue
                point = GeoPoint(min(max(hot.center_lat + d_lat, -89.9), 89.9),
                                 min(max(hot.center_lon + d_lon, -179.9), 179.9))
                if spec.area.contains(point):
                    break
            m = int(rng.integers(lo, hi))
            hour = int(rng.choice(hot.active_hours))
            if spec.cycle_attributes:
                atype = spec.accident_types[eid % len(spec.accident_types)]
                cond = spec.road_conditions[eid % len(spec.road_conditions)]
            else:
                atype = str(rng.choice(spec.accident_types))
                cond = str(rng.choice(spec.road_conditions))
            events.append(Event(
                id=f"{spec.name}-{eid}",
                location=point,
                year=2016 + m // 12,
                month=m % 12 + 1,
                day_of_week=int(rng.integers(1, 8)),
                hour=hour,
                accident_type=atype,
                road_condition=cond,
            ))
            eid += 1

    table = _regional_table(spec, events, rng)
    truth = {
        "name": spec.name,
        "hotspots": [
            {"lat": h.center_lat, "lon": h.center_lon, "sigma_deg": h.sigma_deg,
             "events": h.events, "active_hours": list(h.active_hours),
             "junction_level": h.junction_level}
            for h in spec.hotspots
        ],
        "month_range": list(spec.month_range),
        "total_events": len(events),
    }
    return events, table, truth


def _regional_table(spec: CitySpec, events: list[Event],
                    rng: np.random.Generator) -> CellFeatureTable:
    """Infrastructure counts correlated with hotspot intensity.

    Cells touched by events carry counts scaled by their hotspot's junction
    level; a sprinkle of background cells keeps the table from being a
    perfect hotspot indicator.
    """
    table = CellFeatureTable()

    def fill_cell(cell: str, level: float):
        for name in REGIONAL_COUNT_FEATURES:
            base = 12.0 * level if name == "junction_count" else 4.0 * level
            table.put(cell, name, float(max(0.0, rng.poisson(base + 0.3))))
        weights = np.full(len(HIGHWAY_FEATURES), 0.5 + 2.0 * level)
        counts = rng.poisson(weights)
        for name, c in zip(HIGHWAY_FEATURES, counts):
            if c > 0:
                table.put(cell, name, float(c))
        table.put(cell, SPEED_FEATURE, float(30.0 + 70.0 * rng.random()))
        table.put(cell, "street_length", float(100.0 + 900.0 * rng.random()))

    filled: set[str] = set()
    for ev in events:
        cell = encode(ev.location, 7).code
        if cell in filled:
            continue
        # The nearest hotspot defines this cell's infrastructure level.
        center = decode(cell).center
        levels = []
        for hot in spec.hotspots:
            d2 = ((center.lat - hot.center_lat) ** 2
                  + (center.lon - hot.center_lon) ** 2)
            levels.append((d2, hot.junction_level))
        fill_cell(cell, min(levels)[1])
        filled.add(cell)

    all_cells = cells_in_bbox(spec.area.lat_min, spec.area.lat_max,
                              spec.area.lon_min, spec.area.lon_max, 7)
    n_background = int(spec.background_cells_fraction * len(all_cells))
    if n_background:
        for i in rng.choice(len(all_cells), size=n_background, replace=False):
            code = all_cells[i].code
            if code not in filled:
                fill_cell(code, 0.08)
                filled.add(code)
    return table


def straddling_city(seed_name: str = "synthtown") -> CitySpec:
    """A city whose hotspots straddle the coarse precision-5 grid borders.

    Every hotspot center sits exactly on a precision-5 cell boundary (one of
    the two border lines through a shared cell corner), so the coarse grid
    splits each accident-prone region in half and every coarse cell mixes
    halves of hotspots with unlike rush hours and infrastructure. Grown
    clusters keep each hotspot whole. Event rates follow junction levels,
    which injects the regional signal the ablation study looks for.
    """
    d_lat5, d_lon5 = cell_sizes(5)
    # A precision-5 cell corner near Hannover: snap to the cell lattice.
    corner_lat = math.floor((52.37 + 90.0) / d_lat5) * d_lat5 - 90.0
    corner_lon = math.floor((9.70 + 180.0) / d_lon5) * d_lon5 - 180.0
    area = StudyArea(seed_name,
                     corner_lat - 0.9 * d_lat5, corner_lat + 0.9 * d_lat5,
                     corner_lon - 0.9 * d_lon5, corner_lon + 0.9 * d_lon5)
    # Junction level tracks the accident rate, and weak hotspots sprawl over
    # more cells: a region's infrastructure profile then predicts how
    # accident-prone it is, beyond mere membership.
    hotspots = (
        # On the N-S border, north of the corner: morning rush.
        Hotspot(corner_lat + 0.013, corner_lon, 0.0018, 130, (7, 8, 9), 0.95),
        # On the W-E border, east of the corner: evening rush.
        Hotspot(corner_lat, corner_lon + 0.016, 0.0022, 85, (17, 18, 19), 0.6),
        # On the N-S border, south of the corner: midday.
        Hotspot(corner_lat - 0.014, corner_lon, 0.003, 45, (12, 13, 14), 0.3),
        # On the W-E border, west of the corner: night.
        Hotspot(corner_lat, corner_lon - 0.018, 0.0035, 25, (22, 23, 0), 0.1),
        # On the corner itself: split across all four coarse cells.
        Hotspot(corner_lat, corner_lon, 0.002, 100, (5, 6), 0.8),
    )
    return CitySpec(seed_name, area, hotspots, cycle_attributes=True)


# ------------------------------------------------- linearly separable matrix

def make_separable_set(n_samples: int, rng: np.random.Generator,
                       accident_dim: int = 8, regional_dim: int = 6,
                       history_len: int = 8, ratio: int = 3,
                       margin: float = 0.25) -> SampleSet:
    """A SampleMatrix whose label is a fixed linear rule over the accident
    and regional blocks, with a hard margin; months are assigned uniformly
    and splits are temporal, so it exercises the full training path."""
    if n_samples < 8 * (ratio + 1):
        raise PipelineError("too few samples for a 1:ratio split")
    w_acc = rng.normal(0, 1, accident_dim)
    w_reg = rng.normal(0, 1, regional_dim)
    norm = np.sqrt((w_acc ** 2).sum() + (w_reg ** 2).sum())
    w_acc /= norm
    w_reg /= norm
    encoder = TemporalEncoder()
    location = GeoPoint(52.37, 9.73)
    seq_cache: dict[tuple, np.ndarray] = {}

    def temporal_seq(m: int, dow: int, hour: int) -> np.ndarray:
        steps = []
        for k in range(history_len, 0, -1):
            h = (hour - k) % 24
            key = (m, dow, h)
            if key not in seq_cache:
                seq_cache[key] = encoder.encode(2016 + m // 12, m % 12 + 1, dow, h,
                                                location)
            steps.append(seq_cache[key])
        return np.stack(steps)

    ranges = SplitRanges(train=(0, 26), val=(26, 29), test=(29, 36))
    month_ranges = {"train": ranges.train, "val": ranges.val, "test": ranges.test}
    share = {"train": 0.72, "val": 0.08, "test": 0.20}
    splits = {}
    for name, (m_lo, m_hi) in month_ranges.items():
        total = max(ratio + 1, int(round(n_samples * share[name]) // (ratio + 1)) * (ratio + 1))
        n_pos = total // (ratio + 1)
        quota = {1: n_pos, 0: total - n_pos}
        rows = {1: [], 0: []}
        while quota[1] > len(rows[1]) or quota[0] > len(rows[0]):
            acc = rng.random(accident_dim)
            reg = rng.random(regional_dim)
            score = float(w_acc @ (acc - 0.5) + w_reg @ (reg - 0.5))
            if abs(score) < margin:
                continue
            label = int(score > 0)
            if len(rows[label]) < quota[label]:
                rows[label].append((acc, reg))
        n = quota[1] + quota[0]
        temporal = np.zeros((n, history_len, encoder.dim))
        accident = np.zeros((n, accident_dim))
        regional = np.zeros((n, regional_dim))
        labels = np.zeros(n, dtype=int)
        month_idx = np.zeros(n, dtype=int)
        i = 0
        for label in (1, 0):
            for acc, reg in rows[label]:
                m = int(rng.integers(m_lo, m_hi))
                dow = int(rng.integers(1, 8))
                hour = int(rng.integers(24))
                temporal[i] = temporal_seq(m, dow, hour)
                accident[i] = acc
                regional[i] = reg
                labels[i] = label
                month_idx[i] = m
                i += 1
        order = rng.permutation(n)
        splits[name] = SampleSplit(
            ArrayDataset(temporal[order], accident[order], regional[order],
                         labels[order]),
            month_idx[order], np.full(n, location.lat), np.full(n, location.lon),
            ["synthetic"] * n)
    return SampleSet(splits["train"], splits["val"], splits["test"], ranges,
                     [f"f{i}" for i in range(regional_dim)], 1)
