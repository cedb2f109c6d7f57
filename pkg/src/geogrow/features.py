"""Per-region and per-time-step feature construction.

Three families feed the predictor: one-hot temporal vectors (36 dims,
including solar geometry), per-region means of one-hot accident attributes,
and min-max normalized infrastructure counts aggregated from detail cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .geocode import GeoPoint


class FeatureError(ValueError):
    """Invalid feature input."""


class LeakageError(FeatureError):
    """An event outside the allowed training window reached a feature builder."""


YEARS = (2016, 2017, 2018, 2019)


def month_index(year: int, month: int) -> int:
    """Months since 2016-01; the package's time axis for splits and windows."""
    if not 1 <= month <= 12:
        raise FeatureError(f"month {month} outside 1..12")
    return (year - YEARS[0]) * 12 + (month - 1)


# -------------------------------------------------------------------- solar

@dataclass(frozen=True)
class SolarGeometry:
    elevation: float  # degrees above horizon, [-90, 90]
    azimuth: float    # degrees clockwise from north, [0, 360)

    @property
    def daylight(self) -> bool:
        return self.elevation > 0.0


def _julian_day(year: int, month: int, day: int, hour_utc: float) -> float:
    if month <= 2:
        year -= 1
        month += 12
    a = year // 100
    b = 2 - a + a // 4
    return (math.floor(365.25 * (year + 4716)) + math.floor(30.6001 * (month + 1))
            + day + b - 1524.5 + hour_utc / 24.0)


def solar_position(year: int, month: int, hour_utc: float,
                   location: GeoPoint, day: int = 15) -> SolarGeometry:
    """NOAA-style solar position at the representative mid-month date.

    The dataset withholds the day of month, so computations default to the
    15th; accuracy against a full ephemeris is well under a degree for the
    covered years.
    """
    if not 1 <= month <= 12:
        raise FeatureError(f"month {month} outside 1..12")
    if not 0.0 <= hour_utc < 24.0:
        raise FeatureError(f"hour {hour_utc} outside [0, 24)")
    jc = (_julian_day(year, month, day, hour_utc) - 2451545.0) / 36525.0

    gml = (280.46646 + jc * (36000.76983 + jc * 0.0003032)) % 360.0
    gma = 357.52911 + jc * (35999.05029 - 0.0001537 * jc)
    ecc = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc)
    m = math.radians(gma)
    eq_center = (math.sin(m) * (1.914602 - jc * (0.004817 + 0.000014 * jc))
                 + math.sin(2 * m) * (0.019993 - 0.000101 * jc)
                 + math.sin(3 * m) * 0.000289)
    true_long = gml + eq_center
    omega = math.radians(125.04 - 1934.136 * jc)
    app_long = true_long - 0.00569 - 0.00478 * math.sin(omega)
    mean_obliq = 23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60.0) / 60.0
    obliq = mean_obliq + 0.00256 * math.cos(omega)

    obliq_r = math.radians(obliq)
    app_r = math.radians(app_long)
    declination = math.asin(math.sin(obliq_r) * math.sin(app_r))

    var_y = math.tan(obliq_r / 2.0) ** 2
    gml_r = math.radians(gml)
    eq_time_min = 4.0 * math.degrees(
        var_y * math.sin(2 * gml_r) - 2 * ecc * math.sin(m)
        + 4 * ecc * var_y * math.sin(m) * math.cos(2 * gml_r)
        - 0.5 * var_y * var_y * math.sin(4 * gml_r)
        - 1.25 * ecc * ecc * math.sin(2 * m))

    tst = (hour_utc * 60.0 + eq_time_min + 4.0 * location.lon) % 1440.0
    ha = tst / 4.0 - 180.0 if tst / 4.0 >= 0 else tst / 4.0 + 180.0
    ha_r = math.radians(ha)
    lat_r = math.radians(location.lat)

    cos_zen = (math.sin(lat_r) * math.sin(declination)
               + math.cos(lat_r) * math.cos(declination) * math.cos(ha_r))
    zenith = math.acos(min(1.0, max(-1.0, cos_zen)))
    elevation = 90.0 - math.degrees(zenith)

    denom = math.cos(lat_r) * math.sin(zenith)
    if abs(denom) < 1e-12:
        azimuth = 0.0
    else:
        cos_az = (math.sin(lat_r) * math.cos(zenith) - math.sin(declination)) / denom
        az = math.degrees(math.acos(min(1.0, max(-1.0, cos_az))))
        azimuth = (az + 180.0) % 360.0 if ha > 0 else (540.0 - az) % 360.0
    return SolarGeometry(elevation, azimuth)


def berlin_utc_offset(month: int) -> int:
    """Civil-time offset of the study areas; exact at the mid-month date."""
    return 2 if 4 <= month <= 10 else 1


# ----------------------------------------------------------------- temporal

@dataclass(frozen=True)
class TimeContext:
    year: int
    month: int
    day_of_week: int  # ISO: 1=Monday .. 7=Sunday
    hour: int         # local civil hour 0..23
    solar: SolarGeometry


def _season(month: int) -> int:
    # Meteorological seasons: winter, spring, summer, autumn.
    return {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1,
            6: 2, 7: 2, 8: 2, 9: 3, 10: 3, 11: 3}[month]


def _elevation_band(elev: float) -> int:
    if elev < 0.0:
        return 0
    return 1 if elev < 30.0 else 2


# (name, size, selector). One-hot blocks concatenate to exactly 36 dims; nine
# blocks cover the ten named temporal aspects (solar position = elevation
# plus azimuth). Swap this table out to experiment with other layouts.
TemporalBlock = tuple[str, int, Callable[[TimeContext], int]]

DEFAULT_TEMPORAL_BLOCKS: tuple[TemporalBlock, ...] = (
    ("weekend", 2, lambda c: 1 if c.day_of_week >= 6 else 0),
    ("season", 4, lambda c: _season(c.month)),
    ("day_of_week", 7, lambda c: c.day_of_week - 1),
    ("hour_block", 6, lambda c: c.hour // 4),
    ("year", 4, lambda c: c.year - YEARS[0]),
    ("daylight", 2, lambda c: 1 if c.solar.daylight else 0),
    ("solar_elevation", 3, lambda c: _elevation_band(c.solar.elevation)),
    ("solar_azimuth", 4, lambda c: int(c.solar.azimuth // 90.0) % 4),
    ("month_quarter", 4, lambda c: (c.month - 1) // 3),
)

TEMPORAL_DIM = sum(size for _, size, _ in DEFAULT_TEMPORAL_BLOCKS)
assert TEMPORAL_DIM == 36


class TemporalEncoder:
    """One-hot temporal feature vectors from calendar fields and location."""

    def __init__(self, blocks: Sequence[TemporalBlock] = DEFAULT_TEMPORAL_BLOCKS):
        self.blocks = tuple(blocks)
        self.dim = sum(size for _, size, _ in self.blocks)

    def encode(self, year: int, month: int, day_of_week: int, hour: int,
               location: GeoPoint) -> np.ndarray:
        if year not in YEARS:
            raise FeatureError(f"year {year} outside {YEARS[0]}..{YEARS[-1]}")
        if not 1 <= month <= 12:
            raise FeatureError(f"month {month} outside 1..12")
        if not 1 <= day_of_week <= 7:
            raise FeatureError(f"day_of_week {day_of_week} outside 1..7")
        if not 0 <= hour <= 23:
            raise FeatureError(f"hour {hour} outside 0..23")
        hour_utc = (hour - berlin_utc_offset(month)) % 24
        solar = solar_position(year, month, float(hour_utc), location)
        ctx = TimeContext(year, month, day_of_week, hour, solar)
        vec = np.zeros(self.dim)
        offset = 0
        for name, size, selector in self.blocks:
            idx = selector(ctx)
            if not 0 <= idx < size:
                raise FeatureError(f"block {name} produced index {idx} outside 0..{size - 1}")
            vec[offset + idx] = 1.0
            offset += size
        return vec

    def block_slices(self) -> dict[str, slice]:
        out = {}
        offset = 0
        for name, size, _ in self.blocks:
            out[name] = slice(offset, offset + size)
            offset += size
        return out


def encode_temporal(year: int, month: int, day_of_week: int, hour: int,
                    location: GeoPoint) -> np.ndarray:
    return TemporalEncoder().encode(year, month, day_of_week, hour, location)


# ----------------------------------------------------------------- accident

@dataclass(frozen=True)
class Vocabulary:
    """Closed code list plus an implicit trailing slot for unknown codes."""
    codes: tuple[str, ...]

    @property
    def dim(self) -> int:
        return len(self.codes) + 1

    def index_of(self, code: str) -> int:
        try:
            return self.codes.index(code)
        except ValueError:
            return len(self.codes)


# Accident Atlas code lists; editable per dataset release.
ACCIDENT_TYPES = Vocabulary(tuple(str(i) for i in range(1, 11)))
ROAD_CONDITIONS = Vocabulary(("0", "1", "2"))


def accident_feature_dim(types: Vocabulary = ACCIDENT_TYPES,
                         conditions: Vocabulary = ROAD_CONDITIONS) -> int:
    return types.dim + conditions.dim


def aggregate_accident_features(region_events, training_window: tuple[int, int],
                                types: Vocabulary = ACCIDENT_TYPES,
                                conditions: Vocabulary = ROAD_CONDITIONS) -> np.ndarray:
    """Mean of one-hot(type) (+) one-hot(road condition) over a region's events.

    Only training-window events may contribute; anything else raises to stop
    target leakage at the source. An event-free region yields all zeros.
    """
    lo, hi = training_window
    vec = np.zeros(types.dim + conditions.dim)
    n = 0
    for ev in region_events:
        m = month_index(ev.year, ev.month)
        if not lo <= m < hi:
            raise LeakageError(
                f"event {ev.id} at month index {m} outside training window [{lo}, {hi})")
        vec[types.index_of(str(ev.accident_type))] += 1.0
        vec[types.dim + conditions.index_of(str(ev.road_condition))] += 1.0
        n += 1
    if n:
        vec /= n
    return vec


# ----------------------------------------------------------------- regional

REGIONAL_COUNT_FEATURES = (
    "amenity_count", "crossing_count", "junction_count", "railway_count",
    "station_count", "stop_sign_count", "traffic_signal_count",
    "turning_loop_count", "give_way_count",
)
HIGHWAY_TYPES = ("motorway", "trunk", "primary", "secondary", "tertiary",
                 "residential", "other")
HIGHWAY_FEATURES = tuple(f"highway_{t}" for t in HIGHWAY_TYPES)
SPEED_FEATURE = "avg_max_speed"
LENGTH_FEATURE = "street_length"

REGIONAL_FEATURES = REGIONAL_COUNT_FEATURES + HIGHWAY_FEATURES + (SPEED_FEATURE,)


class CellFeatureTable:
    """Regional feature values keyed by (detail cell, feature name)."""

    def __init__(self, entries: Mapping[tuple[str, str], float] | None = None):
        self._data: dict[str, dict[str, float]] = {}
        self.feature_names: set[str] = set()
        if entries:
            for (cell, feature), value in entries.items():
                self.put(cell, feature, value)

    def put(self, cell: str, feature: str, value: float) -> None:
        self._data.setdefault(cell, {})[feature] = float(value)
        self.feature_names.add(feature)

    def get(self, cell: str, feature: str) -> float | None:
        return self._data.get(cell, {}).get(feature)

    def cell_features(self, cell: str) -> dict[str, float]:
        return self._data.get(cell, {})

    def __len__(self) -> int:
        return sum(len(v) for v in self._data.values())


def aggregate_regional(cells: Iterable[str], table: CellFeatureTable,
                       average_features: frozenset[str] = frozenset({SPEED_FEATURE}),
                       length_feature: str = LENGTH_FEATURE) -> dict[str, float]:
    """Raw (un-normalized) regional features for one region.

    Count-like features sum over member cells; average-like features (the
    speed) are means over cells carrying them, weighted by street length
    when the table provides it. Cells unknown to the table contribute zero.
    """
    sums: dict[str, float] = {}
    avg_num: dict[str, float] = {}
    avg_den: dict[str, float] = {}
    for cell in cells:
        feats = table.cell_features(cell)
        if not feats:
            continue
        weight = feats.get(length_feature)
        for name, value in feats.items():
            if name in average_features:
                w = weight if weight is not None and weight > 0 else 1.0
                avg_num[name] = avg_num.get(name, 0.0) + w * value
                avg_den[name] = avg_den.get(name, 0.0) + w
            else:
                sums[name] = sums.get(name, 0.0) + value
    out = dict(sums)
    for name in avg_num:
        out[name] = avg_num[name] / avg_den[name]
    return out


class RegionalNormalizer:
    """Min-max normalization of raw regional features across the study area."""

    def __init__(self, raw_by_region: Mapping[object, Mapping[str, float]],
                 feature_names: Sequence[str] | None = None):
        if feature_names is None:
            names: set[str] = set()
            for raw in raw_by_region.values():
                names.update(raw)
            feature_names = sorted(names)
        self.feature_names = list(feature_names)
        lo = np.full(len(self.feature_names), np.inf)
        hi = np.full(len(self.feature_names), -np.inf)
        for raw in raw_by_region.values():
            for i, name in enumerate(self.feature_names):
                v = raw.get(name, 0.0)
                lo[i] = min(lo[i], v)
                hi[i] = max(hi[i], v)
        if not len(raw_by_region):
            lo[:] = 0.0
            hi[:] = 0.0
        self.lo = lo
        self.span = np.where(hi - lo > 0, hi - lo, 1.0)

    @property
    def dim(self) -> int:
        return len(self.feature_names)

    def transform(self, raw: Mapping[str, float]) -> np.ndarray:
        vec = np.array([raw.get(name, 0.0) for name in self.feature_names])
        return np.clip((vec - self.lo) / self.span, 0.0, 1.0)
