"""Parsing of the accident CSV and the pre-extracted regional-feature CSV.

Schemas drift across dataset releases, so the accident column mapping is
data, not code. Rows never disappear silently: every rejection is recorded
with its row number and reason, and accepted + rejected always equals the
input row count.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

from .features import CellFeatureTable, month_index
from .geocode import GeocodeError, GeohashCell, GeoPoint


class IngestError(ValueError):
    """Fatal ingest configuration problem (bad header, unreadable file)."""


@dataclass(frozen=True)
class StudyArea:
    name: str
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if self.lat_min >= self.lat_max or self.lon_min >= self.lon_max:
            raise IngestError(f"degenerate study area bbox for {self.name!r}")

    def contains(self, point: GeoPoint) -> bool:
        return (self.lat_min <= point.lat <= self.lat_max
                and self.lon_min <= point.lon <= self.lon_max)


@dataclass(frozen=True)
class Event:
    id: str
    location: GeoPoint
    year: int
    month: int
    day_of_week: int  # ISO: 1=Monday .. 7=Sunday
    hour: int
    accident_type: str
    road_condition: str

    @property
    def month_index(self) -> int:
        return month_index(self.year, self.month)


@dataclass(frozen=True)
class ColumnMap:
    """Accident CSV column names plus the source day-of-week convention."""
    id: str = "OBJECTID"
    lat: str = "YGCSWGS84"
    lon: str = "XGCSWGS84"
    year: str = "UJAHR"
    month: str = "UMONAT"
    hour: str = "USTUNDE"
    day_of_week: str = "UWOCHENTAG"
    accident_type: str = "UART"
    road_condition: str = "USTRZUSTAND"
    # "atlas": 1=Sunday..7=Saturday (the Accident Atlas encoding); "iso":
    # 1=Monday..7=Sunday, stored as-is.
    day_of_week_convention: str = "atlas"

    def required_columns(self) -> list[str]:
        return [self.id, self.lat, self.lon, self.year, self.month, self.hour,
                self.day_of_week, self.accident_type, self.road_condition]

    def to_iso_dow(self, raw: int) -> int:
        if self.day_of_week_convention == "iso":
            return raw
        if self.day_of_week_convention == "atlas":
            return 7 if raw == 1 else raw - 1
        raise IngestError(f"unknown day_of_week convention "
                          f"{self.day_of_week_convention!r}")

    def from_iso_dow(self, iso: int) -> int:
        if self.day_of_week_convention == "iso":
            return iso
        return 1 if iso == 7 else iso + 1


DEFAULT_ATLAS_COLUMNS = ColumnMap()


@dataclass
class RejectionReport:
    rows_total: int = 0
    accepted: int = 0
    out_of_area: int = 0
    duplicate_keys: int = 0
    rejections: list[tuple[int, str]] = field(default_factory=list)

    def reject(self, row_number: int, reason: str) -> None:
        self.rejections.append((row_number, reason))

    @property
    def rejected(self) -> int:
        return len(self.rejections)


def _parse_int(raw: str, name: str, lo: int, hi: int) -> int:
    try:
        value = int(str(raw).strip())
    except (TypeError, ValueError):
        raise ValueError(f"{name} {raw!r} is not an integer")
    if not lo <= value <= hi:
        raise ValueError(f"{name} {value} outside {lo}..{hi}")
    return value


def _parse_float(raw: str, name: str) -> float:
    try:
        value = float(str(raw).strip())
    except (TypeError, ValueError):
        raise ValueError(f"{name} {raw!r} is not a number")
    if not math.isfinite(value):
        raise ValueError(f"{name} {raw!r} is not finite")
    return value


def parse_accidents(path: str | Path, study_area: StudyArea,
                    columns: ColumnMap = DEFAULT_ATLAS_COLUMNS,
                    delimiter: str = ";") -> tuple[list[Event], RejectionReport]:
    """Read the accident CSV into validated events.

    Coordinates must already be WGS84 degrees with '.' decimals (the supplier
    script converts the source CRS). Rows outside the study area are rejected
    and counted separately.
    """
    report = RejectionReport()
    events: list[Event] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: empty file, header row required")
        missing = [c for c in columns.required_columns() if c not in reader.fieldnames]
        if missing:
            raise IngestError(f"{path}: missing mandatory columns {missing}")
        for line, row in enumerate(reader, start=2):
            report.rows_total += 1
            try:
                lat = _parse_float(row[columns.lat], "latitude")
                lon = _parse_float(row[columns.lon], "longitude")
                try:
                    location = GeoPoint(lat, lon)
                except GeocodeError as exc:
                    raise ValueError(str(exc))
                year = _parse_int(row[columns.year], "year", 2016, 2019)
                month = _parse_int(row[columns.month], "month", 1, 12)
                hour = _parse_int(row[columns.hour], "hour", 0, 23)
                raw_dow = _parse_int(row[columns.day_of_week], "day_of_week", 1, 7)
            except ValueError as exc:
                report.reject(line, str(exc))
                continue
            if not study_area.contains(location):
                report.out_of_area += 1
                report.reject(line, "outside study area")
                continue
            events.append(Event(
                id=str(row[columns.id]).strip(),
                location=location,
                year=year,
                month=month,
                day_of_week=columns.to_iso_dow(raw_dow),
                hour=hour,
                accident_type=str(row[columns.accident_type]).strip(),
                road_condition=str(row[columns.road_condition]).strip(),
            ))
            report.accepted += 1
    return events, report


def serialize_accidents(events: list[Event], path: str | Path,
                        columns: ColumnMap = DEFAULT_ATLAS_COLUMNS,
                        delimiter: str = ";") -> None:
    """Write events back in the accident CSV schema (round-trips exactly)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(columns.required_columns())
        for ev in events:
            writer.writerow([
                ev.id, repr(ev.location.lat), repr(ev.location.lon), ev.year,
                ev.month, ev.hour, columns.from_iso_dow(ev.day_of_week),
                ev.accident_type, ev.road_condition,
            ])


REGIONAL_HEADER = ("geohash7", "feature_name", "value")


def parse_regional_features(path: str | Path,
                            delimiter: str = ",") -> tuple[CellFeatureTable, RejectionReport]:
    """Read the `geohash7,feature_name,value` table; duplicate keys last-win."""
    report = RejectionReport()
    table = CellFeatureTable()
    seen: set[tuple[str, str]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path}: empty file, header row required")
        if [h.strip() for h in header[:3]] != list(REGIONAL_HEADER):
            raise IngestError(f"{path}: header must be {','.join(REGIONAL_HEADER)}")
        for line, row in enumerate(reader, start=2):
            report.rows_total += 1
            if len(row) < 3:
                report.reject(line, f"expected 3 fields, got {len(row)}")
                continue
            cell, feature, raw_value = row[0].strip(), row[1].strip(), row[2]
            try:
                parsed = GeohashCell(cell)
                if parsed.precision != 7:
                    raise GeocodeError(f"cell {cell!r} is not precision 7")
            except GeocodeError as exc:
                report.reject(line, str(exc))
                continue
            try:
                value = _parse_float(raw_value, "value")
            except ValueError as exc:
                report.reject(line, str(exc))
                continue
            key = (cell, feature)
            if key in seen:
                report.duplicate_keys += 1
            seen.add(key)
            table.put(cell, feature, value)
            report.accepted += 1
    return table, report


def serialize_regional_features(table: CellFeatureTable, path: str | Path,
                                delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(REGIONAL_HEADER)
        for cell in sorted(table._data):
            for feature, value in sorted(table.cell_features(cell).items()):
                writer.writerow([cell, feature, repr(value)])
