"""Geohash grid primitives and spherical distance.

Everything here is pure and stateless; the rest of the package treats these
functions as the single source of truth for cell geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_CHAR_INDEX = {c: i for i, c in enumerate(BASE32)}
_BIT_MASKS = (16, 8, 4, 2, 1)

EARTH_RADIUS_M = 6_371_000.0


class GeocodeError(ValueError):
    """Invalid coordinate, malformed cell code, or unsupported region."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise GeocodeError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise GeocodeError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise GeocodeError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class GeohashCell:
    code: str

    def __post_init__(self) -> None:
        if not 1 <= len(self.code) <= 12:
            raise GeocodeError(f"cell code length {len(self.code)} outside 1..12")
        for c in self.code:
            if c not in _CHAR_INDEX:
                raise GeocodeError(f"invalid geohash character {c!r} in {self.code!r}")

    @property
    def precision(self) -> int:
        return len(self.code)


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    @property
    def center(self) -> GeoPoint:
        return GeoPoint((self.lat_min + self.lat_max) / 2.0,
                        (self.lon_min + self.lon_max) / 2.0)

    def contains(self, point: GeoPoint) -> bool:
        return (self.lat_min <= point.lat <= self.lat_max
                and self.lon_min <= point.lon <= self.lon_max)


def encode(point: GeoPoint, precision: int) -> GeohashCell:
    """Encode a point into its geohash cell at the given precision.

    Bits interleave longitude first; a coordinate exactly on a bisector goes
    to the upper half, which is what makes encode(0, 0) start with "s".
    """
    if not 1 <= precision <= 12:
        raise GeocodeError(f"precision {precision} outside 1..12")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    digit = 0
    bit = 0
    is_lon = True
    while len(chars) < precision:
        if is_lon:
            mid = (lon_lo + lon_hi) / 2.0
            if point.lon >= mid:
                digit |= _BIT_MASKS[bit]
                lon_lo = mid
            else:
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2.0
            if point.lat >= mid:
                digit |= _BIT_MASKS[bit]
                lat_lo = mid
            else:
                lat_hi = mid
        is_lon = not is_lon
        if bit < 4:
            bit += 1
        else:
            chars.append(BASE32[digit])
            digit = 0
            bit = 0
    return GeohashCell("".join(chars))


def decode(cell: GeohashCell | str) -> BoundingBox:
    """Return the bounding box of a cell; its .center is the decoded point."""
    code = cell.code if isinstance(cell, GeohashCell) else GeohashCell(cell).code
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    is_lon = True
    for c in code:
        digit = _CHAR_INDEX[c]
        for mask in _BIT_MASKS:
            if is_lon:
                mid = (lon_lo + lon_hi) / 2.0
                if digit & mask:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2.0
                if digit & mask:
                    lat_lo = mid
                else:
                    lat_hi = mid
            is_lon = not is_lon
    return BoundingBox(lat_lo, lat_hi, lon_lo, lon_hi)


def cell_center(cell: GeohashCell | str) -> GeoPoint:
    return decode(cell).center


def cell_sizes(precision: int) -> tuple[float, float]:
    """(lat extent, lon extent) of a cell in degrees at the given precision."""
    if not 1 <= precision <= 12:
        raise GeocodeError(f"precision {precision} outside 1..12")
    bits = 5 * precision
    lon_bits = (bits + 1) // 2
    lat_bits = bits // 2
    return 180.0 / (1 << lat_bits), 360.0 / (1 << lon_bits)


# Offsets in (d_lat, d_lon) cell units, N first then clockwise.
_NEIGHBOR_OFFSETS = (
    (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1),
)


def neighbors8(cell: GeohashCell | str) -> list[GeohashCell]:
    """The 8 surrounding cells at the same precision (N, NE, E, SE, S, SW, W, NW).

    Cells on the polar rows or antimeridian columns are rejected instead of
    wrapped; the study areas this package targets never touch them.
    """
    if isinstance(cell, str):
        cell = GeohashCell(cell)
    box = decode(cell)
    center = box.center
    d_lat = box.lat_max - box.lat_min
    d_lon = box.lon_max - box.lon_min
    out = []
    for k_lat, k_lon in _NEIGHBOR_OFFSETS:
        lat = center.lat + k_lat * d_lat
        lon = center.lon + k_lon * d_lon
        if not -90.0 < lat < 90.0:
            raise GeocodeError(f"neighbor of {cell.code} crosses a polar boundary")
        if not -180.0 < lon < 180.0:
            raise GeocodeError(f"neighbor of {cell.code} crosses the antimeridian")
        out.append(encode(GeoPoint(lat, lon), cell.precision))
    return out


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of mean Earth radius."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    d_phi = math.radians(b.lat - a.lat)
    d_lam = math.radians(b.lon - a.lon)
    s = (math.sin(d_phi / 2.0) ** 2
         + math.cos(phi1) * math.cos(phi2) * math.sin(d_lam / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * math.atan2(math.sqrt(s), math.sqrt(1.0 - s))


def child_cells(code: str, precision: int) -> Iterator[str]:
    """All descendant cell codes of `code` at the given (deeper) precision."""
    if precision < len(code):
        raise GeocodeError(f"target precision {precision} above cell precision {len(code)}")
    if precision == len(code):
        yield code
        return
    for c in BASE32:
        yield from child_cells(code + c, precision)


def cells_in_bbox(lat_min: float, lat_max: float, lon_min: float, lon_max: float,
                  precision: int) -> list[GeohashCell]:
    """All cells at `precision` whose centers fall inside the box."""
    if lat_min >= lat_max or lon_min >= lon_max:
        raise GeocodeError("degenerate bounding box")
    d_lat, d_lon = cell_sizes(precision)
    cells = []
    i0 = math.floor((lat_min + 90.0) / d_lat)
    i1 = math.floor((lat_max + 90.0) / d_lat)
    j0 = math.floor((lon_min + 180.0) / d_lon)
    j1 = math.floor((lon_max + 180.0) / d_lon)
    for i in range(i0, i1 + 1):
        lat = -90.0 + (i + 0.5) * d_lat
        if not lat_min <= lat <= lat_max:
            continue
        for j in range(j0, j1 + 1):
            lon = -180.0 + (j + 0.5) * d_lon
            if not lon_min <= lon <= lon_max:
                continue
            cells.append(encode(GeoPoint(lat, lon), precision))
    return cells
