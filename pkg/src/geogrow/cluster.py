"""Adaptive region construction by growing geohash grids over observed events.

A trained model partitions the occupied detail-precision cells into
8-connected clusters. Assignment of an arbitrary point is total: the nearest
cluster wins when its closest member-cell center is under the distance
threshold, otherwise the point falls back to its coarse base-grid cell.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geocode import GeoPoint, cell_center, child_cells, encode, neighbors8


class ClusterError(ValueError):
    """Invalid clustering input or parameters."""


@dataclass(frozen=True)
class RegionId:
    """Stable identifier of a geospatial region.

    kind "cluster" carries the canonical cluster index; kind "fallback" the
    base-grid cell code; kind "grid" a fixed-grid cell code; baseline wrappers
    add their own kinds.
    """
    kind: str
    key: str

    def __str__(self) -> str:
        return f"{self.kind}:{self.key}"

    @staticmethod
    def parse(text: str) -> "RegionId":
        kind, _, key = text.partition(":")
        if not kind or not key:
            raise ClusterError(f"malformed region id {text!r}")
        return RegionId(kind, key)


@dataclass(frozen=True)
class GridGrowParams:
    delta_detail: int = 7
    delta_base: int = 6
    distance_threshold_m: float = 400.0

    def validate(self) -> None:
        if self.delta_detail not in (5, 6, 7):
            raise ClusterError(f"delta_detail {self.delta_detail} not in {{5,6,7}}")
        if self.delta_base not in (5, 6, 7):
            raise ClusterError(f"delta_base {self.delta_base} not in {{5,6,7}}")
        if self.delta_base >= self.delta_detail:
            raise ClusterError("delta_base must be coarser than delta_detail")
        if not self.distance_threshold_m > 0:
            raise ClusterError("distance threshold must be positive")


class RegionModel:
    """Common interface every aggregation exposes to the sample builder."""

    def assign(self, point: GeoPoint) -> RegionId:
        raise NotImplementedError

    def region_center(self, region: RegionId) -> GeoPoint:
        raise NotImplementedError

    def member_cells(self, region: RegionId, precision: int) -> list[str]:
        """Detail cells whose features this region aggregates."""
        raise NotImplementedError


def _haversine_to_many(point: GeoPoint, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    phi1 = np.radians(point.lat)
    phi2 = np.radians(lat)
    d_phi = np.radians(lat - point.lat)
    d_lam = np.radians(lon - point.lon)
    s = np.sin(d_phi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(d_lam / 2.0) ** 2
    return 2.0 * 6_371_000.0 * np.arctan2(np.sqrt(s), np.sqrt(1.0 - s))


class ClusterModel(RegionModel):
    """Grown clusters plus the threshold/fallback assignment function."""

    def __init__(self, clusters: list[tuple[str, ...]], params: GridGrowParams):
        params.validate()
        self.params = params
        # Canonical order: by lexicographically smallest member cell.
        self.clusters = sorted((tuple(sorted(c)) for c in clusters), key=lambda c: c[0])
        self._cell_to_cluster = {}
        for idx, cells in enumerate(self.clusters):
            if not cells:
                raise ClusterError("empty cluster")
            for code in cells:
                if code in self._cell_to_cluster:
                    raise ClusterError(f"cell {code} in two clusters")
                self._cell_to_cluster[code] = idx
        centers = [(cell_center(code), idx)
                   for idx, cells in enumerate(self.clusters) for code in cells]
        self._center_lat = np.array([p.lat for p, _ in centers])
        self._center_lon = np.array([p.lon for p, _ in centers])
        self._center_cluster = np.array([i for _, i in centers], dtype=int)
        # Fallback regions are created lazily on first assignment and kept so
        # that serialization reflects every region the model has handed out.
        self.overflow: dict[str, RegionId] = {}

    # ------------------------------------------------------------ assignment

    def assign(self, point: GeoPoint) -> RegionId:
        cell = encode(point, self.params.delta_detail).code
        idx = self._cell_to_cluster.get(cell)
        if idx is None:
            dist, idx = self.nearest_cluster(point)
            if dist >= self.params.distance_threshold_m:
                return self._fallback(point)
        return RegionId("cluster", str(idx))

    def nearest_cluster(self, point: GeoPoint) -> tuple[float, int]:
        """(distance to nearest member-cell center, cluster index); ties break
        toward the lower canonical index."""
        d = _haversine_to_many(point, self._center_lat, self._center_lon)
        k = int(np.argmin(d))
        return float(d[k]), int(self._center_cluster[k])

    def _fallback(self, point: GeoPoint) -> RegionId:
        base = encode(point, self.params.delta_base).code
        region = self.overflow.get(base)
        if region is None:
            region = RegionId("fallback", base)
            self.overflow[base] = region
        return region

    # ------------------------------------------------------------- geometry

    def region_center(self, region: RegionId) -> GeoPoint:
        if region.kind == "cluster":
            cells = self.clusters[int(region.key)]
            lats = [cell_center(c).lat for c in cells]
            lons = [cell_center(c).lon for c in cells]
            return GeoPoint(sum(lats) / len(lats), sum(lons) / len(lons))
        if region.kind == "fallback":
            return cell_center(region.key)
        raise ClusterError(f"unknown region kind {region.kind}")

    def member_cells(self, region: RegionId, precision: int) -> list[str]:
        if region.kind == "cluster":
            return list(self.clusters[int(region.key)])
        if region.kind == "fallback":
            return list(child_cells(region.key, precision))
        raise ClusterError(f"unknown region kind {region.kind}")

    # --------------------------------------------------------- serialization

    def to_json(self) -> str:
        doc = {
            "params": {
                "delta_detail": self.params.delta_detail,
                "delta_base": self.params.delta_base,
                "distance_threshold_m": self.params.distance_threshold_m,
            },
            "clusters": [list(c) for c in self.clusters],
            "overflow": {code: str(region) for code, region in sorted(self.overflow.items())},
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "ClusterModel":
        doc = json.loads(text)
        p = doc["params"]
        model = ClusterModel(
            [tuple(c) for c in doc["clusters"]],
            GridGrowParams(p["delta_detail"], p["delta_base"], p["distance_threshold_m"]),
        )
        for code, rid in doc.get("overflow", {}).items():
            model.overflow[code] = RegionId.parse(rid)
        return model


def grid_grow(events: list[GeoPoint], params: GridGrowParams | None = None,
              rng: np.random.Generator | None = None) -> ClusterModel:
    """Grow 8-connected clusters of occupied detail cells around random seeds.

    Every occupied cell ends up in exactly one cluster; the resulting
    partition is the set of 8-connected components of the occupied cells, so
    it does not depend on the seed order (only cluster indices would, and
    those are canonicalized).
    """
    params = params or GridGrowParams()
    params.validate()
    if not events:
        raise ClusterError("cannot grow a grid from zero events")
    rng = rng or np.random.default_rng(0)

    occupied = {encode(p, params.delta_detail).code for p in events}
    unmarked = sorted(occupied)
    clusters: list[tuple[str, ...]] = []
    while unmarked:
        seed = unmarked[int(rng.integers(len(unmarked)))]
        cluster = {seed}
        frontier = [seed]
        while frontier:
            found = []
            for code in frontier:
                for nb in neighbors8(code):
                    if nb.code in occupied and nb.code not in cluster:
                        cluster.add(nb.code)
                        found.append(nb.code)
            frontier = found
        clusters.append(tuple(cluster))
        unmarked = [c for c in unmarked if c not in cluster]
    return ClusterModel(clusters, params)


class FixedGridModel(RegionModel):
    """Uniform geohash grid as a trivial aggregation (the 1x1 / 5x5 setups)."""

    def __init__(self, precision: int):
        if precision not in (5, 6, 7):
            raise ClusterError(f"grid precision {precision} not in {{5,6,7}}")
        self.precision = precision

    def assign(self, point: GeoPoint) -> RegionId:
        return RegionId("grid", encode(point, self.precision).code)

    def region_center(self, region: RegionId) -> GeoPoint:
        return cell_center(region.key)

    def member_cells(self, region: RegionId, precision: int) -> list[str]:
        return list(child_cells(region.key, precision))

    def to_json(self) -> str:
        return json.dumps({"params": {"precision": self.precision}, "kind": "grid"},
                          sort_keys=True)
