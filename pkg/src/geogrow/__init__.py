"""Adaptive geohash grid-growing regions and event-occurrence prediction."""

from .cluster import ClusterModel, FixedGridModel, GridGrowParams, RegionId, grid_grow
from .geocode import GeoPoint, GeohashCell, decode, encode, haversine, neighbors8
from .ingest import Event, StudyArea, parse_accidents, parse_regional_features
from .pipeline import SamplingConfig, build_samples, f1_accident, negative_sample

__version__ = "0.1.0"

__all__ = [
    "ClusterModel", "Event", "FixedGridModel", "GeoPoint", "GeohashCell",
    "GridGrowParams", "RegionId", "SamplingConfig", "StudyArea",
    "build_samples", "decode", "encode", "f1_accident", "grid_grow",
    "haversine", "negative_sample", "neighbors8", "parse_accidents",
    "parse_regional_features",
]
