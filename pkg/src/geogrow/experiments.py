"""Experiment runners: aggregation comparison, city-center radius study, and
feature-group ablation.

Each runner is a pure function of (data, config): every random draw flows
from seeds in the config, so reports are reproducible byte for byte.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baselines import (
    DBSCANRegionModel, KMeansRegionModel, dbscan, elbow_k, kmeans,
    select_dbscan_params, som_train,
)
from .cluster import FixedGridModel, GridGrowParams, RegionModel, grid_grow
from .features import CellFeatureTable, accident_feature_dim
from .geocode import GeoPoint, haversine
from .ingest import Event, StudyArea
from .model import (
    ALL_GROUPS, DNNNet, NetworkConfig, PredictorNet, TrainConfig,
    logistic_regression_predict, logistic_regression_train, predict, train,
)
from .pipeline import SampleSet, SamplingConfig, build_samples, f1_accident

AGGREGATIONS = ("gg", "som", "g1", "g5", "kmeans", "dbscan")
METHODS = ("acap", "dnn", "lr")


class ExperimentError(ValueError):
    """Invalid experiment configuration or degenerate evaluation subset."""


@dataclass(frozen=True)
class AggregationConfig:
    delta_detail: int = 7
    delta_base: int = 6
    distance_threshold_m: float = 400.0
    som_rows: int = 30
    som_cols: int = 30
    som_epochs: int = 12
    kmeans_k: int | None = None       # None: pick by the elbow criterion
    kmeans_k_max: int = 10
    dbscan_eps_m: float | None = None  # None: DMDBSCAN + silhouette selection
    dbscan_min_pts: int | None = None


def train_aggregation(kind: str, events: list[Event], cfg: AggregationConfig,
                      seed: int) -> RegionModel:
    """Fit the requested region model on the training events."""
    points = [ev.location for ev in events]
    rng = np.random.default_rng(seed)
    if kind == "gg":
        return grid_grow(points, GridGrowParams(cfg.delta_detail, cfg.delta_base,
                                                cfg.distance_threshold_m), rng)
    if kind == "g1":
        return FixedGridModel(6)
    if kind == "g5":
        return FixedGridModel(5)
    if kind == "som":
        return som_train(points, cfg.som_rows, cfg.som_cols, cfg.som_epochs, rng)
    if kind == "kmeans":
        k = cfg.kmeans_k
        if k is None:
            k, _ = elbow_k(points, cfg.kmeans_k_max, rng)
        result = min((kmeans(points, k, np.random.default_rng(seed + r))
                      for r in range(5)), key=lambda r: r.wcss)
        return KMeansRegionModel(result, np.array([(p.lat, p.lon) for p in points]))
    if kind == "dbscan":
        eps, min_pts = cfg.dbscan_eps_m, cfg.dbscan_min_pts
        if eps is None or min_pts is None:
            eps, min_pts = select_dbscan_params(points, seed=seed)
        labels = dbscan(points, eps, min_pts)
        return DBSCANRegionModel(labels, np.array([(p.lat, p.lon) for p in points]),
                                 cfg.distance_threshold_m, cfg.delta_base)
    raise ExperimentError(f"unknown aggregation {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    aggregations: tuple[str, ...] = ("gg", "som", "g1", "g5")
    methods: tuple[str, ...] = ("acap", "dnn", "lr")
    seeds: tuple[int, ...] = tuple(range(10))
    data_seed: int = 1234
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    lr_learning_rate: float = 0.5
    lr_epochs: int = 300

    def validate(self) -> None:
        for a in self.aggregations:
            if a not in AGGREGATIONS:
                raise ExperimentError(f"unknown aggregation {a!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ExperimentError(f"unknown method {m!r}")
        if not self.seeds:
            raise ExperimentError("need at least one run seed")
        self.train.validate()


def config_hash(config) -> str:
    blob = json.dumps(asdict(config), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunScore:
    aggregation: str
    method: str
    seed: int
    f1: float
    epochs_run: int = 0
    best_epoch: int = 0


@dataclass
class ExperimentReport:
    city: str
    scores: list[RunScore]
    seeds: tuple[int, ...]
    config_hash: str
    region_counts: dict[str, int]

    def mean_f1(self) -> dict[tuple[str, str], float]:
        sums: dict[tuple[str, str], list[float]] = {}
        for s in self.scores:
            sums.setdefault((s.aggregation, s.method), []).append(s.f1)
        return {k: float(np.mean(v)) for k, v in sums.items()}

    def runs(self, aggregation: str, method: str) -> list[RunScore]:
        return [s for s in self.scores
                if s.aggregation == aggregation and s.method == method]

    def to_dict(self) -> dict:
        return {
            "city": self.city,
            "config_hash": self.config_hash,
            "seeds": list(self.seeds),
            "region_counts": dict(sorted(self.region_counts.items())),
            "mean_f1": {f"{a}/{m}": v for (a, m), v in sorted(self.mean_f1().items())},
            "runs": [asdict(s) for s in self.scores],
        }


def _net_for(method: str, sample_set: SampleSet, train_cfg: TrainConfig,
             sampling: SamplingConfig):
    net_config = NetworkConfig(
        accident_dim=accident_feature_dim(sampling.accident_types,
                                          sampling.road_conditions),
        regional_dim=len(sample_set.regional_feature_names),
        history_len=sampling.history_len,
        dropout=train_cfg.dropout,
    )
    return PredictorNet(net_config) if method == "acap" else DNNNet(net_config)


def run_method(method: str, sample_set: SampleSet, config: ExperimentConfig,
               seed: int, active_groups: tuple[str, ...] = ALL_GROUPS) -> RunScore:
    """Train one model with one seed, score accident-class F1 on the test split."""
    if method == "lr":
        lr_model = logistic_regression_train(sample_set.train.data,
                                             lr=config.lr_learning_rate,
                                             epochs=config.lr_epochs, seed=seed)
        pred = logistic_regression_predict(lr_model, sample_set.test.data)
        return RunScore("", method, seed,
                        f1_accident(pred, sample_set.test.data.labels),
                        epochs_run=config.lr_epochs)
    net = _net_for(method, sample_set, config.train, config.sampling)
    result = train(net, sample_set.train.data, sample_set.val.data,
                   replace(config.train, seed=seed), active_groups=active_groups)
    pred = predict(net, result.params, result.bn_state, sample_set.test.data,
                   active_groups=active_groups)
    return RunScore("", method, seed,
                    f1_accident(pred, sample_set.test.data.labels),
                    epochs_run=len(result.log), best_epoch=result.best_epoch)


def build_aggregation_samples(kind: str, events: list[Event], area: StudyArea,
                              table: CellFeatureTable,
                              config: ExperimentConfig) -> SampleSet:
    model = train_aggregation(kind, events, config.aggregation, config.data_seed)
    return build_samples(model, events, area, table, config.sampling,
                         np.random.default_rng(config.data_seed))


def run_experiment(events: list[Event], table: CellFeatureTable, area: StudyArea,
                   config: ExperimentConfig) -> ExperimentReport:
    """The full (aggregation x method x seed) cross product."""
    config.validate()
    scores: list[RunScore] = []
    region_counts: dict[str, int] = {}
    for kind in config.aggregations:
        sample_set = build_aggregation_samples(kind, events, area, table, config)
        region_counts[kind] = sample_set.region_count
        for method in config.methods:
            for seed in config.seeds:
                score = run_method(method, sample_set, config, seed)
                score.aggregation = kind
                scores.append(score)
    return ExperimentReport(area.name, scores, config.seeds, config_hash(config),
                            region_counts)


# ------------------------------------------------------------- radius study

@dataclass
class RadiusReport:
    city: str
    center: tuple[float, float]
    radii_m: list[float]
    mean_f1: dict[str, dict[float, float]]   # aggregation -> radius -> F1
    sample_counts: dict[float, int]
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "city": self.city,
            "center": {"lat": self.center[0], "lon": self.center[1]},
            "radii_m": self.radii_m,
            "sample_counts": {str(r): c for r, c in sorted(self.sample_counts.items())},
            "mean_f1": {a: {str(r): f for r, f in sorted(by_r.items())}
                        for a, by_r in sorted(self.mean_f1.items())},
            "config_hash": self.config_hash,
        }


def radius_eval(events: list[Event], table: CellFeatureTable, area: StudyArea,
                center: GeoPoint, radii_m: list[float],
                config: ExperimentConfig, method: str = "acap") -> RadiusReport:
    """F1 over test samples within each radius of the city center.

    Models are trained once per (aggregation, seed) on the full data; only
    the evaluation subset changes with the radius.
    """
    config.validate()
    if not radii_m:
        raise ExperimentError("no radii given")
    mean_f1: dict[str, dict[float, float]] = {}
    sample_counts: dict[float, int] = {}
    for kind in config.aggregations:
        sample_set = build_aggregation_samples(kind, events, area, table, config)
        test = sample_set.test
        dist = np.array([haversine(center, GeoPoint(lat, lon))
                         for lat, lon in zip(test.lat, test.lon)])
        preds = []
        for seed in config.seeds:
            if method == "lr":
                lr_model = logistic_regression_train(
                    sample_set.train.data, lr=config.lr_learning_rate,
                    epochs=config.lr_epochs, seed=seed)
                preds.append(logistic_regression_predict(lr_model, test.data))
            else:
                net = _net_for(method, sample_set, config.train, config.sampling)
                result = train(net, sample_set.train.data, sample_set.val.data,
                               replace(config.train, seed=seed))
                preds.append(predict(net, result.params, result.bn_state, test.data))
        by_radius: dict[float, float] = {}
        for r in radii_m:
            mask = dist <= r
            count = int(mask.sum())
            if count == 0:
                raise ExperimentError(f"radius {r} m leaves no test samples")
            # Counts can differ by a handful of replaced negatives across
            # aggregations; report the first aggregation's counts.
            sample_counts.setdefault(r, count)
            by_radius[r] = float(np.mean(
                [f1_accident(p[mask], test.data.labels[mask]) for p in preds]))
        mean_f1[kind] = by_radius
    return RadiusReport(area.name, (center.lat, center.lon), list(radii_m),
                        mean_f1, sample_counts, config_hash(config))


# ---------------------------------------------------------------- ablation

FEATURE_GROUP_RUNS: tuple[tuple[str, ...], ...] = (
    ("regional",), ("temporal",), ("accident",),
)


@dataclass
class AblationReport:
    city: str
    aggregation: str
    full_f1: float
    group_f1: dict[str, float]
    config_hash: str

    def ratios(self) -> dict[str, float]:
        if self.full_f1 <= 0:
            return {g: 0.0 for g in self.group_f1}
        return {g: f / self.full_f1 for g, f in self.group_f1.items()}

    def to_dict(self) -> dict:
        return {
            "city": self.city,
            "aggregation": self.aggregation,
            "full_f1": self.full_f1,
            "group_f1": dict(sorted(self.group_f1.items())),
            "ratio_to_full": dict(sorted(self.ratios().items())),
            "config_hash": self.config_hash,
        }


def ablation_eval(events: list[Event], table: CellFeatureTable, area: StudyArea,
                  config: ExperimentConfig, aggregation: str = "gg") -> AblationReport:
    """Single-feature-group models against the full model.

    Non-selected embeddings are zeroed both in training and at test time."""
    config.validate()
    sample_set = build_aggregation_samples(aggregation, events, area, table, config)

    def mean_over_seeds(groups: tuple[str, ...]) -> float:
        return float(np.mean([
            run_method("acap", sample_set, config, seed, active_groups=groups).f1
            for seed in config.seeds]))

    full = mean_over_seeds(ALL_GROUPS)
    group_f1 = {groups[0]: mean_over_seeds(groups) for groups in FEATURE_GROUP_RUNS}
    return AblationReport(area.name, aggregation, full, group_f1,
                          config_hash(config))
