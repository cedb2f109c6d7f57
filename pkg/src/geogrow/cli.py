"""Command-line pipeline: synth -> cluster -> featurize -> train -> evaluate.

One JSON config document describes a run; flags override config fields. All
randomness flows from the root seed, which is recorded in every output.
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cluster import GridGrowParams
from .experiments import (
    AGGREGATIONS, METHODS, AggregationConfig, ExperimentConfig, _net_for,
    ablation_eval, build_aggregation_samples, config_hash, radius_eval,
    run_experiment, train_aggregation,
)
from .features import CellFeatureTable
from .geocode import GeoPoint
from .ingest import (
    ColumnMap, IngestError, StudyArea, parse_accidents,
    parse_regional_features, serialize_accidents, serialize_regional_features,
)
from .model import (
    TrainConfig, logistic_regression_train, save_checkpoint, train,
)
from .pipeline import SampleSet, SamplingConfig, SplitSpec
from .report import (
    figure_ablation, figure_matrix, figure_radius, write_ablation_csv,
    write_json, write_matrix_csv, write_radius_csv, write_scores_csv,
    write_train_log_csv,
)
from .synth import CitySpec, Hotspot, straddling_city, synth_city

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    """Bad or missing configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    study_area: StudyArea | None = None
    accidents_csv: str | None = None
    regional_csv: str | None = None
    accidents_delimiter: str = ";"
    regional_delimiter: str = ","
    column_map: ColumnMap = field(default_factory=ColumnMap)
    aggregation_kind: str = "gg"
    method: str = "acap"
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment_aggregations: tuple[str, ...] = ("gg", "som", "g1", "g5")
    experiment_methods: tuple[str, ...] = ("acap", "dnn", "lr")
    experiment_seeds: tuple[int, ...] = tuple(range(10))
    lr_learning_rate: float = 0.5
    lr_epochs: int = 300
    radius_center: tuple[float, float] | None = None
    radii_m: tuple[float, ...] = (500.0, 1000.0, 2000.0, 4000.0, 8000.0)
    synth: CitySpec | None = None
    seed: int = 0
    out_dir: str = "out"


def _require(doc: dict, key: str, kind=dict):
    value = doc.get(key)
    if not isinstance(value, kind):
        raise ConfigError(f"config section {key!r} missing or not a {kind.__name__}")
    return value


def parse_config(doc: dict) -> RunConfig:
    cfg = RunConfig()
    try:
        if "study_area" in doc:
            sa = _require(doc, "study_area")
            cfg.study_area = StudyArea(sa.get("name", "area"), sa["lat_min"],
                                       sa["lat_max"], sa["lon_min"], sa["lon_max"])
        data = doc.get("data", {})
        cfg.accidents_csv = data.get("accidents_csv")
        cfg.regional_csv = data.get("regional_csv")
        cfg.accidents_delimiter = data.get("delimiter", cfg.accidents_delimiter)
        cfg.regional_delimiter = data.get("regional_delimiter", cfg.regional_delimiter)
        if "column_map" in data:
            cfg.column_map = ColumnMap(**data["column_map"])
        agg = doc.get("aggregation", {})
        cfg.aggregation_kind = agg.pop("kind", cfg.aggregation_kind)
        cfg.aggregation = AggregationConfig(**agg)
        if "sampling" in doc:
            s = dict(doc["sampling"])
            split = SplitSpec(s.pop("train_months", 29), s.pop("test_months", 7),
                              s.pop("val_fraction", 0.1))
            cfg.sampling = SamplingConfig(split=split, **s)
        if "train" in doc:
            cfg.train = TrainConfig(**doc["train"])
        exp = doc.get("experiment", {})
        cfg.experiment_aggregations = tuple(exp.get("aggregations",
                                                    cfg.experiment_aggregations))
        cfg.experiment_methods = tuple(exp.get("methods", cfg.experiment_methods))
        cfg.experiment_seeds = tuple(exp.get("seeds", cfg.experiment_seeds))
        cfg.lr_learning_rate = exp.get("lr_learning_rate", cfg.lr_learning_rate)
        cfg.lr_epochs = exp.get("lr_epochs", cfg.lr_epochs)
        cfg.method = doc.get("method", cfg.method)
        if "radius" in doc:
            r = doc["radius"]
            if "center_lat" in r:
                cfg.radius_center = (r["center_lat"], r["center_lon"])
            cfg.radii_m = tuple(r.get("radii_m", cfg.radii_m))
        if "synth" in doc:
            s = doc["synth"]
            area = s.get("study_area")
            hotspots = tuple(Hotspot(**h) for h in s["hotspots"])
            cfg.synth = CitySpec(
                s.get("name", "synthtown"),
                StudyArea(s.get("name", "synthtown"), area["lat_min"], area["lat_max"],
                          area["lon_min"], area["lon_max"]),
                hotspots,
                month_range=tuple(s.get("month_range", (0, 36))),
            )
        cfg.seed = doc.get("seed", cfg.seed)
        cfg.out_dir = doc.get("out_dir", cfg.out_dir)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg


def load_config(path: str | None, args: argparse.Namespace) -> RunConfig:
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    cfg = parse_config(doc)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "aggregation", None) is not None:
        cfg.aggregation_kind = args.aggregation
        cfg.experiment_aggregations = (args.aggregation,)
    if getattr(args, "method", None) is not None:
        cfg.method = args.method
        cfg.experiment_methods = (args.method,)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.aggregation_kind not in AGGREGATIONS:
        raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
    if cfg.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    try:
        GridGrowParams(cfg.aggregation.delta_detail, cfg.aggregation.delta_base,
                       cfg.aggregation.distance_threshold_m).validate()
        cfg.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for path in (cfg.accidents_csv, cfg.regional_csv):
        if path is not None and not Path(path).exists():
            raise ConfigError(f"data file {path} does not exist")


def experiment_config(cfg: RunConfig) -> ExperimentConfig:
    return ExperimentConfig(
        aggregations=cfg.experiment_aggregations,
        methods=cfg.experiment_methods,
        seeds=cfg.experiment_seeds,
        data_seed=cfg.seed,
        aggregation=cfg.aggregation,
        sampling=cfg.sampling,
        train=cfg.train,
        lr_learning_rate=cfg.lr_learning_rate,
        lr_epochs=cfg.lr_epochs,
    )


def _load_inputs(cfg: RunConfig):
    if cfg.accidents_csv is None:
        raise ConfigError("config needs data.accidents_csv")
    if cfg.study_area is None:
        raise ConfigError("config needs a study_area section")
    events, report = parse_accidents(cfg.accidents_csv, cfg.study_area,
                                     cfg.column_map, cfg.accidents_delimiter)
    if not events:
        raise ConfigError(f"{cfg.accidents_csv}: no usable events "
                          f"({report.rejected} rows rejected)")
    if report.rejected:
        print(f"ingest: {report.accepted} events, {report.rejected} rows rejected "
              f"({report.out_of_area} outside the study area)", file=sys.stderr)
    if cfg.regional_csv is not None:
        table, treport = parse_regional_features(cfg.regional_csv,
                                                 cfg.regional_delimiter)
        if treport.rejected:
            print(f"ingest: {treport.rejected} regional rows rejected",
                  file=sys.stderr)
    else:
        table = CellFeatureTable()
    return events, table, cfg.study_area


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    spec = cfg.synth or straddling_city()
    events, table, truth = synth_city(spec, np.random.default_rng(cfg.seed))
    serialize_accidents(events, out / "accidents.csv")
    serialize_regional_features(table, out / "regional.csv")
    truth["seed"] = cfg.seed
    write_json(truth, out / "truth.json")
    workflow = {
        "study_area": {"name": spec.area.name, "lat_min": spec.area.lat_min,
                       "lat_max": spec.area.lat_max, "lon_min": spec.area.lon_min,
                       "lon_max": spec.area.lon_max},
        "data": {"accidents_csv": str(out / "accidents.csv"),
                 "regional_csv": str(out / "regional.csv")},
        "train": {"epochs": 25, "patience": 8, "batch_size": 128},
        "experiment": {"aggregations": ["gg", "g5"], "methods": ["acap", "lr"],
                       "seeds": [0, 1, 2]},
        "radius": {"center_lat": (spec.area.lat_min + spec.area.lat_max) / 2,
                   "center_lon": (spec.area.lon_min + spec.area.lon_max) / 2,
                   "radii_m": [1000.0, 2000.0, 4000.0, 8000.0]},
        "seed": cfg.seed,
        "out_dir": str(out),
    }
    write_json(workflow, out / "synth_config.json")
    print(f"synth: {len(events)} events, {len(table)} feature rows -> {out}")
    print(f"synth: follow-up config written to {out / 'synth_config.json'}")
    return EXIT_OK


def cmd_cluster(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    events, _, _ = _load_inputs(cfg)
    model = train_aggregation(cfg.aggregation_kind, events, cfg.aggregation, cfg.seed)
    path = out / "cluster_model.json"
    if hasattr(model, "to_json"):
        path.write_text(model.to_json() + "\n", encoding="utf-8")
    else:
        summary = {"kind": cfg.aggregation_kind, "seed": cfg.seed}
        if hasattr(model, "n_clusters"):
            summary["regions"] = model.n_clusters()
        write_json(summary, path)
    if hasattr(model, "clusters"):
        describe = f"{len(model.clusters)} grown regions"
    elif hasattr(model, "n_clusters"):
        describe = f"{model.n_clusters()} regions"
    else:
        describe = f"fixed precision-{model.precision} grid"
    print(f"cluster: {cfg.aggregation_kind} model, {describe} -> {path}")
    return EXIT_OK


def _save_samples(sample_set: SampleSet, out: Path, cfg: RunConfig) -> None:
    arrays = {}
    meta = {"regional_feature_names": sample_set.regional_feature_names,
            "region_count": sample_set.region_count,
            "aggregation": cfg.aggregation_kind,
            "seed": cfg.seed,
            "ranges": {"train": sample_set.ranges.train, "val": sample_set.ranges.val,
                       "test": sample_set.ranges.test},
            "regions": {}}
    for name in ("train", "val", "test"):
        split = sample_set.split(name)
        arrays[f"{name}_temporal"] = split.data.temporal
        arrays[f"{name}_accident"] = split.data.accident
        arrays[f"{name}_regional"] = split.data.regional
        arrays[f"{name}_labels"] = split.data.labels
        arrays[f"{name}_month"] = split.month_idx
        arrays[f"{name}_lat"] = split.lat
        arrays[f"{name}_lon"] = split.lon
        meta["regions"][name] = split.regions
    np.savez_compressed(out / "samples.npz", **arrays)
    write_json(meta, out / "samples_meta.json")


def load_samples(out: Path) -> SampleSet:
    from .model import ArrayDataset
    from .pipeline import SampleSplit, SplitRanges
    npz = np.load(out / "samples.npz")
    meta = json.loads((out / "samples_meta.json").read_text(encoding="utf-8"))
    splits = {}
    for name in ("train", "val", "test"):
        splits[name] = SampleSplit(
            ArrayDataset(npz[f"{name}_temporal"], npz[f"{name}_accident"],
                         npz[f"{name}_regional"], npz[f"{name}_labels"]),
            npz[f"{name}_month"], npz[f"{name}_lat"], npz[f"{name}_lon"],
            meta["regions"][name])
    ranges = SplitRanges(tuple(meta["ranges"]["train"]), tuple(meta["ranges"]["val"]),
                         tuple(meta["ranges"]["test"]))
    return SampleSet(splits["train"], splits["val"], splits["test"], ranges,
                     meta["regional_feature_names"], meta["region_count"])


def cmd_featurize(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    events, table, area = _load_inputs(cfg)
    sample_set = build_aggregation_samples(cfg.aggregation_kind, events, area, table,
                                           experiment_config(cfg))
    _save_samples(sample_set, out, cfg)
    print(f"featurize: {len(sample_set.train)}/{len(sample_set.val)}/"
          f"{len(sample_set.test)} train/val/test samples over "
          f"{sample_set.region_count} regions -> {out / 'samples.npz'}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    samples_path = out / "samples.npz"
    if not samples_path.exists():
        raise ConfigError(f"{samples_path} not found; run `geogrow featurize` "
                          f"with the same --out first")
    sample_set = load_samples(out)
    train_cfg = replace(cfg.train, seed=cfg.seed)
    meta = {"method": cfg.method, "seed": cfg.seed,
            "aggregation": cfg.aggregation_kind,
            "config_hash": config_hash(experiment_config(cfg))}
    if cfg.method == "lr":
        lr_model = logistic_regression_train(sample_set.train.data,
                                             lr=cfg.lr_learning_rate,
                                             epochs=cfg.lr_epochs, seed=cfg.seed)
        doc = {"format": "geogrow-lr", "version": 1, "meta": meta,
               "w": lr_model.w.tolist(), "b": lr_model.b,
               "final_loss": lr_model.loss_trace[-1]}
        (out / "checkpoint.json").write_text(json.dumps(doc, sort_keys=True),
                                             encoding="utf-8")
        print(f"train: lr final loss {lr_model.loss_trace[-1]:.4f} "
              f"-> {out / 'checkpoint.json'}")
        return EXIT_OK
    net = _net_for(cfg.method, sample_set, train_cfg, cfg.sampling)
    result = train(net, sample_set.train.data, sample_set.val.data, train_cfg)
    meta["best_epoch"] = result.best_epoch
    meta["epochs_run"] = len(result.log)
    meta["stopped_early"] = result.stopped_early
    (out / "checkpoint.json").write_text(
        save_checkpoint(result.params, result.bn_state, meta), encoding="utf-8")
    write_train_log_csv(result.log, out / "train_log.csv")
    stop = (f"early stop at epoch {len(result.log)}" if result.stopped_early
            else f"ran all {len(result.log)} epochs")
    print(f"train: {cfg.method} best val loss {result.best_val_loss:.4f} at epoch "
          f"{result.best_epoch} ({stop}) -> {out / 'checkpoint.json'}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    events, table, area = _load_inputs(cfg)
    report = run_experiment(events, table, area, experiment_config(cfg))
    write_json(report.to_dict(), out / "report.json")
    write_scores_csv(report, out / "scores.csv")
    write_matrix_csv(report, out / "f1_matrix.csv")
    figure_matrix(report, out / "f1_matrix.png")
    print(f"evaluate: {len(report.scores)} runs -> {out}")
    for (agg, method), value in sorted(report.mean_f1().items()):
        print(f"  {agg:8s} {method:5s} mean F1 {value:.4f}")
    return EXIT_OK


def cmd_radius(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    events, table, area = _load_inputs(cfg)
    if cfg.radius_center is not None:
        center = GeoPoint(*cfg.radius_center)
    else:
        center = GeoPoint((area.lat_min + area.lat_max) / 2,
                          (area.lon_min + area.lon_max) / 2)
    report = radius_eval(events, table, area, center, list(cfg.radii_m),
                         experiment_config(cfg), method=cfg.method)
    write_json(report.to_dict(), out / "radius.json")
    write_radius_csv(report, out / "radius_curve.csv")
    figure_radius(report, out / "radius_f1.png")
    print(f"radius: {len(cfg.radii_m)} radii x {len(report.mean_f1)} aggregations "
          f"-> {out}")
    return EXIT_OK


def cmd_ablation(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    events, table, area = _load_inputs(cfg)
    report = ablation_eval(events, table, area, experiment_config(cfg),
                           aggregation=cfg.aggregation_kind)
    write_json(report.to_dict(), out / "ablation.json")
    write_ablation_csv(report, out / "ablation.csv")
    figure_ablation(report, out / "ablation_f1.png")
    print(f"ablation: full F1 {report.full_f1:.4f}; "
          + "; ".join(f"{g} {v:.4f}" for g, v in sorted(report.group_f1.items())))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "cluster": cmd_cluster,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "radius": cmd_radius,
    "ablation": cmd_ablation,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geogrow",
        description="Adaptive geohash grid-growing regions and event prediction.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synth", "generate a synthetic city dataset"),
        ("cluster", "fit and persist a region model"),
        ("featurize", "build train/val/test sample matrices"),
        ("train", "train one predictor on featurized samples (single-shot; "
                  "no checkpoint resume)"),
        ("evaluate", "run the aggregation x method x seed experiment"),
        ("radius", "F1 as a function of distance from the city center"),
        ("ablation", "single-feature-group models vs the full model"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None,
                       help="JSON config file (flags override its fields)")
        p.add_argument("--seed", type=int, default=None, help="root random seed")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--aggregation", choices=AGGREGATIONS, default=None,
                       help="geospatial aggregation")
        p.add_argument("--method", choices=METHODS, default=None,
                       help="prediction method")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure -> exit 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
