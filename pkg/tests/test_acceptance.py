"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with `pytest tests/test_acceptance.py -v -s`).

Criterion 8 needs the real accident extract and regional CSV; it is skipped
unless GEOGROW_ATLAS_CSV and GEOGROW_REGIONAL_CSV point at the files.
"""
import os
import time

import numpy as np
import pytest

from geogrow.baselines import dbscan, elbow_k, kmeans, silhouette
from geogrow.cluster import GridGrowParams, grid_grow
from geogrow.experiments import (
    ExperimentConfig, ablation_eval, build_aggregation_samples, run_method,
)
from geogrow.features import accident_feature_dim
from geogrow.geocode import GeoPoint, cell_center, decode, encode, haversine, neighbors8
from geogrow.ingest import StudyArea, parse_accidents, parse_regional_features
from geogrow.model import (
    ArrayDataset, NetworkConfig, PredictorNet, TrainConfig, fresh_bn_state,
    logistic_regression_predict, logistic_regression_train, predict, train,
)
from geogrow.nn import cross_entropy
from geogrow.pipeline import SamplingConfig, build_samples, f1_accident
from geogrow.synth import make_separable_set, straddling_city, synth_city
from oracles import (
    brute_dbscan, brute_f1_positive, brute_silhouette, fd_gradient_errors,
    grid_components, ref_encode, ref_neighbors8,
)

# Desk-scale training configuration: production defaults except for a
# tighter epoch/patience budget that keeps the 30-run study under its
# runtime bound.
DESK_TRAIN = TrainConfig(epochs=30, patience=8, batch_size=64)


def report(criterion: int, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion:02d} {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def desk_city():
    spec = straddling_city()
    events, table, truth = synth_city(spec, np.random.default_rng(7))
    return spec, events, table


# ---------------------------------------------------------------------------

def test_criterion_01_geohash_conformance():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    for _ in range(1000):
        p = GeoPoint(rng.uniform(-85, 85), rng.uniform(-179, 179))
        for precision in (5, 6, 7):
            cell = encode(p, precision)
            assert cell.code == ref_encode(p.lat, p.lon, precision)
            assert decode(cell).contains(p)
    hannover = GeoPoint(52.3745, 9.7386)
    for dlat, dlon in [(0, 0), (0.003, -0.002), (-0.004, 0.005)]:
        assert encode(GeoPoint(hannover.lat + dlat, hannover.lon + dlon),
                      7).code.startswith("u1qcv")
    for _ in range(100):
        p = GeoPoint(rng.uniform(-75, 75), rng.uniform(-170, 170))
        code = encode(p, int(rng.integers(5, 8))).code
        assert {c.code for c in neighbors8(code)} == ref_neighbors8(code)
    elapsed = time.perf_counter() - start
    report(1, elapsed < 5.0,
           f"roundtrips, u1qcv prefix, neighbor oracle in {elapsed:.2f}s (< 5s)")


def test_criterion_02_grid_growing_vs_component_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    checked = 0
    for instance in range(50):
        n_hotspots = int(rng.integers(1, 7))
        n_events = int(rng.integers(50, 2001 // max(1, n_hotspots)))
        points = []
        for _ in range(n_hotspots):
            c_lat = rng.uniform(52.2, 52.5)
            c_lon = rng.uniform(9.5, 10.0)
            sigma = rng.uniform(0.001, 0.006)
            points.extend(GeoPoint(c_lat + rng.normal(0, sigma),
                                   c_lon + rng.normal(0, sigma * 1.5))
                          for _ in range(n_events))
        expected = sorted(sorted(c) for c in
                          grid_components([(p.lat, p.lon) for p in points], 7))
        for seed in range(10):
            model = grid_grow(points, rng=np.random.default_rng(seed))
            got = sorted(sorted(c) for c in model.clusters)
            assert got == expected, f"instance {instance} seed {seed}"
        checked += 1
    elapsed = time.perf_counter() - start
    report(2, checked == 50 and elapsed < 60.0,
           f"50 instances x 10 seeds match the component oracle in "
           f"{elapsed:.1f}s (< 60s)")


def test_criterion_03_assignment_semantics():
    rng = np.random.default_rng(303)
    m_per_deg = 6_371_000.0 * np.pi / 180.0
    checks = 0
    for trial in range(10):
        centers = [(rng.uniform(52.25, 52.5), rng.uniform(9.55, 10.0))
                   for _ in range(int(rng.integers(2, 5)))]
        events = [GeoPoint(lat + rng.normal(0, 0.002), lon + rng.normal(0, 0.002))
                  for lat, lon in centers for _ in range(80)]
        model = grid_grow(events, GridGrowParams(distance_threshold_m=400.0))
        # Training events always land in grown clusters.
        assert all(model.assign(e).kind == "cluster" for e in events)
        # A constructed point 399 m north of an isolated member-cell center
        # joins that cluster...
        far_model = grid_grow([events[0], GeoPoint(52.9, 10.4)])
        lone = cell_center(encode(events[0], 7))
        probe = GeoPoint(lone.lat + 399.0 / m_per_deg, lone.lon)
        assert abs(haversine(probe, lone) - 399.0) < 1e-6
        assert far_model.assign(probe).kind == "cluster"
        # ...and points beyond the threshold from every cluster fall back to
        # their own precision-6 cell, deterministically.
        outside = GeoPoint(52.75, rng.uniform(9.5, 10.0))
        rid = model.assign(outside)
        assert rid.kind == "fallback"
        assert rid.key == encode(outside, 6).code
        assert model.assign(outside) == rid
        checks += 3
    report(3, checks == 30, "training events, 399 m probes and fallbacks over "
                            "10 random models behave per the 400 m rule")


def test_criterion_04_clustering_baselines_vs_oracles():
    rng = np.random.default_rng(404)

    def blob(center, sigma, n):
        return [GeoPoint(center[0] + rng.normal(0, sigma),
                         center[1] + rng.normal(0, sigma)) for _ in range(n)]

    # DBSCAN equals the O(n^2) density-reachability oracle (<= 500 points).
    for n_a, n_b, noise in [(180, 220, 100), (60, 50, 40)]:
        pts = (blob((52.37, 9.73), 0.002, n_a) + blob((52.5, 9.9), 0.004, n_b)
               + [GeoPoint(rng.uniform(52.2, 52.6), rng.uniform(9.5, 10.1))
                  for _ in range(noise)])
        labels = dbscan(pts, 300.0, 4)
        codes = [encode(p, 12).code for p in pts]
        order = np.argsort(np.array(codes), kind="stable")
        expected = brute_dbscan([(pts[i].lat, pts[i].lon) for i in order], 300.0, 4,
                                lambda a, b: haversine(GeoPoint(*a), GeoPoint(*b)))
        assert [labels[i] for i in order] == expected

    # K-means WCSS is non-increasing along Lloyd iterations.
    pts = blob((52.4, 9.8), 0.01, 300)
    res = kmeans(pts, 5, np.random.default_rng(405))
    assert all(b <= a + 1e-12 for a, b in zip(res.wcss_trace, res.wcss_trace[1:]))

    # Silhouette equals the brute-force oracle within 1e-9 (<= 200 points).
    pts = blob((52.37, 9.73), 0.004, 90) + blob((52.45, 9.85), 0.006, 110)
    labels = [0] * 90 + [1] * 110
    ours = silhouette(pts, labels)
    ref = brute_silhouette([(p.lat, p.lon) for p in pts], labels,
                           lambda a, b: haversine(GeoPoint(*a), GeoPoint(*b)))
    assert abs(ours - ref) < 1e-9

    # The elbow criterion finds k=4 on a four-blob dataset.
    blobs4 = (blob((52.30, 9.60), 0.004, 60) + blob((52.48, 9.66), 0.004, 60)
              + blob((52.33, 9.98), 0.004, 60) + blob((52.52, 10.05), 0.004, 60))
    k, flat = elbow_k(blobs4, 8, np.random.default_rng(406))
    assert k == 4 and not flat
    report(4, True, "dbscan==oracle, kmeans monotone, silhouette within 1e-9, "
                    "elbow k=4")


def test_criterion_05_gradient_fidelity_full_network():
    start = time.perf_counter()
    config = NetworkConfig(accident_dim=accident_feature_dim(),
                           regional_dim=17, dropout=0.0)
    net = PredictorNet(config)
    worst_overall = 0.0
    for draw in range(3):
        rng = np.random.default_rng(500 + draw)
        params = net.init_params(rng)
        data = ArrayDataset(
            (rng.random((4, 8, 36)) > 0.5).astype(float),
            rng.random((4, config.accident_dim)),
            rng.random((4, config.regional_dim)),
            rng.integers(0, 2, 4),
        )
        bn_state = fresh_bn_state()

        def loss_fn():
            probs, _ = net.forward(params, data, bn_state, train=True)
            return cross_entropy(probs, data.labels)

        probs, cache = net.forward(params, data, bn_state, train=True)
        grads = net.backward(params, cache, data.labels)
        worst, which = fd_gradient_errors(loss_fn, params, grads,
                                          np.random.default_rng(600 + draw),
                                          samples_per_tensor=10)
        assert worst < 1e-4, which
        worst_overall = max(worst_overall, worst)
    elapsed = time.perf_counter() - start
    report(5, elapsed < 120.0,
           f"full-network BPTT gradients within {worst_overall:.2e} of central "
           f"differences (tolerance 1e-4) in {elapsed:.1f}s (< 2 min)")


def test_criterion_06_training_sanity_on_separable_matrix():
    sset = make_separable_set(2000, np.random.default_rng(606))
    net_config = NetworkConfig(
        accident_dim=sset.train.data.accident.shape[1],
        regional_dim=sset.train.data.regional.shape[1])
    net = PredictorNet(net_config)
    config = TrainConfig(epochs=60, patience=15, batch_size=64, seed=0)
    result = train(net, sset.train.data, sset.val.data, config)
    pred = predict(net, result.params, result.bn_state, sset.test.data)
    acap_f1 = f1_accident(pred, sset.test.data.labels)

    lr_model = logistic_regression_train(sset.train.data, lr=1.0, epochs=1500, seed=0)
    lr_f1 = f1_accident(logistic_regression_predict(lr_model, sset.test.data),
                        sset.test.data.labels)

    # Determinism contract: same seed, same data, identical training log.
    short = TrainConfig(epochs=4, patience=4, batch_size=64, seed=3)
    r1 = train(PredictorNet(net_config), sset.train.data, sset.val.data, short)
    r2 = train(PredictorNet(net_config), sset.train.data, sset.val.data, short)
    deterministic = ([(l.train_loss, l.val_loss) for l in r1.log]
                     == [(l.train_loss, l.val_loss) for l in r2.log])

    ok = acap_f1 >= 0.95 and lr_f1 >= 0.9 and deterministic
    report(6, ok, f"separable 2000-sample matrix: predictor F1 {acap_f1:.3f} "
                  f"(>= 0.95) in {len(result.log)} epochs, LR F1 {lr_f1:.3f} "
                  f"(>= 0.9), deterministic logs {deterministic}")


def test_criterion_07_aggregation_ordering_desk_scale(desk_city):
    start = time.perf_counter()
    spec, events, table = desk_city
    config = ExperimentConfig(aggregations=("gg", "g5", "som"), methods=("acap",),
                              seeds=tuple(range(10)), train=DESK_TRAIN)
    means = {}
    for kind in config.aggregations:
        sset = build_aggregation_samples(kind, events, spec.area, table, config)
        means[kind] = float(np.mean([
            run_method("acap", sset, config, seed).f1 for seed in config.seeds]))
    elapsed = time.perf_counter() - start
    gap = means["gg"] - means["g5"]
    ok = gap >= 0.02 and means["gg"] >= means["som"] and elapsed < 900.0
    report(7, ok, f"mean-of-10 F1: gg {means['gg']:.3f} > 5x5 {means['g5']:.3f} "
                  f"(gap {gap:.3f} >= 0.02), gg >= som {means['som']:.3f}; "
                  f"{elapsed / 60:.1f} min (< 15 min)")


def test_criterion_08_optional_real_data_check():
    atlas = os.environ.get("GEOGROW_ATLAS_CSV")
    regional = os.environ.get("GEOGROW_REGIONAL_CSV")
    if not atlas or not regional:
        print("\nACCEPTANCE 08 SKIP - optional real-data check "
              "(set GEOGROW_ATLAS_CSV and GEOGROW_REGIONAL_CSV to run)")
        pytest.skip("real Accident Atlas extract not supplied")
    hannover = StudyArea("hannover", 52.29, 52.46, 9.60, 9.92)
    events, ingest_report = parse_accidents(atlas, hannover)
    count_ok = abs(len(events) - 7433) <= 0.01 * 7433
    table, _ = parse_regional_features(regional)
    config = ExperimentConfig(aggregations=("gg",), methods=("acap",),
                              seeds=tuple(range(10)),
                              train=TrainConfig(epochs=60, patience=15))
    sset = build_aggregation_samples("gg", events, hannover, table, config)
    mean_f1 = float(np.mean([run_method("acap", sset, config, seed).f1
                             for seed in config.seeds]))
    ok = count_ok and abs(mean_f1 - 0.58) <= 0.05
    report(8, ok, f"Hannover extract: {len(events)} events (7433 +/- 1%), "
                  f"grid-growing mean F1 {mean_f1:.3f} (0.58 +/- 0.05)")


def test_criterion_09_metric_and_sampling_invariants(desk_city):
    rng = np.random.default_rng(909)
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        pred = rng.integers(0, 2, n)
        true = rng.integers(0, 2, n)
        assert f1_accident(pred, true) == pytest.approx(
            brute_f1_positive(list(pred), list(true)), abs=1e-12)

    spec, events, table = desk_city
    model = grid_grow([e.location for e in events])
    sset = build_samples(model, events, spec.area, table, SamplingConfig(),
                         np.random.default_rng(910))
    ratios = {}
    for name in ("train", "val", "test"):
        split = sset.split(name)
        pos = int(split.data.labels.sum())
        ratios[name] = (len(split) - pos, pos)
        assert len(split) - pos == 3 * pos
    assert sset.train.month_idx.max() < sset.val.month_idx.min()
    assert sset.val.month_idx.max() < sset.test.month_idx.min()
    report(9, True, f"f1 oracle x1000, exact 3:1 ratios {ratios}, "
                    f"no temporal leakage")


def test_criterion_10_ablation_harness(desk_city):
    spec, events, table = desk_city
    config = ExperimentConfig(aggregations=("gg",), methods=("acap",),
                              seeds=(0, 1, 2), train=DESK_TRAIN)
    result = ablation_eval(events, table, spec.area, config)
    ratios = result.ratios()
    assert set(ratios) == {"regional", "temporal", "accident"}
    sane = all(0.0 <= r <= 1.05 for r in ratios.values())
    ok = sane and ratios["regional"] > ratios["accident"]
    report(10, ok, f"single-group ratios to full ({result.full_f1:.3f}): "
                   f"regional {ratios['regional']:.3f} > accident "
                   f"{ratios['accident']:.3f}; temporal {ratios['temporal']:.3f}")
