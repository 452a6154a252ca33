"""Corpus generation guarantees and experiment harness plumbing."""

import csv

import pytest

from dspas.corpus import PlantSpec, SyntheticCorpusSpec, generate_corpus
from dspas.experiments import (
    SCHEMAS,
    SIMILAR_SPACINGS,
    WILDCARD_COUNTS,
    ExperimentSpec,
    run_experiment,
)
from dspas import figures


def test_plants_unique_corpus_wide():
    spec = SyntheticCorpusSpec(flow_count=30, min_bytes=3000, max_bytes=9000, seed=60,
                               plants=tuple(PlantSpec(length=300) for _ in range(6)))
    corpus = generate_corpus(spec)
    for plant in corpus.plants:
        count = sum(data.count(plant.excerpt) for _, data in corpus.flows)
        assert count == 1
        carrier = dict(corpus.flows)[plant.carrier_key]
        assert carrier[plant.byte_offset : plant.byte_offset + 300] == plant.excerpt


def test_corrupted_plant_absent_from_corpus():
    spec = SyntheticCorpusSpec(flow_count=10, min_bytes=3000, max_bytes=9000, seed=61,
                               plants=(PlantSpec(length=600, corrupt_spacing=200),))
    corpus = generate_corpus(spec)
    plant = corpus.plants[0]
    assert sum(data.count(plant.excerpt) for _, data in corpus.flows) == 0
    carrier = dict(corpus.flows)[plant.carrier_key]
    altered = carrier[plant.byte_offset : plant.byte_offset + 600]
    diffs = sum(a != b for a, b in zip(altered, plant.excerpt))
    assert diffs == 3  # one substitution per 200 bytes


def test_insert_mode_lengthens_carrier():
    spec = SyntheticCorpusSpec(flow_count=10, min_bytes=3000, max_bytes=9000, seed=62,
                               plants=(PlantSpec(length=400, corrupt_spacing=100, insert_mode=True),))
    corpus = generate_corpus(spec)
    plant = corpus.plants[0]
    carrier = dict(corpus.flows)[plant.carrier_key]
    assert sum(data.count(plant.excerpt) for _, data in corpus.flows) == 0
    assert len(carrier) >= 3000  # inserted bytes extend the flow


def test_wildcard_plant_mask_and_placeholders():
    spec = SyntheticCorpusSpec(flow_count=10, min_bytes=3000, max_bytes=9000, seed=63,
                               plants=(PlantSpec(length=300, wildcard_count=12),))
    corpus = generate_corpus(spec)
    plant = corpus.plants[0]
    assert len(plant.mask) == 12
    assert all(plant.excerpt[p] == ord("?") for p in plant.mask.positions)


def test_corpus_deterministic():
    spec = SyntheticCorpusSpec(flow_count=8, min_bytes=1000, max_bytes=2000, seed=64,
                               plants=(PlantSpec(length=300),))
    a, b = generate_corpus(spec), generate_corpus(spec)
    assert a.flows == b.flows
    assert a.plants[0].excerpt == b.plants[0].excerpt
    assert a.plants[0].byte_offset == b.plants[0].byte_offset


def _tiny(experiment, tmp_path, **kw):
    defaults = dict(flow_count=12, min_bytes=4000, max_bytes=8000, repetitions=1,
                    seed=65, out_dir=str(tmp_path))
    defaults.update(kw)
    return run_experiment(ExperimentSpec(experiment=experiment, **defaults))


def _check_csv(path, schema_name, min_rows=1):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) >= min_rows
    assert list(rows[0].keys()) == SCHEMAS[schema_name]
    assert all(r["schema_version"] == "1" for r in rows)
    return rows


def test_q_sweep_experiment(tmp_path):
    result = _tiny("q_sweep", tmp_path)
    assert [r["q"] for r in result.rows] == [3, 4, 5]
    sigmas = [r["sigma_n_sq"] for r in result.rows]
    assert sigmas[0] > sigmas[1] > sigmas[2]
    ratios = [r["reduction_ratio"] for r in result.rows]
    assert ratios[0] > ratios[1] > ratios[2]
    csv_rows = _check_csv(result.csv_paths[0], "q_sweep", min_rows=3)
    assert csv_rows[0]["q"] == "3"
    _check_csv(result.csv_paths[1], "q_sweep_trace", min_rows=100)


def test_fp_vs_excerpt_experiment(tmp_path):
    result = _tiny("fp_vs_excerpt", tmp_path, flow_count=15)
    assert [r["excerpt_bytes"] for r in result.rows] == [300, 400, 500, 600]
    assert [round(r["k"], 2) for r in result.rows] == [4.2, 4.6, 5.0, 5.2]
    _check_csv(result.csv_paths[0], "fp_vs_excerpt", min_rows=4)


def test_transform_size_sweep_experiment(tmp_path):
    result = _tiny("transform_size_sweep", tmp_path)
    assert [r["chunk_len"] for r in result.rows] == [256, 512, 1024, 2048, 4096]
    _check_csv(result.csv_paths[0], "transform_size_sweep", min_rows=5)


def test_wildcard_experiment_single_pass(tmp_path):
    result = _tiny("wildcard_fn", tmp_path)
    assert [r["wildcard_count"] for r in result.rows] == list(WILDCARD_COUNTS)
    ops = {(r["ops_correlations"], r["ops_points"], r["ops_thresholds"]) for r in result.rows}
    assert len(ops) == 1  # masks cannot change the work done
    _check_csv(result.csv_paths[0], "wildcard_fn")


def test_timing_experiment(tmp_path):
    result = _tiny("timing", tmp_path)
    phases = [r["phase"] for r in result.rows]
    assert phases[0] == "digest" and phases.count("query") == 4
    for r in result.rows[1:]:
        assert r["seconds"] > 0
    _check_csv(result.csv_paths[0], "timing", min_rows=5)


def test_similar_string_experiment(tmp_path):
    result = _tiny("similar_string", tmp_path, flow_count=10)
    spacings = sorted({r["corrupt_spacing"] for r in result.rows}, reverse=True)
    assert spacings == sorted(SIMILAR_SPACINGS, reverse=True)
    sub = {r["corrupt_spacing"]: r["detection_rate"] for r in result.rows
           if r["mode"] == "substitute"}
    assert sub[200] == 1.0  # the design-point scenario must detect
    _check_csv(result.csv_paths[0], "similar_string", min_rows=8)


def test_experiment_reproducible(tmp_path):
    r1 = _tiny("fp_vs_excerpt", tmp_path / "a")
    r2 = _tiny("fp_vs_excerpt", tmp_path / "b")
    assert r1.rows == r2.rows


def test_figures_render(tmp_path):
    for name in ("fp_vs_excerpt", "wildcard_fn", "similar_string", "timing", "q_sweep",
                 "transform_size_sweep"):
        result = _tiny(name, tmp_path / name, flow_count=10)
        for path in result.csv_paths:
            png = figures.render_csv(path)
            assert png.exists() and png.stat().st_size > 1000


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        ExperimentSpec(experiment="nope")
    with pytest.raises(ValueError):
        ExperimentSpec(experiment="timing", repetitions=0)
