"""Desk-scale evaluation harness: builds corpora, runs queries, emits CSV.

Each experiment is fully reproducible from (spec, seed): corpus content,
plant placement, wildcard positions, and query order all derive from the
root seed. Ground truth is consulted only when scoring, never during
detection. All tabular output is RFC-4180 CSV with fixed, versioned columns.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import read_archive, write_archive
from .codec import DEFAULT_CHUNK_LEN, DEFAULT_CODEC, DEFAULT_QUANT_BITS
from .corpus import Corpus, Plant, PlantSpec, SyntheticCorpusSpec, digest_corpus, generate_corpus
from .preprocess import PreprocessConfig, WildcardMask, preprocess_excerpt
from .query import Query, QueryEngine, QueryStats, find_similar
from .theory import calibrate_noise, interpolate_k

SCHEMA_VERSION = 1
DEFAULT_SEED = 20260810

EXPERIMENTS = (
    "q_sweep",
    "fp_vs_excerpt",
    "transform_size_sweep",
    "wildcard_fp",
    "wildcard_fn",
    "timing",
    "similar_string",
)

SCHEMAS = {
    "q_sweep": ["schema_version", "q", "flows", "input_bytes", "archive_bytes",
                "reduction_ratio", "sigma_n_sq", "snr", "coeff_error_variance",
                "error_mean", "lag1_autocorr"],
    "q_sweep_trace": ["schema_version", "q", "position", "correlation"],
    "fp_vs_excerpt": ["schema_version", "excerpt_bytes", "k", "queries", "flows",
                      "false_positives", "fp_rate", "false_negatives", "fn_rate"],
    "transform_size_sweep": ["schema_version", "chunk_len", "excerpt_bytes", "k",
                             "queries", "flows", "false_positives", "fp_rate",
                             "false_negatives", "fn_rate"],
    "wildcard_fp": ["schema_version", "wildcard_count", "queries", "flows",
                    "false_positives", "fp_rate", "false_negatives", "fn_rate",
                    "ops_correlations", "ops_points", "ops_thresholds"],
    "wildcard_fn": ["schema_version", "wildcard_count", "queries", "flows",
                    "false_positives", "fp_rate", "false_negatives", "fn_rate",
                    "ops_correlations", "ops_points", "ops_thresholds"],
    "timing": ["schema_version", "phase", "wildcard_count", "repetitions",
               "seconds", "seconds_per_query"],
    "similar_string": ["schema_version", "corrupt_spacing", "mode", "queries",
                       "detected", "detection_rate"],
}


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    flow_count: int = 200
    min_bytes: int = 10_000
    max_bytes: int = 30_000
    repetitions: int = 3
    seed: int = DEFAULT_SEED
    chunk_len: int = DEFAULT_CHUNK_LEN
    q: int = DEFAULT_QUANT_BITS
    out_dir: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; pick from {EXPERIMENTS}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[dict]
    csv_paths: list[Path] = field(default_factory=list)


def _write_csv(out_dir: Path, name: str, rows: list[dict]) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SCHEMAS[name])
        writer.writeheader()
        for row in rows:
            writer.writerow({"schema_version": SCHEMA_VERSION, **row})
    return path


def _build_archive(corpus: Corpus, cfg: PreprocessConfig, chunk_len: int, q: int,
                   out_dir: Path, tag: str) -> Path:
    digests, period = digest_corpus(corpus, cfg, chunk_len, q, DEFAULT_CODEC)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{tag}.dspas"
    write_archive(str(path), period, digests, cfg, chunk_len, q, DEFAULT_CODEC)
    return path


def _score(results, plant: Plant, flow_count: int) -> tuple[int, bool]:
    """(false positives, detected) for one planted query's result list."""
    detected_keys = {r.key for r in results}
    fp = len(detected_keys - {plant.carrier_key})
    return fp, plant.carrier_key in detected_keys


def _plant_query(plant: Plant) -> Query:
    return Query(excerpt=plant.excerpt, mask=plant.mask)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    out_dir = Path(spec.out_dir)
    runner = {
        "q_sweep": _run_q_sweep,
        "fp_vs_excerpt": _run_fp_vs_excerpt,
        "transform_size_sweep": _run_transform_size_sweep,
        "wildcard_fp": _run_wildcard,
        "wildcard_fn": _run_wildcard,
        "timing": _run_timing,
        "similar_string": _run_similar_string,
    }[spec.experiment]
    return runner(spec, out_dir)


def _run_q_sweep(spec: ExperimentSpec, out_dir: Path) -> ExperimentResult:
    cfg = PreprocessConfig()
    corpus = generate_corpus(SyntheticCorpusSpec(
        flow_count=spec.flow_count, min_bytes=spec.min_bytes, max_bytes=spec.max_bytes,
        seed=spec.seed, plants=(PlantSpec(length=400),),
    ))
    rows, trace_rows = [], []
    for q in (3, 4, 5):
        path = _build_archive(corpus, cfg, spec.chunk_len, q, out_dir, f"q_sweep_q{q}")
        archive_bytes = path.stat().st_size
        cal = calibrate_noise((d for _, d in corpus.flows), cfg, spec.chunk_len, q,
                              min_words=1)
        a_sq = float(cfg.amplitude_bound) ** 2
        rows.append({
            "q": q,
            "flows": spec.flow_count,
            "input_bytes": corpus.total_bytes,
            "archive_bytes": archive_bytes,
            "reduction_ratio": corpus.total_bytes / archive_bytes,
            "sigma_n_sq": cal.noise.sigma_n_sq,
            "snr": (a_sq / 3.0) / cal.noise.sigma_n_sq,
            "coeff_error_variance": cal.coeff_error_variance,
            "error_mean": cal.error_mean,
            "lag1_autocorr": cal.lag1_autocorr,
        })
        # correlation trace around the planted excerpt (the aligned signal)
        engine = QueryEngine([read_archive(str(path))])
        plant = corpus.plants[0]
        fi = next(i for i, r in enumerate(engine.archives[0].flows)
                  if r.key == plant.carrier_key)
        signals = preprocess_excerpt(plant.excerpt, plant.mask, cfg)
        drop = (-plant.byte_offset) % cfg.word_size
        aligned = next(s for s in signals if s.alignment_offset == drop)
        row = engine._correlate_all(0, fi, [aligned])[0]
        if row is not None:
            for pos, val in enumerate(row):
                trace_rows.append({"q": q, "position": pos, "correlation": float(val)})
    paths = [_write_csv(out_dir, "q_sweep", rows), _write_csv(out_dir, "q_sweep_trace", trace_rows)]
    return ExperimentResult(spec=spec, rows=rows, csv_paths=paths)


def _run_fp_vs_excerpt(spec: ExperimentSpec, out_dir: Path) -> ExperimentResult:
    cfg = PreprocessConfig()
    sizes = (300, 400, 500, 600)
    plants = tuple(PlantSpec(length=s) for s in sizes for _ in range(spec.repetitions))
    corpus = generate_corpus(SyntheticCorpusSpec(
        flow_count=spec.flow_count, min_bytes=spec.min_bytes, max_bytes=spec.max_bytes,
        seed=spec.seed, plants=plants,
    ))
    path = _build_archive(corpus, cfg, spec.chunk_len, spec.q, out_dir, "fp_vs_excerpt")
    engine = QueryEngine([read_archive(str(path))])
    rows = []
    for size in sizes:
        fp_total, fn_total, n_q = 0, 0, 0
        k_used = None
        for plant in corpus.plants:
            if plant.spec.length != size:
                continue
            results = engine.run(_plant_query(plant))
            fp, detected = _score(results, plant, spec.flow_count)
            fp_total += fp
            fn_total += 0 if detected else 1
            n_q += 1
            if results and k_used is None:
                k_used = results[0].threshold.k
        rows.append({
            "excerpt_bytes": size,
            "k": k_used if k_used is not None else interpolate_k(size),
            "queries": n_q,
            "flows": spec.flow_count,
            "false_positives": fp_total,
            "fp_rate": fp_total / (n_q * spec.flow_count),
            "false_negatives": fn_total,
            "fn_rate": fn_total / n_q,
        })
    return ExperimentResult(spec=spec, rows=rows,
                            csv_paths=[_write_csv(out_dir, "fp_vs_excerpt", rows)])


def _run_transform_size_sweep(spec: ExperimentSpec, out_dir: Path) -> ExperimentResult:
    cfg = PreprocessConfig()
    size = 400
    plants = tuple(PlantSpec(length=size) for _ in range(spec.repetitions))
    corpus = generate_corpus(SyntheticCorpusSpec(
        flow_count=spec.flow_count, min_bytes=spec.min_bytes, max_bytes=spec.max_bytes,
        seed=spec.seed, plants=plants,
    ))
    rows = []
    for chunk_len in (256, 512, 1024, 2048, 4096):
        path = _build_archive(corpus, cfg, chunk_len, spec.q, out_dir,
                              f"transform_size_L{chunk_len}")
        engine = QueryEngine([read_archive(str(path))])
        fp_total, fn_total = 0, 0
        k_used = None
        for plant in corpus.plants:
            results = engine.run(_plant_query(plant))
            fp, detected = _score(results, plant, spec.flow_count)
            fp_total += fp
            fn_total += 0 if detected else 1
            if results and k_used is None:
                k_used = results[0].threshold.k
        rows.append({
            "chunk_len": chunk_len,
            "excerpt_bytes": size,
            "k": k_used if k_used is not None else interpolate_k(size),
            "queries": len(corpus.plants),
            "flows": spec.flow_count,
            "false_positives": fp_total,
            "fp_rate": fp_total / (len(corpus.plants) * spec.flow_count),
            "false_negatives": fn_total,
            "fn_rate": fn_total / len(corpus.plants),
        })
    return ExperimentResult(spec=spec, rows=rows,
                            csv_paths=[_write_csv(out_dir, "transform_size_sweep", rows)])


WILDCARD_COUNTS = (0, 5, 10, 15, 20, 25, 30)


def _run_wildcard(spec: ExperimentSpec, out_dir: Path) -> ExperimentResult:
    """FP and FN rates versus wildcard count on 300-byte excerpts.

    The same planted excerpts are reused across wildcard counts; only the mask
    changes, so the single-pass operation counters must be identical per row.
    """
    cfg = PreprocessConfig()
    size = 300
    plants = tuple(PlantSpec(length=size) for _ in range(spec.repetitions))
    corpus = generate_corpus(SyntheticCorpusSpec(
        flow_count=spec.flow_count, min_bytes=spec.min_bytes, max_bytes=spec.max_bytes,
        seed=spec.seed, plants=plants,
    ))
    path = _build_archive(corpus, cfg, spec.chunk_len, spec.q, out_dir, spec.experiment)
    archive = read_archive(str(path))
    mask_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xA5]))
    rows = []
    for w in WILDCARD_COUNTS:
        fp_total, fn_total = 0, 0
        stats = QueryStats()
        engine = QueryEngine([archive], stats=stats)
        for plant in corpus.plants:
            if w:
                positions = mask_rng.choice(size, size=w, replace=False)
                mask = WildcardMask.of(int(p) for p in positions)
                buf = bytearray(plant.excerpt)
                for p in mask.positions:
                    buf[p] = ord("?")
                query = Query(excerpt=bytes(buf), mask=mask)
            else:
                query = Query(excerpt=plant.excerpt)
            results = engine.run(query)
            fp, detected = _score(results, plant, spec.flow_count)
            fp_total += fp
            fn_total += 0 if detected else 1
        rows.append({
            "wildcard_count": w,
            "queries": len(corpus.plants),
            "flows": spec.flow_count,
            "false_positives": fp_total,
            "fp_rate": fp_total / (len(corpus.plants) * spec.flow_count),
            "false_negatives": fn_total,
            "fn_rate": fn_total / len(corpus.plants),
            "ops_correlations": stats.correlations_run,
            "ops_points": stats.correlation_points,
            "ops_thresholds": stats.thresholds_computed,
        })
    return ExperimentResult(spec=spec, rows=rows,
                            csv_paths=[_write_csv(out_dir, spec.experiment, rows)])


def _run_timing(spec: ExperimentSpec, out_dir: Path) -> ExperimentResult:
    """Wall-clock for digesting and for wildcard queries of varying width."""
    cfg = PreprocessConfig()
    size = 300
    plants = tuple(PlantSpec(length=size) for _ in range(spec.repetitions))
    corpus = generate_corpus(SyntheticCorpusSpec(
        flow_count=spec.flow_count, min_bytes=spec.min_bytes, max_bytes=spec.max_bytes,
        seed=spec.seed, plants=plants,
    ))
    t0 = time.perf_counter()
    path = _build_archive(corpus, cfg, spec.chunk_len, spec.q, out_dir, "timing")
    digest_seconds = time.perf_counter() - t0
    archive = read_archive(str(path))
    rows = [{
        "phase": "digest", "wildcard_count": 0, "repetitions": 1,
        "seconds": digest_seconds, "seconds_per_query": "",
    }]
    mask_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x71]))
    for w in (2, 4, 6, 8):
        engine = QueryEngine([archive])
        # warm the reconstruction cache so rows time the query path alone
        engine.run(_plant_query(corpus.plants[0]))
        t0 = time.perf_counter()
        for plant in corpus.plants:
            positions = mask_rng.choice(size, size=w, replace=False)
            mask = WildcardMask.of(int(p) for p in positions)
            engine.run(Query(excerpt=plant.excerpt, mask=mask))
        dt = time.perf_counter() - t0
        rows.append({
            "phase": "query", "wildcard_count": w, "repetitions": len(corpus.plants),
            "seconds": dt, "seconds_per_query": dt / len(corpus.plants),
        })
    return ExperimentResult(spec=spec, rows=rows,
                            csv_paths=[_write_csv(out_dir, "timing", rows)])


SIMILAR_SPACINGS = (400, 200, 133, 100)


def _run_similar_string(spec: ExperimentSpec, out_dir: Path) -> ExperimentResult:
    """Detection of excerpts whose carriers were altered every N bytes."""
    cfg = PreprocessConfig()
    size = 600
    plants = []
    for spacing in SIMILAR_SPACINGS:
        for mode in (False, True):
            plants.extend(PlantSpec(length=size, corrupt_spacing=spacing, insert_mode=mode)
                          for _ in range(spec.repetitions))
    corpus = generate_corpus(SyntheticCorpusSpec(
        flow_count=spec.flow_count, min_bytes=spec.min_bytes, max_bytes=spec.max_bytes,
        seed=spec.seed, plants=tuple(plants),
    ))
    path = _build_archive(corpus, cfg, spec.chunk_len, spec.q, out_dir, "similar_string")
    archives = [read_archive(str(path))]
    rows = []
    for spacing in SIMILAR_SPACINGS:
        for insert in (False, True):
            group = [p for p in corpus.plants
                     if p.spec.corrupt_spacing == spacing and p.spec.insert_mode == insert]
            detected = 0
            for plant in group:
                results = find_similar(_plant_query(plant), archives)
                _, hit = _score(results, plant, spec.flow_count)
                detected += 1 if hit else 0
            rows.append({
                "corrupt_spacing": spacing,
                "mode": "insert" if insert else "substitute",
                "queries": len(group),
                "detected": detected,
                "detection_rate": detected / len(group),
            })
    return ExperimentResult(spec=spec, rows=rows,
                            csv_paths=[_write_csv(out_dir, "similar_string", rows)])
