"""Command-line interface: digest, query, theory, eval.

System parameters can come from a key=value params file (--params) mirroring
the long option names; explicit options override file values. Query exit
codes: 0 = matches found, 1 = no match, 2 = error.
"""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import click

from . import figures as figmod
from .archive import FILE_EXTENSION, read_archive, write_archive
from .codec import DEFAULT_CHUNK_LEN, DEFAULT_CODEC, DEFAULT_QUANT_BITS, digest_signal
from .corpus import SyntheticCorpusSpec, digest_corpus, generate_corpus
from .errors import DspasError
from .experiments import DEFAULT_SEED, EXPERIMENTS, ExperimentSpec, run_experiment
from .flows import FlowAssembler
from .pcap import classify_packets
from .preprocess import (
    DEFAULT_HASH_SEED,
    PreprocessConfig,
    WildcardMask,
    flow_pad_seed,
    preprocess_payload,
)
from .query import Query, attribute_excerpt, find_similar
from .theory import (
    NoiseModel,
    REFERENCE_NOISE_TABLE,
    SystemParams,
    fn_probability,
    fp_probability,
    select_threshold_coefficient,
)


def parse_kv_file(path: str) -> dict[str, str]:
    """Parse a simple key=value config file (# comments, blank lines ignored)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _resolve_params(params_file: str | None, **overrides) -> dict:
    defaults = {
        "word_size": 8,
        "chunk_len": DEFAULT_CHUNK_LEN,
        "q": DEFAULT_QUANT_BITS,
        "run_threshold": 64,
        "hash_seed": DEFAULT_HASH_SEED,
        "period_seconds": 3600.0,
        "idle_timeout": 300.0,
        "seed": DEFAULT_SEED,
    }
    if params_file:
        file_vals = parse_kv_file(params_file)
        for key, val in file_vals.items():
            if key not in defaults:
                raise ValueError(f"unknown parameter {key!r} in {params_file}")
            defaults[key] = type(defaults[key])(val) if not isinstance(defaults[key], int) else int(val, 0)
    for key, val in overrides.items():
        if val is not None:
            defaults[key] = val
    return defaults


def _cfg_from(params: dict) -> PreprocessConfig:
    return PreprocessConfig(
        word_size=int(params["word_size"]),
        run_threshold=int(params["run_threshold"]),
        hash_seed=int(params["hash_seed"]),
    )


@click.group()
def main():
    """Transform-coded payload attribution toolkit."""


_param_options = [
    click.option("--params", "params_file", type=click.Path(exists=True), default=None,
                 help="key=value parameter file"),
    click.option("--word-size", type=int, default=None, help="word size W in bytes"),
    click.option("--chunk-len", type=int, default=None, help="transform size L in words"),
    click.option("-q", "--quant-bits", type=int, default=None, help="quantization bits"),
    click.option("--run-threshold", type=int, default=None, help="repetitive run cap R"),
    click.option("--hash-seed", type=str, default=None, help="64-bit hash seed (int or hex)"),
]


def _with_params(fn):
    for opt in reversed(_param_options):
        fn = opt(fn)
    return fn


@main.command()
@click.argument("source", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), required=True, help="output directory")
@click.option("--period-seconds", type=float, default=None)
@click.option("--idle-timeout", type=float, default=None)
@click.option("--seed", type=int, default=None, help="corpus seed (synthetic source only)")
@_with_params
def digest(source, out_dir, period_seconds, idle_timeout, seed, params_file,
           word_size, chunk_len, quant_bits, run_threshold, hash_seed):
    """Digest a packet capture (*.pcap) or a synthetic corpus spec into archives.

    A non-pcap SOURCE is read as a key=value corpus spec with keys
    flows, min_bytes, max_bytes (and optional seed).
    """
    params = _resolve_params(
        params_file, word_size=word_size, chunk_len=chunk_len, q=quant_bits,
        run_threshold=run_threshold,
        hash_seed=int(hash_seed, 0) if hash_seed is not None else None,
        period_seconds=period_seconds, idle_timeout=idle_timeout, seed=seed,
    )
    cfg = _cfg_from(params)
    chunk_len_v = int(params["chunk_len"])
    q_v = int(params["q"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if source.endswith((".pcap", ".cap")):
        reader = classify_packets(source)
        assembler = FlowAssembler(params["period_seconds"], params["idle_timeout"])
        total_in = 0
        for frag in reader.packets():
            assembler.feed(frag)
        by_period = assembler.finish()
        periods = {p.period_id: p for p in assembler.periods()}
        for pid in sorted(by_period):
            merged: dict = {}
            for payload in sorted(by_period[pid], key=lambda f: f.first_seen):
                cur = merged.setdefault(payload.key, payload)
                if cur is not payload:
                    cur.data += payload.data
                    cur.last_seen = max(cur.last_seen, payload.last_seen)
            digests = []
            input_bytes = 0
            for key, payload in merged.items():
                input_bytes += len(payload.data)
                signal = preprocess_payload(payload.data, cfg)
                pad_seed = flow_pad_seed(key.packed(), pid, cfg.hash_seed)
                digests.append(digest_signal(
                    signal, chunk_len_v, q_v, pad_seed, word_size=cfg.word_size,
                    codec_id=DEFAULT_CODEC, key=key, first_seen=int(payload.first_seen),
                ))
            path = out / f"period_{pid}{FILE_EXTENSION}"
            write_archive(str(path), periods[pid], digests, cfg, chunk_len_v, q_v, DEFAULT_CODEC)
            size = path.stat().st_size
            total_in += input_bytes
            ratio = input_bytes / size if size else 0.0
            click.echo(f"period={pid} flows={len(digests)} input_bytes={input_bytes} "
                       f"archive_bytes={size} ratio={ratio:.2f}")
        s = reader.stats
        click.echo(f"packets={s.packets_total} emitted={s.packets_emitted} "
                   f"dropped={s.dropped_total()} input_bytes={total_in}")
    else:
        cspec = parse_kv_file(source)
        corpus = generate_corpus(SyntheticCorpusSpec(
            flow_count=int(cspec["flows"]),
            min_bytes=int(cspec["min_bytes"]),
            max_bytes=int(cspec["max_bytes"]),
            seed=int(cspec.get("seed", params["seed"])),
        ))
        digests, period = digest_corpus(corpus, cfg, chunk_len_v, q_v, DEFAULT_CODEC)
        path = out / f"period_{period.period_id}{FILE_EXTENSION}"
        write_archive(str(path), period, digests, cfg, chunk_len_v, q_v, DEFAULT_CODEC)
        size = path.stat().st_size
        ratio = corpus.total_bytes / size if size else 0.0
        click.echo(f"period={period.period_id} flows={len(digests)} "
                   f"input_bytes={corpus.total_bytes} archive_bytes={size} ratio={ratio:.2f}")


def _load_mask(mask_file: str | None, wildcard_char: str | None, excerpt: bytes) -> WildcardMask:
    positions: set[int] = set()
    if mask_file:
        for lineno, raw in enumerate(Path(mask_file).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                positions.add(int(line, 0))
            except ValueError as exc:
                raise DspasError(f"malformed mask file {mask_file}:{lineno}: {raw!r}") from exc
    if wildcard_char:
        if len(wildcard_char) != 1:
            raise DspasError("--wildcard-char must be a single character")
        code = ord(wildcard_char)
        positions.update(i for i, b in enumerate(excerpt) if b == code)
    mask = WildcardMask.of(positions)
    try:
        mask.validate(len(excerpt))
    except ValueError as exc:
        raise DspasError(str(exc)) from exc
    return mask


@main.command()
@click.argument("archives", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--excerpt", "excerpt_file", type=click.Path(exists=True), required=True,
              help="file holding the raw excerpt bytes")
@click.option("--mask", "mask_file", type=click.Path(exists=True), default=None,
              help="wildcard byte offsets, one per line")
@click.option("--wildcard-char", default=None,
              help="treat this character in the excerpt as a wildcard")
@click.option("--k", "k_override", type=float, default=None, help="explicit threshold coefficient")
@click.option("--noise-var", type=float, default=None,
              help="noise variance for threshold solving outside the table range")
@click.option("--similar", "mismatch_budget", type=float, default=None,
              help="run a similar-string query with this corrupted-word budget")
@click.option("--period", "period_range", nargs=2, type=int, default=None,
              help="restrict to period ids LO HI (inclusive)")
@click.option("--csv", "csv_out", type=click.Path(), default=None, help="write matches as CSV")
@click.option("--report", "report_out", type=click.Path(), default=None,
              help="write the human-readable report to a file as well")
def query(archives, excerpt_file, mask_file, wildcard_char, k_override, noise_var,
          mismatch_budget, period_range, csv_out, report_out):
    """Attribute an excerpt to carrier flows recorded in ARCHIVES."""
    try:
        excerpt = Path(excerpt_file).read_bytes()
        mask = _load_mask(mask_file, wildcard_char, excerpt)
        loaded = [read_archive(p) for p in archives]
        q = Query(excerpt=excerpt, mask=mask,
                  period_range=tuple(period_range) if period_range else None,
                  threshold_override=k_override)
        noise = NoiseModel(noise_var, "calibrated") if noise_var is not None else None
        if mismatch_budget is not None:
            results = find_similar(q, loaded, mismatch_budget=mismatch_budget, noise=noise)
        else:
            results = attribute_excerpt(q, loaded, noise=noise)
    except (DspasError, OSError, ValueError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(2)

    lines = [f"{len(results)} matching flow(s) for {len(excerpt)}-byte excerpt "
             f"({len(mask)} wildcard bytes)"]
    for r in results:
        lines.append(
            f"  {r.key}  period={r.period_id}  byte_offset={r.estimated_byte_offset}"
            f"  peak/threshold={r.ratio:.2f} (K={r.threshold.k:.2f})"
        )
    report = "\n".join(lines)
    click.echo(report)
    if report_out:
        Path(report_out).write_text(report + "\n")
    if csv_out:
        with open(csv_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["src_addr", "src_port", "dst_addr", "dst_port", "protocol",
                             "period_id", "byte_offset", "peak_threshold_ratio"])
            for r in results:
                writer.writerow([r.key.src_addr, r.key.src_port, r.key.dst_addr,
                                 r.key.dst_port, r.key.protocol.name, r.period_id,
                                 r.estimated_byte_offset, f"{r.ratio:.6f}"])
    sys.exit(0 if results else 1)


@main.command()
@click.option("--l-bytes", default="300,400,500,600",
              help="comma-separated excerpt byte lengths")
@click.option("--k", "k_grid", default=None,
              help="comma-separated K values to tabulate (default: selected per length)")
@click.option("--chunk-len", type=int, default=DEFAULT_CHUNK_LEN)
@click.option("--word-size", type=int, default=8)
@click.option("-q", "--quant-bits", type=int, default=DEFAULT_QUANT_BITS)
@click.option("--noise-var", type=float, default=None,
              help="noise variance (default: published table value for q)")
@click.option("--fp-target", type=float, default=None)
@click.option("--fn-target", type=float, default=None)
@click.option("--out", "out_file", type=click.Path(), default=None, help="CSV path (default stdout)")
def theory(l_bytes, k_grid, chunk_len, word_size, quant_bits, noise_var,
           fp_target, fn_target, out_file):
    """Print false-positive/false-negative tables for parameter grids as CSV."""
    lengths = [int(x) for x in l_bytes.split(",") if x.strip()]
    sigma = noise_var if noise_var is not None else REFERENCE_NOISE_TABLE.get(quant_bits, 0.0)
    noise = NoiseModel(sigma, "table" if noise_var is None else "calibrated")
    targets = (fp_target, fn_target) if fp_target is not None and fn_target is not None else None
    rows = []
    for lb in lengths:
        l_words = max(1, lb // word_size)
        params = SystemParams(word_size, chunk_len, quant_bits, l_words)
        if k_grid:
            ks = [float(x) for x in k_grid.split(",") if x.strip()]
            selected = ""
        else:
            ks = [select_threshold_coefficient(lb, params, noise, targets)]
            selected = "yes"
        for k in ks:
            rows.append({
                "l_bytes": lb, "l_words": l_words, "k": k,
                "fp": fp_probability(k, chunk_len, l_words),
                "fn": fn_probability(k, params, noise),
                "selected": selected,
            })
    fieldnames = ["l_bytes", "l_words", "k", "fp", "fn", "selected"]
    target = open(out_file, "w", newline="") if out_file else sys.stdout
    try:
        writer = csv.DictWriter(target, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out_file:
            target.close()


@main.command(name="eval")
@click.option("--experiment", type=click.Choice(EXPERIMENTS), required=True)
@click.option("--flows", type=int, default=200)
@click.option("--min-bytes", type=int, default=10_000)
@click.option("--max-bytes", type=int, default=30_000)
@click.option("--repetitions", type=int, default=3)
@click.option("--seed", type=int, default=DEFAULT_SEED)
@click.option("--chunk-len", type=int, default=DEFAULT_CHUNK_LEN)
@click.option("-q", "--quant-bits", type=int, default=DEFAULT_QUANT_BITS)
@click.option("--out", "out_dir", type=click.Path(), default="results")
@click.option("--figures", is_flag=True, help="render PNG figures next to the CSVs")
def eval_cmd(experiment, flows, min_bytes, max_bytes, repetitions, seed, chunk_len,
             quant_bits, out_dir, figures):
    """Run one desk-scale experiment, writing CSV (and optional figures)."""
    spec = ExperimentSpec(
        experiment=experiment, flow_count=flows, min_bytes=min_bytes, max_bytes=max_bytes,
        repetitions=repetitions, seed=seed, chunk_len=chunk_len, q=quant_bits,
        out_dir=out_dir,
    )
    result = run_experiment(spec)
    for path in result.csv_paths:
        click.echo(f"wrote {path}")
        if figures:
            click.echo(f"wrote {figmod.render_csv(path)}")


if __name__ == "__main__":
    main()
