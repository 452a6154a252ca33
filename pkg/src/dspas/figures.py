"""Render experiment CSVs into figures saved next to the delimited output.

CSV stays the canonical output; figures are a convenience rendering of the
same rows. Every function takes rows (list of dicts, as produced by the
experiment runner or re-read from CSV) and writes one PNG.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_DPI = 150


def read_rows(csv_path: str | Path) -> list[dict]:
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, out_dir: Path, name: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.png"
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_q_sweep(rows: list[dict], out_dir: Path) -> Path:
    qs = [int(r["q"]) for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    axes[0].bar(qs, [float(r["reduction_ratio"]) for r in rows], color="#4878cf")
    axes[0].set_xlabel("quantization bits q")
    axes[0].set_ylabel("reduction ratio (x:1)")
    axes[1].semilogy(qs, [float(r["sigma_n_sq"]) for r in rows], "o-")
    axes[1].set_xlabel("quantization bits q")
    axes[1].set_ylabel("noise variance")
    axes[2].semilogy(qs, [float(r["snr"]) for r in rows], "s-", color="#d65f5f")
    axes[2].set_xlabel("quantization bits q")
    axes[2].set_ylabel("SNR")
    fig.suptitle("Quantization sweep")
    return _save(fig, out_dir, "q_sweep")


def plot_q_sweep_trace(rows: list[dict], out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    qs = sorted({int(r["q"]) for r in rows})
    for q in qs:
        pts = [(int(r["position"]), float(r["correlation"])) for r in rows if int(r["q"]) == q]
        pts.sort()
        ax.plot([p for p, _ in pts], [v for _, v in pts], lw=0.7, label=f"q={q}")
    ax.set_xlabel("correlation position (words)")
    ax.set_ylabel("correlation value")
    ax.legend()
    ax.set_title("Correlation signal, planted excerpt")
    return _save(fig, out_dir, "q_sweep_trace")


def plot_fp_vs_excerpt(rows: list[dict], out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = [int(r["excerpt_bytes"]) for r in rows]
    ax.plot(xs, [float(r["fp_rate"]) for r in rows], "o-", label="false positive rate")
    ax.plot(xs, [float(r["fn_rate"]) for r in rows], "s--", label="false negative rate")
    ax.set_xlabel("excerpt size (bytes)")
    ax.set_ylabel("rate")
    ax.legend()
    ax.set_title("Error rates vs excerpt size")
    return _save(fig, out_dir, "fp_vs_excerpt")


def plot_transform_size_sweep(rows: list[dict], out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = [int(r["chunk_len"]) for r in rows]
    ax.semilogx(xs, [float(r["fp_rate"]) for r in rows], "o-", base=2)
    ax.set_xlabel("transform size L (words)")
    ax.set_ylabel("false positive rate")
    ax.set_title("FP rate vs transform size (400-byte excerpts)")
    return _save(fig, out_dir, "transform_size_sweep")


def _plot_wildcard(rows: list[dict], out_dir: Path, name: str, column: str, label: str) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = [int(r["wildcard_count"]) for r in rows]
    ax.plot(xs, [float(r[column]) for r in rows], "o-")
    ax.set_xlabel("wildcard bytes")
    ax.set_ylabel(label)
    ax.set_title(f"{label} vs wildcard count (300-byte excerpts)")
    return _save(fig, out_dir, name)


def plot_wildcard_fp(rows: list[dict], out_dir: Path) -> Path:
    return _plot_wildcard(rows, out_dir, "wildcard_fp", "fp_rate", "false positive rate")


def plot_wildcard_fn(rows: list[dict], out_dir: Path) -> Path:
    return _plot_wildcard(rows, out_dir, "wildcard_fn", "fn_rate", "false negative rate")


def plot_timing(rows: list[dict], out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    q_rows = [r for r in rows if r["phase"] == "query"]
    xs = [int(r["wildcard_count"]) for r in q_rows]
    ax.bar(xs, [float(r["seconds_per_query"]) for r in q_rows], width=1.2, color="#6acc65")
    ax.set_xlabel("wildcard bytes")
    ax.set_ylabel("seconds per query")
    ax.set_title("Query time vs wildcard count")
    return _save(fig, out_dir, "timing")


def plot_similar_string(rows: list[dict], out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for mode, style in (("substitute", "o-"), ("insert", "s--")):
        pts = [(int(r["corrupt_spacing"]), float(r["detection_rate"]))
               for r in rows if r["mode"] == mode]
        pts.sort(reverse=True)
        ax.plot([p for p, _ in pts], [v for _, v in pts], style, label=mode)
    ax.set_xlabel("bytes between alterations")
    ax.set_ylabel("detection rate")
    ax.legend()
    ax.set_title("Similar-string detection vs alteration density")
    return _save(fig, out_dir, "similar_string")


_RENDERERS = {
    "q_sweep": plot_q_sweep,
    "q_sweep_trace": plot_q_sweep_trace,
    "fp_vs_excerpt": plot_fp_vs_excerpt,
    "transform_size_sweep": plot_transform_size_sweep,
    "wildcard_fp": plot_wildcard_fp,
    "wildcard_fn": plot_wildcard_fn,
    "timing": plot_timing,
    "similar_string": plot_similar_string,
}


def render_csv(csv_path: str | Path, out_dir: str | Path | None = None) -> Path:
    """Render one experiment CSV into its PNG (named after the CSV stem)."""
    csv_path = Path(csv_path)
    name = csv_path.stem
    if name not in _RENDERERS:
        raise ValueError(f"no renderer for {name!r}")
    rows = read_rows(csv_path)
    return _RENDERERS[name](rows, Path(out_dir) if out_dir is not None else csv_path.parent)
