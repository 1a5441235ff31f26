import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import plotly.graph_objects as go

from .Metrics import read_metric_records

COLORS = ["cyan", "red", "yellow", "blue", "green", "brown", "magenta"]
COLORMAP = "viridis"


def _matrix(weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    # average heads for a heads×queries×keys tensor
    return weights.mean(axis=0) if weights.ndim == 3 else weights


def render_attention(weights, row_labels : list[str], col_labels : list[str], path, title : str = "Attention weights",
                     cmap : str = COLORMAP):
    """
    Heatmap of one attention matrix written as a static image

    :param weights: queries×keys matrix, or heads×queries×keys (heads are averaged)
    :param row_labels: One label per query
    :param col_labels: One label per key
    :param path: Output image file (format from the suffix)
    :param title: Figure title
    """
    matrix = _matrix(weights)
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(col_labels)), max(3, 0.4 * len(row_labels))))
    image = ax.imshow(matrix, cmap=cmap, vmin=0.0, vmax=max(1e-12, float(matrix.max())), aspect="auto")
    ax.set_xticks(range(len(col_labels)), labels=col_labels, rotation=90)
    ax.set_yticks(range(len(row_labels)), labels=row_labels)
    ax.set_title(title)
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_attention_interactive(weights, row_labels : list[str], col_labels : list[str], path,
                                 title : str = "Attention weights", cmap : str = COLORMAP):
    """
    The same heatmap as a standalone interactive HTML page
    """
    fig = go.Figure(go.Heatmap(z=_matrix(weights), x=col_labels, y=row_labels, colorscale=cmap.capitalize(),
                               zmin=0.0))
    fig.update_layout(title=title, yaxis=dict(autorange="reversed"))
    fig.write_html(str(path), include_plotlyjs="cdn")


def plot_training_curves(records : list[dict], path, metric : str = "acc"):
    """
    Development metric per epoch, one line per variant

    :param records: Metric records as written by the training commands
    :param path: Output image file
    :param metric: Record key to plot
    """
    fig, ax = plt.subplots(figsize=(7, 4))
    variants = sorted({r["variant"] for r in records if r["split"] == "dev"})
    for idx, variant in enumerate(variants):
        points = sorted((r["epoch"], r[metric]) for r in records if r["variant"] == variant and r["split"] == "dev")
        ax.plot([p[0] for p in points], [p[1] for p in points], marker="o", color=COLORS[idx % len(COLORS)],
                label=variant)
    ax.set_xlabel("epoch")
    ax.set_ylabel(f"dev {metric}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_attention_report(report : dict, out, prefix : str = "attention") -> list[str]:
    """
    Heatmaps for an ``attention.json`` report written by ``inspect-attention``

    The sentence-rectified weights (tokens over scenario blocks) are drawn when the model has an
    adapter, the first encoder block's self-attention otherwise.
    Returns the names of the written files.
    """
    observed = report["observed"]
    tokens = observed["tokens"]
    if observed.get("sentence_rectified_attention") is not None:
        cells = [f"cell{i}" for i in range(len(observed["scenario"]["cells"]))]
        weights, columns, title = observed["sentence_rectified_attention"], cells, "Text over scenario blocks"
    elif observed["encoder_attention"]:
        weights, columns, title = observed["encoder_attention"][0], tokens, "Encoder self-attention"
    else:
        return []
    out = Path(out)
    render_attention(weights, tokens, columns, out / f"{prefix}.png", title)
    render_attention_interactive(weights, tokens, columns, out / f"{prefix}.html", title)
    return [f"{prefix}.png", f"{prefix}.html"]


def render_run(out) -> list[str]:
    """
    Draw every figure the artifacts of one output directory allow
    """
    out = Path(out)
    written = []
    for source, target in (("metrics.jsonl", "training_curves.png"), ("ablation.jsonl", "ablation_curves.png")):
        if (out / source).exists():
            records = read_metric_records(out / source)
            if any(r["split"] == "dev" for r in records):
                plot_training_curves(records, out / target)
                written.append(target)
    if (out / "attention.json").exists():
        written += render_attention_report(json.loads((out / "attention.json").read_text(encoding="utf-8")), out)
    return written


def main(argv : list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="python -m scenafuse.render",
                                     description="Render figures from the artifacts of a scenafuse run")
    parser.add_argument("out", type=Path, help="Output directory of a train, ablate or inspect-attention run")
    args = parser.parse_args(argv)
    written = render_run(args.out)
    for name in written:
        print(args.out / name)
    if not written:
        print(f"nothing to render in {args.out}")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
