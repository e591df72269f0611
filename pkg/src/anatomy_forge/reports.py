"""Report rendering for the stats and validate commands: delimited tables
plus matplotlib figures written next to them."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

import numpy as np  # noqa: E402

from .anchors import AnchorModel  # noqa: E402


def collect_centroids(manifests: list[dict]) -> dict[int, np.ndarray]:
    """Per-class stack of placed-instance centroids across scene manifests."""
    buckets: dict[int, list[list[float]]] = {}
    for manifest in manifests:
        for rec in manifest["placements"]:
            buckets.setdefault(int(rec["class_id"]), []).append(rec["centroid"])
    return {c: np.asarray(rows, dtype=float) for c, rows in sorted(buckets.items())}


def class_stats_rows(centroids: dict[int, np.ndarray],
                     anchors: AnchorModel | None) -> list[dict]:
    rows = []
    for cid, pts in centroids.items():
        mean = pts.mean(axis=0)
        std = pts.std(axis=0, ddof=1) if pts.shape[0] > 1 else np.full(3, float("nan"))
        row = {
            "class_id": cid,
            "n": pts.shape[0],
            "mean_x": mean[0], "mean_y": mean[1], "mean_z": mean[2],
            "std_x": std[0], "std_y": std[1], "std_z": std[2],
        }
        if anchors is not None and cid in anchors.distributions:
            mu = anchors.distributions[cid].mu
            row.update({
                "anchor_x": mu[0], "anchor_y": mu[1], "anchor_z": mu[2],
                "abs_dx": abs(mean[0] - mu[0]),
                "abs_dy": abs(mean[1] - mu[1]),
                "abs_dz": abs(mean[2] - mu[2]),
            })
        rows.append(row)
    return rows


def write_stats_csv(rows: list[dict], path) -> None:
    fields = ["class_id", "n", "mean_x", "mean_y", "mean_z",
              "std_x", "std_y", "std_z",
              "anchor_x", "anchor_y", "anchor_z", "abs_dx", "abs_dy", "abs_dz"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def plot_centroid_scatter(centroids: dict[int, np.ndarray], anchors: AnchorModel | None,
                          path, axes: tuple[int, int] = (0, 2)) -> None:
    """Placed centroids (dots) against anchor means (crosses), one color per
    class, projected onto the requested coordinate pair."""
    names = "xyz"
    i, j = axes
    fig, ax = plt.subplots(figsize=(6, 6))
    cmap = plt.get_cmap("tab20")
    for k, (cid, pts) in enumerate(centroids.items()):
        color = cmap(k % 20)
        ax.scatter(pts[:, i], pts[:, j], s=6, alpha=0.35, color=color, linewidths=0)
        if anchors is not None and cid in anchors.distributions:
            mu = anchors.distributions[cid].mu
            ax.scatter([mu[i]], [mu[j]], marker="x", s=60, color=color)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel(f"{names[i]} (normalized)")
    ax.set_ylabel(f"{names[j]} (normalized)")
    ax.set_title("placed centroids (dots) vs anchor means (crosses)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_residuals(rows: list[dict], path) -> None:
    """Per-class |empirical mean - anchor mean| bars, one group per axis."""
    rows = [r for r in rows if "abs_dx" in r]
    fig, ax = plt.subplots(figsize=(max(6, 0.3 * len(rows) + 2), 4))
    if rows:
        classes = [r["class_id"] for r in rows]
        xs = np.arange(len(rows))
        width = 0.27
        for off, key in zip((-width, 0.0, width), ("abs_dx", "abs_dy", "abs_dz")):
            ax.bar(xs + off, [r[key] for r in rows], width=width, label=key[-1])
        ax.set_xticks(xs)
        ax.set_xticklabels([str(c) for c in classes], fontsize=7)
        ax.legend(title="axis")
    ax.set_xlabel("class id")
    ax.set_ylabel("|placed mean - anchor mean|")
    ax.set_title("anchor residuals per class")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_violations_csv(violations: list[dict], path) -> None:
    fields = ["scene", "step", "class_id", "partner", "iou", "ceiling"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="")
        writer.writeheader()
        for v in violations:
            writer.writerow({k: _fmt(v.get(k, "")) for k in fields})


def plot_satisfaction(stats: dict[str, tuple[int, int]], path) -> None:
    """Satisfaction rate bars for the soft relation kinds."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    kinds = list(stats)
    rates = [sat / n if n else 0.0 for (sat, n) in stats.values()]
    ax.bar(kinds, rates, color=["#4878d0", "#ee854a"][:len(kinds)])
    for x, (kind, rate) in enumerate(zip(kinds, rates)):
        sat, n = stats[kind]
        ax.text(x, rate + 0.02, f"{sat}/{n}", ha="center", fontsize=9)
    ax.set_ylim(0, 1.1)
    ax.set_ylabel("satisfied fraction")
    ax.set_title("soft-relation satisfaction")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
