"""Figure rendering for the CLI report paths.

Every plot is written to a file next to its CSV; nothing is shown
interactively. All functions take already-computed data so they stay free of
pipeline logic.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_DPI = 150


def save_history_figure(history, path) -> None:
    """Training loss and accuracy per epoch on twin axes."""
    epochs = range(1, len(history.mean_loss) + 1)
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.plot(epochs, history.mean_loss, color="tab:blue", marker=".", label="mean loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    ax.grid(alpha=0.3)
    twin = ax.twinx()
    twin.plot(epochs, history.train_acc, color="tab:orange", marker=".", label="train accuracy")
    twin.set_ylabel("train accuracy", color="tab:orange")
    twin.tick_params(axis="y", labelcolor="tab:orange")
    twin.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_det_figure(points, eer_result, path) -> None:
    """FAR/FRR trade-off with the interpolated equal-error point marked."""
    far = [p[1] for p in points]
    frr = [p[2] for p in points]
    fig, ax = plt.subplots(figsize=(4.6, 4.4))
    ax.plot(far, frr, color="tab:blue", lw=1.5, label="operating points")
    ax.plot([0, 1], [0, 1], color="gray", ls="--", lw=0.8, label="FAR = FRR")
    ax.plot([eer_result.eer], [eer_result.eer], "o", color="tab:red",
            label=f"EER = {100.0 * eer_result.eer:.3f}%")
    ax.set_xlabel("false acceptance rate")
    ax.set_ylabel("false rejection rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_probe_figure(rows, path) -> None:
    """Loss against the target/non-target gap, one line per (variant, m, s)."""
    grouped: dict[tuple, list[tuple[float, float]]] = {}
    for variant, m, s, delta, loss in rows:
        grouped.setdefault((variant, m, s), []).append((delta, loss))
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for (variant, m, s), pts in sorted(grouped.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], lw=1.3,
                label=f"{variant} (m={m:g}, s={s:g})")
    ax.set_xlabel("target minus non-target cosine")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_posterior_figure(report, easy_threshold, hard_threshold, path) -> None:
    """Histogram of target posteriors with the easy/hard cut lines."""
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.hist(report.posterior, bins=40, range=(0.0, 1.0), color="tab:blue", alpha=0.8)
    ax.axvline(easy_threshold, color="tab:green", ls="--", lw=1.2,
               label=f"easy >= {easy_threshold:g}")
    ax.axvline(hard_threshold, color="tab:red", ls="--", lw=1.2,
               label=f"hard <= {hard_threshold:g}")
    ax.set_xlabel("target posterior (unit scale)")
    ax.set_ylabel("samples")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
