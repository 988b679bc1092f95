"""Optional precision-recall plots (matplotlib is imported lazily)."""

from pathlib import Path

import numpy as np

from mvweak.metrics import average_precision, precision_recall_curve


def plot_pr_curves(scores, labels, out_dir, class_names):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    C = scores.shape[-1]
    scores, labels = scores.reshape(-1, C), labels.reshape(-1, C)
    paths = []
    for c in range(C):
        if not labels[:, c].any():
            continue
        precision, recall, _ = precision_recall_curve(scores[:, c], labels[:, c])
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.step(np.r_[0.0, recall], np.r_[precision[0], precision], where="post")
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.05)
        ax.set_title(f"{class_names[c]}  AP={average_precision(scores[:, c], labels[:, c]):.3f}")
        path = out_dir / f"pr_{class_names[c]}.png"
        fig.savefig(path, dpi=80, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths
