import os
import logging

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

logger = logging.getLogger(__name__)


def plot_class_shares(per_class, save_path, title="Relative class distribution"):
    """Bar chart of class shares, largest first. per_class is the "per_class" block of a stats report."""
    df = pd.DataFrame(
        [{"class": label, "share": entry["share"], "count": entry["count"]} for label, entry in per_class.items()]
    )
    if df.empty:
        logger.warning("No classes to plot")
        return None
    df = df.sort_values(["share", "class"], ascending=[False, True])

    plt.figure(figsize=(max(8, 0.45 * len(df)), 5))
    sns.barplot(data=df, x="class", y="share", color="#c98b4a")
    plt.title(title)
    plt.ylabel("Share of annotations")
    plt.xlabel("")
    plt.xticks(rotation=60, ha="right")
    plt.grid(axis='y', linestyle='--', alpha=0.3)
    plt.tight_layout()

    out_dir = os.path.dirname(save_path)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    plt.savefig(save_path, dpi=150)
    plt.close()
    print(f"Saved class distribution to {save_path}")
    return save_path
