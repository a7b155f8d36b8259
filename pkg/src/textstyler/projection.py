"""2-D projections of style embeddings (PCA and exact t-SNE) with CSV and scatter output."""
import csv
from importlib import resources

import numpy as np

from .errors import InsufficientDataError, InvalidConfigError, ParseError

UNGROUPED = "other"


def pca(x, k=2):
    """Project onto the top ``k`` principal axes.

    Axis signs are fixed so the largest-magnitude loading of each axis is
    positive. Returns ``(coords, axes, mean)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        raise InsufficientDataError(f"need at least 3 embeddings to project, got {x.shape[0]}")
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    axes = vt[:k].copy()
    for row in axes:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return (x - mean) @ axes.T, axes, mean


def tsne(x, seed=0, perplexity=30.0, n_iter=1000):
    """Exact (O(n^2)) t-SNE, seeded."""
    from sklearn.manifold import TSNE

    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise InsufficientDataError(f"need at least 3 embeddings to project, got {n}")
    # perplexity must stay below n
    perplexity = min(perplexity, (n - 1) / 3.0)
    model = TSNE(n_components=2, perplexity=perplexity, method="exact", init="pca", random_state=seed,
                 max_iter=n_iter)
    return model.fit_transform(x)


def project(x, method="pca", seed=0, **kwargs):
    if method == "pca":
        return pca(x)[0]
    if method == "tsne":
        return tsne(x, seed=seed, **kwargs)
    raise InvalidConfigError(f"unknown projection method {method!r}")


def parse_groups(text):
    """``keyword = group`` lines; ``#`` starts a comment."""
    groups = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'keyword = group'", line=lineno)
        key, group = (s.strip().lower() for s in line.split("=", 1))
        if not key or not group:
            raise ParseError("empty keyword or group", line=lineno)
        groups[key] = group
    return groups


def load_groups(path=None):
    if path is None:
        text = resources.files("textstyler.data").joinpath("keyword_groups.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_groups(text)


def group_of(prompt, groups):
    """Group of the first prompt token listed in ``groups``."""
    for token in prompt.lower().split():
        if token in groups:
            return groups[token]
    return UNGROUPED


def write_csv(path, prompts, labels, coords):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["prompt", "group", "x", "y"])
        for p, g, (x, y) in zip(prompts, labels, coords):
            writer.writerow([p, g, repr(float(x)), repr(float(y))])


def write_scatter(path, labels, coords, title=""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed metadata keeps the PNG bytes reproducible
    fig, ax = plt.subplots(figsize=(6, 6), dpi=100)
    for i, group in enumerate(sorted(set(labels))):
        mask = np.array([lab == group for lab in labels])
        ax.scatter(coords[mask, 0], coords[mask, 1], s=8, color=plt.cm.tab20(i % 20), label=group)
    ax.legend(fontsize=7, markerscale=2, loc="best")
    ax.set_title(title)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
