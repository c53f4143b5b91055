"""Segmentation metrics and latent texture/shape dimensionality estimation."""

import csv
import os
from dataclasses import dataclass

import numpy as np

from tldrseg import nets
from tldrseg.errors import ContractError, DimensionError, MetricError
from tldrseg.stylize import extract_stats, wct_transfer
from tldrseg.synthdata import CLASS_NAMES, generate_dataset, generate_sample, style_pool

MI_CLAMP = 1e-8


def confusion_matrix(pred, label, num_classes, ignore_index=255):
    """K×K counts, rows = ground truth, columns = prediction."""
    pred = np.asarray(pred).reshape(-1)
    label = np.asarray(label).reshape(-1)
    if pred.shape != label.shape:
        raise DimensionError(f"prediction {pred.shape} vs label {label.shape}")
    keep = label != ignore_index
    idx = num_classes * label[keep].astype(np.int64) + pred[keep].astype(np.int64)
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def miou(confusion):
    """Per-class IoU (NaN where a class has empty union) and their mean."""
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.sum() <= 0:
        raise MetricError("confusion matrix is empty")
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    return iou, float(np.nanmean(iou))


def mi_lower_bound(z_a, z_b):
    """``-0.5 * log(1 - corr(z_a, z_b))`` with ``1 - corr`` floored at 1e-8."""
    a = np.asarray(z_a, dtype=np.float64).reshape(-1)
    b = np.asarray(z_b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size < 2:
        raise ContractError(f"need equal-length vectors of size >= 2, got {a.shape}, {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0 or nb == 0:
        raise MetricError("zero-variance input to correlation")
    corr = float(a @ b / (na * nb))
    return -0.5 * np.log(max(1.0 - corr, MI_CLAMP))


# ---------------------------------------------------------------------------
# dimensionality estimation
# ---------------------------------------------------------------------------


@dataclass
class PairSet:
    """Images for shape/texture pairs sharing one common image.

    For set ``i``: ``common[i]`` = content a in style a; ``texture[i]`` =
    content b in style a; ``shape[i]`` = content a in style b; ``unrelated[i]``
    = content c in style c.
    """

    common: np.ndarray
    texture: np.ndarray
    shape: np.ndarray
    unrelated: np.ndarray

    def __len__(self):
        return len(self.common)


def _stm(content, style):
    return wct_transfer(content, extract_stats(style))


def build_pair_sets(contents, styles, count, seed=0):
    """Build ``count`` pair sets with the style-transfer module."""
    if count <= 0 or len(contents) < 3 or len(styles) < 3:
        raise ContractError("need count > 0 and at least 3 contents and 3 styles")
    rng = np.random.default_rng(seed)
    sets = {"common": [], "texture": [], "shape": [], "unrelated": []}
    for _ in range(count):
        ca, cb, cc = (np.asarray(getattr(contents[i], "image", contents[i]))
                      for i in rng.choice(len(contents), 3, replace=False))
        sa, sb, sc = (np.asarray(getattr(styles[i], "image", styles[i]))
                      for i in rng.choice(len(styles), 3, replace=False))
        sets["common"].append(_stm(ca, sa))
        sets["texture"].append(_stm(cb, sa))
        sets["shape"].append(_stm(ca, sb))
        sets["unrelated"].append(_stm(cc, sc))
    return PairSet(**{k: np.stack(v) for k, v in sets.items()})


PAIR_CONTENT_OFFSET = 500_000


def standard_pair_sets(domain, count=50, seed=0):
    """Pair sets from held-aside samples of ``domain`` and a dedicated style pool."""
    pool = max(3, count)
    contents = generate_dataset(domain, pool, start=PAIR_CONTENT_OFFSET + 10_000 * seed)
    styles = style_pool(pool, base_seed=10_000 + seed, size=domain.height)
    return build_pair_sets(contents, styles, count, seed=seed)


def _layer_vectors(encoder, images, max_coords, seed):
    feats = nets.encode(encoder, images)
    out = []
    rng = np.random.default_rng(seed)
    for f in feats:
        flat = f.data.reshape(f.shape[0], -1)
        if flat.shape[1] > max_coords:
            idx = np.sort(rng.choice(flat.shape[1], max_coords, replace=False))
            flat = flat[:, idx]
        out.append(flat)
    return out


def _mean_mi(za, zb):
    scores = []
    for a, b in zip(za, zb):
        try:
            scores.append(mi_lower_bound(a, b))
        except MetricError:
            # dead (all-zero) activations carry no information
            scores.append(0.0)
    return float(np.mean(scores))


def dimensionality(encoder, pairs, max_coords=4096, seed=0):
    """Per-layer texture/shape/residual percentages.

    Scores are mean MI lower bounds over texture pairs and shape pairs; the
    residual score is the mean over unrelated pairs. Percentages are a softmax
    over the three scores.
    """
    if len(pairs) == 0:
        raise ContractError("empty pair set")
    vecs = {k: _layer_vectors(encoder, getattr(pairs, k), max_coords, seed)
            for k in ("common", "texture", "shape", "unrelated")}
    result = []
    for layer in range(len(vecs["common"])):
        common = vecs["common"][layer]
        scores = np.array([
            _mean_mi(common, vecs["texture"][layer]),
            _mean_mi(common, vecs["shape"][layer]),
            _mean_mi(common, vecs["unrelated"][layer]),
        ])
        e = np.exp(scores - scores.max())
        pct = 100.0 * e / e.sum()
        result.append({
            "layer": layer + 1,
            "texture": float(pct[0]),
            "shape": float(pct[1]),
            "residual": float(pct[2]),
            "texture_score": float(scores[0]),
            "shape_score": float(scores[1]),
            "baseline_score": float(scores[2]),
        })
    return result


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    domain: str
    confusion: np.ndarray
    iou: np.ndarray
    miou: float

    def report(self):
        lines = []
        for k, v in enumerate(self.iou):
            name = CLASS_NAMES[k] if k < len(CLASS_NAMES) else f"class{k}"
            lines.append(f"{name:>12s}  IoU={'n/a' if np.isnan(v) else f'{v:.4f}'}")
        lines.append(f"{'mean':>12s}  mIoU={self.miou:.4f}")
        return "\n".join(lines)


EVAL_INDEX_OFFSET = 1_000_000


def evaluate(encoder, decoder, domain, n_samples=32, seed=0, batch_size=16):
    """Whole-image evaluation on a seeded held-out sample set of ``domain``."""
    k = decoder.config.num_classes
    if domain.num_classes != k:
        raise ContractError(f"domain has {domain.num_classes} classes, model predicts {k}")
    start = EVAL_INDEX_OFFSET + 10_000 * int(seed)
    cm = np.zeros((k, k), dtype=np.int64)
    dtype = encoder.params["stage1.weight"].dtype
    for lo in range(0, n_samples, batch_size):
        samples = [generate_sample(domain, start + i) for i in range(lo, min(lo + batch_size, n_samples))]
        images = np.stack([s.image for s in samples]).astype(dtype)
        pred = nets.predict(encoder, decoder, images)
        cm += confusion_matrix(pred, np.stack([s.label for s in samples]), k)
    iou, m = miou(cm)
    return EvalResult(domain.name, cm, iou, m)


METRIC_FIELDS = ["t", "domain", "miou"] + [f"iou_{n}" for n in CLASS_NAMES]


def write_metrics_row(path, t, result):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(METRIC_FIELDS[:3] + [f"iou_{i}" for i in range(len(result.iou))]
                            if len(result.iou) != len(CLASS_NAMES) else METRIC_FIELDS)
        writer.writerow([t, result.domain, repr(result.miou)] + ["nan" if np.isnan(v) else repr(float(v)) for v in result.iou])


def write_confusion_csv(path, confusion):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\pred"] + list(range(confusion.shape[1])))
        for i, row in enumerate(confusion):
            writer.writerow([i] + [int(x) for x in row])
