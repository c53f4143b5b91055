"""Pixel-space whitening-coloring style transfer.

The transform is one global affine map on RGB values, so pixels that share a
colour keep sharing it and label boundaries stay aligned with image edges.
"""

from dataclasses import dataclass

import numpy as np

from tldrseg.errors import ConfigError, ContractError, NumericError

DEFAULT_EPSILON = 1e-5


@dataclass
class StyleStats:
    mean: np.ndarray  # (3,)
    covariance: np.ndarray  # (3, 3)
    epsilon: float = DEFAULT_EPSILON


def _pixels(image):
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if arr.ndim != 3:
        raise ContractError(f"expected a C×H×W image, got shape {arr.shape}")
    return arr.reshape(arr.shape[0], -1)


def extract_stats(image, epsilon=DEFAULT_EPSILON):
    """Per-channel colour mean and (population) covariance."""
    px = _pixels(image)
    if px.shape[1] < 2:
        raise ContractError("need at least two pixels for colour statistics")
    mean = px.mean(axis=1)
    centred = px - mean[:, None]
    cov = centred @ centred.T / px.shape[1]
    return StyleStats(mean, (cov + cov.T) / 2, epsilon)


def _sym_power(cov, epsilon, power):
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, 0.0) + epsilon
    return (vecs * vals ** power) @ vecs.T


def transfer_matrix(content_cov, style_cov, epsilon=DEFAULT_EPSILON):
    """``A = (S + eps I)^{1/2} (C + eps I)^{-1/2}``."""
    return _sym_power(style_cov, epsilon, 0.5) @ _sym_power(content_cov, epsilon, -0.5)


def wct_transfer(content, style, epsilon=DEFAULT_EPSILON, clamp=True):
    """Recolour ``content`` (3×H×W) so its colour moments follow ``style``.

    Each pixel ``p`` maps to ``A (p - mu_c) + mu_s``. The result is clamped to
    [0, 1] unless ``clamp`` is False.
    """
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    if not (np.isfinite(style.mean).all() and np.isfinite(style.covariance).all()):
        raise NumericError("style statistics contain non-finite values")
    arr = np.asarray(getattr(content, "data", content), dtype=np.float64)
    px = arr.reshape(arr.shape[0], -1)
    mu_c = px.mean(axis=1)
    centred = px - mu_c[:, None]
    cov_c = centred @ centred.T / px.shape[1]
    a = transfer_matrix((cov_c + cov_c.T) / 2, style.covariance, epsilon)
    out = (a @ centred + style.mean[:, None]).reshape(arr.shape)
    if not np.isfinite(out).all():
        raise NumericError("style transfer produced non-finite values")
    return np.clip(out, 0.0, 1.0) if clamp else out


@dataclass
class StylizedBatch:
    images: np.ndarray  # N×3×H×W stylized sources
    style_images: np.ndarray  # N×3×H×W, the style drawn for each source
    style_indices: np.ndarray  # (N,) index into the style pool
    labels: np.ndarray  # N×H×W, passed through untouched


def stylize_batch(contents, styles, seed, epsilon=DEFAULT_EPSILON):
    """Draw one random style per content image and transfer it.

    ``contents`` is a sequence of samples with ``.image``/``.label`` (or a
    plain image array N×3×H×W); ``styles`` a non-empty pool of style images.
    """
    if len(styles) == 0:
        raise ConfigError("style pool is empty")
    rng = np.random.default_rng(seed)
    images, labels = _unpack(contents)
    idx = rng.integers(0, len(styles), size=len(images))
    style_imgs = np.stack([_style_array(styles[i]) for i in idx])
    out = np.stack([
        wct_transfer(img, extract_stats(s, epsilon), epsilon) for img, s in zip(images, style_imgs)
    ])
    return StylizedBatch(out, style_imgs, idx, labels)


def _style_array(style):
    return np.asarray(getattr(style, "image", style), dtype=np.float64)


def _unpack(contents):
    if isinstance(contents, np.ndarray):
        return contents, None
    images = np.stack([np.asarray(c.image) for c in contents])
    labels = np.stack([c.label for c in contents]) if hasattr(contents[0], "label") else None
    return images, labels
