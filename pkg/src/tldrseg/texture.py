"""Gram-matrix texture descriptors, random style masking and texture losses."""

import csv

import numpy as np

from tldrseg import autodiff as ad
from tldrseg.autodiff import Tensor
from tldrseg.errors import ContractError, DimensionError


def gram(features):
    """Channel Gram matrix normalised by ``C*H*W``.

    Accepts a single map C×H×W (returns C×C) or a batch N×C×H×W (returns
    N×C×C, one Gram per item).
    """
    single = features.ndim == 3
    if single:
        features = ad.reshape(features, (1,) + features.shape)
    if features.ndim != 4:
        raise DimensionError(f"gram expects C×H×W or N×C×H×W, got {features.shape}")
    n, c, h, w = features.shape
    flat = ad.reshape(features, (n, c, h * w))
    g = ad.scale(ad.bmm(flat, ad.transpose(flat)), 1.0 / (c * h * w))
    return ad.reshape(g, (c, c)) if single else g


def _values(g):
    return g.data if isinstance(g, Tensor) else np.asarray(g)


def rsm_mask(gram_sr, gram_s, tau):
    """Boolean mask of entries where the stylized Gram exceeds the source Gram by more than ``tau``."""
    a, b = _values(gram_sr), _values(gram_s)
    if a.shape != b.shape:
        raise DimensionError(f"rsm_mask: shape mismatch {a.shape} vs {b.shape}")
    return (a - b) > tau


def _check_layers(name, *seqs):
    n = len(seqs[0])
    if any(len(s) != n for s in seqs):
        raise ContractError(f"{name}: layer counts differ {[len(s) for s in seqs]}")


def texture_reg_loss(grams_ref, grams_task, u):
    """Weighted sum over layers of ``||G_ref - G_task||_F``.

    ``grams_ref`` come from the frozen reference encoder and are detached
    here, so the gradient reaches only ``grams_task``.
    """
    _check_layers("texture_reg_loss", grams_ref, grams_task, u)
    total = None
    for g_ref, g_task, weight in zip(grams_ref, grams_task, u):
        if g_ref.shape != g_task.shape:
            raise DimensionError(f"texture_reg_loss: {g_ref.shape} vs {g_task.shape}")
        term = ad.scale(ad.frobenius_norm(g_ref.detach() - g_task), weight)
        total = term if total is None else total + term
    return total


def texture_gen_loss(grams_style, grams_stylized, masks, v):
    """Weighted sum over layers of ``||(G_style - G_stylized) * M||_F``.

    Masks are constants; gradients flow into both Gram arguments.
    """
    _check_layers("texture_gen_loss", grams_style, grams_stylized, masks, v)
    total = None
    for g_r, g_sr, m, weight in zip(grams_style, grams_stylized, masks, v):
        m = np.asarray(m)
        if g_r.shape != g_sr.shape or m.shape != g_r.shape:
            raise DimensionError(f"texture_gen_loss: {g_r.shape}, {g_sr.shape}, mask {m.shape}")
        masked = (g_r - g_sr) * Tensor(m.astype(g_r.dtype), dtype=g_r.dtype)
        term = ad.scale(ad.frobenius_norm(masked), weight)
        total = term if total is None else total + term
    return total


def raw_feature_consistency(features_a, features_b, weights):
    """Feature-map consistency without the Gram operator.

    Sum over layers of ``w_l * ||F_a - F_b||_F / (C_l*H_l*W_l)``, the batch
    axis (if any) excluded from the divisor.
    """
    _check_layers("raw_feature_consistency", features_a, features_b, weights)
    total = None
    for fa, fb, weight in zip(features_a, features_b, weights):
        if fa.shape != fb.shape:
            raise DimensionError(f"raw_feature_consistency: {fa.shape} vs {fb.shape}")
        chw = int(np.prod(fa.shape[-3:]))
        term = ad.scale(ad.frobenius_norm(fa - fb), weight / chw)
        total = term if total is None else total + term
    return total


def layer_weights(num_layers, exponent_offset=2, base=5.0):
    """``base * 10**(-l - exponent_offset)`` for ``l = 1..num_layers``."""
    return [base * 10.0 ** (-l - exponent_offset) for l in range(1, num_layers + 1)]


def export_gram_csv(path, grams, layers=None):
    """Write Gram matrices row-major, one block per layer with a metadata header."""
    layers = layers if layers is not None else range(1, len(grams) + 1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for layer, g in zip(layers, grams):
            vals = _values(g)
            vals = vals.reshape(-1, vals.shape[-2], vals.shape[-1])
            for item, mat in enumerate(vals):
                writer.writerow([f"# layer={layer}", f"item={item}", f"channels={mat.shape[0]}"])
                for row in mat:
                    writer.writerow([repr(float(x)) for x in row])
