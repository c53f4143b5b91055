import json

import numpy as np
import pytest

from tldrseg import nets
from tldrseg.errors import ConfigError
from tldrseg.synthdata import (
    BAND_A,
    BAND_B,
    DomainSpec,
    StyleShift,
    apply_shift,
    default_domain,
    generate_dataset,
    generate_sample,
    generate_style_image,
    make_domain_pair,
    render_layout,
    render_texture,
)
from tldrseg.texture import gram


def test_sample_deterministic():
    spec = default_domain(seed=4)
    a, b = generate_sample(spec, 12), generate_sample(spec, 12)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.label, b.label)
    assert not np.array_equal(a.label, generate_sample(spec, 13).label)


def test_sample_ranges():
    spec = default_domain()
    for s in generate_dataset(spec, 20):
        assert s.image.shape == (3, 64, 64) and s.label.shape == (64, 64)
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
        assert s.label.min() >= 0 and s.label.max() < spec.num_classes
        assert len(np.unique(s.label)) >= 2


def test_both_bands_usually_present():
    hits = sum(
        (BAND_A in s.label) and (BAND_B in s.label) for s in generate_dataset(default_domain(), 100)
    )
    assert hits >= 90


def test_identity_shift_gives_pure_rendering():
    spec = default_domain()
    spec.shift = StyleShift()
    sample = generate_sample(spec, 3)
    rng = np.random.default_rng([spec.seed, 3, 0x5EC])
    from tldrseg.synthdata import _layout

    label = _layout(rng, 64, 64)
    assert np.array_equal(label, sample.label)
    assert np.array_equal(render_layout(spec, label, rng), sample.image)


def test_domain_validation():
    spec = default_domain()
    spec.classes = spec.classes[:3]
    spec.classes[2].shape = "ellipse"
    with pytest.raises(ConfigError):
        spec.validate()


def test_domain_json_roundtrip():
    spec = make_domain_pair(2)[1][0]
    again = DomainSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert again == spec


def test_style_images():
    a, b = generate_style_image(5), generate_style_image(5)
    assert np.array_equal(a.image, b.image)
    assert not np.array_equal(a.image, generate_style_image(6).image)
    for seed in range(100):
        img = generate_style_image(seed).image
        assert 0.0 <= img.min() and img.max() <= 1.0
        assert img.reshape(3, -1).var(axis=1).min() > 1e-4


def test_domain_pair_properties():
    source, targets = make_domain_pair(0, n_targets=3, perturbation=0.1)
    assert len({t.seed for t in targets}) == 3
    for t in targets:
        assert t.shift != source.shift
        for cs, ct in zip(source.classes, t.classes):
            assert cs.shape == ct.shape
            ps, pt = cs.texture, ct.texture
            if ps.stripe_freq:
                assert abs(pt.stripe_freq / ps.stripe_freq - 1) <= 0.1 + 1e-12
            assert abs(pt.noise_beta / ps.noise_beta - 1) <= 0.1 + 1e-12
            assert abs(pt.stripe_angle - ps.stripe_angle) <= 9.0 + 1e-12
            assert pt.checker_period == ps.checker_period


def _band_patch(spec, cls, rng, size=32):
    c = spec.classes[cls]
    pattern = render_texture(c.texture, size, size, rng)
    lo, hi = (np.asarray(p) for p in c.palette)
    return lo[:, None, None] + (hi - lo)[:, None, None] * pattern[None]


def test_bands_separable_by_gram_features():
    spec = default_domain()
    encoder = nets.build_encoder(nets.EncoderConfig(seed=10_000)).frozen_copy()
    rng = np.random.default_rng(0)

    def features(cls, n):
        patches = np.stack([apply_shift(_band_patch(spec, cls, rng), spec.shift, rng) for _ in range(n)])
        return gram(nets.encode(encoder, patches)[0]).data.reshape(n, -1)

    train = {k: features(k, 20) for k in (BAND_A, BAND_B)}
    pooled = np.concatenate(list(train.values()))
    mu, sd = pooled.mean(axis=0), pooled.std(axis=0) + 1e-12
    centroids = {k: ((v - mu) / sd).mean(axis=0) for k, v in train.items()}
    correct = total = 0
    for k in (BAND_A, BAND_B):
        for f in (features(k, 50) - mu) / sd:
            guess = min(centroids, key=lambda c: np.linalg.norm(f - centroids[c]))
            correct += guess == k
            total += 1
    assert correct / total > 0.9
