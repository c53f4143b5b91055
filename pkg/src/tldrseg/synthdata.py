"""Procedural multi-domain segmentation data and random style images.

Every image is a background with two full-width horizontal bands, an ellipse
and a rectangle. The two bands share shape and context; only their texture
tells them apart. A domain fixes per-class texture programs and palettes plus
a global style shift (hue rotation, contrast, brightness, sensor noise).
"""

import copy
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from tldrseg.errors import ConfigError

BACKGROUND, BAND_A, BAND_B, BLOB, BOX = range(5)
CLASS_NAMES = ("background", "band_a", "band_b", "blob", "box")
SHAPE_FAMILIES = ("background", "band", "ellipse", "rectangle")


@dataclass
class TextureProgram:
    stripe_freq: float = 0.0  # cycles per pixel
    stripe_angle: float = 0.0  # degrees; 0 = intensity varies along x
    stripe_weight: float = 0.0
    checker_period: int = 4
    checker_weight: float = 0.0
    noise_beta: float = 2.0  # power spectrum ~ 1/f**beta
    noise_weight: float = 0.0


@dataclass
class ClassSpec:
    name: str
    shape: str
    texture: TextureProgram
    palette: tuple  # ((r, g, b) low, (r, g, b) high)


@dataclass
class StyleShift:
    hue_degrees: float = 0.0
    contrast: float = 1.0
    brightness: float = 0.0
    noise: float = 0.0

    def is_identity(self):
        return self.hue_degrees == 0 and self.contrast == 1 and self.brightness == 0 and self.noise == 0


@dataclass
class DomainSpec:
    name: str
    classes: list
    shift: StyleShift = field(default_factory=StyleShift)
    height: int = 64
    width: int = 64
    seed: int = 0

    @property
    def num_classes(self):
        return len(self.classes)

    def validate(self):
        if self.num_classes < 3:
            raise ConfigError(f"need at least 3 classes, got {self.num_classes}")
        seen = {}
        twin = False
        for c in self.classes:
            if c.shape not in SHAPE_FAMILIES:
                raise ConfigError(f"unknown shape family {c.shape!r}")
            if c.shape in seen and seen[c.shape] != c.texture:
                twin = True
            seen.setdefault(c.shape, c.texture)
        if not twin:
            raise ConfigError("at least two classes must share a shape family with different textures")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        classes = [
            ClassSpec(c["name"], c["shape"], TextureProgram(**c["texture"]), tuple(tuple(p) for p in c["palette"]))
            for c in obj["classes"]
        ]
        return cls(obj["name"], classes, StyleShift(**obj["shift"]), obj["height"], obj["width"], obj["seed"])


@dataclass
class SegSample:
    image: np.ndarray  # 3×H×W in [0, 1]
    label: np.ndarray  # H×W int64


@dataclass
class StyleImage:
    image: np.ndarray
    seed: int


def default_classes():
    """Source-domain class table; the two band classes share a shape but not a texture."""
    return [
        ClassSpec("background", "background",
                  TextureProgram(noise_beta=2.8, noise_weight=1.0),
                  ((0.30, 0.45, 0.60), (0.60, 0.75, 0.90))),
        ClassSpec("band_a", "band",
                  TextureProgram(stripe_freq=0.25, stripe_angle=0.0, stripe_weight=1.0,
                                 noise_beta=1.0, noise_weight=0.3),
                  ((0.35, 0.33, 0.30), (0.65, 0.62, 0.58))),
        ClassSpec("band_b", "band",
                  TextureProgram(checker_period=4, checker_weight=1.0,
                                 noise_beta=1.0, noise_weight=0.3),
                  ((0.38, 0.35, 0.32), (0.62, 0.60, 0.56))),
        ClassSpec("blob", "ellipse",
                  TextureProgram(noise_beta=0.5, noise_weight=1.0),
                  ((0.15, 0.45, 0.15), (0.45, 0.75, 0.35))),
        ClassSpec("box", "rectangle",
                  TextureProgram(stripe_freq=0.15, stripe_angle=90.0, stripe_weight=1.0,
                                 checker_period=6, checker_weight=0.4),
                  ((0.55, 0.20, 0.15), (0.85, 0.45, 0.35))),
    ]


def default_domain(seed=0, size=64):
    spec = DomainSpec("source", default_classes(), StyleShift(noise=0.02), size, size, seed)
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _noise_field(rng, h, w, beta):
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fx ** 2 + fy ** 2)
    f[0, 0] = 1.0
    amp = f ** (-beta / 2.0)
    amp[0, 0] = 0.0
    spec = amp * (rng.standard_normal(amp.shape) + 1j * rng.standard_normal(amp.shape))
    field_ = np.fft.irfft2(spec, s=(h, w))
    lo, hi = field_.min(), field_.max()
    return (field_ - lo) / (hi - lo) if hi > lo else np.zeros((h, w))


def render_texture(program, h, w, rng):
    """Pattern intensity in [0, 1] for one texture program.

    ``rng`` supplies the random phase/offset/noise so the same program yields
    different but statistically identical patches.
    """
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    total = program.stripe_weight + program.checker_weight + program.noise_weight
    if total <= 0:
        return np.full((h, w), 0.5)
    pattern = np.zeros((h, w))
    phase = rng.uniform(0, 2 * np.pi)
    offset = rng.integers(0, 64, size=2)
    if program.stripe_weight:
        theta = np.deg2rad(program.stripe_angle)
        s = 0.5 + 0.5 * np.sin(2 * np.pi * program.stripe_freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        pattern += program.stripe_weight * s
    if program.checker_weight:
        p = max(int(program.checker_period), 1)
        c = (((xx + offset[0]) // p + (yy + offset[1]) // p) % 2).astype(np.float64)
        pattern += program.checker_weight * c
    if program.noise_weight:
        pattern += program.noise_weight * _noise_field(rng, h, w, program.noise_beta)
    return pattern / total


def _hue_rotation(degrees):
    """Rotation of RGB about the grey axis."""
    t = np.deg2rad(degrees)
    k = np.ones(3) / np.sqrt(3.0)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(t) * kx + (1 - np.cos(t)) * kx @ kx


def apply_shift(image, shift, rng):
    if shift.is_identity():
        return image
    out = image
    if shift.hue_degrees:
        out = np.einsum("ij,jhw->ihw", _hue_rotation(shift.hue_degrees), out)
    out = 0.5 + shift.contrast * (out - 0.5) + shift.brightness
    if shift.noise:
        out = out + rng.normal(0.0, shift.noise, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def _layout(rng, h, w):
    label = np.zeros((h, w), dtype=np.int64)
    # two non-overlapping bands in random vertical order
    ha, hb = rng.integers(h // 6, h // 3, size=2)
    gap = rng.integers(0, max(h - ha - hb, 0) + 1)
    top = rng.integers(0, max(h - ha - hb - gap, 0) + 1)
    first, second = (BAND_A, BAND_B) if rng.random() < 0.5 else (BAND_B, BAND_A)
    h1, h2 = (ha, hb) if first == BAND_A else (hb, ha)
    label[top:top + h1] = first
    label[top + h1 + gap:top + h1 + gap + h2] = second
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    ry, rx = rng.uniform(h / 12, h / 5), rng.uniform(w / 12, w / 5)
    label[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = BLOB
    bh, bw = rng.integers(h // 7, h // 3), rng.integers(w // 7, w // 3)
    by, bx = rng.integers(0, h - bh), rng.integers(0, w - bw)
    label[by:by + bh, bx:bx + bw] = BOX
    return label


def render_layout(spec, label, rng):
    """Composite per-class textures under ``label`` (no style shift)."""
    h, w = label.shape
    image = np.zeros((3, h, w))
    for k, cls in enumerate(spec.classes):
        region = label == k
        if not region.any():
            continue
        pattern = render_texture(cls.texture, h, w, rng)
        lo, hi = (np.asarray(c, dtype=np.float64) for c in cls.palette)
        colour = lo[:, None, None] + (hi - lo)[:, None, None] * pattern[None]
        image[:, region] = colour[:, region]
    return image


def generate_sample(spec, index):
    """Deterministic sample for ``(spec.seed, index)``."""
    rng = np.random.default_rng([spec.seed, index, 0x5EC])
    label = _layout(rng, spec.height, spec.width)
    image = render_layout(spec, label, rng)
    image = apply_shift(image, spec.shift, rng)
    return SegSample(image, label)


def generate_dataset(spec, count, start=0):
    return [generate_sample(spec, start + i) for i in range(count)]


def generate_style_image(seed, size=64):
    """Smooth random colour field with a few random texture patches."""
    rng = np.random.default_rng([seed, 0x57E])
    h = w = size
    base = np.stack([_noise_field(rng, h, w, rng.uniform(2.0, 3.5)) for _ in range(3)])
    mix = rng.dirichlet(np.ones(3), size=3)
    image = np.einsum("ij,jhw->ihw", mix, base)
    image = 0.2 + 0.6 * (image - image.min()) / max(np.ptp(image), 1e-9)
    for _ in range(rng.integers(2, 5)):
        prog = TextureProgram(
            stripe_freq=rng.uniform(0.05, 0.35), stripe_angle=rng.uniform(0, 180),
            stripe_weight=rng.uniform(0, 1), checker_period=int(rng.integers(2, 9)),
            checker_weight=rng.uniform(0, 1), noise_beta=rng.uniform(0.5, 3.0), noise_weight=rng.uniform(0, 1),
        )
        pattern = render_texture(prog, h, w, rng)
        c0, c1 = rng.uniform(0, 1, size=(2, 3))
        patch = c0[:, None, None] + (c1 - c0)[:, None, None] * pattern[None]
        ph, pw = rng.integers(h // 4, h // 2 + 1, size=2)
        y, x = rng.integers(0, h - ph + 1), rng.integers(0, w - pw + 1)
        alpha = rng.uniform(0.5, 1.0)
        image[:, y:y + ph, x:x + pw] = (1 - alpha) * image[:, y:y + ph, x:x + pw] + alpha * patch[:, y:y + ph, x:x + pw]
    return StyleImage(np.clip(image, 0.0, 1.0), seed)


def style_pool(count=256, base_seed=0, size=64):
    return [generate_style_image(base_seed * 100003 + i, size) for i in range(count)]


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


def perturb_program(program, rng, bound):
    """Jitter a texture program; every parameter moves by at most ``bound`` (relative)."""
    p = copy.copy(program)
    p.stripe_freq = program.stripe_freq * (1 + rng.uniform(-bound, bound))
    p.stripe_angle = program.stripe_angle + 90.0 * rng.uniform(-bound, bound)
    p.noise_beta = program.noise_beta * (1 + rng.uniform(-bound, bound))
    return p


def make_domain_pair(base_seed=0, n_targets=3, perturbation=0.1, size=64):
    """Source domain plus ``n_targets`` unseen targets.

    Targets keep each class's shape family and (perturbed) texture program,
    but rotate hue, rescale contrast, shift brightness and add more noise.
    """
    source = default_domain(seed=base_seed, size=size)
    rng = np.random.default_rng([base_seed, 0xD0])
    targets = []
    for i in range(n_targets):
        classes = []
        for c in source.classes:
            palette = tuple(
                tuple(float(np.clip(v + rng.uniform(-0.05, 0.05), 0, 1)) for v in colour) for colour in c.palette
            )
            classes.append(replace(c, texture=perturb_program(c.texture, rng, perturbation), palette=palette))
        shift = StyleShift(
            hue_degrees=float(rng.choice([-1, 1]) * rng.uniform(10, 45)),
            contrast=float(rng.uniform(0.75, 1.25)),
            brightness=float(rng.uniform(-0.08, 0.08)),
            noise=float(rng.uniform(0.03, 0.06)),
        )
        target = DomainSpec(f"target{i}", classes, shift, size, size, seed=base_seed * 1000 + 17 * (i + 1))
        target.validate()
        targets.append(target)
    return source, targets
