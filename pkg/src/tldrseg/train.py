"""Full training objective, schedules, AdamW and the training loop."""

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from tldrseg import autodiff as ad
from tldrseg import nets
from tldrseg.analyze import evaluate, write_confusion_csv, write_metrics_row
from tldrseg.autodiff import Tensor
from tldrseg.errors import ConfigError, ContractError, NumericError
from tldrseg.stylize import DEFAULT_EPSILON, extract_stats, wct_transfer
from tldrseg.synthdata import generate_dataset, make_domain_pair, style_pool
from tldrseg.texture import gram, layer_weights, raw_feature_consistency, rsm_mask, texture_gen_loss, texture_reg_loss

logger = logging.getLogger(__name__)

TOGGLES = ("use_L_orig", "use_L_styl", "use_L_TR", "use_L_TG", "use_RSM", "use_LDF", "use_TEO")
LOSS_FIELDS = ["t", "L_orig", "L_styl", "L_TR", "L_TG", "w", "lr"]


@dataclass
class TrainConfig:
    t_total: int = 2000
    t_warm: int = 50
    batch_size: int = 4
    lr_encoder: float = 1e-3
    lr_decoder: float = 3e-3
    weight_decay: float = 0.01
    alpha_orig: float = 0.5
    alpha_styl: float = 0.5
    u: list = field(default_factory=lambda: layer_weights(4))
    v: list = field(default_factory=lambda: layer_weights(4))
    tau: float = 0.1
    texture_layers: list = field(default_factory=lambda: [1, 2, 3, 4])
    image_size: int = 64
    crop_size: int = 64
    seed: int = 0
    data_seed: int = 0
    use_L_orig: bool = True
    use_L_styl: bool = True
    use_L_TR: bool = True
    use_L_TG: bool = True
    use_RSM: bool = True
    use_LDF: bool = True
    use_TEO: bool = True
    domains: list = field(default_factory=lambda: ["source"])
    n_targets: int = 3
    num_classes: int = 5
    encoder_channels: list = field(default_factory=lambda: [8, 16, 32, 64])
    decoder_width: int = 32
    train_size: int = 256
    style_pool_size: int = 256
    style_resample: str = "iteration"  # or "epoch"
    augment_flip: bool = True
    random_scale: bool = False
    color_jitter: bool = False
    stm_epsilon: float = DEFAULT_EPSILON
    eval_samples: int = 32
    eval_every: int = 500
    log_every: int = 10
    early_stop_at: int = None
    dtype: str = "float64"

    def validate(self):
        if self.alpha_orig < 0 or self.alpha_styl < 0:
            raise ConfigError("task-loss weights must be non-negative")
        if self.tau < 0:
            raise ConfigError("tau must be non-negative")
        if not 0 <= self.t_warm < self.t_total:
            raise ConfigError(f"need 0 <= t_warm < t_total, got {self.t_warm}, {self.t_total}")
        if not (self.use_L_orig or self.use_L_styl):
            raise ConfigError("at least one task loss must be enabled")
        if len(self.u) != 4 or len(self.v) != 4:
            raise ConfigError("u and v need one weight per encoder stage (4)")
        if not self.texture_layers or any(not 1 <= l <= 4 for l in self.texture_layers):
            raise ConfigError(f"texture_layers must be a non-empty subset of 1..4, got {self.texture_layers}")
        if self.style_resample not in ("iteration", "epoch"):
            raise ConfigError(f"style_resample must be 'iteration' or 'epoch', got {self.style_resample!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.crop_size > self.image_size or self.crop_size % 16:
            raise ConfigError("crop_size must be a multiple of 16 no larger than image_size")
        if not self.domains:
            raise ConfigError("domains must list at least one source domain")
        return self

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj).validate()

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


def ldf(t, t_total):
    """Linear decay factor ``1 - t / t_total``."""
    if not 0 <= t <= t_total:
        raise ContractError(f"t={t} outside [0, {t_total}]")
    return 1.0 - t / t_total


def lr_schedule(t, base, t_warm, t_total):
    """Linear warmup to ``base`` at ``t_warm``, then linear decay to 0 at ``t_total``."""
    if not 0 <= t <= t_total:
        raise ContractError(f"t={t} outside [0, {t_total}]")
    if t < t_warm:
        return base * (t + 1) / t_warm
    return base * (1.0 - (t - t_warm) / (t_total - t_warm))


def task_weights(config):
    if config.use_L_orig and config.use_L_styl:
        return config.alpha_orig, config.alpha_styl
    return (1.0 if config.use_L_orig else 0.0), (1.0 if config.use_L_styl else 0.0)


def total_loss(p_s, p_sr, y, texture_reg, texture_gen, t, config):
    """Weighted objective and a breakdown of raw component values.

    ``p_s``/``p_sr`` are logits (or None when that task loss is disabled);
    ``texture_reg``/``texture_gen`` are scalar Tensors or None. Disabled
    components are never built, so they add nothing to the graph.
    """
    a_orig, a_styl = task_weights(config)
    w = ldf(t, config.t_total) if config.use_LDF else 1.0
    parts = []
    breakdown = {"L_orig": 0.0, "L_styl": 0.0, "L_TR": 0.0, "L_TG": 0.0, "w": w}
    if config.use_L_orig:
        l_orig = ad.cross_entropy(p_s, y)
        breakdown["L_orig"] = l_orig.item()
        parts.append(ad.scale(l_orig, a_orig))
    if config.use_L_styl:
        l_styl = ad.cross_entropy(p_sr, y)
        breakdown["L_styl"] = l_styl.item()
        parts.append(ad.scale(l_styl, a_styl))
    if config.use_L_TR and texture_reg is not None:
        breakdown["L_TR"] = texture_reg.item()
        parts.append(ad.scale(texture_reg, w))
    if config.use_L_TG and texture_gen is not None:
        breakdown["L_TG"] = texture_gen.item()
        parts.append(ad.scale(texture_gen, w))
    if not parts:
        raise ConfigError("every loss component is disabled")
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    breakdown["total"] = total.item()
    return total, breakdown


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamW:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def state_arrays(self):
        out = {"step": np.array([float(self.step_count)])}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    @classmethod
    def from_state_arrays(cls, arrays):
        opt = cls(step_count=int(arrays["step"][0]))
        for k, arr in arrays.items():
            if k.startswith("m/"):
                opt.m[k[2:]] = arr
            elif k.startswith("v/"):
                opt.v[k[2:]] = arr
        return opt


def optimizer_step(state, grads, lr_enc, lr_dec, weight_decay):
    """One AdamW update of the task encoder and decoder.

    ``grads`` maps tensor id -> gradient (as returned by ``backward``).
    Parameters without a gradient still receive decoupled weight decay.
    """
    opt = state.optimizer
    opt.step_count += 1
    k = opt.step_count
    bc1 = 1.0 - opt.beta1 ** k
    bc2 = 1.0 - opt.beta2 ** k
    groups = (("encoder", state.encoder, lr_enc), ("decoder", state.decoder, lr_dec))
    updates = []
    for gname, module, lr in groups:
        for pname, p in module.parameters():
            g = grads.get(p.id)
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise NumericError(
                    f"non-finite gradient for {gname}/{pname} at step {k} "
                    f"(max |g| = {np.nanmax(np.abs(g))}, nan count = {int(np.isnan(g).sum())})"
                )
            key = f"{gname}/{pname}"
            m = opt.m.get(key)
            if m is None:
                m = np.zeros_like(p.data)
                opt.v[key] = np.zeros_like(p.data)
            m = opt.beta1 * m + (1 - opt.beta1) * g
            v = opt.beta2 * opt.v[key] + (1 - opt.beta2) * g * g
            opt.m[key], opt.v[key] = m, v
            new = p.data * (1.0 - lr * weight_decay)
            new = new - lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
            updates.append((module, pname, new))
    for module, pname, new in updates:
        module.set_param(pname, new)
    return state


# ---------------------------------------------------------------------------
# training state and step
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    t: int
    encoder: nets.Encoder
    reference: nets.Encoder
    decoder: nets.Decoder
    optimizer: AdamW
    rng: np.random.Generator
    running: dict = field(default_factory=dict)


def init_state(config):
    """Frozen reference encoder from a dedicated seed; the task encoder starts as its copy."""
    dtype = np.dtype(config.dtype)
    enc_cfg = nets.EncoderConfig(channels=tuple(config.encoder_channels), seed=10_000 + config.seed)
    reference = nets.build_encoder(enc_cfg).astype(dtype).frozen_copy()
    encoder = reference.trainable_copy()
    dec_cfg = nets.DecoderConfig(
        num_classes=config.num_classes, width=config.decoder_width,
        encoder_channels=tuple(config.encoder_channels), seed=20_000 + config.seed,
    )
    decoder = nets.build_decoder(dec_cfg).astype(dtype)
    return TrainState(0, encoder, reference, decoder, AdamW(), np.random.default_rng([config.seed, 0x7A1]))


def _layer_sel(config):
    idx = [l - 1 for l in config.texture_layers]
    return idx, [config.u[i] for i in idx], [config.v[i] for i in idx]


def stylize_images(x_s, x_r, epsilon=DEFAULT_EPSILON):
    return np.stack([wct_transfer(c, extract_stats(s, epsilon), epsilon) for c, s in zip(x_s, x_r)])


def compute_losses(state, x_s, y, x_r, config, x_sr=None):
    """Forward pass of one iteration; returns (total Tensor, breakdown)."""
    dtype = np.dtype(config.dtype)
    if x_sr is None:
        x_sr = stylize_images(x_s, x_r, config.stm_epsilon)
    t_s, t_sr, t_r = (Tensor(a.astype(dtype), dtype=dtype) for a in (x_s, x_sr, x_r))
    size = x_s.shape[-2:]
    idx, u, v = _layer_sel(config)

    need_s = config.use_L_orig or config.use_L_TR or (config.use_L_TG and config.use_RSM and config.use_TEO)
    need_sr = config.use_L_styl or config.use_L_TG
    f_s = nets.encode(state.encoder, t_s) if need_s else None
    f_sr = nets.encode(state.encoder, t_sr) if need_sr else None
    p_s = nets.decode(state.decoder, f_s, size) if config.use_L_orig else None
    p_sr = nets.decode(state.decoder, f_sr, size) if config.use_L_styl else None

    l_tr = l_tg = None
    g_t_s = None
    if config.use_L_TR:
        f_i = nets.encode(state.reference, t_s)
        if config.use_TEO:
            g_t_s = [gram(f_s[i]) for i in idx]
            l_tr = texture_reg_loss([gram(f_i[i]) for i in idx], g_t_s, u)
        else:
            l_tr = raw_feature_consistency([f_i[i] for i in idx], [f_s[i] for i in idx], u)
    if config.use_L_TG:
        f_r = nets.encode(state.encoder, t_r)
        if config.use_TEO:
            g_r = [gram(f_r[i]) for i in idx]
            g_sr = [gram(f_sr[i]) for i in idx]
            if config.use_RSM:
                if g_t_s is None:
                    g_t_s = [gram(f_s[i]) for i in idx]
                masks = [rsm_mask(a, b, config.tau) for a, b in zip(g_sr, g_t_s)]
            else:
                masks = [np.ones(g.shape, dtype=bool) for g in g_sr]
            l_tg = texture_gen_loss(g_r, g_sr, masks, v)
        else:
            l_tg = raw_feature_consistency([f_r[i] for i in idx], [f_sr[i] for i in idx], v)
    return total_loss(p_s, p_sr, y, l_tr, l_tg, state.t, config)


def train_step(state, x_s, y, x_r, config):
    """One iteration: stylize, forward, losses, backward, AdamW, ``t += 1``."""
    if x_s.shape != x_r.shape or y.shape != (x_s.shape[0],) + x_s.shape[2:]:
        raise ContractError(f"inconsistent batch shapes {x_s.shape}, {y.shape}, {x_r.shape}")
    total, breakdown = compute_losses(state, x_s, y, x_r, config)
    grads = ad.backward(total)
    lr_enc = lr_schedule(state.t, config.lr_encoder, config.t_warm, config.t_total)
    lr_dec = lr_schedule(state.t, config.lr_decoder, config.t_warm, config.t_total)
    optimizer_step(state, grads, lr_enc, lr_dec, config.weight_decay)
    breakdown["lr"] = lr_enc
    breakdown["t"] = state.t
    state.t += 1
    return breakdown


# ---------------------------------------------------------------------------
# data feeding
# ---------------------------------------------------------------------------


class BatchSource:
    """Seeded sampler over the union of the training domains and the style pool."""

    def __init__(self, config, sources, styles, rng):
        self.config = config
        self.samples = [s for spec in sources for s in generate_dataset(spec, config.train_size)]
        self.styles = np.stack([s.image for s in styles])
        self.rng = rng
        self._epoch_styles = None
        self._epoch = -1

    def next(self, t):
        cfg = self.config
        idx = self.rng.integers(0, len(self.samples), size=cfg.batch_size)
        x = np.stack([self.samples[i].image for i in idx])
        y = np.stack([self.samples[i].label for i in idx])
        if cfg.style_resample == "epoch":
            epoch = (t * cfg.batch_size) // len(self.samples)
            if epoch != self._epoch:
                self._epoch = epoch
                self._epoch_styles = self.rng.integers(0, len(self.styles), size=len(self.samples))
            sidx = self._epoch_styles[idx]
        else:
            sidx = self.rng.integers(0, len(self.styles), size=cfg.batch_size)
        xr = self.styles[sidx]
        x, y, xr = self._augment(x, y, xr)
        return x, y, xr

    def _augment(self, x, y, xr):
        cfg = self.config
        x, y = x.copy(), y.copy()
        for b in range(len(x)):
            if cfg.augment_flip and self.rng.random() < 0.5:
                x[b], y[b] = x[b][:, :, ::-1], y[b][:, ::-1]
            if cfg.color_jitter:
                gain = self.rng.uniform(0.8, 1.2, size=(3, 1, 1))
                x[b] = np.clip(x[b] * gain + self.rng.uniform(-0.05, 0.05), 0, 1)
        if cfg.random_scale:
            factor = 2 if self.rng.random() < 0.5 else 1
            if factor == 2:
                x = x.repeat(2, axis=2).repeat(2, axis=3)
                y = y.repeat(2, axis=1).repeat(2, axis=2)
        c = cfg.crop_size
        h, w = x.shape[2:]
        if c < h or c < w:
            oy, ox = self.rng.integers(0, h - c + 1), self.rng.integers(0, w - c + 1)
            x, y = x[:, :, oy:oy + c, ox:ox + c], y[:, oy:oy + c, ox:ox + c]
            xr = xr[:, :, :c, :c]
        return np.ascontiguousarray(x), np.ascontiguousarray(y), xr


def resolve_domains(config):
    """(training specs, held-out target specs) for ``config.domains``."""
    source, targets = make_domain_pair(config.data_seed, config.n_targets, size=config.image_size)
    by_name = {source.name: source, **{t.name: t for t in targets}}
    unknown = [d for d in config.domains if d not in by_name]
    if unknown:
        raise ConfigError(f"unknown domains {unknown}; available: {sorted(by_name)}")
    train = [by_name[d] for d in config.domains]
    held_out = [t for t in targets if t.name not in config.domains]
    return train, held_out


def _fmt(x):
    return repr(float(x))


def evaluate_all(state, domains, config, t, metrics_path=None):
    results = [evaluate(state.encoder, state.decoder, d, config.eval_samples, seed=0) for d in domains]
    if metrics_path:
        for r in results:
            write_metrics_row(metrics_path, t, r)
    return results


def run_training(config, out_dir, domains=None, styles=None, progress=None):
    """Train for ``t_total`` steps (or until ``early_stop_at``).

    Writes ``losses.csv``, ``metrics.csv``, per-domain confusion CSVs and
    ``checkpoint.bin`` into ``out_dir``; returns the final state and the last
    evaluation results.
    """
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    train_specs, held_out = domains if domains is not None else resolve_domains(config)
    if styles is None:
        styles = style_pool(config.style_pool_size, base_seed=config.data_seed, size=config.image_size)
    state = init_state(config)
    feed = BatchSource(config, train_specs, styles, np.random.default_rng([config.seed, 0xBA7]))
    losses_path = os.path.join(out_dir, "losses.csv")
    metrics_path = os.path.join(out_dir, "metrics.csv")
    for p in (losses_path, metrics_path):
        if os.path.exists(p):
            os.remove(p)
    eval_domains = list(held_out)
    stop = config.t_total if config.early_stop_at is None else min(config.early_stop_at, config.t_total)
    acc = {k: 0.0 for k in LOSS_FIELDS[1:5]}
    n_acc = 0
    results = []
    with open(losses_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_FIELDS)
        while state.t < stop:
            x, y, xr = feed.next(state.t)
            b = train_step(state, x, y, xr, config)
            for k in acc:
                acc[k] += b[k]
            n_acc += 1
            if state.t % config.log_every == 0 or state.t == stop:
                writer.writerow([b["t"]] + [_fmt(acc[k] / n_acc) for k in acc] + [_fmt(b["w"]), _fmt(b["lr"])])
                acc = {k: 0.0 for k in acc}
                n_acc = 0
            if progress is not None:
                progress(state.t, b)
            if eval_domains and config.eval_every and state.t % config.eval_every == 0 and state.t < stop:
                evaluate_all(state, eval_domains, config, state.t, metrics_path)
    if eval_domains:
        results = evaluate_all(state, eval_domains, config, state.t, metrics_path)
        for r in results:
            write_confusion_csv(os.path.join(out_dir, f"confusion_{r.domain}.csv"), r.confusion)
    nets.save_checkpoint(
        os.path.join(out_dir, "checkpoint.bin"),
        {"encoder": state.encoder, "decoder": state.decoder, "reference": state.reference},
        state.optimizer.state_arrays(),
        iteration=state.t,
        extra={"config": json.loads(config.to_json())},
    )
    return state, results


def load_trained(path):
    """(encoder, decoder, reference, manifest) from a training checkpoint."""
    models, optim, manifest = nets.load_checkpoint(path)
    return models["encoder"], models["decoder"], models.get("reference"), manifest
