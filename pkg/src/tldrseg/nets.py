"""Small convolutional encoder/decoder and checkpoint I/O.

The encoder has four stages of ``conv3x3/stride 2 -> relu`` (or
``conv3x3 -> relu -> max-pool2``); each stage
output is one entry of the feature stack, so stage ``l`` (1-based) has spatial
size ``H / 2**l``. The decoder fuses the deepest map with a skip from stage 2
and upsamples logits back to the input resolution.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from tldrseg import autodiff as ad
from tldrseg.autodiff import Tensor
from tldrseg.errors import ConfigError, ContractError, DimensionError, FormatError, IncompatibleVersionError

NUM_STAGES = 4
CHECKPOINT_MAGIC = b"TLDRCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    in_channels: int = 3
    channels: tuple = (8, 16, 32, 64)
    seed: int = 0
    downsample: str = "stride"  # "stride" (3x3 stride-2 conv) or "maxpool"
    input_mean: tuple = (0.485, 0.456, 0.406)
    input_std: tuple = (0.229, 0.224, 0.225)

    def validate(self):
        if self.downsample not in ("stride", "maxpool"):
            raise ConfigError(f"unknown downsample mode {self.downsample!r}")
        if len(self.channels) != NUM_STAGES:
            raise ConfigError(f"encoder needs exactly {NUM_STAGES} stages, got {len(self.channels)}")
        if self.in_channels <= 0 or any(int(c) <= 0 for c in self.channels):
            raise ConfigError(f"channel counts must be positive: {self.in_channels}, {self.channels}")


@dataclass
class DecoderConfig:
    num_classes: int = 5
    width: int = 32
    skip_stage: int = 2
    encoder_channels: tuple = (8, 16, 32, 64)
    seed: int = 0
    zero_head: bool = True

    def validate(self):
        if self.num_classes < 2 or self.width <= 0:
            raise ConfigError(f"invalid decoder config {self}")
        if not 1 <= self.skip_stage < NUM_STAGES:
            raise ConfigError(f"skip_stage must be in [1, {NUM_STAGES - 1}]")


def _he(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class _Module:
    """Named parameter container; frozen modules refuse updates."""

    def __init__(self, params, frozen=False):
        self.params = params
        self.frozen = frozen

    def parameters(self):
        return list(self.params.items())

    def set_param(self, name, values):
        if self.frozen:
            raise ContractError(f"{type(self).__name__} is frozen; refusing update of {name!r}")
        old = self.params[name]
        if values.shape != old.shape:
            raise DimensionError(f"{name}: new shape {values.shape} != {old.shape}")
        self.params[name] = Tensor(values, requires_grad=True, dtype=old.dtype)

    def state_arrays(self):
        return {k: v.data for k, v in self.params.items()}

    def astype(self, dtype):
        for k, v in self.params.items():
            self.params[k] = Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, dtype=dtype)
        return self


class Encoder(_Module):
    def __init__(self, config, params, frozen=False):
        super().__init__(params, frozen)
        self.config = config

    def frozen_copy(self):
        """Detached, frozen clone sharing no parameter objects."""
        params = {k: Tensor(v.data.copy(), dtype=v.dtype) for k, v in self.params.items()}
        return Encoder(self.config, params, frozen=True)

    def trainable_copy(self):
        params = {k: Tensor(v.data.copy(), requires_grad=True, dtype=v.dtype) for k, v in self.params.items()}
        return Encoder(self.config, params, frozen=False)


class Decoder(_Module):
    def __init__(self, config, params, frozen=False):
        super().__init__(params, frozen)
        self.config = config


def build_encoder(config):
    """He-initialised encoder, deterministic in ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = {}
    cin = config.in_channels
    for i, cout in enumerate(config.channels, start=1):
        params[f"stage{i}.weight"] = Tensor(_he(rng, (cout, cin, 3, 3)), requires_grad=True)
        params[f"stage{i}.bias"] = Tensor(np.zeros(cout), requires_grad=True)
        cin = cout
    return Encoder(config, params)


def build_decoder(config):
    config.validate()
    rng = np.random.default_rng(config.seed)
    deep = config.encoder_channels[-1]
    skip = config.encoder_channels[config.skip_stage - 1]
    d, k = config.width, config.num_classes
    head = np.zeros((k, d, 1, 1)) if config.zero_head else _he(rng, (k, d, 1, 1))
    params = {
        "deep.weight": Tensor(_he(rng, (d, deep, 3, 3)), requires_grad=True),
        "deep.bias": Tensor(np.zeros(d), requires_grad=True),
        "skip.weight": Tensor(_he(rng, (d, skip, 1, 1)), requires_grad=True),
        "skip.bias": Tensor(np.zeros(d), requires_grad=True),
        "head.weight": Tensor(head, requires_grad=True),
        "head.bias": Tensor(np.zeros(k), requires_grad=True),
    }
    return Decoder(config, params)


def _as_batch(image):
    if isinstance(image, Tensor):
        return image if image.ndim == 4 else ad.reshape(image, (1,) + image.shape)
    arr = np.asarray(image)
    return Tensor(arr if arr.ndim == 4 else arr[None])


def encode(encoder, image):
    """Run the encoder; returns the list of 4 stage outputs (N×C_l×H_l×W_l).

    A 3-D ``image`` is treated as a batch of one. Frozen encoders use
    constant parameters, so their outputs never carry parameter gradients.
    """
    x = _as_batch(image)
    h, w = x.shape[2:]
    if h % 2 ** NUM_STAGES or w % 2 ** NUM_STAGES:
        raise DimensionError(f"spatial size {h}×{w} not divisible by {2 ** NUM_STAGES}")
    if x.shape[1] != encoder.config.in_channels:
        raise DimensionError(f"expected {encoder.config.in_channels} input channels, got {x.shape[1]}")
    cfg = encoder.config
    mean = np.asarray(cfg.input_mean, dtype=x.dtype)
    std = np.asarray(cfg.input_std, dtype=x.dtype)
    if mean.any() or (std != 1).any():
        # per-channel (x - mean) / std as a fixed 1x1 conv keeps it differentiable
        w = Tensor(np.diag(1.0 / std)[:, :, None, None], dtype=x.dtype)
        b = Tensor(-mean / std, dtype=x.dtype)
        x = ad.conv2d(x, w, b)
    p = encoder.params
    stack = []
    pooled = cfg.downsample == "maxpool"
    for i in range(1, NUM_STAGES + 1):
        x = ad.conv2d(x, p[f"stage{i}.weight"], p[f"stage{i}.bias"], stride=1 if pooled else 2, pad=1)
        x = ad.relu(x)
        if pooled:
            x = ad.max_pool2(x)
        stack.append(x)
    return stack


def decode(decoder, features, size=None):
    """Logits N×K×H×W. ``size`` defaults to 2**L times the stage-1 size / 2."""
    cfg = decoder.config
    if len(features) != NUM_STAGES:
        raise DimensionError(f"decoder expects {NUM_STAGES} feature maps, got {len(features)}")
    deep, skip = features[-1], features[cfg.skip_stage - 1]
    p = decoder.params
    if deep.shape[1] != p["deep.weight"].shape[1] or skip.shape[1] != p["skip.weight"].shape[1]:
        raise DimensionError(
            f"feature channels ({skip.shape[1]}, {deep.shape[1]}) do not match decoder "
            f"({p['skip.weight'].shape[1]}, {p['deep.weight'].shape[1]})"
        )
    if size is None:
        size = (features[0].shape[2] * 2, features[0].shape[3] * 2)
    d = ad.relu(ad.conv2d(deep, p["deep.weight"], p["deep.bias"], pad=1))
    d = ad.upsample(d, skip.shape[2:])
    s = ad.conv2d(skip, p["skip.weight"], p["skip.bias"])
    fused = ad.relu(d + s)
    logits = ad.conv2d(fused, p["head.weight"], p["head.bias"])
    return ad.upsample(logits, size)


def predict(encoder, decoder, images):
    """Argmax labels for a batch of images (no graph recorded)."""
    feats = encode(encoder, Tensor(np.asarray(images)))
    logits = decode(decoder, feats, size=np.asarray(images).shape[-2:])
    return logits.data.argmax(axis=1)


# ---------------------------------------------------------------------------
# checkpoints: magic, uint64 manifest length, JSON manifest, float64 payloads
# ---------------------------------------------------------------------------


def save_checkpoint(path, models, optimizer_state=None, iteration=0, extra=None):
    """Write ``models`` (name -> Encoder/Decoder) plus optimizer moments.

    ``optimizer_state`` is a mapping of name -> array (already flattened by the
    caller). The manifest records architecture, seeds and iteration.
    """
    arrays = []
    table = []
    offset = 0
    arch = {}
    for mname, model in models.items():
        arch[mname] = {
            "type": type(model).__name__,
            "config": _config_json(model.config),
            "frozen": model.frozen,
        }
        for pname, t in model.params.items():
            arrays.append(t.data)
            nbytes = t.data.size * 8
            table.append({"name": f"{mname}/{pname}", "shape": list(t.data.shape), "offset": offset, "nbytes": nbytes})
            offset += nbytes
    for sname, arr in (optimizer_state or {}).items():
        arr = np.asarray(arr, dtype=np.float64)
        arrays.append(arr)
        nbytes = arr.size * 8
        table.append({"name": f"optim/{sname}", "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    manifest = {
        "version": CHECKPOINT_VERSION,
        "iteration": int(iteration),
        "architecture": arch,
        "tensors": table,
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _config_json(cfg):
    out = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`.

    Returns ``(models, optimizer_state, manifest)``.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)", 0)
    if len(buf) < 16:
        raise FormatError("truncated manifest length", 8)
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    if len(buf) < 16 + hlen:
        raise FormatError("truncated manifest", 16)
    try:
        manifest = json.loads(buf[16:16 + hlen])
    except ValueError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}", 16) from None
    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise IncompatibleVersionError(f"checkpoint version {version!r}, this build reads {CHECKPOINT_VERSION}", 16)
    base = 16 + hlen
    arrays = {}
    for entry in manifest["tensors"]:
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(buf):
            raise FormatError(f"payload for {entry['name']} truncated", len(buf))
        arr = np.frombuffer(buf[start:end], dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        arrays[entry["name"]] = arr
    expected = base + sum(e["nbytes"] for e in manifest["tensors"])
    if expected != len(buf):
        raise FormatError("trailing bytes after payload", expected)
    models = {}
    for mname, info in manifest["architecture"].items():
        cfg = info["config"]
        if info["type"] == "Encoder":
            config = EncoderConfig(**{**cfg, **{k: tuple(cfg[k]) for k in ("channels", "input_mean", "input_std")}})
            cls = Encoder
        elif info["type"] == "Decoder":
            config = DecoderConfig(**{**cfg, "encoder_channels": tuple(cfg["encoder_channels"])})
            cls = Decoder
        else:
            raise FormatError(f"unknown model type {info['type']!r}", 16)
        prefix = mname + "/"
        params = {
            k[len(prefix):]: Tensor(v, requires_grad=not info["frozen"])
            for k, v in arrays.items()
            if k.startswith(prefix)
        }
        models[mname] = cls(config, params, frozen=info["frozen"])
    optim = {k[len("optim/"):]: v for k, v in arrays.items() if k.startswith("optim/")}
    return models, optim, manifest
