"""PPM/PGM read/write plus PNG through Pillow."""

import os

import numpy as np

from tldrseg.errors import FormatError


def _to_uint8(image):
    arr = np.asarray(image, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def write_image(path, image):
    """Write a 3×H×W float image in [0, 1]; format picked from the suffix."""
    hwc = _to_uint8(image).transpose(1, 2, 0)
    if str(path).lower().endswith(".png"):
        from PIL import Image

        Image.fromarray(hwc, "RGB").save(path)
        return
    h, w, _ = hwc.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(hwc.tobytes())


def write_label(path, label):
    """Write an integer label map as binary PGM (or PNG)."""
    arr = np.asarray(label).astype(np.uint8)
    if str(path).lower().endswith(".png"):
        from PIL import Image

        Image.fromarray(arr, "L").save(path)
        return
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


def _read_netpbm(buf):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated netpbm header", pos)
        tokens.append(buf[start:pos])
    pos += 1
    magic = tokens[0]
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"only 8-bit netpbm supported (maxval {maxval})", pos)
    channels = {b"P6": 3, b"P5": 1}.get(magic)
    if channels is None:
        raise FormatError(f"unsupported netpbm magic {magic!r}", 0)
    need = w * h * channels
    if len(buf) - pos < need:
        raise FormatError("truncated netpbm payload", len(buf))
    return np.frombuffer(buf[pos:pos + need], dtype=np.uint8).reshape(h, w, channels)


def read_image(path):
    """Read PPM/PNG as a 3×H×W float image in [0, 1]."""
    if str(path).lower().endswith(".png"):
        from PIL import Image

        hwc = np.asarray(Image.open(path).convert("RGB"))
    else:
        with open(path, "rb") as fh:
            hwc = _read_netpbm(fh.read())
        if hwc.shape[2] == 1:
            hwc = np.repeat(hwc, 3, axis=2)
    return hwc.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_label(path):
    if str(path).lower().endswith(".png"):
        from PIL import Image

        return np.asarray(Image.open(path)).astype(np.int64)
    with open(path, "rb") as fh:
        return _read_netpbm(fh.read())[:, :, 0].astype(np.int64)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
