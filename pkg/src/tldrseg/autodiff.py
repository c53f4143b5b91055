"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors wrap a numpy array. Every primitive applied to an input that requires
gradients creates a graph node stamped with a monotonically increasing sequence
number, so sorting reachable nodes by that number recovers the forward
application order (the tape). ``backward`` walks the tape once in reverse.

Only the primitives listed in ``PRIMITIVES`` exist. There is no implicit
broadcasting: element-wise binary ops require identical shapes and a scalar
factor goes through ``scalar-mul``.
"""

import itertools
import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from tldrseg.errors import ContractError, DimensionError, LabelError, DegenerateBatchError, NumericError, FormatError

_ids = itertools.count()
_seq = itertools.count()

DEFAULT_DTYPE = np.float64


def _check_finite(arr, what):
    # sum() is cheaper than isfinite().all() and still surfaces nan/inf
    if not np.isfinite(arr.sum()):
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite value in {what}")


class Tensor:
    """An n-dimensional value participating in reverse-mode differentiation.

    ``data`` is treated as immutable once the tensor exists. ``grad`` is filled
    in by :func:`backward` for leaf tensors that require gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "id")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        elif dtype is None and arr.dtype != np.float32:
            arr = arr.astype(DEFAULT_DTYPE, copy=False)
        _check_finite(arr, "tensor data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self):
        """Same values, cut from the graph."""
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # thin operator sugar over apply()
    def __add__(self, other):
        return apply("add", [self, other])

    def __sub__(self, other):
        return apply("sub", [self, other])

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return apply("mul-elementwise", [self, other])
        return apply("scalar-mul", [self], {"scalar": float(other)})

    __rmul__ = __mul__

    def __matmul__(self, other):
        return apply("matmul", [self, other])


def _not_scalar(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


@dataclass
class Node:
    kind: str
    inputs: list
    attrs: dict
    ctx: object
    seq: int = field(default_factory=lambda: next(_seq))
    consumed: bool = False


@dataclass
class Tape:
    """Nodes reachable from a root, in forward application order."""

    nodes: list

    @classmethod
    def from_root(cls, root):
        seen = {}
        stack = [root]
        while stack:
            t = stack.pop()
            node = t.node
            if node is None or id(node) in seen:
                continue
            seen[id(node)] = node
            stack.extend(node.inputs)
        return cls(sorted(seen.values(), key=lambda n: n.seq))

    def __len__(self):
        return len(self.nodes)


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------


class Primitive:
    """Forward/backward pair for one op kind.

    ``forward(arrays, attrs) -> (out, ctx)``; ``backward(g, ctx, arrays,
    attrs, needs) -> list of input gradients`` (``None`` where not needed).
    """

    def __init__(self, kind, forward, backward, arity):
        self.kind = kind
        self.forward = forward
        self.backward = backward
        self.arity = arity


PRIMITIVES = {}


def primitive(kind, arity):
    def register(cls):
        PRIMITIVES[kind] = Primitive(kind, cls.forward, cls.backward, arity)
        return cls

    return register


def apply(kind, inputs, attrs=None):
    """Apply primitive ``kind`` to ``inputs`` and record it when needed."""
    prim = PRIMITIVES.get(kind)
    if prim is None:
        raise ContractError(f"unknown primitive {kind!r}")
    attrs = dict(attrs or {})
    inputs = list(inputs)
    lo, hi = prim.arity
    if not lo <= len(inputs) <= hi:
        raise ContractError(f"{kind} takes {lo}..{hi} inputs, got {len(inputs)}")
    for t in inputs:
        if not isinstance(t, Tensor):
            raise ContractError(f"{kind} inputs must be Tensors, got {type(t).__name__}")
    arrays = [t.data for t in inputs]
    # overflow is reported as NumericError just below, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        out_data, ctx = prim.forward(arrays, attrs)
    _check_finite(out_data, f"output of {kind}")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.id = next(_ids)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.node = Node(kind, inputs, attrs, ctx) if out.requires_grad else None
    return out


def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


@primitive("add", (2, 2))
class _Add:
    def forward(arrays, attrs):
        a, b = arrays
        _same_shape("add", a, b)
        return a + b, None

    def backward(g, ctx, arrays, attrs, needs):
        return [g if needs[0] else None, g if needs[1] else None]


@primitive("sub", (2, 2))
class _Sub:
    def forward(arrays, attrs):
        a, b = arrays
        _same_shape("sub", a, b)
        return a - b, None

    def backward(g, ctx, arrays, attrs, needs):
        return [g if needs[0] else None, -g if needs[1] else None]


@primitive("mul-elementwise", (2, 2))
class _Mul:
    def forward(arrays, attrs):
        a, b = arrays
        _same_shape("mul-elementwise", a, b)
        return a * b, None

    def backward(g, ctx, arrays, attrs, needs):
        a, b = arrays
        return [g * b if needs[0] else None, g * a if needs[1] else None]


@primitive("scalar-mul", (1, 1))
class _ScalarMul:
    def forward(arrays, attrs):
        return arrays[0] * attrs["scalar"], None

    def backward(g, ctx, arrays, attrs, needs):
        return [g * attrs["scalar"]]


@primitive("relu", (1, 1))
class _Relu:
    def forward(arrays, attrs):
        x = arrays[0]
        mask = x > 0
        return x * mask, mask

    def backward(g, mask, arrays, attrs, needs):
        return [g * mask]


@primitive("reshape", (1, 1))
class _Reshape:
    def forward(arrays, attrs):
        x = arrays[0]
        shape = tuple(attrs["shape"])
        if int(np.prod(shape)) != x.size:
            raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
        return x.reshape(shape), None

    def backward(g, ctx, arrays, attrs, needs):
        return [g.reshape(arrays[0].shape)]


@primitive("transpose", (1, 1))
class _Transpose:
    def forward(arrays, attrs):
        x = arrays[0]
        axes = attrs.get("axes")
        if axes is None:
            if x.ndim < 2:
                raise DimensionError(f"transpose needs >= 2 dims, got {x.shape}")
            axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
        axes = tuple(axes)
        if sorted(axes) != list(range(x.ndim)):
            raise DimensionError(f"transpose: axes {axes} invalid for shape {x.shape}")
        return np.ascontiguousarray(x.transpose(axes)), axes

    def backward(g, axes, arrays, attrs, needs):
        return [g.transpose(np.argsort(axes))]


@primitive("matmul", (2, 2))
class _Matmul:
    def forward(arrays, attrs):
        a, b = arrays
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
        return a @ b, None

    def backward(g, ctx, arrays, attrs, needs):
        a, b = arrays
        return [g @ b.T if needs[0] else None, a.T @ g if needs[1] else None]


@primitive("batched-matmul", (2, 2))
class _BatchedMatmul:
    def forward(arrays, attrs):
        a, b = arrays
        if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise DimensionError(f"batched-matmul: shape mismatch {a.shape} vs {b.shape}")
        return np.matmul(a, b), None

    def backward(g, ctx, arrays, attrs, needs):
        a, b = arrays
        ga = np.matmul(g, b.transpose(0, 2, 1)) if needs[0] else None
        gb = np.matmul(a.transpose(0, 2, 1), g) if needs[1] else None
        return [ga, gb]


def _axis(attrs, ndim):
    axis = attrs.get("axis")
    if axis is None:
        return None
    axis = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


@primitive("sum", (1, 1))
class _Sum:
    def forward(arrays, attrs):
        x = arrays[0]
        return np.asarray(x.sum(axis=_axis(attrs, x.ndim))), None

    def backward(g, ctx, arrays, attrs, needs):
        x = arrays[0]
        return [np.array(_expand_reduced(g, x.shape, _axis(attrs, x.ndim)))]


@primitive("mean", (1, 1))
class _Mean:
    def forward(arrays, attrs):
        x = arrays[0]
        return np.asarray(x.mean(axis=_axis(attrs, x.ndim))), None

    def backward(g, ctx, arrays, attrs, needs):
        x = arrays[0]
        axis = _axis(attrs, x.ndim)
        count = x.size if axis is None else int(np.prod([x.shape[a] for a in axis]))
        return [np.array(_expand_reduced(g, x.shape, axis)) / count]


@primitive("frobenius-norm", (1, 1))
class _Frobenius:
    def forward(arrays, attrs):
        x = arrays[0]
        n = np.sqrt(np.sum(x * x))
        return np.asarray(n), n

    def backward(g, n, arrays, attrs, needs):
        x = arrays[0]
        if n == 0:
            # subgradient 0 at the origin
            return [np.zeros_like(x)]
        return [g * x / n]


def _pool_view(x, kind):
    if x.ndim != 4:
        raise DimensionError(f"{kind} expects N×C×H×W, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"{kind}: spatial size {h}×{w} not divisible by 2")
    return x.reshape(n, c, h // 2, 2, w // 2, 2)


_POOL_TAPS = ((0, 0), (0, 1), (1, 0), (1, 1))


@primitive("max-pool2", (1, 1))
class _MaxPool2:
    def forward(arrays, attrs):
        x = arrays[0]
        _pool_view(x, "max-pool2")
        taps = [x[:, :, i::2, j::2] for i, j in _POOL_TAPS]
        out = np.maximum(np.maximum(taps[0], taps[1]), np.maximum(taps[2], taps[3]))
        # first tap attaining the max receives the gradient
        taken = np.zeros(out.shape, dtype=bool)
        winners = []
        for tap in taps:
            win = (tap == out) & ~taken
            taken |= win
            winners.append(win)
        return out, winners

    def backward(g, winners, arrays, attrs, needs):
        gx = np.zeros(arrays[0].shape, dtype=g.dtype)
        for (i, j), win in zip(_POOL_TAPS, winners):
            gx[:, :, i::2, j::2] = g * win
        return [gx]


@primitive("avg-pool2", (1, 1))
class _AvgPool2:
    def forward(arrays, attrs):
        v = _pool_view(arrays[0], "avg-pool2")
        return v.mean(axis=(3, 5)), None

    def backward(g, ctx, arrays, attrs, needs):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        return [gx]


@lru_cache(maxsize=64)
def _interp_matrix(n_out, n_in):
    """Half-pixel-centre linear interpolation weights, shape n_out×n_in."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    m.setflags(write=False)
    return m


@primitive("bilinear-upsample", (1, 1))
class _Upsample:
    def forward(arrays, attrs):
        x = arrays[0]
        if x.ndim != 4:
            raise DimensionError(f"bilinear-upsample expects N×C×H×W, got {x.shape}")
        ho, wo = attrs["size"]
        mh = _interp_matrix(int(ho), x.shape[2]).astype(x.dtype, copy=False)
        mw = _interp_matrix(int(wo), x.shape[3]).astype(x.dtype, copy=False)
        out = np.matmul(np.matmul(mh, x), mw.T)
        return out, (mh, mw)

    def backward(g, ctx, arrays, attrs, needs):
        mh, mw = ctx
        return [np.matmul(np.matmul(mh.T, g), mw)]


@primitive("conv2d", (2, 3))
class _Conv2d:
    """Cross-correlation; inputs (x N×Cin×H×W, w Cout×Cin×kh×kw[, bias Cout])."""

    def forward(arrays, attrs):
        x, w = arrays[0], arrays[1]
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
        if len(arrays) == 3 and arrays[2].shape != (w.shape[0],):
            raise DimensionError(f"conv2d: bias {arrays[2].shape} does not match kernel {w.shape}")
        stride = int(attrs.get("stride", 1))
        pad = int(attrs.get("pad", 0))
        n, cin, h, wd = x.shape
        cout, _, kh, kw = w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (wd + 2 * pad - kw) // stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"conv2d: kernel {w.shape} larger than padded input {xp.shape}")
        # patch buffer laid out N×Cin×kh×kw×Ho×Wo so it reshapes to the
        # weight's (Cin·kh·kw) ordering without a copy
        cols = np.empty((n, cin, kh, kw, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
        cols = cols.reshape(n, cin * kh * kw, ho * wo)
        out = np.matmul(w.reshape(cout, -1), cols)
        if len(arrays) == 3:
            out += arrays[2][None, :, None]
        return out.reshape(n, cout, ho, wo), (cols, xp.shape)

    def backward(g, ctx, arrays, attrs, needs):
        cols, xp_shape = ctx
        w = arrays[1]
        stride = int(attrs.get("stride", 1))
        pad = int(attrs.get("pad", 0))
        cout, cin, kh, kw = w.shape
        n, _, ho, wo = g.shape
        gm = g.reshape(n, cout, ho * wo)
        grads = [None, None, None]
        if needs[1]:
            grads[1] = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if len(arrays) == 3 and needs[2]:
            grads[2] = gm.sum(axis=(0, 2))
        if needs[0]:
            gcols = np.matmul(w.reshape(cout, -1).T, gm).reshape(n, cin, kh, kw, ho, wo)
            gxp = np.zeros(xp_shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
            grads[0] = gxp[:, :, pad:xp_shape[2] - pad, pad:xp_shape[3] - pad] if pad else gxp
        return grads[: len(arrays)]


@primitive("cross-entropy", (1, 1))
class _CrossEntropy:
    def forward(arrays, attrs):
        logits = arrays[0]
        labels = attrs["labels"]
        ignore = attrs["ignore_index"]
        z = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - logsum
        valid = labels != ignore
        safe = np.where(valid, labels, 0)
        picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
        count = int(valid.sum())
        loss = -(picked * valid).sum() / count
        return np.asarray(loss, dtype=logits.dtype), (logp, safe, valid, count)

    def backward(g, ctx, arrays, attrs, needs):
        logp, safe, valid, count = ctx
        grad = np.exp(logp)
        onehot = np.zeros_like(grad)
        np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
        grad = (grad - onehot) * valid[:, None] * (g / count)
        return [grad]


def cross_entropy(logits, labels, ignore_index=255):
    """Mean pixel cross-entropy over non-ignored pixels.

    ``logits`` is N×C×H×W (or C×H×W for a single item); ``labels`` an integer
    array of the matching N×H×W (or H×W) shape.
    """
    labels = np.asarray(labels)
    if logits.ndim == 3:
        logits = apply("reshape", [logits], {"shape": (1,) + logits.shape})
        labels = labels[None]
    if labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.dtype.kind not in "iu":
        raise LabelError(f"labels must be integers, got dtype {labels.dtype}")
    valid = labels != ignore_index
    if not valid.any():
        raise DegenerateBatchError("every pixel carries ignore_index")
    k = logits.shape[1]
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        raise LabelError(f"label {int(labels[bad][0])} outside [0, {k})")
    return apply("cross-entropy", [logits], {"labels": labels.astype(np.int64), "ignore_index": ignore_index})


def conv2d(x, w, b=None, stride=1, pad=0):
    inputs = [x, w] if b is None else [x, w, b]
    return apply("conv2d", inputs, {"stride": stride, "pad": pad})


def relu(x):
    return apply("relu", [x])


def max_pool2(x):
    return apply("max-pool2", [x])


def avg_pool2(x):
    return apply("avg-pool2", [x])


def upsample(x, size):
    return apply("bilinear-upsample", [x], {"size": tuple(size)})


def matmul(a, b):
    return apply("matmul", [a, b])


def bmm(a, b):
    return apply("batched-matmul", [a, b])


def transpose(x, axes=None):
    return apply("transpose", [x], {"axes": axes})


def reshape(x, shape):
    return apply("reshape", [x], {"shape": tuple(shape)})


def scale(x, scalar):
    return apply("scalar-mul", [x], {"scalar": float(scalar)})


def sum_(x, axis=None):
    return apply("sum", [x], {"axis": axis})


def mean(x, axis=None):
    return apply("mean", [x], {"axis": axis})


def frobenius_norm(x):
    return apply("frobenius-norm", [x])


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss):
    """Reverse-mode sweep from scalar ``loss``.

    Returns ``{tensor.id: gradient array}`` for every tensor on the tape that
    requires gradients, and accumulates into ``.grad`` of leaf tensors.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
    grads = {loss.id: np.ones_like(loss.data)}
    if loss.node is None:
        if not loss.requires_grad:
            raise ContractError("loss is not on the tape (no input requires gradients)")
        loss.grad = grads[loss.id] if loss.grad is None else loss.grad + grads[loss.id]
        return grads
    tape = Tape.from_root(loss)
    # map node -> its output tensor id; outputs are discovered through inputs
    out_id = {id(loss.node): loss.id}
    leaves = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.node is not None:
                out_id[id(t.node)] = t.id
            elif t.requires_grad:
                leaves[t.id] = t
    for node in reversed(tape.nodes):
        if node.consumed:
            raise ContractError("graph already consumed by an earlier backward()")
        g = grads.get(out_id[id(node)])
        if g is None:
            continue
        needs = [t.requires_grad for t in node.inputs]
        prim = PRIMITIVES[node.kind]
        in_grads = prim.backward(g, node.ctx, [t.data for t in node.inputs], node.attrs, needs)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            prev = grads.get(t.id)
            grads[t.id] = gi if prev is None else prev + gi
    for node in tape.nodes:
        node.consumed = True
        node.ctx = None
    for tid, t in leaves.items():
        if tid in grads:
            t.grad = grads[tid] if t.grad is None else t.grad + grads[tid]
    return grads


def finite_difference_check(function, x, epsilon=1e-6):
    """Largest ``|analytic - central difference| / max(1, |analytic|)``.

    ``function`` maps a Tensor to a scalar Tensor and must be deterministic.
    """
    if not 0 < epsilon <= 1e-2:
        raise ContractError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = function(leaf)
    if out.node is None:
        analytic = np.zeros_like(base)
    else:
        analytic = backward(out).get(leaf.id, np.zeros_like(base))
    worst = 0.0
    flat = base.reshape(-1)
    for i in range(flat.size):
        plus = flat.copy()
        plus[i] += epsilon
        minus = flat.copy()
        minus[i] -= epsilon
        fp = function(Tensor(plus.reshape(base.shape))).item()
        fm = function(Tensor(minus.reshape(base.shape))).item()
        numeric = (fp - fm) / (2 * epsilon)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


# ---------------------------------------------------------------------------
# serialization: uint32 header length, JSON header, little-endian float64 payload
# ---------------------------------------------------------------------------


def tensor_to_bytes(t):
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    header = json.dumps({"shape": list(arr.shape), "dtype": "<f8"}).encode()
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return struct.pack("<I", len(header)) + header + payload


def tensor_from_bytes(buf, offset=0):
    """Decode one tensor starting at ``offset``; returns ``(Tensor, end)``."""
    if len(buf) - offset < 4:
        raise FormatError("truncated tensor header length", offset)
    (hlen,) = struct.unpack_from("<I", buf, offset)
    start = offset + 4
    if len(buf) - start < hlen:
        raise FormatError("truncated tensor header", start)
    try:
        header = json.loads(bytes(buf[start:start + hlen]))
        shape = tuple(int(s) for s in header["shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad tensor header: {exc}", start) from None
    if header.get("dtype") != "<f8":
        raise FormatError(f"unsupported dtype {header.get('dtype')!r}", start)
    start += hlen
    nbytes = 8 * int(np.prod(shape))
    if len(buf) - start < nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes", start)
    arr = np.frombuffer(bytes(buf[start:start + nbytes]), dtype="<f8").reshape(shape)
    return Tensor(arr.astype(np.float64)), start + nbytes


def save_tensor(t, path):
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def load_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    t, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after tensor payload", end)
    return t
