"""Dense f64 tensors with reverse-mode automatic differentiation.

Deliberately small: numpy forward math, one backward closure per op, reverse
topological accumulation. Broadcasting is restricted to suffix alignment
(a trailing-shape operand expands over leading batch axes); anything else
needs an explicit reshape, which keeps gradient bookkeeping obvious.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadInputError, ShapeError

_TCK_MAGIC = b"TCK1"
_TCK_VERSION = 1


class Tensor:
    """Value node in a computation graph.

    data is always a float64 ndarray. grad is filled by backward() and has
    the same shape. Non-leaf tensors keep their parents and a closure that
    routes the upstream gradient to them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False,
                 _parents=(), _bw=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents)
        self._parents = _parents
        self._bw = _bw

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int)
                       else shape[0])

    def backward(self):
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    return Tensor(data)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _suffix_expand_ok(big, small) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum the gradient over axes that were expanded by suffix broadcast."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _binary_shapes(a: Tensor, b: Tensor, opname: str):
    if a.shape == b.shape:
        return
    if _suffix_expand_ok(a.shape, b.shape) or _suffix_expand_ok(b.shape, a.shape):
        return
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data, _parents=(a, b),
                 _bw=lambda g: (_accum(a, _unbroadcast(g, a.shape)),
                                _accum(b, _unbroadcast(g, b.shape))))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "sub")
    return Tensor(a.data - b.data, _parents=(a, b),
                  _bw=lambda g: (_accum(a, _unbroadcast(g, a.shape)),
                                 _accum(b, _unbroadcast(-g, b.shape))))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "mul")
    return Tensor(a.data * b.data, _parents=(a, b),
                  _bw=lambda g: (_accum(a, _unbroadcast(g * b.data, a.shape)),
                                 _accum(b, _unbroadcast(g * a.data, b.shape))))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor(a.data * s, _parents=(a,), _bw=lambda g: _accum(a, g * s))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim == b.data.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    elif a.data.ndim == b.data.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    else:
        raise ShapeError(f"matmul: need matching 2-D or 3-D operands, "
                         f"got {a.shape} @ {b.shape}")
    sw = (-1, -2)

    def bw(g):
        _accum(a, g @ np.swapaxes(b.data, *sw))
        _accum(b, np.swapaxes(a.data, *sw) @ g)

    return Tensor(a.data @ b.data, _parents=(a, b), _bw=bw)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = np.argsort(axes)
    return Tensor(a.data.transpose(axes), _parents=(a,),
                  _bw=lambda g: _accum(a, g.transpose(inv)))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape) if not isinstance(shape, int) else (shape,)
    return Tensor(a.data.reshape(shape), _parents=(a,),
                  _bw=lambda g: _accum(a, g.reshape(a.shape)))


def concat(ts: list, axis: int) -> Tensor:
    ts = [_wrap(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    offs = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, offs[:-1], offs[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return Tensor(np.concatenate([t.data for t in ts], axis=axis),
                  _parents=tuple(ts), _bw=bw)


def split(a: Tensor, axis: int, sizes: list) -> list:
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split: sizes {sizes} do not cover axis {axis} "
                         f"of {a.shape}")
    offs = np.cumsum([0] + list(sizes))
    outs = []
    for lo, hi in zip(offs[:-1], offs[1:]):
        sl = [slice(None)] * a.data.ndim
        sl[axis] = slice(int(lo), int(hi))
        sl = tuple(sl)

        def bw(g, sl=sl):
            buf = np.zeros_like(a.data)
            buf[sl] = g
            _accum(a, buf)

        outs.append(Tensor(a.data[sl], _parents=(a,), _bw=bw))
    return outs


def gather_rows(a: Tensor, idx) -> Tensor:
    """a[idx] along axis 0; idx is any integer array. Backward scatter-adds."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise BadInputError("gather_rows needs integer indices")

    def bw(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx.reshape(-1),
                  g.reshape(idx.size, *a.shape[1:]))
        _accum(a, buf)

    return Tensor(a.data[idx], _parents=(a,), _bw=bw)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    def bw(g):
        _accum(a, np.expand_dims(g, axis) * np.ones_like(a.data))

    return Tensor(a.data.sum(axis=axis), _parents=(a,), _bw=bw)


def sum_all(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), _parents=(a,),
                  _bw=lambda g: _accum(a, np.full_like(a.data, g)))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor(a.data.mean(), _parents=(a,),
                  _bw=lambda g: _accum(a, np.full_like(a.data, g / n)))


# ---------------------------------------------------------------------------
# nonlinearities

def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return Tensor(out_data, _parents=(a,),
                  _bw=lambda g: _accum(a, g * out_data))


def softplus(a: Tensor) -> Tensor:
    # log(1+e^x) with the large-x overflow guard; derivative is the sigmoid
    out_data = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out_data, _parents=(a,),
                  _bw=lambda g: _accum(a, g * sig))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return Tensor(np.clip(a.data, lo, hi), _parents=(a,),
                  _bw=lambda g: _accum(a, g * mask))


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)

    def bw(g):
        d = 0.5 * (1 + t) + 0.5 * x * (1 - t * t) * _GELU_C * (1 + 3 * _GELU_A * x ** 2)
        _accum(a, g * d)

    return Tensor(0.5 * x * (1 + t), _parents=(a,), _bw=bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        _accum(a, s * (g - dot))

    return Tensor(s, _parents=(a,), _bw=bw)


def layer_norm(a: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis, optional affine output."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xm = x - mu
    var = (xm * xm).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xm * inv
    parents = [a]
    if gain is not None:
        if gain.shape != (x.shape[-1],):
            raise ShapeError(f"layer_norm gain {gain.shape} vs features "
                             f"({x.shape[-1]},)")
        parents.append(gain)
    if bias is not None:
        if bias.shape != (x.shape[-1],):
            raise ShapeError(f"layer_norm bias {bias.shape} vs features "
                             f"({x.shape[-1]},)")
        parents.append(bias)

    def bw(g):
        gy = g * gain.data if gain is not None else g
        n = x.shape[-1]
        # d/dx of (x-mu)/sqrt(var+eps) with mu, var functions of x
        gsum = gy.sum(axis=-1, keepdims=True)
        gydot = (gy * y).sum(axis=-1, keepdims=True)
        _accum(a, inv * (gy - gsum / n - y * gydot / n))
        if gain is not None:
            _accum(gain, (g * y).reshape(-1, n).sum(axis=0))
        if bias is not None:
            _accum(bias, g.reshape(-1, n).sum(axis=0))

    out_data = y * gain.data if gain is not None else y
    if bias is not None:
        out_data = out_data + bias.data
    return Tensor(out_data, _parents=tuple(parents), _bw=bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b; x is (..., in), w is (in, out), b is (out,)."""
    if x.data.ndim == 2:
        out = matmul(x, w)
    else:
        flat = reshape(x, (-1, x.shape[-1]))
        out = reshape(matmul(flat, w), x.shape[:-1] + (w.shape[1],))
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# backward pass

def backward(loss: Tensor) -> None:
    """Reverse-topological gradient accumulation from a scalar loss."""
    if loss.data.shape != ():
        raise BadInputError(f"backward needs a scalar loss, got shape "
                            f"{loss.data.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    _accum(loss, np.array(1.0))
    for node in reversed(order):
        if node._bw is not None and node.grad is not None:
            node._bw(node.grad)


# ---------------------------------------------------------------------------
# parameters, Adam, checkpoints

class ParamStore:
    """Named trainable tensors plus Adam moment buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data) -> Tensor:
        if name in self.params:
            raise BadInputError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def n_scalars(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    store.step_count += 1
    t = store.step_count
    bc1 = 1 - beta1 ** t
    bc2 = 1 - beta2 ** t
    for name, p in store.params.items():
        if p.grad is None:
            raise BadInputError(f"adam_step: parameter {name!r} has no gradient")
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1 - beta1) * p.grad
        v *= beta2
        v += (1 - beta2) * p.grad ** 2
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def save_checkpoint(path: str | Path, store: ParamStore) -> None:
    """TCK1: magic, version, name/shape table, then raw f64 payloads."""
    with open(path, "wb") as fh:
        fh.write(_TCK_MAGIC)
        fh.write(struct.pack("<II", _TCK_VERSION, len(store.params)))
        for name, t in store.params.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", t.data.ndim))
            for s in t.data.shape:
                fh.write(struct.pack("<I", s))
        for t in store.params.values():
            fh.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> ParamStore:
    raw = Path(path).read_bytes()
    if raw[:4] != _TCK_MAGIC:
        raise BadInputError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack("<II", raw[4:12])
    if version != _TCK_VERSION:
        raise BadInputError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", raw[off:off + 2])
        off += 2
        name = raw[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack("<B", raw[off:off + 1])
        off += 1
        shape = struct.unpack(f"<{ndim}I", raw[off:off + 4 * ndim]) if ndim else ()
        off += 4 * ndim
        entries.append((name, shape))
    store = ParamStore()
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(raw[off:off + 8 * n], dtype="<f8").reshape(shape).copy()
        off += 8 * n
        store.add(name, data)
    if off != len(raw):
        raise BadInputError(f"{path}: {len(raw) - off} trailing bytes")
    return store
