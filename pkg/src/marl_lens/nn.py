"""A small reverse-mode autodiff engine over numpy arrays.

Only what the learners need: dense layers, a GRU cell, the elementwise
functions used by the losses, Adam, global-norm clipping, target-network
updates and a binary checkpoint format.

Every operation on :class:`Tensor` records its inputs and a closure that maps
the output gradient to input gradients; :func:`backward` walks that tape in
reverse topological order. Inside ``with no_grad():`` nothing is recorded.
"""

from __future__ import annotations

import contextlib
import copy
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b):
    """``a @ b`` for 2-D operands or batched 3-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back)


def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tabs(a):
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def minimum(a, b):
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)
    return _make(out, (a, b), lambda g: (_unbroadcast(g * pick_a, a.shape),
                                         _unbroadcast(g * ~pick_a, b.shape)))


def clip(a, lo, hi):
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return _make(out, (a,), back)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is None or p is Ellipsis or isinstance(p, (slice, int, np.integer))
               for p in parts)


def getitem(a, idx):
    basic = _is_basic_index(idx)

    def back(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] = g  # basic indexing never repeats an element
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), back)


def take_last(a, index):
    """``out[..., ] = a[..., index[...]]`` for an integer array ``index``."""
    index = np.asarray(index)
    idx = index[..., None]
    out = np.take_along_axis(a.data, idx, axis=-1)[..., 0]

    def back(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx, g[..., None], axis=-1)
        return (ga,)

    return _make(out, (a,), back)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis))


def backward(root: Tensor, grad=None):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if grad is None:
        if root.data.size != 1:
            raise ShapeMismatch("output_grad is required for non-scalar outputs")
        grad = np.ones_like(root.data)
    grad = np.asarray(grad, dtype=root.data.dtype)
    if grad.shape != root.shape:
        raise ShapeMismatch(f"output_grad shape {grad.shape} != output shape {root.shape}")
    if not root.requires_grad:
        return

    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))

    grads = {id(root): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


# --------------------------------------------------------------------------- #
# Parameters and networks


class ParamStore:
    """Named leaf tensors with fixed shapes and matching gradient slots."""

    def __init__(self, arrays=None, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.step = 0
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        self.params[name] = Tensor(np.array(value, dtype=self.dtype), requires_grad=True)
        return self.params[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.values())

    def names(self):
        return list(self.params)

    def tensors(self):
        return list(self.params.values())

    def grads(self):
        return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self]

    def zero_grad(self):
        for p in self:
            p.grad = None

    def arrays(self):
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays):
        for name, value in arrays.items():
            p = self.params[name]
            value = np.asarray(value, dtype=self.dtype)
            if value.shape != p.data.shape:
                raise ShapeMismatch(f"{name}: {value.shape} != {p.data.shape}")
            p.data = value.copy()

    def copy(self):
        return copy.deepcopy(self)

    def n_params(self):
        return sum(p.data.size for p in self)


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden_dim: int
    output_dim: int
    body: str = "fc"  # "fc" or "gru"
    n_hidden_layers: int = 1

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.output_dim, self.n_hidden_layers) <= 0:
            raise ShapeMismatch(f"non-positive dimension in {self}")
        if self.body not in ("fc", "gru"):
            raise ValueError(f"unknown body {self.body!r}")


def orthogonal(rng, shape, gain=1.0):
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(spec: NetSpec, rng, head_gain=1.0, dtype=np.float32) -> ParamStore:
    """Orthogonal weights (gain sqrt(2) in hidden layers, ``head_gain`` at the output), zero biases."""
    store = ParamStore(dtype=dtype)
    hidden_gain = np.sqrt(2.0)
    d_in = spec.input_dim
    H = spec.hidden_dim
    if spec.body == "fc":
        for k in range(spec.n_hidden_layers):
            store.add(f"fc{k}.w", orthogonal(rng, (d_in, H), hidden_gain))
            store.add(f"fc{k}.b", np.zeros(H))
            d_in = H
    else:
        store.add("fc_in.w", orthogonal(rng, (d_in, H), hidden_gain))
        store.add("fc_in.b", np.zeros(H))
        # Gate order along the last axis: reset, update, candidate.
        store.add("gru.w_i", np.concatenate([orthogonal(rng, (H, H)) for _ in range(3)], axis=1))
        store.add("gru.w_h", np.concatenate([orthogonal(rng, (H, H)) for _ in range(3)], axis=1))
        store.add("gru.b_i", np.zeros(3 * H))
        store.add("gru.b_h", np.zeros(3 * H))
    store.add("out.w", orthogonal(rng, (H, spec.output_dim), head_gain))
    store.add("out.b", np.zeros(spec.output_dim))
    return store


def gru_cell(x, h, w_i, w_h, b_i, b_h):
    """PyTorch-convention GRU cell: gates ordered reset, update, candidate."""
    H = h.shape[-1]
    gi = x @ w_i + b_i
    gh = h @ w_h + b_h
    r = sigmoid(gi[..., :H] + gh[..., :H])
    z = sigmoid(gi[..., H:2 * H] + gh[..., H:2 * H])
    n = tanh(gi[..., 2 * H:] + r * gh[..., 2 * H:])
    return n + z * (h - n)


def forward(spec: NetSpec, params: ParamStore, x, hidden_in=None):
    """Run the network on a batch of inputs ``x`` of shape ``(..., input_dim)``.

    Returns ``(output, hidden_out)``; ``hidden_out`` is None for FC bodies.
    """
    if not _GRAD_ENABLED:
        return _forward_no_tape(spec, params, x, hidden_in)
    x = as_tensor(x)
    if x.shape[-1] != spec.input_dim:
        raise ShapeMismatch(f"input last dim {x.shape[-1]} != {spec.input_dim}")
    if spec.body == "gru":
        if hidden_in is None:
            raise ShapeMismatch("GRU network needs hidden_in")
        hidden_in = as_tensor(hidden_in)
        if hidden_in.shape[-1] != spec.hidden_dim:
            raise ShapeMismatch(f"hidden last dim {hidden_in.shape[-1]} != {spec.hidden_dim}")
        y = relu(x @ params["fc_in.w"] + params["fc_in.b"])
        h = gru_cell(y, hidden_in, params["gru.w_i"], params["gru.w_h"],
                     params["gru.b_i"], params["gru.b_h"])
        return h @ params["out.w"] + params["out.b"], h
    if hidden_in is not None:
        raise ShapeMismatch("FC network takes no hidden state")
    y = x
    for k in range(spec.n_hidden_layers):
        y = relu(y @ params[f"fc{k}.w"] + params[f"fc{k}.b"])
    return y @ params["out.w"] + params["out.b"], None


def _np_sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _forward_no_tape(spec, params, x, hidden_in):
    """Same computation as :func:`forward` on raw arrays, for acting and targets."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    if x.shape[-1] != spec.input_dim:
        raise ShapeMismatch(f"input last dim {x.shape[-1]} != {spec.input_dim}")
    p = {k: params[k].data for k in params.names()}
    if spec.body == "gru":
        if hidden_in is None:
            raise ShapeMismatch("GRU network needs hidden_in")
        h = hidden_in.data if isinstance(hidden_in, Tensor) else np.asarray(hidden_in)
        if h.shape[-1] != spec.hidden_dim:
            raise ShapeMismatch(f"hidden last dim {h.shape[-1]} != {spec.hidden_dim}")
        H = spec.hidden_dim
        y = np.maximum(x @ p["fc_in.w"] + p["fc_in.b"], 0)
        gi = y @ p["gru.w_i"] + p["gru.b_i"]
        gh = h @ p["gru.w_h"] + p["gru.b_h"]
        r = _np_sigmoid(gi[..., :H] + gh[..., :H])
        z = _np_sigmoid(gi[..., H:2 * H] + gh[..., H:2 * H])
        n = np.tanh(gi[..., 2 * H:] + r * gh[..., 2 * H:])
        h = n + z * (h - n)
        return Tensor(h @ p["out.w"] + p["out.b"]), Tensor(h)
    if hidden_in is not None:
        raise ShapeMismatch("FC network takes no hidden state")
    y = x
    for k in range(spec.n_hidden_layers):
        y = np.maximum(y @ p[f"fc{k}.w"] + p[f"fc{k}.b"], 0)
    return Tensor(y @ p["out.w"] + p["out.b"]), None


# --------------------------------------------------------------------------- #
# Optimisation


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_global_norm(grads, max_norm):
    """Scale ``grads`` so their joint L2 norm is at most ``max_norm``.

    Returns ``(clipped_grads, norm_before)``.
    """
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


class Adam:
    """Adam with bias correction over a list of parameter stores."""

    def __init__(self, stores, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, max_grad_norm=None):
        if isinstance(stores, ParamStore):
            stores = [stores]
        self.stores = list(stores)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.params = [p for s in self.stores for p in s]
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for s in self.stores:
            s.zero_grad()

    def step(self, grads=None):
        """Apply one update. ``grads`` defaults to the parameters' ``.grad``.

        Returns the global gradient norm before clipping.
        """
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient("gradient contains NaN or Inf; update skipped")
        norm = global_norm(grads)
        if self.max_grad_norm is not None:
            grads, norm = clip_global_norm(grads, self.max_grad_norm)
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
        for s in self.stores:
            s.step += 1
        return norm


def adam_step(optimizer: Adam, grads=None):
    return optimizer.step(grads)


def hard_update(target: ParamStore, online: ParamStore):
    for name, p in online.params.items():
        target.params[name].data = p.data.copy()


def soft_update(target: ParamStore, online: ParamStore, tau: float):
    for name, p in online.params.items():
        t = target.params[name]
        t.data = ((1.0 - tau) * t.data + tau * p.data).astype(t.data.dtype)


@dataclass
class TargetUpdate:
    """``mode`` is ``"hard"`` (copy every ``value`` learner steps) or ``"soft"`` (tau=``value``)."""

    mode: str
    value: float
    calls: int = 0

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"unknown target update mode {self.mode!r}")

    def __call__(self, online_stores, target_stores):
        self.calls += 1
        if isinstance(online_stores, ParamStore):
            online_stores, target_stores = [online_stores], [target_stores]
        for o, t in zip(online_stores, target_stores):
            if self.mode == "soft":
                soft_update(t, o, self.value)
            elif self.calls % int(self.value) == 0:
                hard_update(t, o)


def target_update(online, target, mode: TargetUpdate):
    mode(online, target)
    return target


# --------------------------------------------------------------------------- #
# Checkpoints
#
# Layout (all integers little-endian):
#   magic  b"MLCK"  | version u16 | count u32
#   per array: name_len u16 | name utf-8 | dtype_code u8 | ndim u8 |
#              shape u32 * ndim | raw little-endian data

CHECKPOINT_MAGIC = b"MLCK"
CHECKPOINT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_DTYPE_CODES = {(v.kind, v.itemsize): k for k, v in _DTYPES.items()}


def save_checkpoint(path, arrays: dict):
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HI", CHECKPOINT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            code = _DTYPE_CODES.get((arr.dtype.kind, arr.dtype.itemsize))
            if code is None:
                raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def load_checkpoint(path) -> dict:
    from .errors import ParseError

    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + n].decode("utf-8")
            off += n
            code, ndim = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape)) * dt.itemsize
            if off + size > len(data):
                raise ParseError(f"{path}: truncated array {name!r}")
            out[name] = np.frombuffer(data, dtype=dt, count=int(np.prod(shape)),
                                      offset=off).reshape(shape).copy()
            off += size
    except (struct.error, KeyError) as exc:
        raise ParseError(f"{path}: corrupt checkpoint ({exc})") from exc
    return out
