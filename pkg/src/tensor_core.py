# src/tensor_core.py
# Dense numpy-backed tensors, the differentiable primitives the network is built from,
# reverse-mode backward() and the finite-difference oracle used to verify it.
from __future__ import annotations

import math
from dataclasses import fields, is_dataclass
from typing import Callable, Iterator, Sequence

import numpy as np


class ContractError(ValueError):
    """A precondition of an operation does not hold."""


class DimensionError(ContractError):
    """Shapes of the operands do not agree."""


class NonFiniteError(ContractError):
    """An operation produced NaN or Inf."""


class OracleError(RuntimeError):
    """The function under finite differences is not deterministic."""


_FLOATS = (np.dtype(np.float32), np.dtype(np.float64))


# =========================
# Tensor
# =========================
class Tensor:
    """
    N-dimensional array plus the record needed to differentiate through it.

    Leaves created with requires_grad=True are trainable parameters. Every other
    node keeps its parents and a vector-Jacobian product; the set of these links
    reachable from a scalar result is the differentiable graph of one evaluation.
    """

    __slots__ = ("data", "requires_grad", "parents", "vjp", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, parents=(), vjp=None, op: str = "leaf"):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in _FLOATS:
            arr = data
        elif isinstance(data, (np.floating,)) and np.dtype(type(data)) in _FLOATS:
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=np.float32)
        if arr.dtype not in _FLOATS:
            raise ContractError(f"unsupported scalar type {arr.dtype}")
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values produced by '{op}'")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.parents = parents
        self.vjp = vjp
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: tuple, vjp, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, vjp=vjp, op=op)
    return Tensor(data, op=op)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# =========================
# Elementwise
# =========================
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def vjp(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _node(out, (a, b), vjp, "div")


def power(x: Tensor, p: float) -> Tensor:
    out = x.data ** p

    def vjp(g):
        return (g * p * x.data ** (p - 1),)

    return _node(out, (x,), vjp, "power")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return _node(out, (x,), vjp, "exp")


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise ContractError("log of non-positive value")

    def vjp(g):
        return (g / x.data,)

    return _node(np.log(x.data), (x,), vjp, "log")


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(v.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), vjp, "sigmoid")


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    pos = x.data > 0

    def vjp(g):
        return (np.where(pos, g, slope * g),)

    return _node(np.where(pos, x.data, slope * x.data), (x,), vjp, "leaky_relu")


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)

    def vjp(g):
        return (g * inside,)

    return _node(np.clip(x.data, lo, hi), (x,), vjp, "clip")


# =========================
# Reductions / shape
# =========================
def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _node(np.asarray(out), (x,), vjp, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes)
    return mul(sum(x, axes, keepdims), 1.0 / count)


def amax(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal element."""
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g, axis=axis)
        return (full,)

    return _node(out if keepdims else np.squeeze(out, axis), (x,), vjp, "amax")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def vjp(g):
        return (g.reshape(x.shape),)

    return _node(x.data.reshape(shape), (x,), vjp, "reshape")


def transpose(x: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _node(x.data.transpose(axes), (x,), vjp, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def vjp(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _node(x.data[index], (x,), vjp, "narrow")


# =========================
# Convolution / linear
# =========================
def conv_output_size(n: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"conv2d: input must be BCHW, got shape {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d: kernel must be OIKK, got shape {kernel.shape}")
    b, c, h, w = x.shape
    o, cg, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ContractError(f"conv2d: kernel spatial extent must be square and odd, got {kh}x{kw}")
    if groups < 1 or c % groups or o % groups:
        raise DimensionError(f"conv2d: channel axis {c} (in) / {o} (out) not divisible by groups={groups}")
    if cg * groups != c:
        raise DimensionError(f"conv2d: channel axis mismatch, input has {c}, kernel expects {cg * groups}")
    if padding < 0 or dilation < 1 or stride < 1:
        raise ContractError(f"conv2d: invalid stride={stride} padding={padding} dilation={dilation}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d: bias axis 0 must be {o}, got {bias.shape}")
    k = kh
    ho = conv_output_size(h, k, stride, padding, dilation)
    wo = conv_output_size(w, k, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: spatial axes {h}x{w} too small for kernel {k} dilation {dilation}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = []
    for i in range(k):
        for j in range(k):
            hs, ws = i * dilation, j * dilation
            windows.append(xp[:, :, hs:hs + stride * (ho - 1) + 1:stride, ws:ws + stride * (wo - 1) + 1:stride])
    og = o // groups
    cols = np.stack(windows, axis=2).reshape(b, groups, cg, k, k, ho, wo)
    wk = kernel.data.reshape(groups, og, cg, k, k)
    out = np.einsum("bgcklhw,gockl->bgohw", cols, wk, optimize=True).reshape(b, o, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def vjp(g):
        g5 = g.reshape(b, groups, og, ho, wo)
        gk = np.einsum("bgohw,bgcklhw->gockl", g5, cols, optimize=True).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            dcols = np.einsum("bgohw,gockl->bgcklhw", g5, wk, optimize=True).reshape(b, c, k, k, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    hs, ws = i * dilation, j * dilation
                    gxp[:, :, hs:hs + stride * (ho - 1) + 1:stride, ws:ws + stride * (wo - 1) + 1:stride] += dcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return _node(np.ascontiguousarray(out), parents, vjp, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: x @ weight.T + bias."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: last axis {x.shape[-1]} does not match weight D_in {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias axis 0 must be {weight.shape[0]}, got {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    d_in, d_out = weight.shape[1], weight.shape[0]

    def vjp(g):
        g2 = g.reshape(-1, d_out)
        gw = g2.T @ x.data.reshape(-1, d_in)
        gx = g @ weight.data
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out, parents, vjp, "linear")


# =========================
# Pooling / resampling / softmax
# =========================
def global_pool(x: Tensor, mode: str = "average") -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_pool: input must be BCHW, got shape {x.shape}")
    b, c, h, w = x.shape
    if mode == "average":
        return mean(x, axis=(2, 3), keepdims=True)
    if mode == "max":
        flat = amax(reshape(x, (b, c, h * w)), axis=2, keepdims=True)
        return reshape(flat, (b, c, 1, 1))
    raise ContractError(f"global_pool: unknown mode '{mode}'")


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float32) -> np.ndarray:
    """Row o holds the align-corners-false bilinear weights of output o over the input axis."""
    a = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        a[o, i0] += 1.0 - lam
        a[o, i1] += lam
    return a.astype(dtype)


def resize_bilinear(x: Tensor, target_h: int, target_w: int) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"resize_bilinear: input must be BCHW, got shape {x.shape}")
    if target_h < 1 or target_w < 1:
        raise ContractError(f"resize_bilinear: target extents must be >= 1, got {target_h}x{target_w}")
    h, w = x.shape[2], x.shape[3]
    if (h, w) == (target_h, target_w):
        return x
    ah = interpolation_matrix(h, target_h, x.dtype)
    aw = interpolation_matrix(w, target_w, x.dtype)
    out = np.einsum("oh,bchw,pw->bcop", ah, x.data, aw, optimize=True)

    def vjp(g):
        return (np.einsum("oh,bcop,pw->bchw", ah, g, aw, optimize=True),)

    return _node(out, (x,), vjp, "resize_bilinear")


def softmax_pair(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Per-position softmax over two competing maps; returns (w_a, w_b) with w_a + w_b = 1."""
    if a.shape != b.shape:
        raise DimensionError(f"softmax_pair: shapes {a.shape} and {b.shape} differ")
    m = np.maximum(a.data, b.data)
    ea = np.exp(a.data - m)
    eb = np.exp(b.data - m)
    total = ea + eb
    wa, wb = ea / total, eb / total
    cross = wa * wb

    def vjp_a(g):
        return g * cross, -g * cross

    def vjp_b(g):
        return -g * cross, g * cross

    return _node(wa, (a, b), vjp_a, "softmax_pair"), _node(wb, (a, b), vjp_b, "softmax_pair")


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), vjp, "log_softmax")


# =========================
# NamedTensorSet
# =========================
class NamedTensorSet(dict):
    """Ordered mapping path -> Tensor (parameters, buffers, or gradients)."""

    @classmethod
    def collect(cls, obj, prefix: str = "") -> "NamedTensorSet":
        out = cls()
        for name, t in _walk(obj, prefix):
            if name in out:
                raise ContractError(f"duplicate tensor path '{name}'")
            out[name] = t
        return out

    def trainable(self) -> "NamedTensorSet":
        return NamedTensorSet((k, v) for k, v in self.items() if v.requires_grad)

    def astype(self, dtype) -> "NamedTensorSet":
        # in place, so dataclasses holding these tensors see the new precision
        for t in self.values():
            t.data = t.data.astype(dtype)
        return self

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def count(self) -> int:
        return int(np.sum([v.data.size for v in self.values()]))


def _walk(obj, prefix: str) -> Iterator[tuple[str, Tensor]]:
    join = (lambda key: f"{prefix}.{key}") if prefix else (lambda key: str(key))
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif is_dataclass(obj) and not isinstance(obj, type):
        for f in fields(obj):
            yield from _walk(getattr(obj, f.name), join(f.name))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from _walk(item, join(i))
    elif isinstance(obj, dict):
        for key, item in obj.items():
            yield from _walk(item, join(key))


# =========================
# Backward
# =========================
def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(result: Tensor, params: dict[str, Tensor]) -> NamedTensorSet:
    """d(result)/d(p) for every named tensor p; parameters not on the graph get zeros."""
    if result.data.size != 1:
        raise ContractError(f"backward() needs a scalar result, got shape {result.shape}")
    grads: dict[int, np.ndarray] = {}
    if result.requires_grad:
        grads[id(result)] = np.ones_like(result.data)
        for node in reversed(_topological(result)):
            if node.vjp is None:
                continue
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
    out = NamedTensorSet()
    for name, t in params.items():
        g = grads.get(id(t))
        if g is not None and not np.isfinite(g).all():
            err = NonFiniteError(f"non-finite gradient for '{name}'")
            err.component = name
            raise err
        out[name] = Tensor(np.zeros_like(t.data) if g is None else np.array(g, dtype=t.dtype), op="grad")
    return out


# =========================
# Finite-difference oracle
# =========================
def finite_diff_check(
    function: Callable[[NamedTensorSet], Tensor],
    params: NamedTensorSet,
    epsilon: float = 1e-4,
    analytic: NamedTensorSet | None = None,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """
    Max relative error between backward() and central differences over the
    trainable coordinates of params (a random subset of max_coords per tensor
    when given). Relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    base = function(params).item()
    if function(params).item() != base:
        raise OracleError("function is not deterministic: repeated evaluation differs")
    trainable = params.trainable()
    if analytic is None:
        analytic = backward(function(params), trainable)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in trainable.items():
        coords = np.arange(t.data.size)
        if max_coords is not None and coords.size > max_coords:
            coords = np.sort(rng.choice(coords, size=max_coords, replace=False))
        for flat in coords:
            idx = np.unravel_index(int(flat), t.shape)
            orig = t.data[idx].copy()
            t.data[idx] = orig + epsilon
            f_plus = function(params).item()
            t.data[idx] = orig - epsilon
            f_minus = function(params).item()
            t.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            exact = float(analytic[name].data[idx])
            rel = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
