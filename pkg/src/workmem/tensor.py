"""Small dense-tensor engine with define-by-run reverse-mode autodiff.

Every op builds its output eagerly on numpy arrays and, when any input
requires a gradient, records its parents together with a rule that maps
the output gradient to one gradient per parent.  ``backward`` walks the
recorded graph once in reverse topological order.

Binary elementwise ops only accept identical shapes or a scalar operand.
Broadcasting that the model does need is spelled out with
``broadcast_to`` and ``add_bias``.
"""
from __future__ import annotations

import io
import struct
from contextlib import contextmanager
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not fit the op."""


class ContractError(RuntimeError):
    """A caller broke an op's precondition."""


_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op or 'leaf'})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None):
        return tsum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A named trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def tensor(data, dtype=None, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], rule: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
    return out


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unscalar(g: np.ndarray, t: Tensor) -> np.ndarray:
    # gradient for a scalar operand that was spread over a larger array
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum(), dtype=t.dtype)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _check_same(a, b, "add")

    def rule(g):
        return _unscalar(g, a), _unscalar(g, b)

    return _make(a.data + b.data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _check_same(a, b, "sub")

    def rule(g):
        return _unscalar(g, a), _unscalar(-g, b)

    return _make(a.data - b.data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _check_same(a, b, "mul")

    def rule(g):
        return _unscalar(g * b.data, a), _unscalar(g * a.data, b)

    return _make(a.data * b.data, (a, b), rule, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.  ``a`` may carry leading batch axes when ``b`` is 2-D;
    two 3-D operands multiply batch-wise."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim == 2:
        def rule(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    elif a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0]:
        def rule(g):
            return g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g
    else:
        raise ShapeError(f"matmul: unsupported batch shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), rule, "matmul")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[..., n] + b[n]."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")

    def rule(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _make(x.data + b.data, (x, b), rule, "add_bias")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fused ``x @ w + b`` (one graph node, one stored activation)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    out = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} does not match {w.shape}")
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def rule(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, rule, "linear")


@lru_cache(maxsize=512)
def _einsum_path(spec: str, shapes: tuple) -> list:
    return np.einsum_path(spec, *(np.empty(s, dtype=np.float32) for s in shapes), optimize="greedy")[0]


def _einsum(spec: str, *arrays: np.ndarray) -> np.ndarray:
    # contraction paths are cached per (spec, shapes); searching one costs more than small contractions
    return np.einsum(spec, *arrays, optimize=_einsum_path(spec, tuple(a.shape for a in arrays)))


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Explicit-output einsum with no repeated index inside one operand."""
    if "->" not in subscripts or "." in subscripts:
        raise ContractError("einsum needs explicit '->' output and no ellipsis")
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(operands):
        raise ContractError("einsum: operand count does not match subscripts")
    for s, t in zip(in_subs, operands):
        if len(set(s)) != len(s) or len(s) != t.ndim:
            raise ShapeError(f"einsum: subscript {s!r} does not fit shape {t.shape}")
    data = _einsum(subscripts, *(t.data for t in operands))

    def rule(g):
        grads = []
        for k, (sk, tk) in enumerate(zip(in_subs, operands)):
            if not tk.requires_grad:
                grads.append(None)
                continue
            others = [(s, t.data) for j, (s, t) in enumerate(zip(in_subs, operands)) if j != k]
            seen = set(out_sub).union(*(set(s) for s, _ in others))
            keep = "".join(c for c in sk if c in seen)
            spec = ",".join([out_sub] + [s for s, _ in others]) + "->" + keep
            gk = _einsum(spec, g, *(d for _, d in others))
            if keep != sk:
                idx = tuple(slice(None) if c in seen else None for c in sk)
                gk = np.broadcast_to(gk[idx], tk.shape).copy()
            grads.append(gk)
        return tuple(grads)

    return _make(np.asarray(data), operands, rule, "einsum")


# ------------------------------------------------------------- elementwise

def sigmoid(x: Tensor) -> Tensor:
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    y[~pos] = ez / (1.0 + ez)

    def rule(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), rule, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def rule(g):
        return (g * (1.0 - y * y),)

    return _make(y, (x,), rule, "tanh")


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)

    def rule(g):
        return (g * (x.data > 0),)

    return _make(y, (x,), rule, "relu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select from ``a`` where the constant mask is true, else from ``b``."""
    cond = np.asarray(cond, dtype=bool)
    _check_same(a, b, "where")
    if cond.shape != a.shape:
        raise ShapeError(f"where: mask shape {cond.shape} does not match {a.shape}")

    def rule(g):
        return np.where(cond, g, 0), np.where(cond, 0, g)

    return _make(np.where(cond, a.data, b.data), (a, b), rule, "where")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), rule, "softmax")


def nll_loss(probs: Tensor, labels: np.ndarray, floor: float = 1e-12) -> Tensor:
    """Summed ``-log p[label]`` over rows of a [B, C] probability table."""
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"nll_loss: probs {probs.shape} vs labels {labels.shape}")
    rows = np.arange(len(labels))
    picked = probs.data[rows, labels]
    clamped = np.maximum(picked, floor)
    val = np.asarray(-np.log(clamped).sum(), dtype=probs.dtype)

    def rule(g):
        gp = np.zeros_like(probs.data)
        gp[rows, labels] = np.where(picked > floor, -g / clamped, 0.0)
        return (gp,)

    return _make(val, (probs,), rule, "nll")


# ---------------------------------------------------------------- structure

def tsum(x: Tensor, axis=None) -> Tensor:
    y = np.asarray(x.data.sum(axis=axis))

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(y, (x,), rule, "sum")


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicit broadcast; ``x`` must already have the target rank."""
    shape = tuple(shape)
    if x.ndim != len(shape) or any(s != 1 and s != t for s, t in zip(x.shape, shape)):
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s == 1 and t != 1)

    def rule(g):
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _make(np.broadcast_to(x.data, shape), (x,), rule, "broadcast")


def getitem(x: Tensor, key) -> Tensor:
    y = x.data[key]

    def rule(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(np.array(y), (x,), rule, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {t.shape}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, rule, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover axis of {x.shape}")
    out, start = [], 0
    for n in sizes:
        key = [slice(None)] * x.ndim
        key[axis] = slice(start, start + n)
        out.append(getitem(x, tuple(key)))
        start += n
    return out


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows along axis 0; the gradient scatter-adds back."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"take_rows: index out of range for {x.shape[0]} rows")

    def rule(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx.reshape(-1), g.reshape((-1,) + x.shape[1:]))
        return (gx,)

    return _make(x.data[idx], (x,), rule, "take_rows")


def embedding(table: Tensor, idx: np.ndarray, padding_idx: int | None = 0) -> Tensor:
    """Row lookup; the padding row never receives gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding: index out of range for vocabulary of {table.shape[0]}")

    def rule(g):
        gw = np.zeros_like(table.data)
        np.add.at(gw, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        if padding_idx is not None:
            gw[padding_idx] = 0
        return (gw,)

    return _make(table.data[idx], (table,), rule, "embedding")


# ----------------------------------------------------------------- backward

def trace_tape(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root`` in topological order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = trace_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            gp = np.asarray(gp, dtype=p.dtype)
            if gp.shape != p.shape:
                raise ShapeError(f"{node.op}: gradient shape {gp.shape} != operand {p.shape}")
            prev = grads.get(id(p))
            grads[id(p)] = gp if prev is None else prev + gp


# ------------------------------------------------------------ verification

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not 0 < eps <= 1e-3:
        raise ContractError(f"eps must lie in (0, 1e-3], got {eps}")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    with no_grad():
        again = f()
    if not np.array_equal(loss.data, again.data):
        raise ContractError("grad_check: f is not deterministic")
    backward(loss)

    worst = 0.0
    with no_grad():
        for p in params:
            analytic = p.grad.copy()
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().data)
                flat[i] = orig - eps
                down = float(f().data)
                flat[i] = orig
                num = (up - down) / (2 * eps)
                ana = float(analytic.reshape(-1)[i])
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                worst = max(worst, err)
    return worst


# ------------------------------------------------------------------- init

def glorot_normal_init(shape, fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    if fan_in <= 0 or fan_out <= 0:
        raise ContractError("fans must be positive")
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape).astype(dtype)


# ---------------------------------------------------------- serialization

PARAMS_MAGIC = b"WMPT"
PARAMS_VERSION = 1
_DTYPES = {4: "<f4", 8: "<f8"}


def dump_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    """Flat named-array container: magic, version, count, then per entry
    name, dtype width, rank, dims and little-endian values."""
    buf = io.BytesIO()
    buf.write(PARAMS_MAGIC)
    buf.write(struct.pack("<II", PARAMS_VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        width = arr.dtype.itemsize
        if width not in _DTYPES or not np.issubdtype(arr.dtype, np.floating):
            raise ContractError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", width, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[width]).tobytes())
    return buf.getvalue()


def load_arrays(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if bytes(view[:4]) != PARAMS_MAGIC:
        raise ValueError("not a parameter container")
    version, count = struct.unpack_from("<II", view, 4)
    if version != PARAMS_VERSION:
        raise ValueError(f"parameter container version {version}, expected {PARAMS_VERSION}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        width, ndim = struct.unpack_from("<BB", view, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        count_vals = int(np.prod(shape)) if ndim else 1
        nbytes = count_vals * width
        arr = np.frombuffer(view[pos:pos + nbytes], dtype=_DTYPES[width]).reshape(shape)
        out[name] = arr.astype(arr.dtype.newbyteorder("="))
        pos += nbytes
    if pos != len(blob):
        raise ValueError("trailing bytes after parameter container")
    return out
