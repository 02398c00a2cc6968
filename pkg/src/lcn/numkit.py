"""Dense float64 tensors with define-by-run reverse-mode autodiff, Xavier init and Adam.

Every op returns a new :class:`Tensor`. When any input requires a gradient the
result records its parents and a vector-Jacobian closure; :func:`backward`
walks that record once in reverse topological order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

COSINE_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "parents", "vjp", "requires_grad", "name")

    def __init__(self, data, parents: tuple = (), vjp: Callable | None = None,
                 requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64))


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.isfinite(values).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def record(values: np.ndarray, op: str, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    _check_finite(values, op)
    if any(p.requires_grad for p in parents):
        return Tensor(values, tuple(parents), vjp, requires_grad=True)
    return Tensor(values)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return record(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return record(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return record(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(a.data * c, "scale", (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return record(np.where(on, a.data, 0.0), "relu", (a,), lambda g: (g * on,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return record(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return record(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log of non-positive value")
    return record(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return record(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------- reductions

def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _normalize_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return record(out, "sum", (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if n == 0:
        raise ShapeError(f"mean over empty axes of shape {a.shape}")
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / n)


def inner(a, b) -> Tensor:
    """Inner product over the last axis, broadcasting the leading ones."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1:] != b.shape[-1:]:
        raise ShapeError(f"inner: last dimensions differ, shapes {a.shape} and {b.shape}")
    _broadcast_shape(a, b, "inner")
    out = np.einsum("...i,...i->...", a.data, b.data) if a.shape == b.shape else (a.data * b.data).sum(-1)

    def vjp(g):
        g = g[..., None]
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(out, "inner", (a, b), vjp)


def cosine_similarity(a, b) -> Tensor:
    """Cosine over the last axis; the norm product is floored at 1e-12."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1:] != b.shape[-1:]:
        raise ShapeError(f"cosine_similarity: last dimensions differ, shapes {a.shape} and {b.shape}")
    _broadcast_shape(a, b, "cosine_similarity")
    dot = (a.data * b.data).sum(-1)
    na = np.sqrt((a.data * a.data).sum(-1))
    nb = np.sqrt((b.data * b.data).sum(-1))
    raw = na * nb
    floored = raw < COSINE_FLOOR
    denom = np.where(floored, COSINE_FLOOR, raw)
    out = dot / denom

    def vjp(g):
        g = g[..., None]
        d = denom[..., None]
        c = np.where(floored, 0.0, out)[..., None]
        safe_na = np.where(na > 0, na, 1.0)[..., None]
        safe_nb = np.where(nb > 0, nb, 1.0)[..., None]
        ga = g * (b.data / d - c * a.data / safe_na ** 2)
        gb = g * (a.data / d - c * b.data / safe_nb ** 2)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(out, "cosine_similarity", (a, b), vjp)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. Masked-out entries get weight 0; an all-masked row is all 0."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    # sequential sum: extra masked zeros cannot change the rounding
    z = np.cumsum(e, axis=-1)[..., -1:]
    out = np.divide(e, z, out=np.zeros_like(e), where=z > 0)

    def vjp(g):
        return (out * (g - (g * out).sum(-1, keepdims=True)),)

    return record(out, "softmax", (a,), vjp)


# ---------------------------------------------------------------- structure

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    if b.ndim == 2 and a.ndim > 2:
        # fold the batch axes so the weight gradient is one GEMM
        lead = a.shape[:-1]
        flat = a.data.reshape(-1, a.shape[-1])
        out = (flat @ b.data).reshape(*lead, b.shape[-1])

        def vjp(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), flat.T @ g2

        return record(out, "matmul", (a, b), vjp)

    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(out, "matmul", (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return record(np.swapaxes(a.data, -1, -2), "transpose", (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return record(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return record(np.swapaxes(a.data, ax1, ax2), "swapaxes", (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),))


def expand_dims(a: Tensor, axis: int) -> Tensor:
    return reshape(a, np.expand_dims(a.data, axis).shape)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return record(out, "concat", tensors, vjp)


def scatter_rows(ids: np.ndarray, values: np.ndarray, n_rows: int) -> np.ndarray:
    """Dense (n_rows, dim) array with ``values[i]`` summed into row ``ids[i]``."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    values = values.reshape(ids.size, -1)
    out = np.empty((n_rows, values.shape[1]))
    # one bincount per column beats ufunc.at by a wide margin
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(ids, weights=values[:, j], minlength=n_rows)
    return out


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; the gradient is scatter-added back onto the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D table, got {table.shape}")
    out = table.data[ids]

    def vjp(g):
        return (scatter_rows(ids, g, table.shape[0]),)

    return record(out, "take_rows", (table,), vjp)


def gather(a: Tensor, index: np.ndarray, axis: int = 1) -> Tensor:
    """``np.take_along_axis`` with index broadcast over trailing axes."""
    index = np.asarray(index, dtype=np.int64)
    ax = axis % a.ndim
    idx = index.reshape(index.shape + (1,) * (a.ndim - index.ndim))
    out = np.take_along_axis(a.data, idx, axis=ax)

    def vjp(g):
        grad = np.zeros_like(a.data)
        full = np.broadcast_to(idx, g.shape)
        # per-row indices may repeat, so accumulate rather than assign
        grids = list(np.indices(g.shape, sparse=True))
        grids[ax] = full
        np.add.at(grad, tuple(grids), g)
        return (grad,)

    return record(out, "gather", (a,), vjp)


# ---------------------------------------------------------------- graph

@dataclass
class Graph:
    """Registry of named trainable tensors. The op record itself lives on the tensors."""

    params: dict[str, Tensor] = field(default_factory=dict)

    def add(self, name: str, values) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)
        _check_finite(t.data, f"parameter {name}")
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ShapeError(f"parameter {k}: stored {v.shape}, expected {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)


def _topological(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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


def backward(graph: Graph | None, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` w.r.t. every parameter registered in ``graph``.

    Parameters off the path get zeros. With ``graph=None`` the gradients of all
    named leaf tensors reached from ``loss`` are returned instead.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topological(loss)):
            if node.vjp is None:
                leaves[id(node)] = node
                continue
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if graph is None:
        return {t.name: grads[k] for k, t in leaves.items() if t.name is not None and k in grads}
    return {
        name: grads.get(id(t), np.zeros_like(t.data)).reshape(t.shape)
        for name, t in graph.params.items()
    }


# ---------------------------------------------------------------- init & optim

def xavier_init(shape: Iterable[int], rng_seed) -> np.ndarray:
    """Glorot-uniform values on +-sqrt(6 / (fan_in + fan_out)).

    ``rng_seed`` is an int seed or a ``numpy.random.Generator``.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"xavier_init needs positive dimensions, got {shape}")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """One bias-corrected Adam update, applied in place. Returns ``params``."""
    missing = [k for k in params if k not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters {missing}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
