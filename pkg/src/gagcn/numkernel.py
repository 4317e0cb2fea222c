"""Dense tensors with tape-based reverse-mode differentiation.

Storage is a numpy array (row-major, float32 or float64).  Every operation
on :class:`Tensor` records a closure that maps the output cotangent back to
its inputs; :meth:`Tensor.backward` replays the tape in reverse topological
order and accumulates into the ``grad`` of leaf tensors.

Recording is thread-local, so concurrent inference can run under
:func:`no_grad` in several threads while one thread trains.
"""

import contextlib
import threading

import numpy as np

from .exceptions import ContractError, DimensionError, NumericError, OracleError

PRECISIONS = {"binary32": np.float32, "binary64": np.float64}

_local = threading.local()


def is_recording():
    return getattr(_local, "recording", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    previous = is_recording()
    _local.recording = False
    try:
        yield
    finally:
        _local.recording = previous


def resolve_dtype(precision):
    if precision in PRECISIONS:
        return PRECISIONS[precision]
    dtype = np.dtype(precision).type
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported precision {precision!r}")
    return dtype


class Tensor:
    """A shaped numeric array that can take part in differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype == np.float32 else np.float64
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def precision(self):
        return "binary32" if self.data.dtype == np.float32 else "binary64"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, precision={self.precision}{label})"

    def __len__(self):
        return len(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def backward(self):
        """Accumulate d(self)/d(leaf) into every recorded leaf's ``grad``."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that was not recorded")

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + pg
                else:
                    pending[id(parent)] = pg

    # arithmetic sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A named trainable leaf; ``grad`` always exists and has ``value``'s shape."""

    __slots__ = ()

    def __init__(self, value, name, dtype=None):
        if isinstance(value, Tensor):
            value = value.data
        if dtype is None:
            dtype = np.asarray(value).dtype
            dtype = dtype if dtype in (np.float32, np.float64) else np.float64
        super().__init__(value, requires_grad=True, name=name, dtype=dtype)

    @property
    def value(self):
        return self.data

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, precision={self.precision})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, np.ndarray) and x.dtype == np.float32:
        dtype = np.float32
    return Tensor(np.asarray(x), dtype=dtype or np.float64)


def _pair(a, b):
    # Plain scalars and arrays adopt the dtype of the tensor operand.
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b), dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a), dtype=b.dtype)
    return as_tensor(a), as_tensor(b)


def _node(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    if is_recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _pair(a, b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def back(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _node(out, (a, b), back)


def matmul(a, b):
    """Matrix product over the last two axes, batching over leading ones."""
    a, b = _pair(a, b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs at least 1-D operands, got {a.shape} and {b.shape}")
    if a.ndim == 1:
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # One GEMM over the flattened leading axes instead of many small ones.
        lead, k = a.shape[:-1], a.shape[-1]
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(lead + (b.shape[1],))

        def back_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _node(out, (a, b), back_flat)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch extents differ: {a.shape} @ {b.shape}") from exc

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), back)


def kronecker(a, b):
    """Kronecker product of two matrices: ``out[i*r+u, j*s+v] = a[i,j] * b[u,v]``."""
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"kronecker needs 2-D operands, got {a.shape} and {b.shape}")
    (p, q), (r, s) = a.shape, b.shape
    out = (a.data[:, None, :, None] * b.data[None, :, None, :]).reshape(p * r, q * s)

    def back(g):
        blocks = g.reshape(p, r, q, s)
        return (np.einsum("iujv,uv->ij", blocks, b.data),
                np.einsum("iujv,ij->uv", blocks, a.data))

    return _node(out, (a, b), back)


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return _node(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def getitem(x, index):
    x = as_tensor(x)

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(x.data[index]), (x,), back)


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _node(out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tuple(tensors), back)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(out), (x,), back)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / count)


def shift(x, steps):
    """Delay ``x`` by ``steps`` along the last axis, filling with zeros (causal shift)."""
    x = as_tensor(x)
    if steps == 0:
        return x
    out = np.zeros_like(x.data)
    if steps < x.shape[-1]:
        out[..., steps:] = x.data[..., :-steps]

    def back(g):
        gx = np.zeros_like(g)
        if steps < g.shape[-1]:
            gx[..., :-steps] = g[..., steps:]
        return (gx,)

    return _node(out, (x,), back)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def identity(x):
    return as_tensor(x)


ACTIVATIONS = {"tanh": tanh, "relu": relu, "identity": identity}


def activation(x, kind="tanh"):
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None
    return fn(x)


def absolute(x):
    x = as_tensor(x)
    return _node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def norm(x, axis=-1):
    """Euclidean norm along ``axis``.  The subgradient at zero is taken as 0."""
    x = as_tensor(x)
    out = np.sqrt(np.sum(x.data * x.data, axis=axis))

    def back(g):
        safe = np.where(out > 0, out, 1)
        scale = np.where(out > 0, g / safe, 0)
        return (np.expand_dims(scale, axis) * x.data,)

    return _node(out, (x,), back)


def softmax(x, axis=-1):
    """Max-subtracted softmax; rejects non-finite input."""
    x = as_tensor(x)
    if x.data.size == 0:
        raise ContractError("softmax of an empty vector")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax input contains NaN or Inf")
    z = np.exp(x.data - np.max(x.data, axis=axis, keepdims=True))
    out = z / np.sum(z, axis=axis, keepdims=True)

    def back(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _node(out, (x,), back)


# deterministic random numbers


class Rng:
    """Seeded Philox counter-based generator.

    Philox output depends only on (key, counter), so a given seed yields the
    same stream on every platform.  :meth:`child` derives independent
    sub-streams without consuming the parent.
    """

    def __init__(self, seed=0):
        if isinstance(seed, Rng):
            seed = seed.seed
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def child(self, index):
        key = np.random.SeedSequence([self.seed, int(index)]).generate_state(1, np.uint64)[0]
        return Rng(int(key))

    def uniform(self, low, high, shape, dtype=np.float64):
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def normal(self, scale, shape, dtype=np.float64):
        return (self._gen.standard_normal(size=shape) * scale).astype(dtype)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)


def init_uniform(rng, shape, fan_in, dtype=np.float64):
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape, dtype)


# gradient oracle


def finite_diff_check(f, p, eps=1e-4):
    """Compare reverse-mode gradients of ``f`` w.r.t. ``p`` with central differences.

    ``f`` takes no arguments, reads ``p`` and returns a scalar Tensor.
    Returns ``max |analytic - numeric| / max(1, |numeric|)`` over the entries of ``p``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    if p.dtype != np.float64:
        raise ContractError(f"gradient checks need binary64 parameters, {p.name} is {p.precision}")

    p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ContractError(f"f must return a scalar, got shape {loss.shape}")
    if loss.requires_grad:
        loss.backward()
    analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
    p.zero_grad()

    def evaluate():
        with no_grad():
            return float(f().data.reshape(-1)[0])

    base = evaluate()
    if evaluate() != base or base != float(loss.data.reshape(-1)[0]):
        raise OracleError("f is not deterministic: repeated evaluation disagrees")

    numeric = np.zeros_like(p.data)
    flat, grad_flat = p.data.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        up = evaluate()
        flat[i] = saved - eps
        down = evaluate()
        flat[i] = saved
        grad_flat[i] = (up - down) / (2 * eps)

    if not np.all(np.isfinite(analytic)):
        return float("inf")
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0


class Module:
    """Container that discovers Parameters held in attributes, lists, and submodules."""

    def parameters(self):
        found, seen = [], set()

        def visit(obj):
            if isinstance(obj, Parameter):
                if id(obj) not in seen:
                    seen.add(id(obj))
                    found.append(obj)
            elif isinstance(obj, Module):
                for value in vars(obj).values():
                    visit(value)
            elif isinstance(obj, (list, tuple)):
                for item in obj:
                    visit(item)

        for value in vars(self).values():
            visit(value)
        return found

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state, strict=True):
        params = self.named_parameters()
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise DimensionError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, value in state.items():
            if name not in params:
                continue
            p = params[name]
            if p.shape != tuple(np.shape(value)):
                raise DimensionError(f"{name}: checkpoint shape {np.shape(value)} vs model shape {p.shape}")
            p.data[...] = value
