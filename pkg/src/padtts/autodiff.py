"""Minimal reverse-mode autodiff over dense float64 arrays.

Define-by-run: every operation records its inputs and a backward closure on
the output tensor, and `backward` replays the tape in reverse topological
order. Shapes must match exactly (no broadcasting); mismatches raise
ShapeMismatch naming the op and both shapes.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes do not conform for the requested operation."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    A tensor is a node in the computation graph: `_parents` are the inputs
    of the op that produced it and `_backward(adjoint)` yields
    (parent, parent_adjoint) pairs.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operator sugar (each delegates to a module-level op) --

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Non-trainable tensor (e.g. targets, masks)."""
    return Tensor(x, requires_grad=False)


def _unary(name, x: Tensor, out_data, grad_fn) -> Tensor:
    out = Tensor(out_data, requires_grad=x.requires_grad, _parents=(x,) if x.requires_grad else (), _op=name)
    if x.requires_grad:
        out._backward = lambda g: [(x, grad_fn(g))]
    return out


def _binary(name, a: Tensor, b: Tensor, out_data, grad_a, grad_b) -> Tensor:
    req = a.requires_grad or b.requires_grad
    parents = tuple(t for t in (a, b) if t.requires_grad)
    out = Tensor(out_data, requires_grad=req, _parents=parents, _op=name)
    if req:
        def backward(g):
            pairs = []
            if a.requires_grad:
                pairs.append((a, grad_a(g)))
            if b.requires_grad:
                pairs.append((b, grad_b(g)))
            return pairs

        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatch("add", a.data.shape, b.data.shape)
    return _binary("add", a, b, a.data + b.data, lambda g: g, lambda g: g)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _unary("neg", x, -x.data, lambda g: -g)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatch("sub", a.data.shape, b.data.shape)
    return _binary("sub", a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatch("mul", a.data.shape, b.data.shape)
    return _binary("mul", a, b, a.data * b.data,
                   lambda g: g * b.data, lambda g: g * a.data)


def scale(x, s: float) -> Tensor:
    """Multiply by a python scalar (structural convenience, not broadcasting)."""
    x = as_tensor(x)
    s = float(s)
    return _unary("scale", x, x.data * s, lambda g: g * s)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    # grad convention: d relu / dx = 0 at x == 0, so an exactly-zero input
    # contributes no gradient (relied on by the zero-style paths)
    return _unary("relu", x, out, lambda g: g * (x.data > 0.0))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _unary("tanh", x, out, lambda g: g * (1.0 - out * out))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _unary("sigmoid", x, out, lambda g: g * out * (1.0 - out))


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def grad_fn(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return out * (g - dot)

    return _unary("softmax", x, out, grad_fn)


# ---------------------------------------------------------------------------
# matmul / structural ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix multiply without broadcasting.

    Supported: 1-D @ 2-D, N-D @ 2-D (contract last axis), and N-D @ N-D with
    identical leading (batch) dims.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ShapeMismatch("matmul", ad.shape, bd.shape)
    if bd.ndim == 2:
        if ad.shape[-1] != bd.shape[0]:
            raise ShapeMismatch("matmul", ad.shape, bd.shape)
        out = ad @ bd

        def grad_a(g):
            return g @ bd.T

        def grad_b(g):
            if ad.ndim == 1:
                return np.outer(ad, g)
            return ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, bd.shape[1])

        return _binary("matmul", a, b, out, grad_a, grad_b)
    if ad.ndim == bd.ndim and ad.ndim >= 3:
        if ad.shape[:-2] != bd.shape[:-2] or ad.shape[-1] != bd.shape[-2]:
            raise ShapeMismatch("matmul", ad.shape, bd.shape)
        out = ad @ bd
        return _binary("matmul", a, b, out,
                       lambda g: g @ np.swapaxes(bd, -1, -2),
                       lambda g: np.swapaxes(ad, -1, -2) @ g)
    raise ShapeMismatch("matmul", ad.shape, bd.shape)


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along an axis (default last); all other dims must match."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    base = list(tensors[0].data.shape)
    ax = axis if axis >= 0 else len(base) + axis
    for t in tensors[1:]:
        s = list(t.data.shape)
        if len(s) != len(base) or any(i != ax and s[i] != base[i] for i in range(len(base))):
            raise ShapeMismatch("concat", tensors[0].data.shape, t.data.shape)
    out_data = np.concatenate([t.data for t in tensors], axis=ax)
    req = any(t.requires_grad for t in tensors)
    parents = tuple(t for t in tensors if t.requires_grad)
    out = Tensor(out_data, requires_grad=req, _parents=parents, _op="concat")
    if req:
        sizes = [t.data.shape[ax] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            pairs = []
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[ax] = slice(lo, hi)
                    pairs.append((t, g[tuple(idx)]))
            return pairs

        out._backward = backward
    return out


def take(x, index) -> Tensor:
    """Slicing / integer / integer-array indexing.

    np.add.at accumulates correctly when an integer-array index repeats an
    element (e.g. an embedding lookup of a text with repeated characters).
    """
    x = as_tensor(x)
    out_data = x.data[index]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return gx

    return _unary("slice", x, out_data, grad_fn)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)
    in_shape = x.data.shape
    return _unary("reshape", x, out_data, lambda g: g.reshape(in_shape))


def repeat(x, reps: int, axis: int) -> Tensor:
    """Tile each element `reps` times along `axis` (gradient sums the copies)."""
    x = as_tensor(x)
    out_data = np.repeat(x.data, reps, axis=axis)
    ax = axis if axis >= 0 else x.data.ndim + axis

    def grad_fn(g):
        s = list(x.data.shape)
        s[ax:ax + 1] = [s[ax], reps]
        return g.reshape(s).sum(axis=ax + 1)

    return _unary("repeat", x, out_data, grad_fn)


def flip(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return _unary("flip", x, np.flip(x.data, axis=axis), lambda g: np.flip(g, axis=axis))


def conv1d(x, kernel) -> Tensor:
    """1-D convolution over the sequence axis of a (B, T, C_in) tensor.

    kernel: (width, C_in, C_out); zero 'same' padding, stride 1, no bias.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    xd, kd = x.data, kernel.data
    if xd.ndim != 3 or kd.ndim != 3 or xd.shape[2] != kd.shape[1]:
        raise ShapeMismatch("conv1d", xd.shape, kd.shape)
    width = kd.shape[0]
    T = xd.shape[1]
    pl = (width - 1) // 2
    pr = width - 1 - pl
    xp = np.pad(xd, ((0, 0), (pl, pr), (0, 0)))
    out = np.zeros((xd.shape[0], T, kd.shape[2]))
    for k in range(width):
        out += xp[:, k:k + T, :] @ kd[k]

    def grad_x(g):
        gxp = np.zeros_like(xp)
        for k in range(width):
            gxp[:, k:k + T, :] += g @ kd[k].T
        return gxp[:, pl:pl + T, :]

    def grad_k(g):
        gk = np.zeros_like(kd)
        for k in range(width):
            gk[k] = np.tensordot(xp[:, k:k + T, :], g, axes=([0, 1], [0, 1]))
        return gk

    return _binary("conv1d", x, kernel, out, grad_x, grad_k)


def dropout(x, rate: float, rng: "DropoutRng | None") -> Tensor:
    """Inverted dropout; train-mode only. `rng=None` means inference (identity)."""
    x = as_tensor(x)
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.next().random(x.data.shape) >= rate) / (1.0 - rate)
    return _unary("dropout", x, x.data * keep, lambda g: g * keep)


def l1_loss(pred, target, weights: np.ndarray | None = None) -> Tensor:
    """Mean absolute difference; optional non-negative weights (plain array).

    With weights w: sum(|pred-target| * w) / sum(w).
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeMismatch("l1_loss", pred.data.shape, target.data.shape)
    diff = pred.data - target.data
    if weights is None:
        denom = float(diff.size)
        out_data = np.abs(diff).sum() / denom
        w = None
    else:
        if weights.shape != diff.shape:
            raise ShapeMismatch("l1_loss.weights", weights.shape, diff.shape)
        denom = float(weights.sum())
        if denom <= 0.0:
            raise ValueError("l1_loss: weights sum to zero")
        out_data = (np.abs(diff) * weights).sum() / denom
        w = weights
    sign = np.sign(diff) if w is None else np.sign(diff) * w
    return _binary("l1_loss", pred, target, np.float64(out_data),
                   lambda g: g * sign / denom, lambda g: -g * sign / denom)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate `.grad` of every reachable requires_grad tensor with d loss/d t.

    The loss must be scalar. Per-call adjoints are computed on a scratch map
    and then accumulated into `.grad`, so repeated calls without zeroing add
    up exactly (two calls give exactly twice the one-call gradient).
    """
    if loss.data.shape != ():
        raise ValueError(f"backward: loss must be a scalar, got shape {tuple(loss.data.shape)}")
    # iterative topological order (graphs are deep: RNN unrolls)
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(topo):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._backward is not None:
            for parent, pg in node._backward(g):
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + pg
                else:
                    adjoint[key] = pg


# ---------------------------------------------------------------------------
# parameters and optimizers
# ---------------------------------------------------------------------------

class Parameter:
    """Named trainable tensor with a freeze flag.

    Frozen parameters receive exactly zero update from any optimizer step.
    """

    def __init__(self, name: str, data, frozen: bool = False):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)
        self.frozen = bool(frozen)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.data.shape}, frozen={self.frozen})"


class MissingGradient(RuntimeError):
    pass


class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = float(lr)

    def step(self):
        for p in self.params:
            if p.frozen:
                continue
            if p.tensor.grad is None:
                raise MissingGradient(f"no gradient on non-frozen parameter {p.name!r}")
            p.tensor.data -= self.lr * p.tensor.grad

    def zero_grad(self):
        for p in self.params:
            p.tensor.zero_grad()


class Adam:
    """Adam with bias correction; frozen parameters are left bit-identical."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self._m = {id(p): np.zeros_like(p.tensor.data) for p in self.params}
        self._v = {id(p): np.zeros_like(p.tensor.data) for p in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            if p.frozen:
                continue
            g = p.tensor.grad
            if g is None:
                raise MissingGradient(f"no gradient on non-frozen parameter {p.name!r}")
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            p.tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.tensor.zero_grad()


def clip_gradients(params, max_norm: float) -> float:
    """Scale all non-frozen gradients so their global L2 norm is <= max_norm."""
    total = 0.0
    grads = []
    for p in params:
        if not p.frozen and p.tensor.grad is not None:
            grads.append(p.tensor.grad)
            total += float(np.sum(p.tensor.grad ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


class DropoutRng:
    """Counter-based dropout randomness, reproducible by construction.

    Each draw is keyed by (seed, step, call index) through a Philox stream,
    so a forward pass at a given training step always sees the same masks.
    """

    def __init__(self, seed: int, step: int):
        self.seed = int(seed)
        self.step = int(step)
        self._calls = 0

    def next(self) -> np.random.Generator:
        key = (np.uint64(self.seed), np.uint64(self.step) << np.uint64(20) | np.uint64(self._calls))
        self._calls += 1
        return np.random.Generator(np.random.Philox(key=key))
