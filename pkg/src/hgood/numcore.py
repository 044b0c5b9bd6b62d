"""Dense float64 tensors with reverse-mode automatic differentiation.

Small-scale by design: every value is a numpy float64 array, every op records
a backward closure on a per-result basis, and gradients are accumulated by a
topological sweep from a scalar loss. Includes the Gaussian KL / reparameterized
sampling pair used by the variational model and an Adam optimizer with global
gradient-norm clipping.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Param",
    "GaussianPosterior",
    "no_grad",
    "constant",
    "matmul",
    "concat",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "softplus",
    "softmax",
    "log_softmax",
    "log",
    "exp",
    "pow_const",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "transpose",
    "gather_rows",
    "cols",
    "normalize_rows",
    "cosine_rowwise",
    "sq_euclidean",
    "gaussian_kl",
    "reparam_sample",
    "backward",
    "Adam",
    "NonFiniteGradient",
    "grad_check",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's rule."""

    def __init__(self, op: str, *shapes):
        msg = f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(msg)


class NonFiniteGradient(RuntimeError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block. Forward values are unchanged."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array plus an optional slot on the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; heavy lifting lives in the module-level ops
    def __add__(self, other):
        return _elementwise("add", self, _wrap(other), lambda a, b: a + b,
                            lambda g, a, b: (g, g))

    def __radd__(self, other):
        return _wrap(other).__add__(self)

    def __sub__(self, other):
        return _elementwise("sub", self, _wrap(other), lambda a, b: a - b,
                            lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __mul__(self, other):
        return _elementwise("mul", self, _wrap(other), lambda a, b: a * b,
                            lambda g, a, b: (g * b, g * a))

    def __rmul__(self, other):
        return _wrap(other).__mul__(self)

    def __truediv__(self, other):
        return _elementwise("div", self, _wrap(other), lambda a, b: a / b,
                            lambda g, a, b: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return _wrap(other).__truediv__(self)

    def __neg__(self):
        out = _make(-self.data, (self,))
        if out.requires_grad:
            def _bw():
                _acc(self, -out.grad)
            out._backward = _bw
        return out

    def __matmul__(self, other):
        return matmul(self, other)


def _scalar_err(t):
    raise ValueError(f"item(): tensor of shape {t.shape} is not a scalar")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(x) -> Tensor:
    """A tensor that never participates in gradients."""
    return _wrap(x)


def _make(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _acc(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _elementwise(name, a: Tensor, b: Tensor, fwd, bwd) -> Tensor:
    try:
        data = fwd(a.data, b.data)
    except ValueError:
        raise ShapeError(name, a.data.shape, b.data.shape) from None
    out = _make(data, (a, b))
    if out.requires_grad:
        def _bw():
            ga, gb = bwd(out.grad, a.data, b.data)
            _acc(a, ga)
            _acc(b, gb)
        out._backward = _bw
    return out


def _unary(name, x: Tensor, fwd, bwd) -> Tensor:
    out = _make(fwd(x.data), (x,))
    if out.requires_grad:
        def _bw():
            _acc(x, bwd(out.grad, x.data, out.data))
        out._backward = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = _make(a.data @ b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _acc(a, out.grad @ b.data.T)
            _acc(b, a.data.T @ out.grad)
        out._backward = _bw
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ValueError("concat: empty input list")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None
    out = _make(data, tuple(ts))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in ts]
        splits = np.cumsum(sizes)[:-1]
        def _bw():
            for t, g in zip(ts, np.split(out.grad, splits, axis=axis)):
                _acc(t, g)
        out._backward = _bw
    return out


def relu(x: Tensor) -> Tensor:
    return _unary("relu", _wrap(x), lambda d: np.maximum(d, 0.0),
                  lambda g, d, o: g * (d > 0))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return _unary("leaky_relu", _wrap(x),
                  lambda d: np.where(d > 0, d, slope * d),
                  lambda g, d, o: g * np.where(d > 0, 1.0, slope))


def tanh(x: Tensor) -> Tensor:
    return _unary("tanh", _wrap(x), np.tanh, lambda g, d, o: g * (1.0 - o * o))


def sigmoid(x: Tensor) -> Tensor:
    def fwd(d):
        out = np.empty_like(d)
        pos = d >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        e = np.exp(d[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    return _unary("sigmoid", _wrap(x), fwd, lambda g, d, o: g * o * (1.0 - o))


def softplus(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = _make(np.logaddexp(0.0, x.data), (x,))
    if out.requires_grad:
        def _bw():
            _acc(x, out.grad / (1.0 + np.exp(-x.data)))
        out._backward = _bw
    return out


def softmax(x: Tensor, axis: int) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _make(y, (x,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            _acc(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._backward = _bw
    return out


def log_softmax(x: Tensor, axis: int) -> Tensor:
    """log(softmax(x)) computed without underflow; the max shift is treated as
    a constant, which leaves the exact gradient unchanged."""
    x = _wrap(x)
    shift = constant(x.data.max(axis=axis, keepdims=True))
    z = x - shift
    return z - log(reduce_sum(exp(z), axis=axis, keepdims=True))


def log(x: Tensor) -> Tensor:
    x = _wrap(x)
    if np.any(x.data <= 0):
        raise ValueError("log: input must be strictly positive")
    return _unary("log", x, np.log, lambda g, d, o: g / d)


def exp(x: Tensor) -> Tensor:
    return _unary("exp", _wrap(x), np.exp, lambda g, d, o: g * o)


def pow_const(x: Tensor, p: float) -> Tensor:
    x = _wrap(x)
    if p != int(p) and np.any(x.data < 0):
        raise ValueError("pow_const: negative base with fractional exponent")
    return _unary("pow_const", x, lambda d: d ** p,
                  lambda g, d, o: g * p * d ** (p - 1.0))


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _acc(x, np.broadcast_to(g, x.data.shape).copy())
        out._backward = _bw
    return out


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return reduce_sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    x = _wrap(x)
    out = _make(x.data.reshape(shape), (x,))
    if out.requires_grad:
        def _bw():
            _acc(x, out.grad.reshape(x.data.shape))
        out._backward = _bw
    return out


def transpose(x: Tensor) -> Tensor:
    x = _wrap(x)
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape)
    out = _make(x.data.T.copy(), (x,))
    if out.requires_grad:
        def _bw():
            _acc(x, out.grad.T)
        out._backward = _bw
    return out


def gather_rows(x: Tensor, idx) -> Tensor:
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = _make(x.data[idx], (x,))
    if out.requires_grad:
        def _bw():
            buf = np.zeros_like(x.data)
            np.add.at(buf, idx, out.grad)
            _acc(x, buf)
        out._backward = _bw
    return out


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Column slice [start, stop) of a 2-D tensor."""
    x = _wrap(x)
    if x.ndim != 2:
        raise ShapeError("cols", x.shape)
    out = _make(x.data[:, start:stop].copy(), (x,))
    if out.requires_grad:
        def _bw():
            buf = np.zeros_like(x.data)
            buf[:, start:stop] = out.grad
            _acc(x, buf)
        out._backward = _bw
    return out


def normalize_rows(x: Tensor) -> Tensor:
    """L2-normalize each row; all-zero rows stay zero (and get zero gradient)."""
    x = _wrap(x)
    if x.ndim != 2:
        raise ShapeError("normalize_rows", x.shape)
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    y = x.data / safe
    out = _make(y, (x,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            proj = (g * y).sum(axis=1, keepdims=True)
            gx = (g - y * proj) / safe
            gx = np.where(norms > 0, gx, 0.0)
            _acc(x, gx)
        out._backward = _bw
    return out


def cosine_rowwise(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of matching rows; zero rows contribute 0 by convention."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError("cosine_rowwise", a.shape, b.shape)
    return reduce_sum(normalize_rows(a) * normalize_rows(b), axis=1)


def sq_euclidean(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances, (n, d) x (m, d) -> (n, m)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("sq_euclidean", a.shape, b.shape)
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = _make((diff * diff).sum(axis=2), (a, b))
    if out.requires_grad:
        def _bw():
            g = out.grad
            _acc(a, 2.0 * (g.sum(axis=1, keepdims=True) * a.data - g @ b.data))
            _acc(b, 2.0 * (g.sum(axis=0)[:, None] * b.data - g.T @ a.data))
        out._backward = _bw
    return out


@dataclass
class GaussianPosterior:
    """Per-node diagonal Gaussian: mu and sigma share one (n, d) shape."""

    mu: Tensor
    sigma: Tensor


def gaussian_kl(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, diag(sigma^2)) || N(0, I)), summed over all entries."""
    mu, sigma = _wrap(mu), _wrap(sigma)
    if mu.shape != sigma.shape:
        raise ShapeError("gaussian_kl", mu.shape, sigma.shape)
    if np.any(sigma.data <= 0):
        raise ValueError("gaussian_kl: sigma must be strictly positive")
    return reduce_sum(0.5 * (mu * mu + sigma * sigma) - log(sigma) - 0.5)


def reparam_sample(post: GaussianPosterior, rng: np.random.Generator) -> Tensor:
    """mu + sigma * eps with eps ~ N(0, I); gradient reaches mu and sigma only."""
    if np.any(post.sigma.data <= 0):
        raise ValueError("reparam_sample: sigma must be strictly positive")
    eps = constant(rng.standard_normal(post.mu.shape))
    return post.mu + post.sigma * eps


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into t.grad for every tensor on the tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


@dataclass
class Param:
    """A named trainable tensor; names are unique within a model."""

    name: str
    tensor: Tensor

    def __post_init__(self):
        self.tensor.requires_grad = True


class Adam:
    """Adam with bias correction and global gradient-norm clipping."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float = 5.0):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("Adam: duplicate parameter names")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self._m = {p.name: np.zeros_like(p.tensor.data) for p in self.params}
        self._v = {p.name: np.zeros_like(p.tensor.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.tensor.grad = None

    def step(self):
        grads = {}
        sq_total = 0.0
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in parameter '{p.name}'")
            grads[p.name] = g
            sq_total += float((g * g).sum())
        total_norm = math.sqrt(sq_total)
        scale = self.clip_norm / total_norm if total_norm > self.clip_norm else 1.0
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p in self.params:
            g = grads.get(p.name)
            if g is None:
                continue
            g = g * scale
            m = self._m[p.name]
            v = self._v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.tensor.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.tensor.grad = None


def grad_check(build_loss, tensors, h: float = 1e-5, rel_floor: float = 1e-3) -> float:
    """Compare analytic gradients of `build_loss()` against central differences.

    `build_loss` must rebuild the loss from scratch (fresh tape, fixed seeds) on
    every call. Returns the max relative error over every coordinate of every
    tensor in `tensors`, with |a - fd| / max(|a|, |fd|, rel_floor) as the metric.
    """
    for t in tensors:
        t.grad = None
    loss = build_loss()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]
    worst = 0.0
    with no_grad():
        for t, a in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = build_loss().item()
                flat[i] = orig - h
                f_minus = build_loss().item()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                ai = a.reshape(-1)[i]
                err = abs(ai - fd) / max(abs(ai), abs(fd), rel_floor)
                worst = max(worst, err)
    for t in tensors:
        t.grad = None
    return worst
