"""A small dense reverse-mode autodiff engine over numpy arrays.

Each primitive computes its forward value and registers a closure that maps
the output gradient to operand gradients. :func:`backward` topologically
orders the recorded graph (the tape) and replays it once in reverse. A tape
can be replayed only once; run the forward pass again for a new gradient.

Arrays keep their dtype: parameters are float32, gradient checks run the
same code in float64.
"""
import contextlib
import threading

import numpy as np
from scipy.special import erf, expit

from .errors import InvalidArgument

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._consumed = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __getitem__ = lambda self, key: index(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidArgument(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    """``a @ b`` for a 2-D right operand, or equal-leading-dims batched matmul."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise InvalidArgument(f"matmul: inner dims differ {a.shape} @ {b.shape}")
    if b.ndim == 2:
        k, n = b.shape

        def bw(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb

    elif a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2]:

        def bw(g):
            return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    else:
        raise InvalidArgument(f"matmul: unsupported operand shapes {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), bw)


# --------------------------------------------------------------------- shape


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def index(a, key):
    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        return (ga,)

    return _make(a.data[key], (a,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise InvalidArgument(f"concat: {e}") from None
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


# --------------------------------------------------------------------- reductions


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    return _make(
        np.asarray(a.data.sum(axis=axis, keepdims=keepdims)),
        (a,),
        lambda g: (np.array(_expand(g, a.shape, axis, keepdims)),),
    )


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), np.asarray(1.0 / count, dtype=a.dtype))


def masked_mean(a, mask, axis):
    """Mean of ``a`` over ``axis`` counting only positions where ``mask`` is true.

    ``mask`` has ``a``'s shape without the trailing feature axis; rows with
    no valid position give zero.
    """
    m = np.asarray(mask, dtype=a.dtype)
    count = np.maximum(m.sum(axis=axis), 1)
    summed = tsum(mul(a, m[..., None]), axis=axis)
    return mul(summed, (1.0 / count)[..., None].astype(a.dtype))


# --------------------------------------------------------------------- elementwise


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a):
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),))


def relu(a):
    return _make(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),))


def softplus(a):
    x = a.data
    out = np.logaddexp(0, x).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * expit(x),))


def gelu(a):
    """Exact GELU, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return _make((x * cdf).astype(x.dtype), (a,), lambda g: ((g * (cdf + x * pdf)).astype(x.dtype),))


def clip(a, lo, hi):
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _make(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def dropout(a, rate, rng, training=True):
    if not training or rate <= 0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return mul(a, keep)


# --------------------------------------------------------------------- composite layers


def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``; positions where ``mask`` is false get zero weight.

    A slice with no valid position is all zeros.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        x = np.where(mask, x, -np.inf)
    mx = np.max(x, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0)
    e = np.exp(x - mx)
    s = e.sum(axis=axis, keepdims=True)
    out = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x = a.data
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(-1, keepdims=True) - xhat * (gx_hat * xhat).mean(-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(lead), g.sum(lead)

    return _make(out.astype(x.dtype), (a, gamma, beta), bw)


def cosine_similarity(a, b, axis=-1, eps=1e-8):
    dot = tsum(mul(a, b), axis=axis)
    na = sqrt(add(tsum(mul(a, a), axis=axis), np.asarray(eps * eps, a.dtype)))
    nb = sqrt(add(tsum(mul(b, b), axis=axis), np.asarray(eps * eps, a.dtype)))
    return div(dot, mul(na, nb))


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# --------------------------------------------------------------------- backward


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise InvalidArgument(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already ran on this graph; recompute the forward pass")
    loss._consumed = True
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=p.dtype)
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        node._backward = None
        node._parents = ()
        node._consumed = True


def grad(loss, params):
    """Gradients of ``loss`` w.r.t. ``params``; zeros for params off the path."""
    for p in params:
        p.grad = None
    backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


# --------------------------------------------------------------------- optimizer


class AdamState:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params``."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        upd = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= upd.astype(p.dtype)


class Adam:
    def __init__(self, params, lr=1e-3, **kw):
        self.params = list(params)
        self.state = AdamState(self.params, lr=lr, **kw)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)


# --------------------------------------------------------------------- gradient check


def gradcheck(fn, inputs, h=1e-3, floor=1e-6):
    """Largest relative error between backprop and central differences.

    ``fn`` maps float64 tensors (one per array in ``inputs``) to a scalar
    tensor. Relative error per input is
    ``|g_bp - g_fd| / max(|g_bp|, |g_fd|, floor)`` in the 2-norm; the floor
    keeps gradients that are exactly zero (e.g. a key bias under softmax)
    from turning round-off into a relative error of 1.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(x.copy(), requires_grad=True) for x in arrays]
    backward(fn(*tensors))
    worst = 0.0
    for t, x in zip(tensors, arrays):
        analytic = np.zeros_like(x) if t.grad is None else t.grad
        numeric = np.zeros_like(x)
        flat = x.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig - h
            fm = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return worst
