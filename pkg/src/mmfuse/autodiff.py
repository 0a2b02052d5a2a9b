"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is recorded implicitly: every operation returns a Tensor that
keeps references to its parents and a closure computing the parent
gradients from the output gradient. ``Tensor.backward()`` topologically
orders the recorded operations and replays them once each, accumulating
gradients additively so a value consumed k times receives the sum of its
k upstream gradients.

All computation is double precision; the finite-difference checker
(``grad_check``) relies on that.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, NumericError


class Tensor:
    """Dense float64 array, optionally tracked by the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``grad`` of every requires-grad ancestor of this scalar."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            return
        topo = _toposort(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def sum(self):
        x = self
        out = _result(np.array(x.data.sum()), (x,))
        if out.requires_grad:
            def bw(g):
                _accumulate(x, np.broadcast_to(g, x.data.shape))
            out._backward = bw
        return out

    def mean(self):
        return scale(self.sum(), 1.0 / self.data.size)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{req}, name={self.name!r})"


def _result(data, parents):
    """Build an op output; graph links are kept only if a parent needs them."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = any(p.requires_grad for p in parents)
    t.name = None
    t._parents = tuple(parents) if t.requires_grad else ()
    t._backward = None
    return t


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _toposort(root):
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    out = _result(a.data + b.data, (a, b))
    if out.requires_grad:
        def bw(g):
            _accumulate(a, g)
            _accumulate(b, g)
        out._backward = bw
    return out


def mul(a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    out = _result(a.data * b.data, (a, b))
    if out.requires_grad:
        def bw(g):
            _accumulate(a, g * b.data)
            _accumulate(b, g * a.data)
        out._backward = bw
    return out


def scale(a, c):
    c = float(c)
    out = _result(a.data * c, (a,))
    if out.requires_grad:
        def bw(g):
            _accumulate(a, g * c)
        out._backward = bw
    return out


def relu(a):
    mask = a.data > 0.0
    out = _result(a.data * mask, (a,))
    if out.requires_grad:
        def bw(g):
            _accumulate(a, g * mask)
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: {a.data.shape} incompatible with {b.data.shape}"
        )
    out = _result(a.data @ b.data, (a, b))
    if out.requires_grad:
        def bw(g):
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)
        out._backward = bw
    return out


def linear(x, w, b):
    """x @ w + b for x (B,n), w (n,m), b (m,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(
            f"linear: input {x.data.shape} incompatible with weight {w.data.shape}"
        )
    if b.data.shape != (w.data.shape[1],):
        raise DimensionError(
            f"linear: bias {b.data.shape} incompatible with weight {w.data.shape}"
        )
    out = _result(x.data @ w.data + b.data, (x, w, b))
    if out.requires_grad:
        def bw(g):
            _accumulate(x, g @ w.data.T)
            _accumulate(w, x.data.T @ g)
            _accumulate(b, g.sum(axis=0))
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape):
    out = _result(x.data.reshape(shape), (x,))
    if out.requires_grad:
        def bw(g):
            _accumulate(x, g.reshape(x.data.shape))
        out._backward = bw
    return out


def concat(a, b):
    """Join along the last (feature) axis; leading axes must match."""
    if a.data.ndim != b.data.ndim or a.data.shape[:-1] != b.data.shape[:-1]:
        raise DimensionError(
            f"concat: shapes {a.data.shape} and {b.data.shape} differ off the last axis"
        )
    p = a.data.shape[-1]
    out = _result(np.concatenate([a.data, b.data], axis=-1), (a, b))
    if out.requires_grad:
        def bw(g):
            _accumulate(a, g[..., :p])
            _accumulate(b, g[..., p:])
        out._backward = bw
    return out


def split_thirds(x):
    """Divide the last axis into contiguous equal thirds (query, key, value)."""
    n = x.data.shape[-1]
    if n % 3 != 0:
        raise DimensionError(f"split_thirds: last axis {n} not divisible by 3")
    d = n // 3
    parts = []
    for k in range(3):
        sl = slice(k * d, (k + 1) * d)
        part = _result(np.ascontiguousarray(x.data[..., sl]), (x,))
        if part.requires_grad:
            def bw(g, sl=sl):
                if x.grad is None:
                    x.grad = np.zeros_like(x.data)
                x.grad[..., sl] += g
            part._backward = bw
        parts.append(part)
    return tuple(parts)


# ---------------------------------------------------------------------------
# softmax


def softmax(x):
    """Row-wise softmax with max subtraction; 1-D input is a single row."""
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericError("softmax: input contains non-finite values")
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _result(y, (x,))
    if out.requires_grad:
        def bw(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            _accumulate(x, y * (g - dot))
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class RunningStats:
    """Mutable running mean/var buffers of a batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


def batch_norm(x, gamma, beta, stats, mode):
    """Normalize features of a (B,F) or (B,C,H,W) batch.

    Train mode normalizes by the batch mean and population variance and
    updates the running statistics; eval mode normalizes by the running
    statistics. The affine transform gamma/beta is applied last. Train-mode
    backward differentiates through the batch statistics.
    """
    xd = x.data
    if xd.ndim not in (2, 4):
        raise DimensionError(f"batch_norm: expected 2-D or 4-D input, got {xd.shape}")
    nfeat = xd.shape[1]
    if gamma.data.shape != (nfeat,) or beta.data.shape != (nfeat,):
        raise DimensionError(
            f"batch_norm: gamma/beta must have shape ({nfeat},)"
        )
    if mode not in ("train", "eval"):
        raise ContractError(f"batch_norm: unknown mode {mode!r}")
    axes = (0,) + tuple(range(2, xd.ndim))
    bshape = (1, nfeat) + (1,) * (xd.ndim - 2)
    n = xd.size // nfeat
    gam = gamma.data.reshape(bshape)
    bet = beta.data.reshape(bshape)

    if mode == "train":
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        stats.mean[:] = (1.0 - stats.momentum) * stats.mean + stats.momentum * mean
        stats.var[:] = (1.0 - stats.momentum) * stats.var + stats.momentum * var
    else:
        mean = stats.mean
        var = stats.var

    inv = 1.0 / np.sqrt(var + stats.eps)
    inv_b = inv.reshape(bshape)
    xc = xd - mean.reshape(bshape)
    xhat = xc * inv_b
    out = _result(gam * xhat + bet, (x, gamma, beta))
    if out.requires_grad:
        if mode == "train":
            def bw(g):
                _accumulate(gamma, (g * xhat).sum(axis=axes))
                _accumulate(beta, g.sum(axis=axes))
                if x.requires_grad:
                    dxhat = g * gam
                    dvar = (dxhat * xc).sum(axis=axes, keepdims=True) * (
                        -0.5
                    ) * inv_b**3
                    dmean = -(dxhat * inv_b).sum(axis=axes, keepdims=True) + dvar * (
                        -2.0 / n
                    ) * xc.sum(axis=axes, keepdims=True)
                    _accumulate(x, dxhat * inv_b + dvar * 2.0 * xc / n + dmean / n)
        else:
            def bw(g):
                _accumulate(gamma, (g * xhat).sum(axis=axes))
                _accumulate(beta, g.sum(axis=axes))
                if x.requires_grad:
                    _accumulate(x, g * gam * inv_b)
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x, w, b):
    """Same-padded stride-1 convolution; w is (Cout, Cin, k, k) with odd k."""
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4 or wd.shape[2] != wd.shape[3]:
        raise DimensionError(f"conv2d: bad shapes x={xd.shape} w={wd.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise DimensionError(
            f"conv2d: input channels {xd.shape[1]} != kernel channels {wd.shape[1]}"
        )
    k = wd.shape[2]
    if k % 2 != 1:
        raise DimensionError(f"conv2d: kernel size {k} must be odd")
    pad = k // 2
    B, _, H, W = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # win: (B, Cin, H, W, k, k)
    y = np.einsum("bchwij,ocij->bohw", win, wd, optimize=True)
    y += b.data[None, :, None, None]
    out = _result(y, (x, w, b))
    if out.requires_grad:
        def bw(g):
            if w.requires_grad:
                _accumulate(w, np.einsum("bchwij,bohw->ocij", win, g, optimize=True))
            if b.requires_grad:
                _accumulate(b, g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        dxp[:, :, i : i + H, j : j + W] += np.einsum(
                            "bohw,oc->bchw", g, wd[:, :, i, j], optimize=True
                        )
                _accumulate(x, dxp[:, :, pad : pad + H, pad : pad + W])
        out._backward = bw
    return out


def max_pool2(x):
    """2x2 max pooling with stride 2; ties route the gradient to the first max."""
    xd = x.data
    if xd.ndim != 4 or xd.shape[2] % 2 or xd.shape[3] % 2:
        raise DimensionError(f"max_pool2: shape {xd.shape} not 4-D with even H, W")
    B, C, H, W = xd.shape
    h2, w2 = H // 2, W // 2
    blocks = xd.reshape(B, C, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        B, C, h2, w2, 4
    )
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    out = _result(y, (x,))
    if out.requires_grad:
        def bw(g):
            db = np.zeros_like(blocks)
            np.put_along_axis(db, idx[..., None], g[..., None], axis=-1)
            dx = (
                db.reshape(B, C, h2, w2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(B, C, H, W)
            )
            _accumulate(x, dx)
        out._backward = bw
    return out


def global_avg_pool(x):
    xd = x.data
    if xd.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected 4-D input, got {xd.shape}")
    area = xd.shape[2] * xd.shape[3]
    out = _result(xd.mean(axis=(2, 3)), (x,))
    if out.requires_grad:
        def bw(g):
            _accumulate(
                x, np.broadcast_to(g[:, :, None, None] / area, xd.shape).copy()
            )
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# loss


def cross_entropy_logits(logits, labels, class_weights):
    """Per-class weighted cross-entropy of softmax(logits), via log-sum-exp.

    loss = -(1/B) sum_b w[y_b] * log softmax(logits[b])[y_b]
    """
    z = logits.data
    if z.ndim != 2:
        raise DimensionError(f"cross_entropy_logits: expected (B,N), got {z.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    B = z.shape[0]
    if labels.shape != (B,):
        raise DimensionError(
            f"cross_entropy_logits: labels shape {labels.shape} != ({B},)"
        )
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    logp = z[np.arange(B), labels] - lse[:, 0]
    out = _result(np.array(-(w * logp).sum() / B), (logits,))
    if out.requires_grad:
        def bw(g):
            p = np.exp(z - lse)
            p[np.arange(B), labels] -= 1.0
            _accumulate(logits, p * (w * (float(g) / B))[:, None])
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst_index: int = -1


def grad_check(f, x, step=1e-5, tol=1e-4):
    """Compare analytic gradients of ``f`` w.r.t. ``x`` to central differences.

    ``f`` must map the Tensor ``x`` (whose data this routine perturbs in
    place) to a scalar Tensor, deterministically. The relative error uses
    max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if step <= 0:
        raise ContractError("grad_check: step must be positive")
    out = f(x)
    if out.data.size != 1:
        raise ContractError("grad_check: f must be scalar-valued")
    if not np.isfinite(out.data):
        raise NumericError("grad_check: f(x) is not finite")
    x.zero_grad()
    out.backward()
    analytic = (
        np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    ).ravel()

    flat = x.data.ravel()
    worst, worst_i = 0.0, -1
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x).data)
        flat[i] = orig - step
        fm = float(f(x).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"grad_check: f not finite at coordinate {i}")
        numeric = (fp - fm) / (2.0 * step)
        rel = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
        if rel > worst:
            worst, worst_i = rel, i
    return GradCheckReport(max_rel_error=worst, passed=worst < tol, worst_index=worst_i)
