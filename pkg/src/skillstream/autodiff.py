"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is built implicitly as operations run (define-by-run):
every operation returns a new ``Tensor`` that remembers its parents and a
closure that propagates the output gradient back to them.  Calling
``backward()`` on a scalar tensor walks the graph in reverse topological
order.  Graphs are therefore acyclic by construction and a node's inputs
always precede it.

Design constraints honored here:

* float64 everywhere; values produced by the same inputs are bit-identical
  run to run (pure numpy, no hidden state).
* broadcasting is restricted to the leading-batch case: two shapes may only
  be combined if one is a suffix of the other.
* softmax / log-softmax subtract the row maximum before exponentiation.
* tensors are immutable once created; nothing here mutates ``data``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# When True, every op output is checked for NaN/Inf (slow; used in tests).
DEBUG_CHECK_FINITE = False


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A dense float64 value, optionally tracked by the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    _grad_enabled = True

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 _parents: tuple = (), _internal: bool = False):
        arr = _as_array(data)
        if not _internal and not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite entries in tensor '{name or '<leaf>'}'")
        if DEBUG_CHECK_FINITE and _internal and not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite result in op '{name}'")
        self.data = arr
        self.requires_grad = bool(requires_grad) and Tensor._grad_enabled
        self.grad = None
        self.name = name
        self._parents = _parents if self.requires_grad else ()
        self._backward = None

    # -- basics ----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}, name={self.name!r})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    class no_grad:
        """Context manager: ops inside build no graph (teacher/eval passes)."""

        def __enter__(self):
            self._prev = Tensor._grad_enabled
            Tensor._grad_enabled = False

        def __exit__(self, *exc):
            Tensor._grad_enabled = self._prev
            return False

    # -- graph walk ------------------------------------------------------

    def _topo(self):
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    def backward(self):
        """Reverse-mode sweep from this scalar; accumulates into ``.grad``.

        Returns the visited nodes so callers can clear gradients afterwards.
        """
        if self.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor that does not require grad")
        order = self._topo()
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return order

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division unsupported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # method forms used throughout the package
    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def _ensure_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _suffix_broadcast_ok(a: tuple, b: tuple) -> bool:
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    return big[len(big) - len(small):] == small


def _reduce_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum out the leading axes a suffix-broadcast introduced."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def _make(data, parents, backward, name=""):
    req = Tensor._grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, name=name, _internal=True,
                 _parents=tuple(p for p in parents if p.requires_grad))
    if req:
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    # grads are never mutated in place (accumulation reallocates), so the
    # incoming array can be adopted without a defensive copy
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.shape != b.shape and not _suffix_broadcast_ok(a.shape, b.shape):
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape} "
                         "(only leading-batch broadcasting is supported)")

    def bw(g):
        _accum(a, _reduce_to_shape(g, a.shape))
        _accum(b, _reduce_to_shape(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.shape != b.shape and not _suffix_broadcast_ok(a.shape, b.shape):
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape} "
                         "(only leading-batch broadcasting is supported)")
    ad, bd = a.data, b.data

    def bw(g):
        _accum(a, _reduce_to_shape(g * bd, a.shape))
        _accum(b, _reduce_to_shape(g * ad, b.shape))

    return _make(ad * bd, (a, b), bw, "mul")


def pow_const(a: Tensor, p: float) -> Tensor:
    a = _ensure_tensor(a)
    ad = a.data

    def bw(g):
        _accum(a, g * p * np.power(ad, p - 1.0))

    return _make(np.power(ad, p), (a,), bw, "pow")


def square(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    ad = a.data

    def bw(g):
        _accum(a, g * 2.0 * ad)

    return _make(ad * ad, (a,), bw, "square")


def exp(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    ad = a.data

    def bw(g):
        _accum(a, g / ad)

    return _make(np.log(ad), (a,), bw, "log")


def relu(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    ad = a.data

    def bw(g):
        _accum(a, g * (ad > 0))

    return _make(np.maximum(ad, 0.0), (a,), bw, "relu")


def sigmoid(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    # stable form for both signs
    out_data = np.where(a.data >= 0,
                        1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def bw(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bw, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    out_data = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bw, "tanh")


def softplus(a: Tensor) -> Tensor:
    """log(1+exp(x)), computed stably; used for nonnegative densities."""
    a = _ensure_tensor(a)
    ad = a.data
    out_data = np.logaddexp(0.0, ad)
    sig = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-np.abs(ad))),
                   np.exp(-np.abs(ad)) / (1.0 + np.exp(-np.abs(ad))))

    def bw(g):
        _accum(a, g * sig)

    return _make(out_data, (a,), bw, "softplus")


# -- linear algebra / reshaping ------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        _accum(a, g @ bd.T)
        _accum(b, ad.T @ g)

    return _make(ad @ bd, (a, b), bw, "matmul")


def tsum(a: Tensor, axis=None) -> Tensor:
    a = _ensure_tensor(a)
    in_shape = a.shape

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, in_shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), in_shape))

    return _make(a.data.sum(axis=axis), (a,), bw, "sum")


def tmean(a: Tensor, axis=None) -> Tensor:
    a = _ensure_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    a = _ensure_tensor(a)
    in_shape = a.shape

    def bw(g):
        _accum(a, g.reshape(in_shape))

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _ensure_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw, "transpose")


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_ensure_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(p, g[tuple(idx)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw, "concat")


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows (axis 0) by integer index array; backward scatter-adds."""
    a = _ensure_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    in_shape = a.shape

    def bw(g):
        acc = np.zeros(in_shape, dtype=np.float64)
        np.add.at(acc, idx, g)
        _accum(a, acc)

    return _make(a.data[idx], (a,), bw, "take_rows")


def rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice (axis 0)."""
    a = _ensure_tensor(a)
    in_shape = a.shape

    def bw(g):
        acc = np.zeros(in_shape, dtype=np.float64)
        acc[start:stop] = g
        _accum(a, acc)

    return _make(a.data[start:stop], (a,), bw, "rows")


# -- normalizations -------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _ensure_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * out_data)

    return _make(out_data, (a,), bw, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _ensure_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def bw(g):
        _accum(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), bw, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gain, bias = _ensure_tensor(x), _ensure_tensor(gain), _ensure_tensor(bias)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv

    def bw(g):
        gy = g * gain.data
        _accum(gain, _reduce_to_shape((g * xn).reshape(-1, d).sum(axis=0), gain.shape))
        _accum(bias, _reduce_to_shape(g.reshape(-1, d).sum(axis=0), bias.shape))
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xn).mean(axis=-1, keepdims=True)
        _accum(x, inv * (gy - m1 - xn * m2))

    return _make(xn * gain.data + bias.data, (x, gain, bias), bw, "layer_norm")


def nll_1d(logits: Tensor, index: int) -> Tensor:
    """Fused -log_softmax(logits)[index] for a 1-D head (stable)."""
    a = _ensure_tensor(logits)
    if a.data.ndim != 1:
        raise ValueError(f"nll_1d expects a 1-D head, got shape {a.shape}")
    shifted = a.data - a.data.max()
    lse = np.log(np.exp(shifted).sum())

    def bw(g):
        grad = np.exp(shifted - lse)
        grad[index] -= 1.0
        _accum(a, g * grad)

    return _make(lse - shifted[index], (a,), bw, "nll_1d")


def softened_cross_entropy(logits: Tensor, target_probs: np.ndarray,
                           temperature: float) -> Tensor:
    """Fused -sum_k p_k * log_softmax(logits/T)_k against constant probs."""
    a = _ensure_tensor(logits)
    z = a.data / temperature
    shifted = z - z.max()
    lse = np.log(np.exp(shifted).sum())
    log_q = shifted - lse

    def bw(g):
        q = np.exp(log_q)
        _accum(a, g * (q * target_probs.sum() - target_probs) / temperature)

    return _make(-(target_probs * log_q).sum(), (a,), bw, "softened_ce")


def cumsum_exclusive(a: Tensor, axis: int = -1) -> Tensor:
    """[x0,x1,x2] -> [0,x0,x0+x1] along ``axis`` (transmittance prefix sums)."""
    a = _ensure_tensor(a)
    inc = np.cumsum(a.data, axis=axis)
    out_data = inc - a.data  # exclusive prefix

    def bw(g):
        rev = np.flip(g, axis=axis)
        tail = np.flip(np.cumsum(rev, axis=axis), axis=axis) - g
        _accum(a, tail)

    return _make(out_data, (a,), bw, "cumsum_exclusive")


# -- gradient extraction & verification ------------------------------------


def gradients(loss: Tensor, params: dict) -> dict:
    """Backward from ``loss``; return named gradients, exact zeros for leaves
    that do not influence the loss.  Clears per-node grads afterwards."""
    order = loss.backward()
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    for node in order:
        node.grad = None
    for p in params.values():
        p.grad = None
    return out


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic vs central-difference gradients."""

    max_rel_err: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    tolerance: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values()) if self.max_rel_err else 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def check_gradients(fn, params: dict, epsilon: float = 1e-5,
                    tolerance: float = 1e-3, max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must rebuild and return the scalar loss from the current contents
    of ``params`` on every call.  ``max_entries`` limits how many entries of
    each parameter are perturbed (seeded subsample); None checks all.
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    report = GradCheckReport(tolerance=tolerance)
    analytic = gradients(fn(), params)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            entries = rng.choice(n, size=max_entries, replace=False)
        else:
            entries = np.arange(n)
        worst = 0.0
        for i in entries:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = fn().item()
            flat[i] = orig - epsilon
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            if rel > worst:
                worst = rel
            if rel > tolerance:
                report.failures.append((name, int(i), float(a), float(numeric), float(rel)))
        report.max_rel_err[name] = worst
        report.checked[name] = len(entries)
    return report
