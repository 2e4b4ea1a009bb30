"""Minimal reverse-mode autodiff over numpy arrays.

Everything is float64. A Tensor wraps a flat numpy array plus graph
linkage (parents + a backward closure). Broadcasting is deliberately
restricted: elementwise ops accept equal shapes, a python scalar, or a
single leading row (1, d) / (d,) against (N, d). Anything else must be
made explicit with reshape / matmul so the backward rules stay auditable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_GUARD = 1e-12  # floor for log/sqrt arguments


class ShapeError(ValueError):
    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """Autodiff value: data, grad slot, and operation-graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op=""):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op or 'leaf'})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate grads of every reachable tensor. Root must be scalar.

        Repeated calls accumulate; use zero_grad on parameters to reset.
        """
        if self.data.size != 1:
            raise ShapeError("backward(root must be scalar)", self.data.shape)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(constant(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def constant(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req,
                  _parents=tuple(p for p in parents) if req else (),
                  _backward=backward if req else None, _op=op)


# -- elementwise binary ops with restricted broadcasting --

def _bcast_mode(op, a, b):
    """'same', 'scalar' (b is 0-d), or 'row' (b is (1,d)/(d,) vs a (N,d))."""
    if a.data.shape == b.data.shape:
        return "same"
    if b.data.ndim == 0 or b.data.size == 1 and a.data.ndim >= 1:
        return "scalar"
    if a.data.ndim == 2 and b.data.shape in ((1, a.data.shape[1]), (a.data.shape[1],)):
        return "row"
    raise ShapeError(op, a.data.shape, b.data.shape)


def _reduce_to(g, t, mode):
    if mode == "same":
        return g
    if mode == "scalar":
        return g.sum().reshape(t.data.shape)
    return g.sum(axis=0).reshape(t.data.shape)


def _binary(op_name, a, b, fwd, dfa, dfb):
    a, b = constant(a), constant(b)
    swapped = False
    try:
        mode = _bcast_mode(op_name, a, b)
    except ShapeError:
        mode = _bcast_mode(op_name, b, a)  # raises if hopeless
        swapped = True
    x, y = (b, a) if swapped else (a, b)
    bd = np.broadcast_to(y.data, x.data.shape) if mode != "same" else y.data
    out_data = fwd(x.data, bd) if not swapped else fwd(bd, x.data)

    def backward(g):
        ga = dfa(g, a.data, b.data)
        gb = dfb(g, a.data, b.data)
        if a.requires_grad:
            a._accum(_reduce_to(ga, a, "same" if not swapped else mode))
        if b.requires_grad:
            b._accum(_reduce_to(gb, b, mode if not swapped else "same"))
        return None

    return _make(out_data, (a, b), backward, op_name)


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, ad, bd: g, lambda g, ad, bd: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, ad, bd: g, lambda g, ad, bd: -g)


def mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, ad, bd: g * bd, lambda g, ad, bd: g * ad)


def div(a, b):
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, ad, bd: g / bd, lambda g, ad, bd: -g * ad / (bd * bd))


def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


# -- elementwise unary ops --

def _unary(op_name, a, fwd, dfx):
    a = constant(a)
    out_data = fwd(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * dfx(a.data, out_data))

    return _make(out_data, (a,), backward, op_name)


def relu(a):
    return _unary("relu", a, lambda x: np.maximum(x, 0.0),
                  lambda x, y: (x > 0).astype(np.float64))


def sigmoid(a):
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    return _unary("sigmoid", a, fwd, lambda x, y: y * (1.0 - y))


def tanh(a):
    return _unary("tanh", a, np.tanh, lambda x, y: 1.0 - y * y)


def texp(a):
    return _unary("exp", a, np.exp, lambda x, y: y)


def tlog(a):
    # inputs clamped to EPS_GUARD; grad uses the clamped value
    return _unary("log", a, lambda x: np.log(np.maximum(x, EPS_GUARD)),
                  lambda x, y: 1.0 / np.maximum(x, EPS_GUARD))


def tsqrt(a):
    return _unary("sqrt", a, lambda x: np.sqrt(np.maximum(x, EPS_GUARD)),
                  lambda x, y: 0.5 / np.sqrt(np.maximum(x, EPS_GUARD)))


def softplus(a):
    return _unary("softplus", a, lambda x: np.logaddexp(0.0, x),
                  lambda x, y: 1.0 / (1.0 + np.exp(-x)))


def tabs(a):
    return _unary("abs", a, np.abs, lambda x, y: np.sign(x))


def clamp(a, lo, hi):
    return _unary("clamp", a, lambda x: np.clip(x, lo, hi),
                  lambda x, y: ((x >= lo) & (x <= hi)).astype(np.float64))


def softmax(a, axis=-1):
    a = constant(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * s).sum(axis=axis, keepdims=True)
            a._accum((g - dot) * s)

    return _make(s, (a,), backward, "softmax")


# -- reductions / structure --

def tsum(a, axis=None, keepdims=False):
    a = constant(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a._accum(np.broadcast_to(g.reshape(()), a.data.shape).copy()
                         if not keepdims else np.broadcast_to(g, a.data.shape).copy())
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                a._accum(np.broadcast_to(ge, a.data.shape).copy())

    return _make(out_data, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    a = constant(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def concat(tensors, axis=0):
    tensors = [constant(t) for t in tensors]
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return _make(out_data, tuple(tensors), backward, "concat")


def reshape(a, shape):
    a = constant(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accum(g.reshape(a.data.shape))

    return _make(out_data, (a,), backward, "reshape")


def transpose(a):
    a = constant(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.data.shape)

    def backward(g):
        if a.requires_grad:
            a._accum(g.T)

    return _make(a.data.T, (a,), backward, "transpose")


def gather(a, idx):
    """Rows a[idx] for a 1-D integer index array; backward scatter-adds."""
    a = constant(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather(index must be 1-D)", idx.shape)
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a._accum(acc)

    return _make(out_data, (a,), backward, "gather")


def l2norm(a, axis=-1, keepdims=True):
    """Euclidean norm along axis, guarded so the grad at zero stays finite."""
    a = constant(a)
    sq = (a.data * a.data).sum(axis=axis, keepdims=keepdims)
    out_data = np.sqrt(np.maximum(sq, EPS_GUARD))

    def backward(g):
        if a.requires_grad:
            ge = g if keepdims else np.expand_dims(g, axis)
            ne = out_data if keepdims else np.expand_dims(out_data, axis)
            a._accum(ge * a.data / ne)

    return _make(out_data, (a,), backward, "l2norm")


# -- gradient checking --

@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    passed: bool
    worst_index: int = -1

    def __str__(self):
        tag = "ok" if self.passed else "FAIL"
        return f"grad_check {tag}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e})"


def _rel_err(a, n, floor=1e-2):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


def grad_check(f, x, eps=1e-5, tol=1e-5):
    """Compare analytic grad of scalar-valued f(x) against central differences."""
    x.requires_grad = True
    x.grad = None
    out = f(x)
    out.backward()
    analytic = x.grad.copy()
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x).data)
        flat[i] = orig - eps
        fm = float(f(x).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * eps)
    rel = _rel_err(analytic, numeric)
    worst = int(np.argmax(rel))
    m = float(rel.reshape(-1)[worst])
    return GradCheckReport(max_rel_err=m, tol=tol, passed=m <= tol, worst_index=worst)


def grad_check_direction(f, tensors, rng, eps=1e-5, tol=1e-4):
    """Directional central-difference check over a list of tensors.

    Probes f along one random unit direction spanning all given tensors,
    comparing the analytic directional derivative <grad, v> to
    (f(x+eps v) - f(x-eps v)) / (2 eps). Cheap enough for full pipelines.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    out = f()
    out.backward()
    dirs = []
    total = 0.0
    norm_sq = 0.0
    for t in tensors:
        v = rng.standard_normal(t.data.shape)
        norm_sq += (v * v).sum()
        dirs.append(v)
    scale = 1.0 / np.sqrt(norm_sq)
    for t, v in zip(tensors, dirs):
        v *= scale
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        total += float((g * v).sum())
    for t, v in zip(tensors, dirs):
        t.data += eps * v
    fp = float(f().data)
    for t, v in zip(tensors, dirs):
        t.data -= 2.0 * eps * v
    fm = float(f().data)
    for t, v in zip(tensors, dirs):
        t.data += eps * v
    numeric = (fp - fm) / (2.0 * eps)
    m = float(_rel_err(np.array(total), np.array(numeric)))
    return GradCheckReport(max_rel_err=m, tol=tol, passed=m <= tol)


# -- parameters --

@dataclass
class Parameter:
    """Named leaf tensor plus Adam moment buffers."""
    tensor: Tensor
    name: str
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.tensor.requires_grad = True
        if self.m is None:
            self.m = np.zeros_like(self.tensor.data)
        if self.v is None:
            self.v = np.zeros_like(self.tensor.data)

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


class ParamStore:
    """Ordered name -> Parameter map for a whole model."""

    def __init__(self):
        self._params = {}

    def add(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(Tensor(data, requires_grad=True), name)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.grad = None

    def num_values(self):
        return sum(p.data.size for p in self._params.values())

    def copy_state(self):
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, state):
        for k, p in self._params.items():
            if k not in state:
                raise KeyError(f"missing parameter in state: {k}")
            if state[k].shape != p.data.shape:
                raise ShapeError(f"load_state[{k}]", state[k].shape, p.data.shape)
            p.tensor.data = state[k].astype(np.float64).copy()


def affine_init(rng, fan_in, fan_out):
    """Weights uniform in +-sqrt(1/fan_in), biases zero."""
    bound = np.sqrt(1.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return w, b


_ACTIVATIONS = {
    "linear": lambda t: t,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
}


class MLP:
    """Affine stack with per-layer activations, parameters held in a ParamStore."""

    def __init__(self, store, name, dims, activations=None, rng=None):
        if activations is None:
            activations = ["relu"] * (len(dims) - 2) + ["linear"]
        if len(activations) != len(dims) - 1:
            raise ValueError("one activation per layer required")
        for a in activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation: {a}")
        self.activations = activations
        self.layers = []
        for i in range(len(dims) - 1):
            w, b = affine_init(rng, dims[i], dims[i + 1])
            wp = store.add(f"{name}.w{i}", w)
            bp = store.add(f"{name}.b{i}", b)
            self.layers.append((wp, bp))

    def __call__(self, x):
        return mlp_forward(self.layers, x, self.activations)


def mlp_forward(layers, x, activations):
    """x: (N, d_in) -> (N, d_out), alternating affine and activation."""
    h = x
    for (wp, bp), act in zip(layers, activations):
        h = add(matmul(h, wp.tensor), bp.tensor)
        h = _ACTIVATIONS[act](h)
    return h
