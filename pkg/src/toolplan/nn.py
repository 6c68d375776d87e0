"""Minimal reverse-mode differentiable kernel on float64 numpy arrays.

A small tape: every op records its parents and a backward closure;
`backward()` on a scalar runs the closures in reverse topological
order.  Enough surface for dense layers, GRU/LSTM cells, softmax/BCE
losses, Adam, and finite-difference gradient verification.
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

CKPT_SCHEMA = "ckpt-v1"
BCE_CLAMP = 1e-12


class ShapeError(Exception):
    pass


class NonFiniteError(Exception):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None  # allocated lazily
        self._parents = tuple(parents)
        self._backward: Optional[Callable] = backward
        self.name = name

    # -- structure -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def grad_array(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
            if self.grad.shape != self.data.shape:
                self.grad = _unbroadcast(self.grad, self.data.shape)
        else:
            if np.shape(g) != self.data.shape:
                g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
            self.grad += g

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape})"

    # -- autodiff --------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar")
        if not np.isfinite(self.data).all():
            raise NonFiniteError("backward on non-finite value")
        topo: list = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic -----------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._lift(other)
        out = Tensor(self.data + other.data, (self, other))

        def back(g):
            self.accumulate(g)
            other.accumulate(g)

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self.accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        out = Tensor(self.data * other.data, (self, other))

        def back(g):
            self.accumulate(g * other.data)
            other.accumulate(g * self.data)

        out._backward = back
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = Tensor._lift(other)
        if self.data.ndim < 1 or other.data.ndim < 1:
            raise ShapeError("matmul needs at least 1-d operands")
        try:
            value = self.data @ other.data
        except ValueError as exc:
            raise ShapeError(f"matmul {self.data.shape} @ {other.data.shape}") from exc
        out = Tensor(value, (self, other))
        a, b = self.data, other.data

        def back(g):
            if a.ndim == 1 and b.ndim == 1:
                self.accumulate(g * b)
                other.accumulate(g * a)
            elif a.ndim == 2 and b.ndim == 1:
                self.accumulate(np.outer(g, b))
                other.accumulate(a.T @ g)
            elif a.ndim == 1 and b.ndim == 2:
                self.accumulate(b @ g)
                other.accumulate(np.outer(a, g))
            else:
                self.accumulate(g @ b.T)
                other.accumulate(a.T @ g)

        out._backward = back
        return out

    def transpose(self):
        out = Tensor(self.data.T, (self,))
        out._backward = lambda g: self.accumulate(g.T)
        return out

    # -- nonlinearities --------------------------------------------------

    def tanh(self):
        value = np.tanh(self.data)
        out = Tensor(value, (self,))
        out._backward = lambda g: self.accumulate(g * (1.0 - value**2))
        return out

    def sigmoid(self):
        value = 1.0 / (1.0 + np.exp(-np.clip(self.data, -500, 500)))
        out = Tensor(value, (self,))
        out._backward = lambda g: self.accumulate(g * value * (1.0 - value))
        return out

    def prelu(self, slope: float = 0.25):
        value = np.where(self.data > 0, self.data, slope * self.data)
        out = Tensor(value, (self,))
        # subgradient at exactly 0 defined as 1
        out._backward = lambda g: self.accumulate(
            g * np.where(self.data >= 0, 1.0, slope)
        )
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))
        out._backward = lambda g: self.accumulate(g / self.data)
        return out

    def clamp(self, lo: float, hi: float):
        value = np.clip(self.data, lo, hi)
        mask = (self.data > lo) & (self.data < hi)
        out = Tensor(value, (self,))
        out._backward = lambda g: self.accumulate(g * mask)
        return out

    def softmax(self):
        """Numerically stabilized softmax over the last axis."""
        shifted = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        value = e / e.sum(axis=-1, keepdims=True)
        out = Tensor(value, (self,))

        def back(g):
            dot = (g * value).sum(axis=-1, keepdims=True)
            self.accumulate(value * (g - dot))

        out._backward = back
        return out

    # -- reductions / reshapes ------------------------------------------

    def sum(self):
        out = Tensor(self.data.sum(), (self,))
        out._backward = lambda g: self.accumulate(np.broadcast_to(g, self.data.shape))
        return out

    def mean(self):
        n = self.data.size
        out = Tensor(self.data.mean(), (self,))
        out._backward = lambda g: self.accumulate(np.broadcast_to(g / n, self.data.shape))
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        out._backward = lambda g: self.accumulate(g.reshape(self.data.shape))
        return out

    def flatten(self):
        return self.reshape(-1)

    def repeat_rows(self, n: int):
        """Tile a 1-d vector into n identical rows."""
        if self.data.ndim != 1:
            raise ShapeError("repeat_rows needs a vector")
        out = Tensor(np.tile(self.data, (n, 1)), (self,))
        out._backward = lambda g: self.accumulate(g.sum(axis=0))
        return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t.accumulate(g[tuple(idx)])

    out._backward = back
    return out


def constant(data, name: str = "") -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), name=name)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def linear(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """y = x W^T (+ b), fused into one tape node; x is a vector or a
    batch of row vectors."""
    if W.data.shape[-1] != x.data.shape[-1]:
        raise ShapeError(f"linear: W {W.data.shape} vs x {x.data.shape}")
    value = x.data @ W.data.T
    if b is not None:
        value = value + b.data
    parents = (x, W) if b is None else (x, W, b)
    out = Tensor(value, parents)
    xd, Wd = x.data, W.data

    def back(g):
        x.accumulate(g @ Wd)
        if xd.ndim == 1:
            W.accumulate(np.outer(g, xd))
        else:
            W.accumulate(g.T @ xd)
        if b is not None:
            b.accumulate(g if g.ndim == 1 else g.sum(axis=0))

    out._backward = back
    return out


def gru_step(h_prev: Tensor, x: Tensor, p: dict, prefix: str = "") -> Tensor:
    """Standard GRU cell: z/r gates, candidate h~, convex-combined output.

    Parameter names: {prefix}{wz,uz,bz,wr,ur,br,wh,uh,bh}.
    """
    g = lambda k: p[prefix + k]
    z = (linear(x, g("wz"), g("bz")) + linear(h_prev, g("uz"))).sigmoid()
    r = (linear(x, g("wr"), g("br")) + linear(h_prev, g("ur"))).sigmoid()
    h_tilde = (linear(x, g("wh"), g("bh")) + linear(r * h_prev, g("uh"))).tanh()
    one = constant(np.ones_like(z.data))
    return (one - z) * h_prev + z * h_tilde


def lstm_step(h_prev: Tensor, c_prev: Tensor, x: Tensor, p: dict, prefix: str = ""):
    """Standard LSTM cell.  Parameter names: {prefix}{wi,ui,bi,...,wc,uc,bc}."""
    g = lambda k: p[prefix + k]
    i = (linear(x, g("wi"), g("bi")) + linear(h_prev, g("ui"))).sigmoid()
    f = (linear(x, g("wf"), g("bf")) + linear(h_prev, g("uf"))).sigmoid()
    o = (linear(x, g("wo"), g("bo")) + linear(h_prev, g("uo"))).sigmoid()
    c_tilde = (linear(x, g("wc"), g("bc")) + linear(h_prev, g("uc"))).tanh()
    c = f * c_prev + i * c_tilde
    h = o * c.tanh()
    return h, c


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to (0, 1)."""
    t = np.asarray(target, dtype=np.float64)
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("bce_loss targets must be binary")
    p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
    tt = constant(t)
    one = constant(np.ones_like(t))
    return -(tt * p.log() + (one - tt) * (one - p).log()).mean()


# ---------------------------------------------------------------------------
# Parameters and Adam
# ---------------------------------------------------------------------------


def make_param(rng: np.random.Generator, shape: tuple, name: str, fan_in: Optional[int] = None) -> Tensor:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init; zero for biases."""
    if fan_in is None:
        return Tensor(np.zeros(shape), name=name)
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), name=name)


class Adam:
    """Adam with decoupled weight decay and bias correction.

    Parameters that received no gradient in a step are left untouched,
    including their moment estimates.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1**t
        c2 = 1 - self.beta2**t
        scale = self.lr / c1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m, v = self.m[i], self.v[i]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p.data -= scale * m / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(
    computation: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference grads.

    `computation` must rebuild the graph and return a scalar each call.
    """
    for p in params:
        p.zero_grad()
    loss = computation()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is not finite")
    loss.backward()
    analytic = [p.grad_array().copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = computation().item()
            flat[idx] = orig - eps
            down = computation().item()
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            ana = a.reshape(-1)[idx]
            # the floor absorbs central-difference roundoff (~1e-11 for
            # an O(1) loss) on elements whose true gradient is near zero
            denom = max(1e-6, abs(ana) + abs(numeric))
            worst = max(worst, abs(ana - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints ("ckpt-v1": text header + little-endian float64 payload)
# ---------------------------------------------------------------------------


def save_checkpoint(path, tensors: dict, meta: Optional[dict] = None) -> None:
    names = sorted(tensors)
    header_lines = [CKPT_SCHEMA]
    header_lines.append("meta=" + json.dumps(meta or {}, sort_keys=True, separators=(",", ":")))
    header_lines.append(f"count={len(names)}")
    for name in names:
        arr = np.asarray(tensors[name], dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        header_lines.append(f"{name} {arr.ndim} {dims}".rstrip())
    header_lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header_lines) + "\n").encode("utf-8"))
        for name in names:
            arr = np.asarray(tensors[name], dtype=np.float64)
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.index(b"end\n") + len(b"end\n")
    header = blob[:nl].decode("utf-8").splitlines()
    payload = blob[nl:]
    if header[0] != CKPT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {header[0]!r}")
    meta = json.loads(header[1][len("meta=") :])
    count = int(header[2][len("count=") :])
    tensors = {}
    offset = 0
    for line in header[3 : 3 + count]:
        parts = line.split()
        name, ndim = parts[0], int(parts[1])
        shape = tuple(int(d) for d in parts[2 : 2 + ndim])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape)
        tensors[name] = arr.copy()
        offset += n * 8
    return tensors, meta
