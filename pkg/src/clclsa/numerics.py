"""Dense 2-D float64 tensors with reverse-mode differentiation.

Every value in the package is a row-major 2-D array of 64-bit reals; scalars
are 1x1. Operations build a DAG of `Tensor` nodes (the computation record) and
`backward` replays it in reverse topological order, which is fixed, so a
single-threaded run is bitwise reproducible. The primitive set is exactly what
the model needs: affine maps, sigmoid/ReLU/row-softmax, inverted dropout,
batch normalization with running statistics, a handful of structural ops
(concat, gather/scatter of rows, per-row picks), and reductions.

Randomness goes through `RngStream`: a (seed, label) pair fully determines the
value sequence across runs and platforms (PCG64 seeded from the label's
SHA-256), so initialization, dropout masks, and simulation draws can be
replayed independently of call order elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "ProbabilityError",
    "BatchSizeError",
    "HyperparameterError",
    "RngStream",
    "derive_seed",
    "parameter",
    "constant",
    "affine",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "sigmoid",
    "relu",
    "softmax_rows",
    "dropout",
    "BatchNormState",
    "batch_norm",
    "concat_cols",
    "gather_rows",
    "scatter_rows",
    "pick_per_row",
    "sum_all",
    "mean_all",
    "log",
    "clamp_min",
    "mean_outer",
    "unit_sum",
    "custom_op",
    "accumulate_grad",
    "backward",
    "gradients",
    "zero_grads",
    "AdamState",
    "adam_step",
    "init_params",
]

_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(ValueError):
    """The computation record does not satisfy the backward contract."""


class ProbabilityError(ValueError):
    """A probability argument is outside its legal range."""


class BatchSizeError(ValueError):
    """The batch is too small for the requested mode."""


class HyperparameterError(ValueError):
    """An optimizer hyperparameter is outside its legal range."""


# ---------------------------------------------------------------------------
# Deterministic randomness


def _label_entropy(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, *parts) -> int:
    """Stable 63-bit seed derived from a base seed and context parts."""
    text = repr((int(seed),) + tuple(str(p) for p in parts))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


class RngStream:
    """Labeled deterministic random stream.

    Identical (seed, label) pairs produce identical draw sequences on every
    platform. `counter` records how many draws were taken, and `child`
    derives an independent stream whose sequence depends only on the combined
    label, never on draw order in the parent.
    """

    def __init__(self, seed: int, label: str):
        self.seed = int(seed) & _MASK64
        self.label = str(label)
        self.counter = 0
        entropy = np.random.SeedSequence([self.seed, _label_entropy(self.label)])
        self._gen = np.random.Generator(np.random.PCG64(entropy))

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{label}")

    def uniform(self, rows: int, cols: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        self.counter += 1
        return self._gen.uniform(low, high, size=(rows, cols))

    def normal(self, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
        self.counter += 1
        return self._gen.normal(0.0, scale, size=(rows, cols))

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high), matching numpy's half-open convention."""
        self.counter += 1
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, label={self.label!r}, counter={self.counter})"


# ---------------------------------------------------------------------------
# Tensor and graph construction


def _as_2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D; got ndim={arr.ndim}")
    return arr


class Tensor:
    """Node in the computation record: a 2-D float64 value plus backward hook."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.data = _as_2d(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = tuple(parents)
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"


def parameter(data, name=None) -> Tensor:
    """Leaf tensor that receives gradients."""
    return Tensor(data, requires_grad=True, name=name)


def constant(data, name=None) -> Tensor:
    """Leaf tensor outside the differentiated parameter set."""
    return Tensor(data, requires_grad=False, name=name)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else constant(value)


def _node(data, parents, backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    """Add into a tensor's gradient; for backward hooks of `custom_op` nodes."""
    _accumulate(t, g)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != tuple(shape):
        raise ShapeError(f"cannot reduce gradient {g.shape} to {tuple(shape)}")
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for dim in (0, 1):
        if a.shape[dim] != b.shape[dim] and 1 not in (a.shape[dim], b.shape[dim]):
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# Primitive operations


def affine(x, w, b) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.cols != w.rows:
        raise ShapeError(f"affine: inner dimensions disagree, x is {x.shape}, w is {w.shape}")
    if b.shape != (1, w.cols):
        raise ShapeError(f"affine: bias must be (1, {w.cols}), got {b.shape}")
    out_data = x.data @ w.data + b.data

    def backward_fn(out):
        g = out.grad
        _accumulate(x, g @ w.data.T)
        _accumulate(w, x.data.T @ g)
        _accumulate(b, g.sum(axis=0, keepdims=True))

    return _node(out_data, (x, w, b), backward_fn)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")

    def backward_fn(out):
        g = out.grad
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward_fn)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward_fn(out):
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(out.grad, b.shape))

    return _node(a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward_fn(out):
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, -_unbroadcast(out.grad, b.shape))

    return _node(a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward_fn(out):
        _accumulate(a, _unbroadcast(out.grad * b.data, a.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward_fn)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward_fn(out):
        _accumulate(a, c * out.grad)

    return _node(c * a.data, (a,), backward_fn)


def neg(a) -> Tensor:
    return scale(a, -1.0)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)

    def backward_fn(out):
        _accumulate(a, out.grad * s * (1.0 - s))

    return _node(s, (a,), backward_fn)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def backward_fn(out):
        _accumulate(a, out.grad * (a.data > 0))

    return _node(np.maximum(a.data, 0.0), (a,), backward_fn)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax, max-subtracted for stability."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward_fn(out):
        g = out.grad
        _accumulate(a, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _node(y, (a,), backward_fn)


def dropout(a, p: float, mode: str, rng: RngStream) -> Tensor:
    """Inverted dropout: train mode zeroes entries w.p. p and scales by 1/(1-p)."""
    a = as_tensor(a)
    _check_mode(mode)
    if not 0.0 <= p < 1.0:
        raise ProbabilityError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return a
    keep = rng.uniform(a.rows, a.cols) >= p
    mask = keep / (1.0 - p)

    def backward_fn(out):
        _accumulate(a, out.grad * mask)

    return _node(a.data * mask, (a,), backward_fn)


class BatchNormState:
    """Running statistics for one batch-norm layer (exponential moving average)."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))
        self.momentum = float(momentum)
        self.eps = float(eps)

    def copy(self) -> "BatchNormState":
        st = BatchNormState(self.running_mean.shape[1], self.momentum, self.eps)
        st.running_mean = self.running_mean.copy()
        st.running_var = self.running_var.copy()
        return st


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


def batch_norm(x, gamma, beta, state: BatchNormState, mode: str) -> Tensor:
    """Batch normalization over rows.

    Train mode normalizes by batch statistics (biased variance) and updates the
    running statistics in `state`; eval mode normalizes by the running
    statistics and leaves them untouched.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check_mode(mode)
    d = x.cols
    if gamma.shape != (1, d) or beta.shape != (1, d):
        raise ShapeError(f"batch_norm: gamma/beta must be (1, {d}), got {gamma.shape}, {beta.shape}")

    if mode == "train":
        n = x.rows
        if n < 2:
            raise BatchSizeError(f"batch_norm needs at least 2 rows in train mode, got {n}")
        mu = x.data.mean(axis=0, keepdims=True)
        var = x.data.var(axis=0, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv_std
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu
        state.running_var = (1.0 - m) * state.running_var + m * var

        def backward_fn(out):
            g = out.grad
            _accumulate(gamma, (g * xhat).sum(axis=0, keepdims=True))
            _accumulate(beta, g.sum(axis=0, keepdims=True))
            if x.requires_grad:
                dxhat = g * gamma.data
                _accumulate(x, (inv_std / n) * (
                    n * dxhat
                    - dxhat.sum(axis=0, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=0, keepdims=True)
                ))
    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv_std

        def backward_fn(out):
            g = out.grad
            _accumulate(gamma, (g * xhat).sum(axis=0, keepdims=True))
            _accumulate(beta, g.sum(axis=0, keepdims=True))
            _accumulate(x, g * (gamma.data * inv_std))

    out_data = xhat * gamma.data + beta.data
    return _node(out_data, (x, gamma, beta), backward_fn)


def concat_cols(parts) -> Tensor:
    """Column-wise concatenation of tensors sharing a row count."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_cols needs at least one tensor")
    n = parts[0].rows
    for p in parts:
        if p.rows != n:
            raise ShapeError(f"concat_cols: row counts differ, {n} vs {p.rows}")
    widths = [p.cols for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def backward_fn(out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, out.grad[:, lo:hi])

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward_fn)


def gather_rows(a, idx) -> Tensor:
    """Select rows by index; gradients scatter-add back."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise ShapeError(f"gather_rows: index out of range for {a.rows} rows")

    def backward_fn(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            _accumulate(a, g)

    return _node(a.data[idx], (a,), backward_fn)


def scatter_rows(src, idx, n_rows: int) -> Tensor:
    """Place src's rows at positions idx of an otherwise-zero (n_rows, cols) tensor."""
    src = as_tensor(src)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size != src.rows:
        raise ShapeError(f"scatter_rows: {idx.size} indices for {src.rows} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ShapeError(f"scatter_rows: index out of range for {n_rows} rows")
    out_data = np.zeros((n_rows, src.cols))
    out_data[idx] = src.data

    def backward_fn(out):
        _accumulate(src, out.grad[idx])

    return _node(out_data, (src,), backward_fn)


def pick_per_row(a, col_idx) -> Tensor:
    """N x 1 tensor of a[j, col_idx[j]]."""
    a = as_tensor(a)
    col_idx = np.asarray(col_idx, dtype=np.intp)
    if col_idx.shape != (a.rows,):
        raise ShapeError(f"pick_per_row: need {a.rows} column indices, got {col_idx.shape}")
    if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= a.cols):
        raise ShapeError(f"pick_per_row: column index out of range for {a.cols} columns")
    rows = np.arange(a.rows)

    def backward_fn(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[rows, col_idx] = out.grad[:, 0]
            _accumulate(a, g)

    return _node(a.data[rows, col_idx].reshape(-1, 1), (a,), backward_fn)


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def backward_fn(out):
        _accumulate(a, np.full_like(a.data, out.grad[0, 0]))

    return _node(a.data.sum(), (a,), backward_fn)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    size = a.data.size

    def backward_fn(out):
        _accumulate(a, np.full_like(a.data, out.grad[0, 0] / size))

    return _node(a.data.mean(), (a,), backward_fn)


def log(a) -> Tensor:
    """Natural log; callers clamp first when zeros are possible."""
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: inputs must be strictly positive (clamp first)")

    def backward_fn(out):
        _accumulate(a, out.grad / a.data)

    return _node(np.log(a.data), (a,), backward_fn)


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); gradient passes where a >= floor."""
    a = as_tensor(a)
    mask = a.data >= floor

    def backward_fn(out):
        _accumulate(a, out.grad * mask)

    return _node(np.maximum(a.data, floor), (a,), backward_fn)


def mean_outer(a, b) -> Tensor:
    """(1/N) sum_j outer(a_j, b_j), i.e. a^T b / N.

    The contraction is an einsum on the non-BLAS path so swapping the
    arguments yields the bitwise transpose.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.rows != b.rows:
        raise ShapeError(f"mean_outer: row counts differ, {a.shape} vs {b.shape}")
    n = a.rows
    if n == 0:
        raise BatchSizeError("mean_outer: empty batch")
    out_data = np.einsum("nd,ne->de", a.data, b.data, optimize=False) / n

    def backward_fn(out):
        g = out.grad
        _accumulate(a, (b.data @ g.T) / n)
        _accumulate(b, (a.data @ g) / n)

    return _node(out_data, (a, b), backward_fn)


def unit_sum(a) -> Tensor:
    """Rescale so all entries sum to 1."""
    a = as_tensor(a)
    s = a.data.sum()
    if s <= 0:
        raise ValueError("unit_sum: entries must sum to a positive value")
    out_data = a.data / s

    def backward_fn(out):
        g = out.grad
        _accumulate(a, (g - (g * out_data).sum()) / s)

    return _node(out_data, (a,), backward_fn)


def custom_op(data, parents, backward_fn) -> Tensor:
    """Escape hatch for fused operations defined outside this module."""
    return _node(data, tuple(parents), backward_fn)


# ---------------------------------------------------------------------------
# Backward pass


def _topo_order(root: Tensor):
    order = []
    seen = set()
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
        for p in reversed(node._parents):
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the record ending at a scalar loss."""
    if loss.shape != (1, 1):
        raise GraphError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node)


def zero_grads(params) -> None:
    for t in params.values():
        t.grad = None


def gradients(loss: Tensor, params) -> dict:
    """Gradients of a scalar loss for every named parameter.

    Parameters the record never reaches get zero gradients.
    """
    zero_grads(params)
    backward(loss)
    return {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }


# ---------------------------------------------------------------------------
# Optimizer and initialization


class AdamState:
    """First/second-moment accumulators plus step counter for Adam."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One Adam update with bias correction, in place on params' data."""
    if lr <= 0:
        raise HyperparameterError(f"learning rate must be positive, got {lr}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def init_params(shape, rng: RngStream, kind: str = "weight") -> np.ndarray:
    """Fan-based uniform weight init in [-s, s], s = sqrt(6/(fan_in+fan_out)); biases zero."""
    rows, cols = int(shape[0]), int(shape[1])
    if kind == "bias":
        return np.zeros((rows, cols))
    if kind != "weight":
        raise ValueError(f"kind must be 'weight' or 'bias', got {kind!r}")
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(rows, cols, -s, s)
