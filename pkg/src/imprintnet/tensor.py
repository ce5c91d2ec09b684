"""Dense tensors with reverse-mode automatic differentiation.

Implements exactly the operations the embedding classifier needs: matrix
product, addition (including row-wise bias), elementwise multiply, ReLU,
L2 normalization, summation, and softmax cross-entropy. Each op records
its inputs and a backward rule on the result; ``backward`` replays the
recorded graph once in reverse topological order, accumulating gradients
into every reachable tensor that requires them.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable gradient recording inside the block (inference paths)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """An n-d float array plus an optional gradient buffer of the same shape.

    Tensors created directly are leaves; tensors returned by ops remember
    their parents and a backward rule so that ``backward`` on a downstream
    scalar can accumulate ``grad`` here. A tensor consumed by several ops
    receives the sum of the contributions, one per use.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("Tensor wraps raw array data, not another Tensor")
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def _result(data, parents, backward_fn) -> Tensor:
    # Hot path: bypass __init__ validation; ops guarantee a float ndarray.
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects rank-2 operands, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shapes do not align: {a.data.shape} @ {b.data.shape}")

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a rank-1 ``b`` is added to every row of a rank-2 ``a``."""
    a_shape, b_shape = a.data.shape, b.data.shape
    if a_shape == b_shape:

        def backward_fn(g):
            return g, g

    elif a.data.ndim == 2 and b_shape == (a_shape[1],):

        def backward_fn(g):
            return g, g.sum(axis=0)

    else:
        raise ValueError(f"add shapes do not align: {a_shape} + {b_shape}")
    return _result(a.data + b.data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shapes do not align: {a.data.shape} * {b.data.shape}")

    def backward_fn(g):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is taken as 0."""

    def backward_fn(g):
        return (g * (x.data > 0),)

    return _result(np.maximum(x.data, 0), (x,), backward_fn)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a rank-0 tensor."""

    def backward_fn(g):
        return (np.full(x.data.shape, g, dtype=x.data.dtype),)

    return _result(np.asarray(x.data.sum()), (x,), backward_fn)


def l2_normalize(x: Tensor, axis: int, eps: float = 1e-12) -> Tensor:
    """Scale slices along ``axis`` to unit Euclidean norm.

    Slices whose norm falls below ``eps`` are divided by ``eps`` instead, so
    a zero vector maps to a zero vector rather than NaN; on that branch the
    divisor is constant, so the gradient is simply ``g / eps``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    norms = np.sqrt(np.sum(np.square(x.data), axis=axis, keepdims=True))
    clamped = np.maximum(norms, eps)
    out_data = x.data / clamped

    def backward_fn(g):
        # Jacobian of v/|v| is (I - u u^T)/|v|; the projection term is
        # dropped where the norm was clamped.
        inner = np.sum(g * out_data, axis=axis, keepdims=True)
        live = norms >= eps
        return ((g - out_data * (inner * live)) / clamped,)

    return _result(out_data, (x,), backward_fn)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax probability of each row's true label.

    Stabilized with the log-sum-exp shift. ``labels`` is a rank-1 integer
    array with one entry per row of ``logits``.
    """
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be rank-2, got shape {logits.data.shape}")
    y = np.asarray(labels)
    if not np.issubdtype(y.dtype, np.integer):
        raise TypeError(f"labels must be integers, got dtype {y.dtype}")
    n, c = logits.data.shape
    if y.shape != (n,):
        raise ValueError(f"labels shape {y.shape} does not match batch of {n} rows")
    if n == 0:
        raise ValueError("softmax_cross_entropy requires a non-empty batch")
    if y.min() < 0 or y.max() >= c:
        bad = int(y[(y < 0) | (y >= c)][0])
        raise IndexError(f"label {bad} outside [0, {c})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(n)
    loss_value = -log_probs[rows, y].mean()

    def backward_fn(g):
        dz = np.exp(log_probs)
        dz[rows, y] -= 1
        dz *= g / n
        return (dz,)

    return _result(np.asarray(loss_value), (logits,), backward_fn)


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar ``loss`` into every tensor that
    requires them, visiting each recorded op exactly once."""
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad")

    # Iterative depth-first post-order: every tensor appears after all of
    # the tensors computed from it once the list is reversed. Nodes are
    # marked seen when expanded, not when pushed: a tensor reachable along
    # several paths must still be ordered after its latest consumer.
    order = []
    seen = set()
    stack = [(loss, False)]
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

    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(order):
        if node._backward is None:
            continue
        contributions = node._backward(node.grad)
        for parent, contribution in zip(node._parents, contributions):
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = contribution
            else:
                # Out of place: contributions may alias upstream buffers.
                parent.grad = parent.grad + contribution


def grad_check(fn, wrt, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``fn`` takes no arguments, builds a fresh graph over the leaf tensors in
    ``wrt``, and returns a scalar tensor. Returns the worst coordinate-wise
    error |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-6), i.e. relative at normal
    scales and absolute below 1e-6. Run in float64 for trustworthy results.
    """
    for t in wrt:
        t.grad = None
    out = fn()
    backward(out)
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]

    worst = 0.0
    for t, g in zip(wrt, grads):
        flat = t.data.reshape(-1)
        g_flat = g.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            with no_grad():
                f_plus = float(fn().data)
            flat[i] = original - eps
            with no_grad():
                f_minus = float(fn().data)
            flat[i] = original
            fd = (f_plus - f_minus) / (2.0 * eps)
            scale = max(abs(float(g_flat[i])), abs(fd), 1e-6)
            worst = max(worst, abs(float(g_flat[i]) - fd) / scale)
    return worst
