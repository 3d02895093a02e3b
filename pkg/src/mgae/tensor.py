"""Dense float64 matrices with reverse-mode gradients.

Every value is a 2-D ``float64`` array.  Operations build a graph of
:class:`Tensor` nodes; :func:`backward` walks it in reverse topological order
and accumulates ``d loss / d param`` into each :class:`Parameter`.  Only the
handful of operations the autoencoder needs are provided.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DimensionError, NumericError

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def as_matrix(x) -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array (scalars become 1x1, vectors rows)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {arr.shape}")
    return arr


class Tensor:
    """A node in the recorded computation."""

    __slots__ = ("value", "parents", "grad_fn", "op", "requires_grad", "__weakref__")

    def __init__(self, value, parents: tuple[Tensor, ...] = (), grad_fn: GradFn | None = None,
                 op: str = "const", requires_grad: bool = False):
        self.value = as_matrix(value)
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"


class Parameter(Tensor):
    """A trainable leaf.  ``grad`` always has the same shape as ``value``."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str):
        super().__init__(np.array(as_matrix(value), dtype=np.float64), op="param",
                         requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(value: np.ndarray, op: str, parents: tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{op} produced non-finite values")
    if any(p.requires_grad for p in parents):
        return Tensor(value, parents, grad_fn, op, True)
    return Tensor(value, op=op)


# --------------------------------------------------------------------------- ops


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _finish(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def sparse_matmul(s: sp.spmatrix, b) -> Tensor:
    """``s @ b`` for a constant sparse ``s``; only ``b`` receives gradient."""
    b = _lift(b)
    if s.shape[1] != b.rows:
        raise DimensionError(f"sparse_matmul: cannot multiply {s.shape} by {b.shape}")
    st = s.T.tocsr()
    return _finish(np.asarray(s @ b.value), "sparse_matmul", (b,), lambda g: (st @ g,))


def add(a, b) -> Tensor:
    """Element-wise sum; ``b`` may also be a single row broadcast over ``a``."""
    a, b = _lift(a), _lift(b)
    if a.shape == b.shape:
        return _finish(a.value + b.value, "add", (a, b), lambda g: (g, g))
    if b.rows == 1 and b.cols == a.cols:
        return _finish(a.value + b.value, "add", (a, b),
                       lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not match")


def hadamard(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    return _finish(av * bv, "hadamard", (a, b), lambda g: (g * bv, g * av))


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.value > 0
    return _finish(np.where(mask, a.value, 0.0), "relu", (a,), lambda g: (g * mask,))


def scale(a, c: float) -> Tensor:
    a = _lift(a)
    return _finish(a.value * c, "scale", (a,), lambda g: (g * c,))


def concat_cols(parts: Sequence) -> Tensor:
    parts = tuple(_lift(p) for p in parts)
    if not parts:
        raise DimensionError("concat_cols: nothing to concatenate")
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def grad_fn(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _finish(np.concatenate([p.value for p in parts], axis=1), "concat_cols", parts, grad_fn)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _lift(a)
    if not 0 <= start <= stop <= a.rows:
        raise DimensionError(f"slice_rows: [{start}:{stop}] outside {a.rows} rows")

    def grad_fn(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        return (full,)

    return _finish(a.value[start:stop], "slice_rows", (a,), grad_fn)


def gather_rows(a, index) -> Tensor:
    """Rows ``a[index]``; repeated indices accumulate gradient."""
    a = _lift(a)
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise DimensionError("gather_rows: index must be one-dimensional")
    if index.size and (index.min() < 0 or index.max() >= a.rows):
        raise DimensionError(f"gather_rows: index out of range for {a.rows} rows")
    n = a.rows

    def grad_fn(g):
        scatter = sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))),
                                shape=(n, index.size))
        return (np.asarray(scatter @ g),)

    return _finish(a.value[index], "gather_rows", (a,), grad_fn)


def reshape(a, rows: int, cols: int) -> Tensor:
    a = _lift(a)
    if rows * cols != a.value.size:
        raise DimensionError(f"reshape: {a.shape} cannot become ({rows}, {cols})")
    shape = a.shape
    return _finish(a.value.reshape(rows, cols), "reshape", (a,), lambda g: (g.reshape(shape),))


def sum_all(a) -> Tensor:
    a = _lift(a)
    shape = a.shape
    return _finish(np.array([[a.value.sum()]]), "sum", (a,),
                   lambda g: (np.full(shape, g[0, 0]),))


def mean_all(a) -> Tensor:
    a = _lift(a)
    return scale(sum_all(a), 1.0 / a.value.size)


def positive_first_nll(logits) -> Tensor:
    """Mean over rows of ``-log softmax(row)[0]``.

    Column 0 of each row holds the positive score and the remaining columns
    the sampled negatives.  The log-sum-exp uses max subtraction.
    """
    logits = _lift(logits)
    x = logits.value
    if x.shape[1] < 1 or x.shape[0] < 1:
        raise DimensionError(f"positive_first_nll: empty logits {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("positive_first_nll received non-finite scores")
    shifted = x - x.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=1, keepdims=True)
    per_row = np.log(denom[:, 0]) - shifted[:, 0]
    rows = x.shape[0]

    def grad_fn(g):
        probs = expd / denom
        probs[:, 0] -= 1.0
        return (probs * (g[0, 0] / rows),)

    return _finish(np.array([[per_row.mean()]]), "positive_first_nll", (logits,), grad_fn)


def rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain-array product whose row ``i`` depends only on ``a[i]`` bit for bit.

    BLAS picks different kernels for different row counts, so ``(A @ B)[i]``
    and ``A[i:i+1] @ B`` can disagree in the last ulp.  Inference scoring goes
    through this instead so batched and single-pair scores are identical.
    """
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"rowwise_matmul: cannot multiply {a.shape} by {b.shape}")
    return np.einsum("ij,jk->ik", a, b, optimize=False)


def logistic(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------- autodiff


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d p`` into ``p.grad`` for every reachable parameter."""
    if not isinstance(loss, Tensor) or loss.value.shape != (1, 1):
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward needs a 1x1 loss tensor, got shape {shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# -------------------------------------------------------------------------- adam


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            beta = getattr(self, name)
            if not 0.0 < beta < 1.0:
                raise ContractError(f"{name} must lie in (0, 1), got {beta}")


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update of every parameter from its ``grad``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        if m.shape != p.value.shape:
            raise DimensionError(f"adam: moment shape {m.shape} != parameter {p.name} {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad * p.grad
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ------------------------------------------------------------------ grad checking


@dataclass
class GradCheckReport:
    """Worst relative error per parameter from :func:`finite_diff_check`."""

    errors: dict[str, float]
    tol: float
    h: float

    @property
    def worst_param(self) -> str | None:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.__getitem__)

    @property
    def worst_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        if self.passed:
            return f"gradient check passed: worst {self.worst_error:.3e} ({self.worst_param}) < {self.tol:g}"
        bad = ", ".join(f"{n}={self.errors[n]:.3e}" for n in self.failures)
        return f"gradient check failed (tol {self.tol:g}): {bad}"


def finite_diff_check(closure: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-5,
                      tol: float = 1e-4, *, floor: float = 1e-6,
                      max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare :func:`backward` against central differences.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    the floor keeps coordinates whose true gradient is zero from dividing
    round-off by round-off.  ``max_coords`` checks a random subset of each
    parameter's entries instead of all of them.
    """
    params = list(params)
    zero_grads(params)
    base = closure()
    backward(base)
    analytic = {p.name: p.grad.copy() for p in params}
    zero_grads(params)

    again = closure().item()
    if again != base.item():
        raise ContractError(
            f"closure is not deterministic: {base.item()!r} then {again!r} at identical parameters")

    errors: dict[str, float] = {}
    for p in params:
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        worst = 0.0
        grad = analytic[p.name].reshape(-1)
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            up = closure().item()
            flat[i] = old - h
            down = closure().item()
            flat[i] = old
            numeric = (up - down) / (2.0 * h)
            a = grad[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        errors[p.name] = worst
    return GradCheckReport(errors, tol, h)
