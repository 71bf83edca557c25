"""Small define-by-run reverse-mode autodiff over float64 numpy arrays.

Every operation returns a new :class:`Tensor`. Tensors that depend on a
``requires_grad`` leaf keep a reference to their parents and a closure that
maps the output adjoint to one adjoint per parent; the graph is rebuilt on
every forward pass and walked once in reverse topological order by
:meth:`Tensor.backward`.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

EPS_NORM = 1e-12


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An input lies outside the domain of the operation."""


class DegenerateRowError(ValueError):
    """A row has (numerically) zero norm and cannot be normalized."""


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: BackwardFn | None = None,
        op: str = "",
    ):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every requires_grad leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("implicit gradient only defined for scalar outputs")
            grad = np.ones_like(self.data)

        order = _topological_order(self)
        adjoints: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + pg
                else:
                    adjoints[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(data: np.ndarray, requires_grad: bool, parents, backward, op: str) -> Tensor:
    # takes ownership of ``data`` without copying; only for freshly computed arrays
    out = Tensor.__new__(Tensor)
    data = np.asarray(data, dtype=np.float64)
    data.flags.writeable = False
    out.data = data
    out.grad = None
    out.requires_grad = requires_grad
    out._parents = parents
    out._backward = backward
    out.op = op
    return out


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return _wrap(data, True, parents, backward, op)
    return _wrap(data, False, (), None, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from exc


def stop_gradient(x: Tensor) -> Tensor:
    """Identity in the forward pass; blocks every gradient path through ``x``."""
    return _wrap(x.data, False, (), None, "stop_gradient")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
        "div",
    )


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scalar_mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(x: Tensor) -> Tensor:
    return _make(x.data.T, (x,), lambda g: (g.T,), "transpose")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError("log: input must be strictly positive")
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise DomainError("sqrt: input must be non-negative")
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g / (2.0 * out),), "sqrt")


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    xd = x.data
    return _make(np.logaddexp(0.0, xd), (x,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * xd)),), "softplus")


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scalar_mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def variance(x: Tensor, axis: int | None = None, keepdims: bool = False, unbiased: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    ddof = 1 if unbiased else 0
    if n - ddof < 1:
        raise DimensionError(f"variance: need at least {ddof + 1} entries along the axis, got {n}")
    centered = x.data - x.data.mean(axis=axis, keepdims=True)
    out = (centered**2).sum(axis=axis, keepdims=keepdims) / (n - ddof)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (g * 2.0 * centered / (n - ddof),)

    return _make(out, (x,), backward, "variance")


def diagonal(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"diagonal: expected a square matrix, got {x.shape}")
    return _make(np.diagonal(x.data).copy(), (x,), lambda g: (np.diag(g),), "diagonal")


@lru_cache(maxsize=8)
def offdiag_mask(n: int) -> np.ndarray:
    mask = ~np.eye(n, dtype=bool)
    mask.flags.writeable = False
    return mask


def logsumexp(
    x: Tensor, axis: int | None = None, mask: np.ndarray | None = None, keepdims: bool = False
) -> Tensor:
    """log of the sum of exp(x) along ``axis``, restricted to entries where ``mask`` is True."""
    xd = x.data
    if mask is not None:
        if mask is offdiag_mask(xd.shape[0]) and xd.ndim == 2:
            weights = xd.copy()
            np.fill_diagonal(weights, -np.inf)
        else:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
            weights = np.where(mask, xd, -np.inf)
    else:
        weights = xd.copy()
    shift = np.max(weights, axis=axis, keepdims=True)
    if not np.all(np.isfinite(shift)):
        raise DimensionError("logsumexp: mask selects no entries along the reduced axis")
    weights -= shift
    np.exp(weights, out=weights)  # masked-out entries become exactly 0
    total = weights.sum(axis=axis, keepdims=True)
    out_keep = np.log(total) + shift
    weights /= total
    out = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _make(out, (x,), backward, "logsumexp")


def _row_norms(xd: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", xd, xd))[:, None]
    if np.any(norms < EPS_NORM):
        raise DegenerateRowError("row norm below the normalization floor")
    return norms


def _normalize_adjoint(g: np.ndarray, xd: np.ndarray, norms: np.ndarray) -> np.ndarray:
    denom = norms + EPS_NORM
    radial = np.einsum("ij,ij->i", xd, g)[:, None]
    return g / denom - xd * radial / (norms * denom**2)


def l2_normalize_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"l2_normalize_rows: expected a matrix, got {x.shape}")
    xd = x.data
    norms = _row_norms(xd)
    return _make(xd / (norms + EPS_NORM), (x,), lambda g: (_normalize_adjoint(g, xd, norms),), "l2_normalize_rows")


def cosine_sim_matrix(a: Tensor, b: Tensor, scale: float = 1.0) -> Tensor:
    """Entry (i, j) is ``scale`` times the cosine between row i of ``a`` and row j of ``b``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_sim_matrix: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    na, nb = _row_norms(ad), _row_norms(bd)
    ua, ub = ad / (na + EPS_NORM), bd / (nb + EPS_NORM)
    sim = ua @ ub.T
    np.clip(sim, -1.0, 1.0, out=sim)
    if scale != 1.0:
        sim *= scale

    def backward(g):
        if scale != 1.0:
            g = g * scale
        return (_normalize_adjoint(g @ ub, ad, na), _normalize_adjoint(g.T @ ua, bd, nb))

    return _make(sim, (a, b), backward, "cosine_sim_matrix")


def rowwise_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine between row i of ``a`` and row i of ``b`` (the diagonal of the cosine matrix)."""
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"rowwise_cosine: incompatible shapes {a.shape} and {b.shape}")
    return sum(l2_normalize_rows(a) * l2_normalize_rows(b), axis=1)
