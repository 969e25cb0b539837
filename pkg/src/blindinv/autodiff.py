"""Dense tensors and reverse-mode automatic differentiation on a tape.

A :class:`Tape` is rebuilt for every forward pass (define-by-run): each
operation appends a :class:`Node` whose parents precede it, so the tape
order is already topological and ``backward`` is a single reverse sweep.
Values are 64-bit, C-contiguous, and checked finite on construction, which
makes any NaN/Inf surface at the op that produced it instead of corrupting
a later result.

Gradients accumulate: ``backward`` adds the adjoints of the current sweep
into ``Node.grad``, so calling it twice without zeroing doubles every
gradient exactly.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import NumericalError, ShapeMismatchError


class Tensor:
    """Immutable dense array of 64-bit reals.

    ``assign_`` is the one sanctioned mutation point: optimizers replace
    the underlying buffer wholesale between tapes; the old buffer is never
    written, so nodes from a finished tape stay valid.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        _check_finite(arr)
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt a freshly computed float64 array without copying."""
        if not arr.flags.c_contiguous or arr.dtype != np.float64:
            arr = np.asarray(arr, dtype=np.float64, order="C")
        _check_finite(arr)
        t = object.__new__(cls)
        t.data = arr
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def assign_(self, arr: np.ndarray) -> None:
        arr = np.asarray(arr, dtype=np.float64, order="C")
        if arr.shape != self.data.shape:
            raise ShapeMismatchError(
                f"assign_ shape {arr.shape} does not match {self.data.shape}"
            )
        _check_finite(arr)
        self.data = arr

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


def _check_finite(arr: np.ndarray) -> None:
    if arr.size == 0:
        raise ShapeMismatchError("empty tensors are not allowed")
    # A single pass catches every non-finite case (NaN propagates, Inf
    # saturates); the full scan only runs to rule out benign overflow.
    if not np.isfinite(arr.sum(dtype=np.float64)):
        if not np.all(np.isfinite(arr)):
            raise NumericalError("non-finite value produced")


class Node:
    """One tape entry: a value, its accumulated adjoint, and provenance.

    ``constant`` marks leaves whose gradient nobody will read; expensive
    ops may skip computing their contribution.
    """

    __slots__ = ("id", "value", "grad", "op", "parents", "tape", "_grad_fn", "constant")

    def __init__(self, id, value, op, parents, tape, grad_fn, constant=False):
        self.id = id
        self.value = value
        self.grad = None  # lazily allocated; None means zero
        self.op = op
        self.parents = parents
        self.tape = tape
        self._grad_fn = grad_fn
        self.constant = constant

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul_elem(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op}, shape={self.value.shape})"


class Tape:
    """Append-only operation record; acyclic because parents are created
    first.  One tape per forward/backward pass, single-threaded."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, constant: bool = False) -> Node:
        if not isinstance(value, Tensor):
            value = Tensor(value)
        return self._append(value, "leaf", (), None, constant)

    def _append(self, value, op, parents, grad_fn, constant=False) -> Node:
        node = Node(len(self.nodes), value, op, parents, self, grad_fn, constant)
        self.nodes.append(node)
        return node


def backward(tape: Tape, root: Node) -> None:
    """Accumulate d(root)/d(node) into ``grad`` for every ancestor of
    ``root``.  The root must be scalar."""
    if root.tape is not tape:
        raise ValueError("root does not belong to this tape")
    if root.value.size != 1:
        raise ShapeMismatchError(
            f"backward requires a scalar root, got shape {root.value.shape}"
        )
    adjoints: dict[int, np.ndarray] = {root.id: np.ones_like(root.value.data)}
    for node in reversed(tape.nodes[: root.id + 1]):
        adj = adjoints.pop(node.id, None)
        if adj is None:
            continue
        if node._grad_fn is not None:
            for pid, contrib in node._grad_fn(adj):
                prev = adjoints.get(pid)
                adjoints[pid] = contrib if prev is None else prev + contrib
        node.grad = adj if node.grad is None else node.grad + adj


# ---------------------------------------------------------------------------
# Elementwise and linear ops
# ---------------------------------------------------------------------------


def _same_tape(*nodes) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


def _broadcast_check(a: Node, b: Node, opname: str) -> None:
    try:
        out = np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeMismatchError(
            f"{opname}: shapes {a.value.shape} and {b.value.shape} do not broadcast"
        ) from None
    if tuple(out) != a.value.shape:
        raise ShapeMismatchError(
            f"{opname}: right operand {b.value.shape} must broadcast into left "
            f"operand {a.value.shape}"
        )


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint down to a broadcast operand's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _broadcast_check(a, b, "add")

    def grad_fn(adj):
        return ((a.id, adj), (b.id, _reduce_to(adj, b.value.shape)))

    return tape._append(
        Tensor._wrap(a.value.data + b.value.data), "add", (a.id, b.id), grad_fn
    )


def sub(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _broadcast_check(a, b, "sub")

    def grad_fn(adj):
        return ((a.id, adj), (b.id, _reduce_to(-adj, b.value.shape)))

    return tape._append(
        Tensor._wrap(a.value.data - b.value.data), "sub", (a.id, b.id), grad_fn
    )


def mul_elem(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _broadcast_check(a, b, "mul_elem")
    av, bv = a.value.data, b.value.data

    def grad_fn(adj):
        return ((a.id, adj * bv), (b.id, _reduce_to(adj * av, b.value.shape)))

    return tape._append(Tensor._wrap(av * bv), "mul", (a.id, b.id), grad_fn)


def scalar_mul(a: Node, c: float) -> Node:
    c = float(c)

    def grad_fn(adj):
        return ((a.id, adj * c),)

    return a.tape._append(Tensor._wrap(a.value.data * c), "smul", (a.id,), grad_fn)


def matmul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    av, bv = a.value.data, b.value.data
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeMismatchError(
            f"matmul: shapes {av.shape} and {bv.shape} do not conform"
        )

    def grad_fn(adj):
        contribs = []
        if not a.constant:
            contribs.append((a.id, adj @ bv.T))
        if not b.constant:
            contribs.append((b.id, av.T @ adj))
        return contribs

    return tape._append(Tensor._wrap(av @ bv), "matmul", (a.id, b.id), grad_fn)


def conv2d_same(x: Node, f: Node) -> Node:
    """Same-size 2-D correlation with zero padding, stride 1.

    ``x`` is [C_in,H,W] or batched [B,C_in,H,W]; ``f`` is
    [C_out,C_in,kh,kw].  The anchor sits at (kh//2, kw//2), which for even
    kernels is the bottom-right of the four center cells.
    """
    tape = _same_tape(x, f)
    xv, fv = x.value.data, f.value.data
    if fv.ndim != 4:
        raise ShapeMismatchError(f"conv2d_same: filters must be 4-D, got {fv.shape}")
    batched = xv.ndim == 4
    xb = xv if batched else xv[None]
    if xb.ndim != 4 or xb.shape[1] != fv.shape[1]:
        raise ShapeMismatchError(
            f"conv2d_same: input {xv.shape} does not match filters {fv.shape}"
        )
    kh, kw = fv.shape[2], fv.shape[3]
    ah, aw = kh // 2, kw // 2
    out = kernels.correlate2d(xb, fv, ah, aw)

    def grad_fn(adj):
        adjb = adj if batched else adj[None]
        contribs = []
        if not x.constant:
            gx = kernels.input_grad(adjb, fv, ah, aw)
            contribs.append((x.id, gx if batched else gx[0]))
        if not f.constant:
            contribs.append((f.id, kernels.filter_grad(xb, adjb, kh, kw, ah, aw)))
        return contribs

    return tape._append(
        Tensor._wrap(out if batched else out[0]), "conv2d", (x.id, f.id), grad_fn
    )


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def relu(a: Node) -> Node:
    av = a.value.data

    def grad_fn(adj):
        return ((a.id, adj * (av > 0)),)

    return a.tape._append(Tensor._wrap(np.maximum(av, 0.0)), "relu", (a.id,), grad_fn)


def leaky_relu(a: Node, slope: float = 0.2) -> Node:
    av = a.value.data

    def grad_fn(adj):
        return ((a.id, adj * np.where(av > 0, 1.0, slope)),)

    return a.tape._append(
        Tensor._wrap(np.where(av > 0, av, slope * av)), "lrelu", (a.id,), grad_fn
    )


def tanh(a: Node) -> Node:
    tv = np.tanh(a.value.data)

    def grad_fn(adj):
        return ((a.id, adj * (1.0 - tv * tv)),)

    return a.tape._append(Tensor._wrap(tv), "tanh", (a.id,), grad_fn)


def sigmoid(a: Node) -> Node:
    av = a.value.data
    sv = np.empty_like(av)
    pos = av >= 0
    sv[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ex = np.exp(av[~pos])
    sv[~pos] = ex / (1.0 + ex)

    def grad_fn(adj):
        return ((a.id, adj * sv * (1.0 - sv)),)

    return a.tape._append(Tensor._wrap(sv), "sigmoid", (a.id,), grad_fn)


def abs_elem(a: Node) -> Node:
    av = a.value.data

    def grad_fn(adj):
        # subgradient at 0 is defined as 0
        return ((a.id, adj * np.sign(av)),)

    return a.tape._append(Tensor._wrap(np.abs(av)), "abs", (a.id,), grad_fn)


def log_clamped(a: Node, eps: float = 1e-8) -> Node:
    """log(max(a, eps)); gradient is zero on the clamped region."""
    av = a.value.data

    def grad_fn(adj):
        return ((a.id, np.where(av > eps, adj / av, 0.0)),)

    return a.tape._append(
        Tensor._wrap(np.log(np.maximum(av, eps))), "logc", (a.id,), grad_fn
    )


# ---------------------------------------------------------------------------
# Reductions and shape plumbing
# ---------------------------------------------------------------------------


def sum(a: Node) -> Node:  # noqa: A001 - deliberate op name
    av = a.value.data

    def grad_fn(adj):
        return ((a.id, np.full(av.shape, float(adj))),)

    return a.tape._append(Tensor._wrap(np.array(av.sum())), "sum", (a.id,), grad_fn)


def l1(a: Node) -> Node:
    """Sum of absolute values, as a scalar node."""
    return sum(abs_elem(a))


def reshape(a: Node, shape) -> Node:
    shape = tuple(int(s) for s in shape)
    av = a.value.data
    if int(np.prod(shape)) != av.size:
        raise ShapeMismatchError(f"reshape: cannot view {av.shape} as {shape}")

    def grad_fn(adj):
        return ((a.id, adj.reshape(av.shape)),)

    return a.tape._append(
        Tensor._wrap(av.reshape(shape)), "reshape", (a.id,), grad_fn
    )


def permute(a: Node, axes) -> Node:
    axes = tuple(int(ax) for ax in axes)
    av = a.value.data
    inv = np.argsort(axes)

    def grad_fn(adj):
        return ((a.id, np.ascontiguousarray(adj.transpose(inv))),)

    return a.tape._append(
        Tensor._wrap(np.ascontiguousarray(av.transpose(axes))),
        "permute",
        (a.id,),
        grad_fn,
    )


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


_KINKED_OPS = ("relu", "lrelu", "abs")


def grad_check(f, x, h: float = 1e-5, skip_mask=None) -> float:
    """Max relative error between the tape gradient of ``f`` and central
    finite differences.

    ``f`` maps a leaf Node to a scalar Node and must be pure.  Coordinates
    flagged in ``skip_mask`` (e.g. kinks of |x| at 0) are excluded, as are
    coordinates whose +/-h evaluations land on different sides of some
    activation kink inside the graph, where the central difference does
    not estimate a derivative of anything.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    tape = Tape()
    leaf = tape.leaf(x)
    out = f(leaf)
    if out.value.size != 1:
        raise ShapeMismatchError("grad_check requires a scalar-valued f")
    backward(tape, out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros(x.shape)

    flat = x.data.ravel()
    numeric = np.empty(flat.size)
    crossed = np.zeros(flat.size, dtype=bool)
    for i in range(flat.size):
        fp, sig_p = _eval_perturbed(f, flat, x.shape, i, +h)
        fm, sig_m = _eval_perturbed(f, flat, x.shape, i, -h)
        numeric[i] = (fp - fm) / (2.0 * h)
        crossed[i] = not _signatures_match(sig_p, sig_m)

    a = analytic.ravel()
    rel = np.abs(a - numeric) / np.maximum(1e-8, np.abs(a) + np.abs(numeric))
    keep = ~crossed
    if skip_mask is not None:
        keep &= ~np.asarray(skip_mask).ravel()
    rel = rel[keep]
    if rel.size == 0:
        return 0.0
    return float(rel.max())


def _eval_perturbed(f, flat, shape, i, delta):
    pert = flat.copy()
    pert[i] += delta
    tape = Tape()
    node = tape.leaf(Tensor(pert.reshape(shape)))
    value = f(node).value.item()
    return value, _kink_signature(tape)


def _kink_signature(tape: Tape) -> list:
    """Sign pattern of every kinked activation's input across the tape."""
    sig = []
    for node in tape.nodes:
        if node.op in _KINKED_OPS:
            sig.append(np.sign(tape.nodes[node.parents[0]].value.data))
    return sig


def _signatures_match(a: list, b: list) -> bool:
    if len(a) != len(b):
        return False
    return all(np.array_equal(x, y) for x, y in zip(a, b))
