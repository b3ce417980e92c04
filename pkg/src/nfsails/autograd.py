"""Reverse-mode automatic differentiation on a flat operation tape.

Gradients are needed in exactly two places: the training loss with respect to
the coupling-net weights, and the model log-density with respect to its input
(the latent score). Both are scalar-rooted, so a minimal Wengert-list tape
with a closed, enumerated primitive set is enough. Every value is a float64
ndarray (or float64 scalar); each primitive validates operand shapes eagerly
and records a vector-Jacobian closure for the backward sweep.

The primitive set is closed: adding an op means adding a forward + backward
pair here and a finite-difference test next to the existing ones. Tapes are
single-owner; do not share one across concurrent tasks.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "EXP_CLAMP",
    "Parameter",
    "ShapeMismatchError",
    "Tape",
    "Var",
    "add",
    "backward",
    "clip",
    "concat",
    "exp",
    "log",
    "matvec",
    "mul",
    "scale",
    "shift",
    "slice_cols",
    "sum_all",
    "tanh",
]

# exp() clamps its argument to +-EXP_CLAMP before exponentiation so early
# training steps cannot overflow the coupling scale; the derivative is zero
# outside the clamp window.
EXP_CLAMP = 30.0


class ShapeMismatchError(ValueError):
    """A primitive received non-conforming operand shapes."""

    def __init__(self, primitive: str, detail: str):
        super().__init__(f"{primitive}: {detail}")
        self.primitive = primitive


class Parameter:
    """Fixed-shape, mutable-value weight array.

    The shape is frozen at construction; assignments (in place or through the
    ``value`` setter) must keep it and must stay finite.
    """

    __slots__ = ("_value",)

    def __init__(self, value):
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Parameter value must be finite")
        self._value = arr

    @property
    def value(self) -> np.ndarray:
        return self._value

    @value.setter
    def value(self, new):
        arr = np.asarray(new, dtype=np.float64)
        if arr.shape != self._value.shape:
            raise ShapeMismatchError(
                "parameter", f"cannot assign shape {arr.shape} over {self._value.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("Parameter value must be finite")
        self._value = arr

    @property
    def shape(self):
        return self._value.shape


class _Node:
    __slots__ = ("value", "parents", "vjp")

    def __init__(self, value, parents, vjp):
        self.value = value
        self.parents = parents
        self.vjp = vjp


class Var:
    """Handle to one tape node; carries the forward value."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return np.shape(self.value)


class Tape:
    """Append-only record of primitive evaluations in topological order.

    Recording stores only forward values and parent ids; adjoint buffers are
    created by :func:`backward`, never during the forward pass.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value) -> Var:
        """Register an input or parameter value as a gradient root-capable node."""
        if isinstance(value, Parameter):
            value = value.value
        return self._emit(np.asarray(value, dtype=np.float64), (), None)

    def _emit(self, value, parents, vjp) -> Var:
        self.nodes.append(_Node(value, parents, vjp))
        return Var(self, len(self.nodes) - 1)


def backward(tape: Tape, root: Var) -> list:
    """Adjoints of every node reachable from a scalar root.

    Returns a list aligned with node ids: entry ``i`` is the float64 array
    d(root)/d(node i value) for reached nodes and ``None`` elsewhere.
    """
    if root.tape is not tape:
        raise ValueError("backward: root is not a node of this tape")
    if np.ndim(root.value) != 0:
        raise ValueError(
            f"backward: root must be scalar, got shape {np.shape(root.value)}"
        )
    adjoints: list = [None] * len(tape.nodes)
    adjoints[root.idx] = np.float64(1.0)
    for idx in range(root.idx, -1, -1):
        adj = adjoints[idx]
        if adj is None:
            continue
        node = tape.nodes[idx]
        if not node.parents:
            continue
        for pid, contrib in zip(node.parents, node.vjp(adj)):
            if adjoints[pid] is None:
                adjoints[pid] = contrib
            else:
                # Never accumulate in place: contributions may alias upstream
                # adjoint buffers.
                adjoints[pid] = adjoints[pid] + contrib
    return adjoints


def _same_tape(primitive: str, *vs: Var) -> Tape:
    tape = vs[0].tape
    for v in vs[1:]:
        if v.tape is not tape:
            raise ValueError(f"{primitive}: operands recorded on different tapes")
    return tape


def add(a: Var, b: Var) -> Var:
    """Elementwise sum; also accepts a trailing-axis bias against a 2-D batch."""
    tape = _same_tape("add", a, b)
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        return tape._emit(av + bv, (a.idx, b.idx), lambda adj: (adj, adj))
    if av.ndim == 2 and bv.shape == (av.shape[1],):
        return tape._emit(
            av + bv, (a.idx, b.idx), lambda adj: (adj, adj.sum(axis=0))
        )
    raise ShapeMismatchError("add", f"operand shapes {av.shape} and {bv.shape}")


def mul(a: Var, b: Var) -> Var:
    """Elementwise (Hadamard) product of same-shape operands."""
    tape = _same_tape("mul", a, b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ShapeMismatchError("mul", f"operand shapes {av.shape} and {bv.shape}")
    return tape._emit(av * bv, (a.idx, b.idx), lambda adj: (adj * bv, adj * av))


def scale(a: Var, c: float) -> Var:
    """Multiply by a plain (non-differentiated) float constant."""
    c = float(c)
    return a.tape._emit(a.value * c, (a.idx,), lambda adj: (adj * c,))


def shift(a: Var, c: float) -> Var:
    """Add a plain (non-differentiated) float constant."""
    c = float(c)
    return a.tape._emit(a.value + c, (a.idx,), lambda adj: (adj,))


def matvec(w: Var, x: Var) -> Var:
    """Apply a (p, q) weight matrix to a (q,) vector or an (n, q) batch."""
    tape = _same_tape("matvec", w, x)
    wv, xv = w.value, x.value
    if wv.ndim != 2 or xv.ndim not in (1, 2) or xv.shape[-1] != wv.shape[1]:
        raise ShapeMismatchError(
            "matvec", f"weight shape {wv.shape} against input shape {xv.shape}"
        )
    if xv.ndim == 1:
        return tape._emit(
            xv @ wv.T,
            (w.idx, x.idx),
            lambda adj: (np.outer(adj, xv), adj @ wv),
        )
    return tape._emit(
        xv @ wv.T,
        (w.idx, x.idx),
        lambda adj: (adj.T @ xv, adj @ wv),
    )


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return a.tape._emit(y, (a.idx,), lambda adj: (adj * (1.0 - y * y),))


def exp(a: Var) -> Var:
    """exp with the argument clamped to [-EXP_CLAMP, EXP_CLAMP]."""
    av = a.value
    y = np.exp(np.clip(av, -EXP_CLAMP, EXP_CLAMP))
    inside = (av > -EXP_CLAMP) & (av < EXP_CLAMP)
    return a.tape._emit(y, (a.idx,), lambda adj: (adj * y * inside,))


def log(a: Var) -> Var:
    av = a.value
    return a.tape._emit(np.log(av), (a.idx,), lambda adj: (adj / av,))


def clip(a: Var, lo: float, hi: float) -> Var:
    """Clamp to [lo, hi]; the derivative is zero outside the open interval."""
    av = a.value
    inside = (av > lo) & (av < hi)
    return a.tape._emit(
        np.clip(av, lo, hi), (a.idx,), lambda adj: (adj * inside,)
    )


def sum_all(a: Var) -> Var:
    """Full reduction to a float64 scalar."""
    shape = a.value.shape
    return a.tape._emit(
        np.float64(np.sum(a.value)),
        (a.idx,),
        lambda adj: (np.full(shape, adj),),
    )


def slice_cols(a: Var, start: int, stop: int) -> Var:
    """Contiguous slice along the trailing axis."""
    av = a.value
    if not (0 <= start < stop <= av.shape[-1]):
        raise ShapeMismatchError(
            "slice_cols", f"range [{start}, {stop}) out of bounds for shape {av.shape}"
        )

    def vjp(adj):
        g = np.zeros_like(av)
        g[..., start:stop] = adj
        return (g,)

    return a.tape._emit(av[..., start:stop], (a.idx,), vjp)


def concat(a: Var, b: Var) -> Var:
    """Concatenate along the trailing axis."""
    tape = _same_tape("concat", a, b)
    av, bv = a.value, b.value
    if av.ndim != bv.ndim or av.shape[:-1] != bv.shape[:-1]:
        raise ShapeMismatchError(
            "concat", f"operand shapes {av.shape} and {bv.shape}"
        )
    split = av.shape[-1]
    return tape._emit(
        np.concatenate([av, bv], axis=-1),
        (a.idx, b.idx),
        lambda adj: (adj[..., :split], adj[..., split:]),
    )
