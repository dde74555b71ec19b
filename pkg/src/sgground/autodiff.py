"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

Everything differentiable in the pipeline is recorded on a :class:`Tape` as a
sequence of primitive operations.  Values are always 2-D ``float64`` arrays
(row vectors are shape ``(1, d)``).  The backward pass walks the tape in
reverse insertion order and accumulates adjoints additively on fan-out.

A tape is single-owner: build it, call :meth:`Tape.backward` once, discard it.
Parameter arrays are never mutated by the tape; they enter as leaves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COSINE_NORM_EPS = 1e-12

PRIMITIVES = (
    "matmul",
    "add",
    "elementwise_mul",
    "concat_columns",
    "relu",
    "softmax_row",
    "cosine_similarity",
    "natural_log",
    "mean_of_rows",
    "sum",
    "scalar_affine",
    "clamp",
    # layout/indexing extensions (equivalent to matmul by constant 0/1
    # matrices, kept separate for speed)
    "transpose",
    "gather_rows",
    "scatter_add_rows",
)


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError):
    def __init__(self, primitive, *shapes):
        self.primitive = primitive
        self.shapes = tuple(shapes)
        super().__init__(f"{primitive}: incompatible shapes {self.shapes}")


class NonFiniteValue(AutodiffError):
    def __init__(self, primitive):
        self.primitive = primitive
        super().__init__(f"{primitive}: produced or received non-finite values")


class NonDeterministicBuilder(AutodiffError):
    pass


@dataclass
class Node:
    """One tape entry: a primitive application or a leaf."""

    id: int
    kind: str
    value: np.ndarray
    parents: tuple = ()
    trainable: bool = False
    name: str | None = None
    cache: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.value.shape


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise AutodiffError(f"expected a 2-D array, got ndim={a.ndim}")
    return a


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    g = grad
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(kind, a, b):
    sa, sb = a.shape, b.shape
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise ShapeMismatch(kind, sa, sb)
    return np.broadcast_shapes(sa, sb)


class Tape:
    """Record of primitive applications, in topological (insertion) order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, kind, value, parents=(), trainable=False, name=None, cache=None):
        if not np.isfinite(value).all():
            raise NonFiniteValue(kind)
        node = Node(
            id=len(self.nodes),
            kind=kind,
            value=value,
            parents=tuple(p.id for p in parents),
            trainable=trainable,
            name=name,
            cache=cache or {},
        )
        self.nodes.append(node)
        return node

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    # -- leaves ------------------------------------------------------------

    def leaf(self, value, trainable=False, name=None) -> Node:
        return self._record("leaf", _as_matrix(value).copy(), trainable=trainable, name=name)

    def constant(self, value) -> Node:
        return self.leaf(value, trainable=False)

    # -- generic entry point ------------------------------------------------

    def apply_primitive(self, kind: str, inputs, **kwargs) -> Node:
        """Apply a named primitive to input nodes (or node ids)."""
        if kind not in PRIMITIVES:
            raise AutodiffError(f"unknown primitive {kind!r}")
        nodes = [self.nodes[i] if isinstance(i, int) else i for i in inputs]
        return getattr(self, "_" + kind)(*nodes, **kwargs)

    # convenience aliases used throughout the pipeline
    def matmul(self, a, b):
        return self._matmul(a, b)

    def add(self, a, b):
        return self._add(a, b)

    def mul(self, a, b):
        return self._elementwise_mul(a, b)

    def concat_columns(self, parts):
        return self._concat_columns(*parts)

    def relu(self, a):
        return self._relu(a)

    def softmax_row(self, a):
        return self._softmax_row(a)

    def cosine_similarity(self, a, b):
        return self._cosine_similarity(a, b)

    def log(self, a):
        return self._natural_log(a)

    def mean_of_rows(self, a):
        return self._mean_of_rows(a)

    def sum_all(self, a):
        return self._sum(a)

    def affine(self, a, mul, add):
        return self._scalar_affine(a, mul=mul, add=add)

    def clamp(self, a, lo, hi):
        return self._clamp(a, lo=lo, hi=hi)

    def transpose(self, a):
        return self._transpose(a)

    def gather_rows(self, a, indices):
        return self._gather_rows(a, indices=indices)

    def scatter_add_rows(self, a, indices, n_out):
        return self._scatter_add_rows(a, indices=indices, n_out=n_out)

    # -- primitive implementations -------------------------------------------

    def _matmul(self, a, b):
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatch("matmul", a.shape, b.shape)
        return self._record("matmul", a.value @ b.value, (a, b))

    def _add(self, a, b):
        _check_broadcast("add", a, b)
        return self._record("add", a.value + b.value, (a, b))

    def _elementwise_mul(self, a, b):
        _check_broadcast("elementwise_mul", a, b)
        return self._record("elementwise_mul", a.value * b.value, (a, b))

    def _concat_columns(self, *parts):
        rows = {p.shape[0] for p in parts}
        if len(parts) < 1 or len(rows) != 1:
            raise ShapeMismatch("concat_columns", *[p.shape for p in parts])
        value = np.concatenate([p.value for p in parts], axis=1)
        widths = [p.shape[1] for p in parts]
        return self._record("concat_columns", value, parts, cache={"widths": widths})

    def _relu(self, a):
        mask = a.value > 0.0
        return self._record("relu", np.where(mask, a.value, 0.0), (a,), cache={"mask": mask})

    def _softmax_row(self, a):
        shifted = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=1, keepdims=True)
        return self._record("softmax_row", y, (a,), cache={"y": y})

    def _cosine_similarity(self, a, b):
        if a.shape[1] != b.shape[1]:
            raise ShapeMismatch("cosine_similarity", a.shape, b.shape)
        na = np.sqrt((a.value * a.value).sum(axis=1))
        nb = np.sqrt((b.value * b.value).sum(axis=1))
        nag = na + COSINE_NORM_EPS
        nbg = nb + COSINE_NORM_EPS
        c = (a.value @ b.value.T) / (nag[:, None] * nbg[None, :])
        cache = {"na": na, "nb": nb, "nag": nag, "nbg": nbg, "c": c}
        return self._record("cosine_similarity", c, (a, b), cache=cache)

    def _natural_log(self, a):
        with np.errstate(invalid="ignore", divide="ignore"):
            value = np.log(a.value)
        return self._record("natural_log", value, (a,))

    def _mean_of_rows(self, a):
        return self._record("mean_of_rows", a.value.mean(axis=0, keepdims=True), (a,))

    def _sum(self, a):
        return self._record("sum", np.array([[a.value.sum()]]), (a,))

    def _scalar_affine(self, a, mul, add):
        return self._record(
            "scalar_affine", mul * a.value + add, (a,), cache={"mul": float(mul)}
        )

    def _clamp(self, a, lo, hi):
        if not lo < hi:
            raise AutodiffError(f"clamp: lo={lo} must be < hi={hi}")
        interior = (a.value > lo) & (a.value < hi)
        return self._record(
            "clamp", np.clip(a.value, lo, hi), (a,), cache={"interior": interior}
        )

    def _transpose(self, a):
        return self._record("transpose", a.value.T.copy(), (a,))

    def _gather_rows(self, a, indices):
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1 or (len(idx) and (idx.min() < 0 or idx.max() >= a.shape[0])):
            raise ShapeMismatch("gather_rows", a.shape, (len(idx),))
        return self._record("gather_rows", a.value[idx], (a,), cache={"idx": idx})

    def _scatter_add_rows(self, a, indices, n_out):
        idx = np.asarray(indices, dtype=np.intp)
        if idx.shape != (a.shape[0],) or (len(idx) and (idx.min() < 0 or idx.max() >= n_out)):
            raise ShapeMismatch("scatter_add_rows", a.shape, (len(idx),))
        out = np.zeros((n_out, a.shape[1]))
        np.add.at(out, idx, a.value)
        return self._record(
            "scatter_add_rows", out, (a,), cache={"idx": idx, "n_in": a.shape[0]}
        )

    # -- backward ------------------------------------------------------------

    def backward(self, root: Node) -> dict:
        """Adjoints of a scalar root with respect to every trainable leaf.

        Returns ``{leaf name or id: gradient}``; leaves the root does not
        depend on get zero gradients of their own shape.
        """
        if root.shape != (1, 1):
            raise AutodiffError(f"backward root must be 1x1, got {root.shape}")
        grads: dict[int, np.ndarray] = {root.id: np.ones((1, 1))}
        for node in reversed(self.nodes[: root.id + 1]):
            g = grads.pop(node.id, None)
            if g is None or node.kind == "leaf":
                if g is not None:
                    grads[node.id] = g  # keep leaf gradient
                continue
            for pid, pg in self._adjoint(node, g):
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        out = {}
        for node in self.nodes:
            if node.trainable:
                key = node.name if node.name is not None else node.id
                out[key] = grads.get(node.id, np.zeros(node.shape))
        return out

    def _adjoint(self, node: Node, g: np.ndarray):
        kind = node.kind
        parents = [self.nodes[p] for p in node.parents]
        if kind == "matmul":
            a, b = parents
            return [(a.id, g @ b.value.T), (b.id, a.value.T @ g)]
        if kind == "add":
            a, b = parents
            return [(a.id, _unbroadcast(g, a.shape)), (b.id, _unbroadcast(g, b.shape))]
        if kind == "elementwise_mul":
            a, b = parents
            return [
                (a.id, _unbroadcast(g * b.value, a.shape)),
                (b.id, _unbroadcast(g * a.value, b.shape)),
            ]
        if kind == "concat_columns":
            widths = node.cache["widths"]
            offs = np.cumsum([0] + widths)
            return [
                (p.id, g[:, offs[i] : offs[i + 1]].copy()) for i, p in enumerate(parents)
            ]
        if kind == "relu":
            (a,) = parents
            return [(a.id, g * node.cache["mask"])]
        if kind == "softmax_row":
            (a,) = parents
            y = node.cache["y"]
            dot = (g * y).sum(axis=1, keepdims=True)
            return [(a.id, y * (g - dot))]
        if kind == "cosine_similarity":
            a, b = parents
            c = node.cache["c"]
            nag, nbg = node.cache["nag"], node.cache["nbg"]
            na_safe = np.where(node.cache["na"] > 0, node.cache["na"], 1.0)
            nb_safe = np.where(node.cache["nb"] > 0, node.cache["nb"], 1.0)
            gs = g / (nag[:, None] * nbg[None, :])
            da = gs @ b.value - ((g * c).sum(axis=1) / (nag * na_safe))[:, None] * a.value
            db = gs.T @ a.value - ((g * c).sum(axis=0) / (nbg * nb_safe))[:, None] * b.value
            return [(a.id, da), (b.id, db)]
        if kind == "natural_log":
            (a,) = parents
            return [(a.id, g / a.value)]
        if kind == "mean_of_rows":
            (a,) = parents
            return [(a.id, np.repeat(g / a.shape[0], a.shape[0], axis=0))]
        if kind == "sum":
            (a,) = parents
            return [(a.id, np.full(a.shape, g[0, 0]))]
        if kind == "scalar_affine":
            (a,) = parents
            return [(a.id, node.cache["mul"] * g)]
        if kind == "clamp":
            (a,) = parents
            return [(a.id, g * node.cache["interior"])]
        if kind == "transpose":
            (a,) = parents
            return [(a.id, g.T.copy())]
        if kind == "gather_rows":
            (a,) = parents
            da = np.zeros(a.shape)
            np.add.at(da, node.cache["idx"], g)
            return [(a.id, da)]
        if kind == "scatter_add_rows":
            (a,) = parents
            return [(a.id, g[node.cache["idx"]])]
        raise AutodiffError(f"no adjoint for {kind!r}")

    def activation_signature(self):
        """Boolean decision masks of every relu/clamp on the tape.

        Two evaluations with the same signature lie on the same smooth piece
        of the computation, so central differences are valid between them.
        """
        sig = []
        for node in self.nodes:
            if node.kind == "relu":
                sig.append(node.cache["mask"])
            elif node.kind == "clamp":
                sig.append(node.cache["interior"])
        return sig


@dataclass
class MLP:
    """Two-layer perceptron with rectifier hidden units, x @ w conventions."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_hidden: int, n_out: int) -> "MLP":
        return cls(
            w1=uniform_fan_in(rng, n_in, n_hidden),
            b1=np.zeros((1, n_hidden)),
            w2=uniform_fan_in(rng, n_hidden, n_out),
            b2=np.zeros((1, n_out)),
        )

    def bind(self, tape: Tape, prefix: str = "mlp") -> list[Node]:
        return [
            tape.leaf(self.w1, trainable=True, name=f"{prefix}/w1"),
            tape.leaf(self.b1, trainable=True, name=f"{prefix}/b1"),
            tape.leaf(self.w2, trainable=True, name=f"{prefix}/w2"),
            tape.leaf(self.b2, trainable=True, name=f"{prefix}/b2"),
        ]

    def apply(self, tape: Tape, x: Node, leaves=None) -> Node:
        if leaves is None:
            leaves = self.bind(tape)
        return apply_mlp(tape, x, *leaves)


def apply_mlp(tape: Tape, x: Node, w1: Node, b1: Node, w2: Node, b2: Node) -> Node:
    h = tape.relu(tape.add(tape.matmul(x, w1), b1))
    return tape.add(tape.matmul(h, w2), b2)


def uniform_fan_in(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_in, n_out))


@dataclass
class GradCheckReport:
    """Outcome of comparing tape adjoints against central finite differences."""

    max_rel_err: dict
    excluded: dict
    h: float
    tol: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return self.worst < self.tol


def grad_check(build, point: dict, h: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-6) -> GradCheckReport:
    """Check tape adjoints of ``build`` against central finite differences.

    ``build(tape, leaves)`` must construct a scalar node from the trainable
    leaves created from ``point`` (name -> array) and be deterministic.
    Coordinates whose +/-h evaluations land on different relu/clamp decision
    masks straddle a kink and are reported as excluded rather than compared.
    ``floor`` is the absolute scale below which gradient entries are treated
    as zero (central differences are only accurate to ~|f|*eps/h).
    """
    point = {k: _as_matrix(v) for k, v in point.items()}

    def evaluate(values):
        tape = Tape()
        leaves = {k: tape.leaf(v, trainable=True, name=k) for k, v in values.items()}
        root = build(tape, leaves)
        if root.shape != (1, 1):
            raise AutodiffError("grad_check target must be scalar (1x1)")
        return tape, root

    tape0, root0 = evaluate(point)
    tape1, root1 = evaluate(point)
    if root0.value[0, 0] != root1.value[0, 0]:
        raise NonDeterministicBuilder("builder produced different values on re-evaluation")

    analytic = tape0.backward(root0)
    max_rel_err = {}
    excluded = {}
    for name, base in point.items():
        errs = np.zeros(base.shape)
        excl = []
        for i in range(base.shape[0]):
            for j in range(base.shape[1]):
                bumped = dict(point)
                plus = base.copy()
                plus[i, j] += h
                bumped[name] = plus
                tp, rp = evaluate(bumped)
                minus = base.copy()
                minus[i, j] -= h
                bumped[name] = minus
                tm, rm = evaluate(bumped)
                same_piece = all(
                    np.array_equal(sp, sm)
                    for sp, sm in zip(tp.activation_signature(), tm.activation_signature())
                )
                if not same_piece:
                    excl.append((i, j))
                    continue
                fd = (rp.value[0, 0] - rm.value[0, 0]) / (2.0 * h)
                a = analytic[name][i, j]
                errs[i, j] = abs(a - fd) / max(abs(a), abs(fd), floor)
        max_rel_err[name] = float(errs.max()) if errs.size else 0.0
        if excl:
            excluded[name] = excl
    return GradCheckReport(max_rel_err=max_rel_err, excluded=excluded, h=h, tol=tol)
