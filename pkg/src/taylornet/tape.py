"""Reverse-mode differentiation tape over dense float64 arrays.

The tape is eager: every primitive computes its value when recorded, so
downstream code can inspect intermediate results. Nodes are append-only
and topologically ordered by construction; ``gradients`` walks them once
in reverse. The primitive set is exactly what the layered derivative
propagation and the residual losses need — this is not a general autodiff
framework (no control-flow capture, no differentiating the tape itself).

Reductions accumulate in numpy's fixed left-to-right order, so repeated
runs over identical inputs are bit-identical.
"""

import json

import numpy as np

from .activations import MAX_TABLE_ORDER, ActivationKind, act_derivs, act_kth_deriv
from .indices import mul_table

_KINDS = (
    "const",
    "param",
    "add",
    "sub",
    "mul_elementwise",
    "div",
    "hadamard_pow",
    "matmul",
    "scale",
    "reduce_sum",
    "reduce_mean",
    "square",
    "kron",
    "broadcast",
    "act_deriv",
    "exp",
    "conv_pairs",
    "row_take",
    "row_lift",
)


class Node:
    __slots__ = ("kind", "inputs", "attrs", "data")

    def __init__(self, kind, inputs, attrs, data):
        self.kind = kind
        self.inputs = inputs
        self.attrs = attrs
        self.data = data


class Tensor:
    """Handle to one tape node; supports the usual arithmetic operators."""

    __slots__ = ("tape", "id")
    __array_ufunc__ = None  # force numpy to defer to our reflected operators

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def data(self):
        return self.tape.nodes[self.id].data

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(id={self.id}, shape={self.shape})"

    def _lift(self, other):
        if isinstance(other, Tensor):
            if other.tape is not self.tape:
                raise ValueError("tensors belong to different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape.primitive("add", [self, self._lift(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.primitive("sub", [self, self._lift(other)])

    def __rsub__(self, other):
        return self.tape.primitive("sub", [self._lift(other), self])

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.primitive("scale", [self], c=float(other))
        return self.tape.primitive("mul_elementwise", [self, self._lift(other)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.tape.primitive("div", [self, self._lift(other)])

    def __rtruediv__(self, other):
        return self.tape.primitive("div", [self._lift(other), self])

    def __neg__(self):
        return self.tape.primitive("scale", [self], c=-1.0)

    def __pow__(self, k):
        return self.tape.primitive("hadamard_pow", [self], k=int(k))

    def __matmul__(self, other):
        return self.tape.primitive("matmul", [self, self._lift(other)])


def _swap(x):
    return np.swapaxes(x, -1, -2)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


class Tape:
    """Single-writer recording of operations; immutable once backward runs."""

    def __init__(self):
        self.nodes = []
        self.param_ids = []

    # ------------------------------------------------------------- leaves

    def _leaf(self, kind, value):
        arr = np.array(value, dtype=np.float64)
        self.nodes.append(Node(kind, (), {}, arr))
        return Tensor(self, len(self.nodes) - 1)

    def constant(self, value):
        return self._leaf("const", value)

    def parameter(self, value):
        t = self._leaf("param", value)
        self.param_ids.append(t.id)
        return t

    # --------------------------------------------------------- primitives

    def primitive(self, kind, inputs, **attrs):
        """Record one operation and return its result tensor."""
        if kind not in _KINDS:
            raise ValueError(f"unknown primitive kind {kind!r}")
        for t in inputs:
            if not isinstance(t, Tensor) or t.tape is not self:
                raise ValueError("primitive inputs must be tensors on this tape")
        vals = [t.data for t in inputs]
        data = _forward(kind, vals, attrs)
        self.nodes.append(Node(kind, tuple(t.id for t in inputs), attrs, data))
        return Tensor(self, len(self.nodes) - 1)

    # convenience wrappers used throughout the package
    def act_deriv(self, z, act, k):
        if k < 0 or k + 1 > MAX_TABLE_ORDER:
            raise ValueError(f"activation derivative order {k} out of range")
        return self.primitive("act_deriv", [z], act=ActivationKind.parse(act).value, k=int(k))

    def matmul(self, a, b, tb=False):
        return self.primitive("matmul", [a, b], tb=bool(tb))

    def reduce_sum(self, a, axis=None):
        return self.primitive("reduce_sum", [a], axis=axis)

    def reduce_mean(self, a, axis=None):
        return self.primitive("reduce_mean", [a], axis=axis)

    def square(self, a):
        return self.primitive("square", [a])

    def broadcast(self, a, shape):
        return self.primitive("broadcast", [a], shape=tuple(int(s) for s in shape))

    def kron(self, a, b):
        return self.primitive("kron", [a, b])

    def exp(self, a):
        return self.primitive("exp", [a])

    def conv_pairs(self, a, b, p, n, min_a=0, min_b=0):
        return self.primitive(
            "conv_pairs", [a, b], p=int(p), n=int(n), min_a=int(min_a), min_b=int(min_b)
        )

    def row_take(self, a, row):
        return self.primitive("row_take", [a], row=int(row))

    def row_lift(self, v, row, ncoef):
        return self.primitive("row_lift", [v], row=int(row), ncoef=int(ncoef))

    # ----------------------------------------------------------- backward

    def gradients(self, loss):
        """d(loss)/d(param) for every parameter; loss must be scalar.

        Adjoints of non-parameter nodes are dropped as soon as their
        consumers are processed.
        """
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ValueError("loss is not a tensor on this tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        adjoints = [None] * len(self.nodes)
        adjoints[loss.id] = np.ones_like(loss.data)
        params = set(self.param_ids)
        for nid in range(loss.id, -1, -1):
            g = adjoints[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.inputs:
                in_vals = [self.nodes[i].data for i in node.inputs]
                in_grads = _backward(node.kind, in_vals, node.attrs, node.data, g)
                for iid, ig in zip(node.inputs, in_grads):
                    if ig is None:
                        continue
                    if adjoints[iid] is None:
                        adjoints[iid] = ig
                    else:
                        adjoints[iid] = adjoints[iid] + ig
            if nid not in params:
                adjoints[nid] = None
        return {pid: adjoints[pid] if adjoints[pid] is not None else np.zeros_like(self.nodes[pid].data) for pid in self.param_ids}

    # ------------------------------------------------------ serialization

    def serialize(self):
        doc = {
            "params": list(self.param_ids),
            "nodes": [
                {
                    "kind": n.kind,
                    "inputs": list(n.inputs),
                    "attrs": {k: (list(v) if isinstance(v, tuple) else v) for k, v in n.attrs.items()},
                    **({"data": n.data.reshape(-1).tolist(), "shape": list(n.data.shape)} if not n.inputs else {}),
                }
                for n in self.nodes
            ],
        }
        return json.dumps(doc)

    @classmethod
    def deserialize(cls, text):
        """Rebuild a tape from its serialized form, replaying every primitive."""
        doc = json.loads(text)
        tape = cls()
        for rec in doc["nodes"]:
            attrs = {
                k: (tuple(v) if isinstance(v, list) else v) for k, v in rec["attrs"].items()
            }
            if not rec["inputs"]:
                arr = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
                if rec["kind"] == "param":
                    tape.parameter(arr)
                else:
                    tape.constant(arr)
            else:
                tape.primitive(rec["kind"], [Tensor(tape, i) for i in rec["inputs"]], **attrs)
        return tape


# ---------------------------------------------------------------- forward


def _forward(kind, vals, attrs):
    if kind in ("add", "sub", "mul_elementwise", "div"):
        a, b = vals
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ValueError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None
        if kind == "add":
            return a + b
        if kind == "sub":
            return a - b
        if kind == "mul_elementwise":
            return a * b
        if np.any(b == 0.0):
            raise ZeroDivisionError("div: zero denominator on the tape")
        return a / b
    if kind == "hadamard_pow":
        k = attrs["k"]
        if k < 1:
            raise ValueError("hadamard_pow exponent must be a positive integer")
        return vals[0] ** k
    if kind == "matmul":
        a, b = vals
        beff = _swap(b) if attrs.get("tb") else b
        if a.ndim < 2 or beff.ndim < 2 or a.shape[-1] != beff.shape[-2]:
            raise ValueError(f"matmul: shapes {a.shape} and {b.shape} (tb={attrs.get('tb', False)}) do not conform")
        return a @ beff
    if kind == "scale":
        return vals[0] * attrs["c"]
    if kind == "reduce_sum":
        return np.sum(vals[0], axis=_norm_axis(attrs.get("axis"), vals[0].ndim))
    if kind == "reduce_mean":
        return np.mean(vals[0], axis=_norm_axis(attrs.get("axis"), vals[0].ndim))
    if kind == "square":
        return vals[0] * vals[0]
    if kind == "kron":
        a, b = vals
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("kron expects 2-D operands")
        return np.kron(a, b)
    if kind == "broadcast":
        return np.broadcast_to(vals[0], attrs["shape"]).copy()
    if kind == "act_deriv":
        return act_kth_deriv(attrs["act"], vals[0], attrs["k"])
    if kind == "exp":
        return np.exp(vals[0])
    if kind == "conv_pairs":
        a, b = vals
        table = mul_table(attrs["p"], attrs["n"])
        if a.shape[0] != table.ncoef or b.shape[0] != table.ncoef:
            raise ValueError("conv_pairs: leading axis must index the coefficient table")
        return table.multiply(a, b, attrs.get("min_a", 0), attrs.get("min_b", 0))
    if kind == "row_take":
        return vals[0][attrs["row"]].copy()
    if kind == "row_lift":
        (v,) = vals
        out = np.zeros((attrs["ncoef"],) + v.shape)
        out[attrs["row"]] = v
        return out
    raise ValueError(f"unknown primitive kind {kind!r}")


# --------------------------------------------------------------- backward


def _backward(kind, vals, attrs, out, g):
    if kind == "add":
        a, b = vals
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]
    if kind == "sub":
        a, b = vals
        return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]
    if kind == "mul_elementwise":
        a, b = vals
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]
    if kind == "div":
        a, b = vals
        return [_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)]
    if kind == "hadamard_pow":
        (a,) = vals
        k = attrs["k"]
        base = np.ones_like(a) if k == 1 else a ** (k - 1)
        return [g * k * base]
    if kind == "matmul":
        a, b = vals
        tb = attrs.get("tb", False)
        beff = _swap(b) if tb else b
        da = _unbroadcast(g @ _swap(beff), a.shape)
        dbeff = _swap(a) @ g
        db = _swap(dbeff) if tb else dbeff
        return [da, _unbroadcast(db, b.shape)]
    if kind == "scale":
        return [g * attrs["c"]]
    if kind == "reduce_sum":
        (a,) = vals
        return [_spread(g, a.shape, _norm_axis(attrs.get("axis"), a.ndim))]
    if kind == "reduce_mean":
        (a,) = vals
        axis = _norm_axis(attrs.get("axis"), a.ndim)
        count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in axis]))
        return [_spread(g, a.shape, axis) / count]
    if kind == "square":
        (a,) = vals
        return [2.0 * a * g]
    if kind == "kron":
        a, b = vals
        gr = g.reshape(a.shape[0], b.shape[0], a.shape[1], b.shape[1])
        da = np.einsum("ikjl,kl->ij", gr, b)
        db = np.einsum("ikjl,ij->kl", gr, a)
        return [da, db]
    if kind == "broadcast":
        (a,) = vals
        return [_unbroadcast(g, a.shape)]
    if kind == "act_deriv":
        (z,) = vals
        return [g * act_kth_deriv(attrs["act"], z, attrs["k"] + 1)]
    if kind == "exp":
        return [g * out]
    if kind == "conv_pairs":
        a, b = vals
        table = mul_table(attrs["p"], attrs["n"])
        ma, mb = attrs.get("min_a", 0), attrs.get("min_b", 0)
        return [table.grad_a(g, b, ma, mb), table.grad_b(g, a, ma, mb)]
    if kind == "row_take":
        (a,) = vals
        out = np.zeros_like(a)
        out[attrs["row"]] = g
        return [out]
    if kind == "row_lift":
        return [g[attrs["row"]].copy()]
    raise ValueError(f"unknown primitive kind {kind!r}")


def _spread(g, shape, axis):
    """Inverse of a reduction: broadcast g back over the reduced axes."""
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    expanded = np.expand_dims(g, axis)
    return np.broadcast_to(expanded, shape).copy()


# --------------------------------------------------- value-level dispatch
#
# The derivative engines are written once against these helpers so the
# same code runs on plain numpy arrays (evaluation) and on taped tensors
# (training).


def is_tensor(x):
    return isinstance(x, Tensor)


def value_of(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    return None


def vmatmul(a, b, tb=False):
    t = _tape_of(a, b)
    if t is None:
        return a @ (_swap(b) if tb else b)
    a = a if isinstance(a, Tensor) else t.constant(a)
    b = b if isinstance(b, Tensor) else t.constant(b)
    return t.matmul(a, b, tb=tb)


def vsum(a, axis=None):
    if isinstance(a, Tensor):
        return a.tape.reduce_sum(a, axis=axis)
    return np.sum(a, axis=axis)


def vmean(a, axis=None):
    if isinstance(a, Tensor):
        return a.tape.reduce_mean(a, axis=axis)
    return np.mean(a, axis=axis)


def vsquare(a):
    if isinstance(a, Tensor):
        return a.tape.square(a)
    return a * a


def vbroadcast(a, shape):
    if isinstance(a, Tensor):
        return a.tape.broadcast(a, shape)
    return np.broadcast_to(a, shape)


def vexp(a):
    if isinstance(a, Tensor):
        return a.tape.exp(a)
    return np.exp(a)


def vkron(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.kron(a, b)
    a = a if isinstance(a, Tensor) else t.constant(a)
    b = b if isinstance(b, Tensor) else t.constant(b)
    return t.kron(a, b)


def vconv(a, b, p, n, min_a=0, min_b=0):
    t = _tape_of(a, b)
    if t is None:
        return mul_table(p, n).multiply(np.asarray(a), np.asarray(b), min_a, min_b)
    a = a if isinstance(a, Tensor) else t.constant(a)
    b = b if isinstance(b, Tensor) else t.constant(b)
    return t.conv_pairs(a, b, p, n, min_a=min_a, min_b=min_b)


def vrow_take(a, row):
    if isinstance(a, Tensor):
        return a.tape.row_take(a, row)
    return a[row]


def vrow_lift(v, row, ncoef):
    if isinstance(v, Tensor):
        return v.tape.row_lift(v, row, ncoef)
    out = np.zeros((ncoef,) + np.asarray(v).shape)
    out[row] = v
    return out


def vact(act, z, k):
    """sigma^(k)(z) elementwise, taped when z is a tensor."""
    if isinstance(z, Tensor):
        return z.tape.act_deriv(z, act, k)
    return act_kth_deriv(act, z, k)


def vact_stack(act, z, n, start=0, s0=None):
    """[sigma^(start), ..., sigma^(n)](z), sharing work across orders.

    Sine's period-4 cycle needs one sin and one cos evaluation; the other
    orders are sign flips or aliases of those two nodes, which keeps both
    the forward cost and the tape size flat in n. `s0` supplies an
    already-computed sigma(z) (e.g. from a forward cache) for reuse.
    """
    kind = ActivationKind.parse(act)
    if kind is ActivationKind.SINE:
        s = s0 if s0 is not None else vact(kind, z, 0)
        if n == 0:
            cycle = [s]
        else:
            c = vact(kind, z, 1)
            ns, nc = -s, -c
            cycle = [s, c, ns, nc]
        return [cycle[k % 4] for k in range(start, n + 1)]
    if not isinstance(z, Tensor):
        return act_derivs(kind, z, n)[start:]
    return [vact(kind, z, k) for k in range(start, n + 1)]
