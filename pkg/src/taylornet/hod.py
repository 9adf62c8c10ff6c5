"""Layered propagation of high-order derivatives through an MLP.

The derivative stack at layer m holds, per node i, the orders-1..n
derivatives of the network output with respect to y_i^(m). The stack at
the output layer is (1, 0, ..., 0); each transfer to the previous layer
applies a chain transformation built from the activation's derivatives
at the cached pre-activations and Hadamard powers of the layer's weight
matrix. Running the transfer once more against the input coordinates
yields every unmixed derivative d^k y / dx_j^k; the first-layer stack
then produces all mixed partials in closed form, because the first
layer's dependence on x is affine: each node contributes a rank-one
weight-product tensor per order.

The transfer propagates only per-node (unmixed) derivatives between
hidden layers. For networks with a single nonlinear hidden layer (plus an
identity output) or width-1 hidden chains this is exact; for deeper
nonlinear stacks it omits cross-node second-order interactions, which is
why the exact jet engine exists alongside it — `derive --engine both`
reports the gap.
"""

from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind, act_kth_deriv
from .chainmat import chain_table, eval_cells, eval_chain_matrix
from .indices import canonical_indices
from .network import forward_cached
from .tape import Tensor, value_of, vact_stack, vkron, vmatmul, vsum

DEFAULT_SIZE_CAP = 10_000_000


@dataclass
class DerivativeStack:
    """orders[k-1][b, i] = d^k y / d(y_i^(layer))^k for batch point b."""

    layer: int  # 0 = network input, depth = output layer
    orders: list

    @property
    def max_order(self):
        return len(self.orders)


@dataclass
class MixedTensor:
    """All order-k partials: full p^k layout plus the symmetric view."""

    order: int
    p: int
    full: object  # (B, p^k), index (i_1..i_k) flattened i_1-major; None above cap
    canonical: dict  # multi-index alpha (|alpha| = order) -> (B,)


def output_seed(cache, n):
    """Stack at the output layer: first order 1, the rest 0 (per point)."""
    out = value_of(cache.output)
    ones = np.ones_like(out)
    zeros = np.zeros_like(out)
    if cache.params is not None:
        t = cache.params.tape
        return DerivativeStack(layer=len(cache.z), orders=[t.constant(ones)] + [t.constant(zeros) for _ in range(n - 1)])
    return DerivativeStack(layer=len(cache.z), orders=[ones] + [zeros.copy() for _ in range(n - 1)])


def _weight(net, cache, m):
    if cache.params is not None:
        return cache.params.weights[m]
    return net.weights[m]


def layer_transfer(net, cache, m, incoming):
    """Move a derivative stack from layer m+1 down to layer m.

    Layer m+1's chain matrix entries are Hadamard-power weight products
    times activation derivatives at the cached pre-activations; summing
    per-node cells against the incoming stack per order gives the
    outgoing stack in whole-matrix operations.
    """
    if incoming.layer != m + 1:
        raise ValueError(f"incoming stack is at layer {incoming.layer}, expected {m + 1}")
    if not 0 <= m < net.depth:
        raise ValueError(f"layer index {m} out of range")
    n = incoming.max_order
    W = _weight(net, cache, m)
    act = net.activations[m]
    z = cache.z[m]
    if act is ActivationKind.IDENTITY:
        # sigma' = 1 and higher derivatives vanish: no cross-order mixing
        out = [vmatmul(incoming.orders[i - 1], W if i == 1 else W**i) for i in range(1, n + 1)]
        return DerivativeStack(layer=m, orders=out)
    sder = vact_stack(act, z, n, start=1, s0=cache.y[m])
    cells = eval_cells(chain_table(n), sder, n)
    out = []
    for i in range(1, n + 1):
        acc = None
        for j in range(1, i + 1):
            term = cells[(i, j)] * incoming.orders[j - 1]
            acc = term if acc is None else acc + term
        out.append(vmatmul(acc, W if i == 1 else W**i))
    return DerivativeStack(layer=m, orders=out)


def unmixed_derivs(net, cache, n):
    """All d^k y/dx_j^k for k <= n, plus the retained first-layer stack.

    Returns (input_stack, first_layer_stack); the latter feeds
    mixed_derivs.
    """
    if n < 1:
        raise ValueError("derivative order must be >= 1")
    stack = output_seed(cache, n)
    first = stack if net.depth == 1 else None
    for m in range(net.depth - 1, -1, -1):
        stack = layer_transfer(net, cache, m, stack)
        if stack.layer == 1:
            first = stack
    return stack, first


def _take_column(x, j):
    if isinstance(x, Tensor):
        e = np.zeros((x.shape[1], 1))
        e[j, 0] = 1.0
        return vsum(vmatmul(x, x.tape.constant(e)), axis=1)
    return x[:, j]


def _weight_column_power(W, alpha):
    """prod_i (column i of W)^(alpha_i) as an (o_1, 1) value."""
    acc = None
    for i, a in enumerate(alpha):
        if a == 0:
            continue
        if isinstance(W, Tensor):
            e = np.zeros((len(alpha), 1))
            e[i, 0] = 1.0
            col = vmatmul(W, W.tape.constant(e))
        else:
            col = W[:, i : i + 1]
        term = col if a == 1 else col**a
        acc = term if acc is None else acc * term
    return acc


def _first_layer_combination(net, cache, first_stack, n):
    """a_k = sum_j cell(k,j)(sigma derivs at z^(1)) * v1[j], for k = 1..n."""
    act = net.activations[0]
    z = cache.z[0]
    sder = vact_stack(act, z, n, start=1, s0=cache.y[0])
    cells = eval_cells(chain_table(n), sder, n)
    combos = []
    for k in range(1, n + 1):
        acc = None
        for j in range(1, k + 1):
            term = cells[(k, j)] * first_stack.orders[j - 1]
            acc = term if acc is None else acc + term
        combos.append(acc)
    return combos


def mixed_derivs(net, cache, first_stack, n, size_cap=DEFAULT_SIZE_CAP):
    """MixedTensor per order k = 1..n from the first-layer stack.

    The full p^k tensor is the Hadamard/Kronecker weight-product block
    applied to the per-node order combinations; entries are symmetric by
    construction. Above `size_cap` entries per batch only the canonical
    multi-index view is materialized, through the same per-node rank-one
    reduction.
    """
    if first_stack.layer != 1:
        raise ValueError("mixed derivatives start from the first-layer stack")
    if first_stack.max_order < n:
        raise ValueError("first-layer stack is too shallow")
    p = net.input_dim
    B = value_of(cache.x).shape[0]
    W = _weight(net, cache, 0)
    combos = _first_layer_combination(net, cache, first_stack, n)
    # W_base rows enumerate index sequences (i_1..i_k), i_1-major
    if isinstance(W, Tensor):
        eye = W.tape.constant(np.eye(p))
        w_base = vmatmul(eye, W, tb=True)  # W^T as a value on the tape
    else:
        w_base = W.T
    out = []
    base = w_base
    for k in range(1, n + 1):
        if k > 1:
            left = vkron(w_base, np.ones((p ** (k - 1), 1)))
            right = vkron(np.ones((p, 1)), base)
            base = left * right
        a_k = combos[k - 1]
        if B * p**k <= size_cap:
            full = vmatmul(a_k, base, tb=True)  # (B, p^k)
            canonical = {}
            for alpha in canonical_indices(p, k):
                if sum(alpha) != k:
                    continue
                flat = _representative_flat_index(alpha, p)
                canonical[alpha] = _take_column(full, flat)
        else:
            full = None
            canonical = {}
            for alpha in canonical_indices(p, k):
                if sum(alpha) != k:
                    continue
                wpow = _weight_column_power(W, alpha)
                canonical[alpha] = vsum(vmatmul(a_k, wpow), axis=1)
        out.append(MixedTensor(order=k, p=p, full=full, canonical=canonical))
    return out


def _representative_flat_index(alpha, p):
    """Flat position of the sorted index sequence of alpha, i_1-major."""
    flat = 0
    for i, a in enumerate(alpha):
        for _ in range(a):
            flat = flat * p + i
    return flat


def canonical_mixed_entries(net, cache, first_stack, alphas):
    """Requested mixed partials {alpha: (B,)} via the rank-one reduction.

    Cheaper than materializing full tensors when only a handful of
    multi-indices appear in a loss expression.
    """
    alphas = [tuple(a) for a in alphas]
    if not alphas:
        return {}
    n = max(sum(a) for a in alphas)
    combos = _first_layer_combination(net, cache, first_stack, n)
    W = _weight(net, cache, 0)
    out = {}
    for alpha in alphas:
        k = sum(alpha)
        if k == 0:
            raise ValueError("order-zero multi-index is the plain output")
        wpow = _weight_column_power(W, alpha)
        out[alpha] = vsum(vmatmul(combos[k - 1], wpow), axis=1)
    return out


# ------------------------------------------------------------- reference
#
# Slow per-pair form of the transfer, kept only so tests can pin the
# whole-matrix implementation against the written-out rule.


def layer_transfer_reference(net, cache, m, incoming):
    W = net.weights[m]
    act = net.activations[m]
    z = value_of(cache.z[m])
    n = incoming.max_order
    B = z.shape[0]
    o_out, o_in = W.shape
    table = chain_table(n)
    sder = [act_kth_deriv(act, z, r) for r in range(1, n + 1)]
    out = [np.zeros((B, o_in)) for _ in range(n)]
    for j in range(o_in):
        for i in range(o_out):
            g = [W[i, j] ** r * sder[r - 1][:, i] for r in range(1, n + 1)]
            M = eval_chain_matrix(table, g, n)
            for k in range(1, n + 1):
                acc = np.zeros(B)
                for l in range(1, k + 1):
                    acc += M[k - 1][l - 1] * value_of(incoming.orders[l - 1])[:, i]
                out[k - 1][:, j] += acc
    return DerivativeStack(layer=m, orders=out)
