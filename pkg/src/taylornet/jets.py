"""Exact multivariate truncated-Taylor (jet) propagation.

A jet stores normalized coefficients c_alpha = (d^alpha f / alpha!) at an
expansion point, for all |alpha| <= n. Arithmetic is the truncated
polynomial ring; composing an activation uses its derivative values at
the constant term via Horner in (jet - constant). Propagating coordinate
jets through a network therefore yields its exact derivatives, which is
what every other derivative computation in the package is checked
against.

Two realizations of the same arithmetic live here:

* ``MultiJet`` — a per-jet dict of coefficients, convenient for scalar
  work and unit checks.
* a dense block form (``jet_forward_block``) that carries all nodes of a
  layer in one (ncoef, batch, width) array, with truncated products done
  through a precomputed index-pair table. This is the fast path and the
  one that runs on the tape during training.
"""

import math
from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind
from .indices import (
    alpha_factorial,
    canonical_indices,
    count_indices,
    index_positions,
    total_degree,
)
from .network import TapedParams
from .tape import (
    Tensor,
    value_of,
    vact,
    vact_stack,
    vconv,
    vmatmul,
    vrow_lift,
    vrow_take,
    vsum,
)

RELU_KINK_TOL = 1e-12


@dataclass
class MultiJet:
    p: int
    n: int
    coeffs: dict  # alpha -> c_alpha, normalized by alpha!

    def coefficient(self, alpha):
        return self.coeffs.get(tuple(alpha), 0.0)

    def derivative(self, alpha):
        """Raw d^alpha at the expansion point: c_alpha * alpha!."""
        return self.coefficient(alpha) * alpha_factorial(alpha)

    def derivative_map(self):
        return {a: self.coefficient(a) * alpha_factorial(a) for a in canonical_indices(self.p, self.n)}

    def value(self):
        return self.coefficient((0,) * self.p)

    def __add__(self, other):
        return jet_add(self, other)

    def __sub__(self, other):
        return jet_add(self, jet_scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, MultiJet):
            return jet_mul(self, other)
        return jet_scale(self, other)

    __rmul__ = __mul__


def _check_compatible(a, b):
    if a.p != b.p or a.n != b.n:
        raise ValueError(f"jet mismatch: ({a.p},{a.n}) vs ({b.p},{b.n})")


def jet_constant(value, p, n):
    return MultiJet(p, n, {(0,) * p: value})


def jet_variable(j, x0, p, n):
    """Jet of the coordinate function x_j (1-based j) at the point x0."""
    if not 1 <= j <= p:
        raise ValueError(f"coordinate index {j} out of range 1..{p}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    coeffs = {(0,) * p: float(x0[j - 1])}
    if n >= 1:
        e = tuple(1 if i == j - 1 else 0 for i in range(p))
        coeffs[e] = 1.0
    return MultiJet(p, n, coeffs)


def jet_add(a, b):
    _check_compatible(a, b)
    out = dict(a.coeffs)
    for k, v in b.coeffs.items():
        out[k] = out[k] + v if k in out else v
    return MultiJet(a.p, a.n, out)


def jet_scale(a, c):
    return MultiJet(a.p, a.n, {k: v * c for k, v in a.coeffs.items()})


def jet_mul(a, b):
    """Product truncated at total degree n."""
    _check_compatible(a, b)
    out = {}
    for ka, va in a.coeffs.items():
        da = total_degree(ka)
        for kb, vb in b.coeffs.items():
            if da + total_degree(kb) > a.n:
                continue
            key = tuple(x + y for x, y in zip(ka, kb))
            term = va * vb
            out[key] = out[key] + term if key in out else term
    return MultiJet(a.p, a.n, out)


def jet_compose_activation(kind, a):
    """sigma applied to a jet: Horner over sigma^(k)(c0)/k! in (a - c0)."""
    kind = ActivationKind.parse(kind)
    p, n = a.p, a.n
    zero = (0,) * p
    c0 = a.coeffs.get(zero, 0.0)
    if kind is ActivationKind.IDENTITY:
        return MultiJet(p, n, dict(a.coeffs))
    if kind is ActivationKind.RELU:
        c0v = value_of(c0)
        if np.any(np.abs(c0v) <= RELU_KINK_TOL):
            raise ValueError("relu jet at a kink: constant term within 1e-12 of 0")
        mask = (c0v > 0).astype(np.float64)
        if mask.ndim == 0:
            mask = float(mask)
        return MultiJet(p, n, {k: v * mask for k, v in a.coeffs.items()})
    w = MultiJet(p, n, {k: v for k, v in a.coeffs.items() if k != zero})
    svals = []
    for k in range(n + 1):
        sv = vact(kind, c0 if isinstance(c0, Tensor) else np.asarray(c0), k)
        svals.append(float(sv) if np.ndim(sv) == 0 else sv)
    acc = jet_constant(svals[n] / math.factorial(n), p, n)
    for k in range(n - 1, -1, -1):
        acc = jet_mul(acc, w)
        acc = jet_add(acc, jet_constant(svals[k] / math.factorial(k), p, n))
    return acc


def jet_forward(net, x0, n):
    """Exact output jet of a network at a single point, via MultiJet ops."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    p = net.input_dim
    if x0.size != p:
        raise ValueError(f"point has dim {x0.size}, network expects {p}")
    nodes = [jet_variable(j + 1, x0, p, n) for j in range(p)]
    for m in range(net.depth):
        W, b = net.weights[m], net.biases[m]
        nxt = []
        for i in range(W.shape[0]):
            z = jet_constant(float(b[i]), p, n)
            for j in range(W.shape[1]):
                z = jet_add(z, jet_scale(nodes[j], float(W[i, j])))
            nxt.append(jet_compose_activation(net.activations[m], z))
        nodes = nxt
    return nodes[0]


# ------------------------------------------------------------- block path


def _coordinate_block(X, n):
    """(ncoef, B, p) block of coordinate jets for a batch of points."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B, p = X.shape
    pos = index_positions(p, n)
    block = np.zeros((count_indices(p, n), B, p))
    block[0] = X  # constant row holds the point itself
    if n >= 1:
        for j in range(p):
            e = tuple(1 if i == j else 0 for i in range(p))
            block[pos[e], :, j] = 1.0
    return block


def _row_mask(p, n, alpha, invert=False):
    pos = index_positions(p, n)[tuple(alpha)]
    m = np.zeros((count_indices(p, n), 1, 1))
    m[pos] = 1.0
    if invert:
        m = 1.0 - m
    return m


def _compose_block(kind, R, p, n):
    """Activation applied to a block jet.

    Same truncated series as the MultiJet path, evaluated as a power chain
    sum_k sigma^(k)(c0)/k! * w^k; each w^k has no terms below total degree
    k, so the products run on degree-pruned pair tables.
    """
    kind = ActivationKind.parse(kind)
    if kind is ActivationKind.IDENTITY:
        return R
    ncoef = count_indices(p, n)
    c0 = vrow_take(R, 0)  # (B, o); row 0 is the constant term
    if kind is ActivationKind.RELU:
        c0v = value_of(c0)
        if np.any(np.abs(c0v) <= RELU_KINK_TOL):
            raise ValueError("relu jet at a kink: constant term within 1e-12 of 0")
        return R * (c0v > 0).astype(np.float64)
    sder = vact_stack(kind, c0, n)
    if n == 0:
        return vrow_lift(sder[0], 0, ncoef)
    w = R * _row_mask(p, n, (0,) * p, invert=True)
    acc = w * sder[1] + vrow_lift(sder[0], 0, ncoef)
    wp = w
    for k in range(2, n + 1):
        wp = vconv(wp, w, p, n, min_a=k - 1, min_b=1)
        acc = acc + wp * (sder[k] * (1.0 / math.factorial(k)))
    return acc


def jet_forward_block(net, X, n, params=None):
    """Coefficient block (ncoef, B, 1) of the network output jets.

    With `params` the result is taped and differentiable with respect to
    the network weights.
    """
    p = net.input_dim
    R = _coordinate_block(X, n)
    weights = net.weights if params is None else params.weights
    biases = net.biases if params is None else params.biases
    if params is not None:
        R = params.tape.constant(R)
    e0 = _row_mask(p, n, (0,) * p)
    for m in range(net.depth):
        Z = vmatmul(R, weights[m], tb=True) + e0 * biases[m]
        R = _compose_block(net.activations[m], Z, p, n)
    return R


def block_derivative_map(block, p, n, alphas=None):
    """Extract raw derivatives {alpha: (B,) value} from an output block."""
    if alphas is None:
        alphas = canonical_indices(p, n)
    pos = index_positions(p, n)
    out = {}
    if isinstance(block, Tensor):
        for a in alphas:
            row = vsum(vrow_take(block, pos[tuple(a)]), axis=1)  # (B, 1) -> (B,)
            fact = alpha_factorial(a)
            out[tuple(a)] = row * float(fact) if fact != 1 else row
    else:
        flat = block[:, :, 0]
        for a in alphas:
            out[tuple(a)] = flat[pos[tuple(a)]] * alpha_factorial(a)
    return out


def jet_to_multijet(block, p, n, point_index=0):
    """One point's jet out of a block result, as a scalar MultiJet."""
    arr = value_of(block)
    pos = index_positions(p, n)
    return MultiJet(p, n, {a: float(arr[pos[a], point_index, 0]) for a in canonical_indices(p, n)})
