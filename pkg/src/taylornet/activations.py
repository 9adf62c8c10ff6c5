"""Arbitrary-order derivatives of the supported activation functions.

Sine and Identity have closed-form derivative cycles. Sigmoid and Tanh
derivatives are polynomials in sigma(x) itself with exact integer
coefficients; the coefficient rows are built once per order by an integer
recurrence and cached, then evaluated with Horner's scheme (the
coefficients grow factorially, so evaluation order matters).
"""

import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ActivationKind(str, Enum):
    SINE = "sine"
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, tag):
        if isinstance(tag, cls):
            return tag
        try:
            return cls(str(tag).strip().lower())
        except ValueError:
            raise ValueError(f"unknown activation tag {tag!r}") from None


# hard ceiling on table depth; far above anything float64 can represent
# usefully but keeps accidental runaway requests from allocating forever
MAX_TABLE_ORDER = 64


@dataclass(frozen=True)
class PolyTable:
    """Integer coefficient rows expressing sigma^(k) as a polynomial in sigma.

    Sigmoid: rows[k] = [c_1, ..., c_{k+1}] with sigma^(k) = sum_i c_i sigma^i
    (row 0 is sigma itself, [1]).
    Tanh: rows[0] = [1] is the constant-1 row of the recurrence display;
    rows[k+1] = [c_0, ..., c_{k+1}] with sigma^(k) = sum_i c_i sigma^i.
    Entries are exact Python ints.
    """

    kind: ActivationKind
    order: int
    rows: tuple

    def deriv_row(self, k):
        """Coefficient row for sigma^(k), with its power offset.

        Returns (coeffs, lowest_power): sigma^(k) = sum_i coeffs[i] * sigma^(lowest_power + i).
        """
        if k > self.order:
            raise ValueError(f"order {k} exceeds table depth {self.order}")
        if self.kind is ActivationKind.SIGMOID:
            return self.rows[k], 1
        return self.rows[k + 1], 0


def build_poly_table(kind, n):
    """Build the integer recurrence table for Sigmoid or Tanh up to order n."""
    kind = ActivationKind.parse(kind)
    if n < 1:
        raise ValueError("table order must be >= 1")
    if n > MAX_TABLE_ORDER:
        raise ValueError(f"table order {n} exceeds cap {MAX_TABLE_ORDER}")
    if kind is ActivationKind.SIGMOID:
        rows = [[1]]  # sigma = 1 * sigma^1
        for k in range(1, n + 1):
            prev = rows[-1]
            row = [1]
            for i in range(2, k + 1):
                row.append(i * prev[i - 1] - (i - 1) * prev[i - 2])
            row.append(-k * prev[k - 1])
            rows.append(row)
    elif kind is ActivationKind.TANH:
        rows = [[1], [0, 1]]  # constant-1 row, then sigma itself
        for k in range(1, n + 1):
            prev = rows[-1]  # row for sigma^(k-1), powers 0..k
            get = lambda i: prev[i] if 0 <= i < len(prev) else 0
            # C_{m,1} = C_{m-1,2}; C_{m,i} = i*C_{m-1,i+1} - (i-2)*C_{m-1,i-1}
            row = [get(1)]
            for i in range(2, k + 3):
                row.append(i * get(i) - (i - 2) * get(i - 2))
            rows.append(row)
    else:
        raise ValueError(f"no polynomial table for activation {kind.value}")
    return PolyTable(kind=kind, order=n, rows=tuple(tuple(r) for r in rows))


_table_cache = {}
_table_lock = threading.Lock()


def poly_table(kind, n):
    """Cached table of depth >= n (tables only ever grow)."""
    kind = ActivationKind.parse(kind)
    key = kind
    with _table_lock:
        tab = _table_cache.get(key)
        if tab is None or tab.order < n:
            tab = build_poly_table(kind, max(n, 8, tab.order if tab else 0))
            _table_cache[key] = tab
        return tab


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _horner_in_sigma(sig, coeffs, lowest_power):
    acc = np.zeros_like(sig) + float(coeffs[-1])
    for c in reversed(coeffs[:-1]):
        acc = acc * sig + float(c)
    if lowest_power:
        acc = acc * sig**lowest_power
    return acc


def act_kth_deriv(kind, z, k):
    """Elementwise sigma^(k)(z); k=0 is the activation value itself."""
    kind = ActivationKind.parse(kind)
    if k < 0:
        raise ValueError("derivative order must be >= 0")
    z = np.asarray(z, dtype=np.float64)
    if kind is ActivationKind.SINE:
        return (np.sin, np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v))[k % 4](z)
    if kind is ActivationKind.RELU:
        if k == 0:
            return np.maximum(z, 0.0)
        if k == 1:
            return (z > 0).astype(np.float64)
        return np.zeros_like(z)
    if kind is ActivationKind.IDENTITY:
        if k == 0:
            return z.copy()
        if k == 1:
            return np.ones_like(z)
        return np.zeros_like(z)
    tab = poly_table(kind, max(k, 1))
    if kind is ActivationKind.SIGMOID:
        sig = _sigmoid(z)
    else:
        sig = np.tanh(z)
    if k == 0:
        return sig
    coeffs, low = tab.deriv_row(k)
    return _horner_in_sigma(sig, coeffs, low)


def act_derivs(kind, z, n):
    """Stack of sigma^(k)(z) for k = 0..n; entry [k] has the shape of z.

    Sigmoid and Tanh evaluate sigma once and reuse it across the rows.
    """
    kind = ActivationKind.parse(kind)
    if n < 0:
        raise ValueError("derivative order must be >= 0")
    if n > MAX_TABLE_ORDER:
        raise ValueError(f"order {n} exceeds table cap {MAX_TABLE_ORDER}")
    z = np.asarray(z, dtype=np.float64)
    if kind in (ActivationKind.SIGMOID, ActivationKind.TANH):
        tab = poly_table(kind, max(n, 1))
        sig = _sigmoid(z) if kind is ActivationKind.SIGMOID else np.tanh(z)
        out = [sig.copy()]
        for k in range(1, n + 1):
            coeffs, low = tab.deriv_row(k)
            out.append(_horner_in_sigma(sig, coeffs, low))
        return out
    return [act_kth_deriv(kind, z, k) for k in range(n + 1)]
