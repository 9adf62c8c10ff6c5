"""Canonical multi-index bookkeeping for truncated multivariate polynomials.

A multi-index alpha = (a_1, ..., a_p) stands for the monomial
prod_i dx_i^{a_i} (equivalently the derivative d^|alpha| / dx^alpha).
Everything downstream (jets, Taylor polynomials, derivative dumps) iterates
multi-indices in graded lexicographic order so output is deterministic.
"""

import math
from functools import lru_cache

import numpy as np


def total_degree(alpha):
    return sum(alpha)


def alpha_factorial(alpha):
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return out


def multiplicity(alpha):
    """Number of ordered index sequences collapsing to alpha: |alpha|!/alpha!."""
    return math.factorial(sum(alpha)) // alpha_factorial(alpha)


def _compositions(p, k):
    """All p-tuples of nonnegative ints summing to k, lexicographically."""
    if p == 1:
        yield (k,)
        return
    for first in range(k, -1, -1):
        for rest in _compositions(p - 1, k - first):
            yield (first,) + rest


@lru_cache(maxsize=None)
def canonical_indices(p, n):
    """Graded-lex tuple of all alpha with |alpha| <= n; alpha=(0,...,0) first."""
    out = []
    for k in range(n + 1):
        out.extend(sorted(_compositions(p, k), reverse=True))
    return tuple(out)


@lru_cache(maxsize=None)
def index_positions(p, n):
    """Map alpha -> position in canonical_indices(p, n)."""
    return {a: i for i, a in enumerate(canonical_indices(p, n))}


def count_indices(p, n):
    return math.comb(p + n, n)


def parse_alpha(text, p=None):
    """Parse a multi-index string like "2,1" into a tuple, validating arity."""
    parts = [s.strip() for s in text.split(",")]
    alpha = tuple(int(s) for s in parts)
    if any(a < 0 for a in alpha):
        raise ValueError(f"negative entry in multi-index {text!r}")
    if p is not None and len(alpha) != p:
        raise ValueError(f"multi-index {text!r} has arity {len(alpha)}, expected {p}")
    return alpha


def format_alpha(alpha):
    return ",".join(str(a) for a in alpha)


class MulTable:
    """Precomputed index triples for truncated polynomial multiplication.

    For coefficient arrays a, b indexed by canonical_indices(p, n), the
    truncated product is out[io] = sum over pairs (ia, ib) with
    alpha[ia] + alpha[ib] = alpha[io]. The triples are stored sorted by
    each of io / ia / ib with segment boundaries, so both the forward
    product and the two gradient scatters run as add.reduceat calls.
    """

    def __init__(self, p, n):
        self.p = p
        self.n = n
        idx = canonical_indices(p, n)
        pos = index_positions(p, n)
        ia, ib, io = [], [], []
        for i, a in enumerate(idx):
            da = total_degree(a)
            for j, b in enumerate(idx):
                if da + total_degree(b) > n:
                    continue
                ia.append(i)
                ib.append(j)
                io.append(pos[tuple(x + y for x, y in zip(a, b))])
        self.ia = np.asarray(ia, dtype=np.int64)
        self.ib = np.asarray(ib, dtype=np.int64)
        self.io = np.asarray(io, dtype=np.int64)
        self.ncoef = len(idx)
        self.degrees = [total_degree(a) for a in idx]
        self.by_out = self._segmented(self.io)
        self.by_a = self._segmented(self.ia)
        self.by_b = self._segmented(self.ib)
        # small tables run a plain pair loop on row views, which beats the
        # gather + reduceat path by a wide margin at these sizes
        self.pairs = list(zip(self.ia.tolist(), self.ib.tolist(), self.io.tolist()))
        self.small = len(self.pairs) <= 4096
        self._pruned = {}

    def pairs_for(self, min_a=0, min_b=0):
        """Pair subset where the operands have at least the given total
        degrees; exact for factors whose low-degree coefficients vanish."""
        if min_a == 0 and min_b == 0:
            return self.pairs
        key = (min_a, min_b)
        sub = self._pruned.get(key)
        if sub is None:
            sub = [
                (i, j, k)
                for i, j, k in self.pairs
                if self.degrees[i] >= min_a and self.degrees[j] >= min_b
            ]
            self._pruned[key] = sub
        return sub

    def _segmented(self, key):
        order = np.argsort(key, kind="stable")
        sorted_key = key[order]
        # reduceat segment starts; empty segments handled via searchsorted
        starts = np.searchsorted(sorted_key, np.arange(self.ncoef))
        return order, starts

    def _segment_sum(self, rows, which):
        order, starts = which
        rows = rows[order]
        flat = rows.reshape(rows.shape[0], -1)
        out = np.zeros((self.ncoef, flat.shape[1]), dtype=flat.dtype)
        # reduceat misbehaves on empty trailing segments; guard via mask
        valid = starts < flat.shape[0]
        if flat.shape[0]:
            summed = np.add.reduceat(flat, np.minimum(starts, flat.shape[0] - 1), axis=0)
            # reduceat duplicates the row when consecutive starts are equal
            # (empty segment); zero those out
            seg_len = np.diff(np.append(starts, flat.shape[0]))
            summed[seg_len == 0] = 0.0
            summed[~valid] = 0.0
            out = summed
        return out.reshape((self.ncoef,) + rows.shape[1:])

    def _loop_accumulate(self, left, right, pairs, select):
        shape = np.broadcast_shapes(left.shape[1:], right.shape[1:])
        out = np.zeros((self.ncoef,) + shape)
        buf = np.empty(shape)
        for pair in pairs:
            i, j, k = select(pair)
            np.multiply(left[i], right[j], out=buf)
            out[k] += buf
        return out

    def multiply(self, a, b, min_a=0, min_b=0):
        """Truncated product of coefficient blocks a, b of shape (ncoef, ...)."""
        if self.small or min_a or min_b:
            pairs = self.pairs_for(min_a, min_b)
            return self._loop_accumulate(a, b, pairs, lambda p: (p[0], p[1], p[2]))
        rows = a[self.ia] * b[self.ib]
        return self._segment_sum(rows, self.by_out)

    def grad_a(self, g, b, min_a=0, min_b=0):
        """d(out)/d(a) contraction: scatter g[io] * b[ib] onto ia."""
        if self.small or min_a or min_b:
            pairs = self.pairs_for(min_a, min_b)
            return self._loop_accumulate(g, b, pairs, lambda p: (p[2], p[1], p[0]))
        rows = g[self.io] * b[self.ib]
        return self._segment_sum(rows, self.by_a)

    def grad_b(self, g, a, min_a=0, min_b=0):
        if self.small or min_a or min_b:
            pairs = self.pairs_for(min_a, min_b)
            return self._loop_accumulate(g, a, pairs, lambda p: (p[2], p[0], p[1]))
        rows = g[self.io] * a[self.ia]
        return self._segment_sum(rows, self.by_b)


@lru_cache(maxsize=None)
def mul_table(p, n):
    return MulTable(p, n)
