"""Symbolic chain transformation table for derivatives of composites.

For f(g(x)), the vector of derivatives (df/dx, ..., d^n f/dx^n) equals a
lower-triangular matrix M times (df/dg, ..., d^n f/dg^n). Cell (i, j) of M
is an integer-coefficient polynomial in the derivatives of g; row i+1
follows from row i by

    M[i+1][j] = d/dx M[i][j] + g' * M[i][j-1]

where d/dx acts on each monomial factor g^(r) by bumping it to g^(r+1)
with the product rule. The table is built once per maximum order and then
evaluated numerically (on scalars, arrays, or taped tensors).
"""

import threading
from dataclasses import dataclass

MAX_ORDER = 20  # largest coefficient at n=20 still fits a signed 64-bit int


@dataclass(frozen=True)
class Monomial:
    """coefficient * prod_r (g^(r))^(e_r); exponents keyed by derivative order r."""

    coefficient: int
    exponents: tuple  # sorted tuple of (order r, exponent e_r), e_r >= 1

    def weight(self):
        return sum(r * e for r, e in self.exponents)

    def degree(self):
        return sum(e for _, e in self.exponents)

    def differentiate(self):
        """d/dx of this monomial: list of child monomials (product rule)."""
        out = []
        exps = dict(self.exponents)
        for r, e in self.exponents:
            child = dict(exps)
            if e == 1:
                del child[r]
            else:
                child[r] = e - 1
            child[r + 1] = child.get(r + 1, 0) + 1
            out.append(Monomial(self.coefficient * e, _key(child)))
        return out

    def times_gprime(self):
        exps = dict(self.exponents)
        exps[1] = exps.get(1, 0) + 1
        return Monomial(self.coefficient, _key(exps))

    def evaluate(self, g_derivs, pow_cache=None):
        """Numeric value given g_derivs[r-1] = g^(r); generic over value type."""
        acc = None
        for r, e in self.exponents:
            base = g_derivs[r - 1]
            if pow_cache is not None:
                key = (r, e)
                term = pow_cache.get(key)
                if term is None:
                    term = base if e == 1 else base**e
                    pow_cache[key] = term
            else:
                term = base if e == 1 else base**e
            acc = term if acc is None else acc * term
        if acc is None:
            return float(self.coefficient)
        if self.coefficient != 1:
            acc = acc * float(self.coefficient)
        return acc

    def text(self):
        parts = " ".join(
            f"g{r}" + (f"^{e}" if e > 1 else "") for r, e in self.exponents
        )
        return f"{self.coefficient} * {parts}"


def _key(exps):
    return tuple(sorted((r, e) for r, e in exps.items() if e))


def _merge(monomials):
    acc = {}
    for m in monomials:
        acc[m.exponents] = acc.get(m.exponents, 0) + m.coefficient
    return tuple(
        Monomial(c, e) for e, c in sorted(acc.items()) if c != 0
    )


@dataclass(frozen=True)
class ChainTable:
    """cells[i][j] for 1 <= j <= i <= order; each cell a tuple of Monomial."""

    order: int
    cells: tuple  # cells[i-1][j-1]

    def cell(self, i, j):
        if not (1 <= j <= i <= self.order):
            raise IndexError(f"cell ({i},{j}) outside lower triangle of order {self.order}")
        return self.cells[i - 1][j - 1]

    def dump(self):
        """One cell per line: "i j : coeff * g1^e1 g2^e2 ..." (debug aid)."""
        lines = []
        for i in range(1, self.order + 1):
            for j in range(1, i + 1):
                body = " + ".join(m.text() for m in self.cell(i, j))
                lines.append(f"{i} {j} : {body}")
        return "\n".join(lines)


def build_table(n):
    """Chain table of order n via the row recurrence; exact integer arithmetic."""
    if n < 1:
        raise ValueError("chain table order must be >= 1")
    if n > MAX_ORDER:
        raise ValueError(f"chain table order {n} exceeds cap {MAX_ORDER}")
    rows = [[(Monomial(1, ((1, 1),)),)]]
    for i in range(1, n):
        prev = rows[-1]
        row = []
        for j in range(1, i + 2):
            parts = []
            if j <= i:
                for m in prev[j - 1]:
                    parts.extend(m.differentiate())
            if j >= 2:
                for m in prev[j - 2]:
                    parts.append(m.times_gprime())
            row.append(_merge(parts))
        rows.append(row)
    return ChainTable(order=n, cells=tuple(tuple(r) for r in rows))


_cache = {}
_cache_lock = threading.Lock()


def chain_table(n):
    """Cached table of order >= n (shared, immutable)."""
    with _cache_lock:
        tab = _cache.get("table")
        if tab is None or tab.order < n:
            tab = build_table(n)
            _cache["table"] = tab
        return tab


def eval_cells(table, g_derivs, n=None):
    """Evaluate every cell at g_derivs; returns dict {(i, j): value}.

    g_derivs[r-1] supplies g^(r) and may be scalars, arrays, or taped
    tensors; repeated powers are computed once and shared.
    """
    n = table.order if n is None else n
    if n > table.order:
        raise ValueError(f"requested order {n} exceeds table order {table.order}")
    if len(g_derivs) < n:
        raise ValueError(f"need {n} derivative values, got {len(g_derivs)}")
    pow_cache = {}
    out = {}
    for i in range(1, n + 1):
        for j in range(1, i + 1):
            val = None
            for m in table.cell(i, j):
                term = m.evaluate(g_derivs, pow_cache)
                val = term if val is None else val + term
            out[(i, j)] = val
    return out


def eval_chain_matrix(table, g_derivs, n=None):
    """Lower-triangular n x n matrix of cell values (list of lists).

    Entries above the diagonal are 0.0. Works for scalar g_derivs (plain
    floats out) and for array/taped values (whatever the arithmetic yields).
    """
    n = table.order if n is None else n
    cells = eval_cells(table, g_derivs, n)
    return [
        [cells[(i, j)] if j <= i else 0.0 for j in range(1, n + 1)]
        for i in range(1, n + 1)
    ]
