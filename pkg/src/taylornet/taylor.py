"""Taylor polynomials of a network around a reference point.

Coefficients are stored per canonical multi-index as d^alpha f(x0) /
alpha! (the multiplier of prod_i (x_i - x0_i)^(alpha_i)), which folds the
multinomial multiplicity of index sequences into C(p+n, n) storage. The
renderer prints the factorial-denominator form; `expression_text` emits
the same polynomial in the solver's expression grammar so it can be
parsed back and evaluated.
"""

import math
from dataclasses import dataclass

import numpy as np

from .engines import get_engine
from .indices import alpha_factorial, canonical_indices, format_alpha, parse_alpha
from .jets import MultiJet

_FMT = "%.17g"


@dataclass
class TaylorPolynomial:
    x0: np.ndarray  # reference point, shape (p,)
    order: int
    coeffs: dict  # alpha -> coefficient of prod (x - x0)^alpha

    @property
    def p(self):
        return self.x0.size

    def coefficient(self, alpha):
        return self.coeffs.get(tuple(alpha), 0.0)

    def derivative(self, alpha):
        """Raw d^alpha f(x0) recovered from the stored coefficient."""
        return self.coefficient(alpha) * alpha_factorial(alpha)


def _sorted_alphas(coeffs):
    return sorted(coeffs, key=lambda a: (sum(a), tuple(-x for x in a)))


def expand(engine_result, x0, n):
    """Build the polynomial from derivatives at x0.

    `engine_result` is either a MultiJet (normalized coefficients pass
    through) or a map {alpha: d^alpha f(x0)} covering every canonical
    multi-index with |alpha| <= n.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    p = x0.size
    if isinstance(engine_result, MultiJet):
        if engine_result.p != p:
            raise ValueError("jet dimension does not match x0")
        coeffs = {
            a: float(engine_result.coefficient(a))
            for a in canonical_indices(p, min(n, engine_result.n))
        }
        if engine_result.n < n:
            raise ValueError(f"jet order {engine_result.n} below requested {n}")
        return TaylorPolynomial(x0=x0, order=n, coeffs=coeffs)
    coeffs = {}
    for a in canonical_indices(p, n):
        if a not in engine_result:
            raise ValueError(f"missing multi-index {a} in derivative map")
        val = np.asarray(engine_result[a], dtype=np.float64).reshape(-1)
        if val.size != 1:
            raise ValueError("expand needs derivatives at a single point")
        coeffs[a] = float(val[0]) / alpha_factorial(a)
    return TaylorPolynomial(x0=x0, order=n, coeffs=coeffs)


def eval_poly(poly, x):
    """Evaluate at one point (p,) or a batch (B, p), in canonical term order."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != poly.p:
        raise ValueError(f"point dimension {pts.shape[1]}, polynomial has {poly.p}")
    dx = pts - poly.x0
    out = np.zeros(pts.shape[0])
    for a in _sorted_alphas(poly.coeffs):
        term = np.full(pts.shape[0], poly.coeffs[a])
        for i, ai in enumerate(a):
            if ai:
                term = term * dx[:, i] ** ai
        out += term
    return float(out[0]) if single else out


def _delta_symbols(poly):
    if poly.p == 1:
        v = float(poly.x0[0])
        if abs(v - math.pi) < 1e-9:
            return ["Δπ"]  # delta-pi
        if v == 0.0:
            return ["Δx1"]
        return ["Δ" + ("%g" % v)]
    return [f"Δx{i + 1}" for i in range(poly.p)]


def render(poly, digits=4):
    """Human-readable factorial-denominator form, e.g. "c0 - c1/1!*Δπ + ..."."""
    if digits < 1:
        raise ValueError("digits must be >= 1")
    syms = _delta_symbols(poly)
    pieces = []
    for a in _sorted_alphas(poly.coeffs):
        c = poly.coeffs[a]
        k = sum(a)
        if c == 0.0 and k > 0:
            continue
        if k == 0:
            body = f"%.{digits}g" % c
            pieces.append(("-" if c < 0 else "+", body.lstrip("-")))
            continue
        numerator = c * math.factorial(k)
        mag = f"%.{digits}g" % abs(numerator)
        deltas = "*".join(
            syms[i] + (f"^{ai}" if ai > 1 else "") for i, ai in enumerate(a) if ai
        )
        pieces.append(("-" if numerator < 0 else "+", f"{mag}/{k}!*{deltas}"))
    if not pieces:
        return "0"
    first_sign, first_body = pieces[0]
    text = ("-" if first_sign == "-" else "") + first_body
    for sign, body in pieces[1:]:
        text += f" {sign} {body}"
    return text


def expression_text(poly, digits=17):
    """The polynomial in the expression grammar (x1..xp, + - * ^)."""
    terms = []
    for a in _sorted_alphas(poly.coeffs):
        c = poly.coeffs[a]
        if c == 0.0 and sum(a) > 0:
            continue
        body = f"%.{digits}g" % c
        for i, ai in enumerate(a):
            if not ai:
                continue
            x0i = float(poly.x0[i])
            if x0i == 0.0:
                var = f"x{i + 1}"
            else:
                op = "-" if x0i > 0 else "+"
                var = f"(x{i + 1} {op} {_FMT % abs(x0i)})"
            body += f"*{var}" + (f"^{ai}" if ai > 1 else "")
        terms.append(body)
    if not terms:
        return "0"
    out = terms[0]
    for t in terms[1:]:
        out += " + " + t if not t.startswith("-") else " - " + t[1:]
    return out


def convergence_profile(net, x0, n, engine="shop"):
    """Ratios r_k = |d^k f/dx^k| / |df/dx| for a one-input network."""
    if net.input_dim != 1:
        raise ValueError("convergence profile is defined for 1-D networks")
    eng = get_engine(engine)
    x0 = np.asarray(x0, dtype=np.float64).reshape(1, 1)
    dmap = eng.derivative_map(net, x0, n)
    first = abs(float(np.asarray(dmap[(1,)]).reshape(-1)[0]))
    if first < 1e-300:
        raise ValueError("first derivative is degenerate; ratios undefined")
    out = [1.0]
    for k in range(2, n + 1):
        out.append(abs(float(np.asarray(dmap[(k,)]).reshape(-1)[0])) / first)
    return np.array(out)


# ------------------------------------------------------------- poly file


def save_polynomial(poly, path):
    lines = [
        "taylornet-polynomial v1",
        "x0 " + " ".join(_FMT % v for v in poly.x0),
        f"order {poly.order}",
    ]
    for a in _sorted_alphas(poly.coeffs):
        lines.append(f"coeff {format_alpha(a)} " + _FMT % poly.coeffs[a])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_polynomial(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("taylornet-polynomial"):
        raise ValueError(f"{path}: not a polynomial file")
    x0 = None
    order = None
    coeffs = {}
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "x0":
            x0 = np.array([float(v) for v in parts[1:]])
        elif parts[0] == "order":
            order = int(parts[1])
        elif parts[0] == "coeff":
            coeffs[parse_alpha(parts[1])] = float(parts[2])
    if x0 is None or order is None:
        raise ValueError(f"{path}: missing x0 or order")
    return TaylorPolynomial(x0=x0, order=order, coeffs=coeffs)
