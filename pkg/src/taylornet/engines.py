"""Engine facade: one interface over the two derivative computations.

`shop` runs the layered chain-matrix propagation (fast path); `exact`
runs the truncated-jet forward (oracle). Both return the same structure:
a map from canonical multi-index to per-point values, with the all-zero
index carrying the network output itself. The solver and the Taylor
expansion only ever talk to this interface.
"""

import numpy as np

from .hod import canonical_mixed_entries, unmixed_derivs
from .indices import canonical_indices, format_alpha
from .jets import block_derivative_map, jet_forward_block
from .network import forward_cached
from .tape import Tensor, value_of, vsum


def _flatten_output(out):
    if isinstance(out, Tensor):
        return vsum(out, axis=1)  # (B, 1) -> (B,)
    return np.asarray(out).reshape(-1)


def _is_unmixed(alpha):
    return sum(1 for a in alpha if a > 0) <= 1


class ShopEngine:
    name = "shop"

    def derivative_map(self, net, X, n, alphas=None, params=None):
        """{alpha: (B,) values} for all requested |alpha| <= n."""
        p = net.input_dim
        if alphas is None:
            alphas = canonical_indices(p, n)
        alphas = [tuple(a) for a in alphas]
        for a in alphas:
            if len(a) != p:
                raise ValueError(f"multi-index {a} has arity {len(a)}, expected {p}")
            if sum(a) > n:
                raise ValueError(f"multi-index {a} exceeds requested order {n}")
        out, cache = forward_cached(net, X, params=params)
        result = {}
        zero = (0,) * p
        if zero in alphas:
            result[zero] = _flatten_output(out)
        max_order = max((sum(a) for a in alphas), default=0)
        if max_order == 0:
            return result
        v0, v1 = unmixed_derivs(net, cache, max_order)
        mixed = []
        for a in alphas:
            if a == zero:
                continue
            if _is_unmixed(a):
                j = next(i for i, ai in enumerate(a) if ai > 0)
                k = sum(a)
                col = v0.orders[k - 1]
                if isinstance(col, Tensor):
                    e = np.zeros((p, 1))
                    e[j, 0] = 1.0
                    result[a] = vsum(col @ col.tape.constant(e), axis=1)
                else:
                    result[a] = col[:, j]
            else:
                mixed.append(a)
        if mixed:
            result.update(canonical_mixed_entries(net, cache, v1, mixed))
        return result


class ExactEngine:
    name = "exact"

    def derivative_map(self, net, X, n, alphas=None, params=None):
        block = jet_forward_block(net, X, n, params=params)
        return block_derivative_map(block, net.input_dim, n, alphas=alphas)


_ENGINES = {"shop": ShopEngine, "exact": ExactEngine}


def get_engine(which):
    if isinstance(which, (ShopEngine, ExactEngine)):
        return which
    try:
        return _ENGINES[str(which).lower()]()
    except KeyError:
        raise ValueError(f"unknown engine {which!r}; choose from {sorted(_ENGINES)}") from None


# --------------------------------------------------------- derivative dump

_FMT = "%.17g"


def dump_derivative_map(points, dmap, header=True):
    """Text document mapping multi-index strings to values per point.

    One `point` section per evaluation point; derivative lines are
    "k1,...,kp value" in graded lexicographic order.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    alphas = sorted(dmap.keys(), key=lambda a: (sum(a), tuple(-x for x in a)))
    values = {a: np.asarray(value_of(dmap[a])).reshape(-1) for a in alphas}
    lines = ["taylornet-derivatives v1"] if header else []
    for b in range(points.shape[0]):
        lines.append(f"point {b}")
        lines.append("x " + ",".join(_FMT % v for v in points[b]))
        for a in alphas:
            lines.append(f"{format_alpha(a)} {_FMT % values[a][b]}")
    return "\n".join(lines) + "\n"


def parse_derivative_dump(text):
    """Inverse of dump_derivative_map: list of (point, {alpha: value})."""
    out = []
    point = None
    dmap = None
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("taylornet-derivatives"):
            continue
        if ln.startswith("point "):
            if dmap is not None:
                out.append((point, dmap))
            dmap = {}
            continue
        if ln.startswith("x "):
            point = tuple(float(v) for v in ln[2:].split(","))
            continue
        key, val = ln.split()
        dmap[tuple(int(v) for v in key.split(","))] = float(val)
    if dmap is not None:
        out.append((point, dmap))
    return out
