"""Single-output MLP: construction, cached forward pass, text serialization.

Layer m maps y^(m-1) to y^(m) = sigma_m(W^(m) y^(m-1) + b^(m)). The final
width is always 1. Weight initialization draws from
U(-w0/fan_in, w0/fan_in) using the package's documented splitmix64 stream
(layer-major, then row-major, weights before biases), so a seed pins the
network exactly. Biases use the same distribution as their layer's
weights.
"""

from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationKind
from .rng import SplitMix64
from .tape import Tensor, value_of, vact, vmatmul


@dataclass
class Network:
    widths: list  # o_0 .. o_d, with o_d == 1
    activations: list  # ActivationKind per layer, length d
    weights: list  # W^(m) of shape (o_m, o_{m-1})
    biases: list  # b^(m) of shape (o_m,)
    w0: float = 1.0
    seed: int = 0

    @property
    def depth(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.widths[0]

    def validate(self):
        if len(self.widths) < 2:
            raise ValueError("network needs at least one layer")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.widths[-1] != 1:
            raise ValueError(f"output width must be 1, got {self.widths[-1]}")
        d = len(self.widths) - 1
        if not (len(self.activations) == len(self.weights) == len(self.biases) == d):
            raise ValueError("layer count mismatch between widths/activations/params")
        for m, (W, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.widths[m + 1], self.widths[m])
            if W.shape != want:
                raise ValueError(f"layer {m}: weight shape {W.shape}, expected {want}")
            if b.shape != (self.widths[m + 1],):
                raise ValueError(f"layer {m}: bias shape {b.shape}")
        return self

    def equals(self, other):
        return (
            self.widths == other.widths
            and self.activations == other.activations
            and self.w0 == other.w0
            and self.seed == other.seed
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


@dataclass
class Architecture:
    """Recipe for init_uniform; what the solver asks for before training."""

    widths: list
    activations: list
    w0: float = 1.0

    @classmethod
    def mlp(cls, input_dim, hidden=64, layers=5, activation="sine", w0=1.0):
        """`layers` weight matrices, hidden activations + identity output."""
        if layers < 1:
            raise ValueError("need at least one layer")
        widths = [input_dim] + [hidden] * (layers - 1) + [1]
        acts = [ActivationKind.parse(activation)] * (layers - 1) + [ActivationKind.IDENTITY]
        return cls(widths=widths, activations=acts, w0=w0)


def init_uniform(widths, activations, w0, seed):
    """Fresh network with W ~ U(-w0/fan_in, w0/fan_in), fully seeded.

    Biases draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) independent of w0:
    scaling them down with the weights parks every pre-activation at the
    origin, where even-order sine derivatives vanish and the derivative
    magnitude spectrum develops an even/odd sawtooth instead of the clean
    geometric decay the w0 study measures.
    """
    if w0 <= 0:
        raise ValueError("w0 must be positive")
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w <= 0 for w in widths) or widths[-1] != 1:
        raise ValueError(f"invalid widths {widths}: need positive extents ending in 1")
    acts = [ActivationKind.parse(a) for a in activations]
    rng = SplitMix64(seed)
    weights, biases = [], []
    for m in range(len(widths) - 1):
        fan_in = widths[m]
        lo, hi = -w0 / fan_in, w0 / fan_in
        blim = 1.0 / np.sqrt(fan_in)
        W = np.array(
            [[rng.uniform(lo, hi) for _ in range(fan_in)] for _ in range(widths[m + 1])]
        )
        b = np.array([rng.uniform(-blim, blim) for _ in range(widths[m + 1])])
        weights.append(W)
        biases.append(b)
    return Network(
        widths=list(widths), activations=acts, weights=weights, biases=biases,
        w0=float(w0), seed=int(seed),
    ).validate()


def init_from_arch(arch, seed):
    return init_uniform(arch.widths, arch.activations, arch.w0, seed)


@dataclass
class ForwardCache:
    """Per-layer pre-activations and outputs for one batch of inputs."""

    x: object  # (B, p)
    z: list = field(default_factory=list)  # z[m]: (B, o_{m+1})
    y: list = field(default_factory=list)  # y[m]: (B, o_{m+1})
    params: object = None  # TapedParams when recorded on a tape

    @property
    def output(self):
        return self.y[-1]


class TapedParams:
    """Network weights registered on a tape for one training step."""

    def __init__(self, net, tape):
        self.tape = tape
        self.weights = [tape.parameter(W) for W in net.weights]
        self.biases = [tape.parameter(b) for b in net.biases]

    def all_ids(self):
        return [t.id for t in self.weights] + [t.id for t in self.biases]


def forward_cached(net, X, params=None):
    """Run the network on a batch X of shape (B, p), keeping every layer.

    With `params` (a TapedParams), all values are recorded on its tape so
    the result can be differentiated with respect to the weights.
    """
    X = X if isinstance(X, Tensor) else np.atleast_2d(np.asarray(X, dtype=np.float64))
    if value_of(X).ndim != 2 or value_of(X).shape[1] != net.input_dim:
        raise ValueError(
            f"input batch has shape {value_of(X).shape}, expected (*, {net.input_dim})"
        )
    if params is not None and not isinstance(X, Tensor):
        X = params.tape.constant(X)
    weights = params.weights if params is not None else net.weights
    biases = params.biases if params is not None else net.biases
    cache = ForwardCache(x=X, params=params)
    h = X
    for m in range(net.depth):
        z = vmatmul(h, weights[m], tb=True) + biases[m]
        h = vact(net.activations[m], z, 0)
        cache.z.append(z)
        cache.y.append(h)
    return cache.output, cache


def output_values(net, X):
    """Convenience: plain (B,) output array."""
    out, _ = forward_cached(net, X)
    return np.asarray(out).reshape(-1)


# -------------------------------------------------------------- model file
#
# Plain text, line oriented. Floats use 17 significant digits so the
# round trip is value-exact for float64.

_FMT = "%.17g"


def _fmt_floats(arr):
    return " ".join(_FMT % v for v in np.asarray(arr, dtype=np.float64).reshape(-1))


def save(net, path):
    lines = [
        "taylornet-model v1",
        "widths " + " ".join(str(w) for w in net.widths),
        "activations " + " ".join(a.value for a in net.activations),
        "w0 " + (_FMT % net.w0),
        "seed " + str(net.seed),
    ]
    for m in range(net.depth):
        lines.append(f"layer {m} weight " + _fmt_floats(net.weights[m]))
        lines.append(f"layer {m} bias " + _fmt_floats(net.biases[m]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].split()[0] != "taylornet-model":
        raise ValueError(f"{path}: not a model file")
    fields = {}
    layer_rows = {}
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "layer":
            m, which = int(parts[1]), parts[2]
            layer_rows[(m, which)] = [float(v) for v in parts[3:]]
        else:
            fields[parts[0]] = parts[1:]
    try:
        widths = [int(w) for w in fields["widths"]]
        acts = [ActivationKind.parse(a) for a in fields["activations"]]
        w0 = float(fields["w0"][0])
        seed = int(fields["seed"][0])
    except KeyError as missing:
        raise ValueError(f"{path}: missing field {missing}") from None
    weights, biases = [], []
    for m in range(len(widths) - 1):
        try:
            wrow = layer_rows[(m, "weight")]
            brow = layer_rows[(m, "bias")]
        except KeyError:
            raise ValueError(f"{path}: missing parameters for layer {m}") from None
        o_out, o_in = widths[m + 1], widths[m]
        if len(wrow) != o_out * o_in or len(brow) != o_out:
            raise ValueError(f"{path}: layer {m} has wrong parameter count")
        weights.append(np.array(wrow).reshape(o_out, o_in))
        biases.append(np.array(brow))
    return Network(
        widths=widths, activations=acts, weights=weights, biases=biases, w0=w0, seed=seed
    ).validate()
