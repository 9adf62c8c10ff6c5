"""PDE problems as residual constraints, collocation sampling, training.

A problem is a box domain plus a list of weighted constraints, each a
residual expression over derivative atoms attached to a sampling region
(interior, a boundary face, an initial slice, or the whole closed box).
The loss is the weighted sum of per-constraint mean squared residuals;
training runs Adamax over one sampled batch per epoch with a step
learning-rate schedule.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .engines import get_engine
from .expr import derivative_indices, eval_ast, max_derivative_order, parse_expression
from .network import Architecture, TapedParams, init_from_arch
from .rng import SplitMix64
from .tape import Tape, Tensor, value_of, vmean, vsquare

_FMT = "%.17g"


# ----------------------------------------------------------------- regions


@dataclass(frozen=True)
class Region:
    kind: str  # interior | face | slice | all
    axis: int = -1  # 0-based, for face/slice
    side: str = ""  # "min"/"max" for face
    value: float = 0.0  # for slice

    @classmethod
    def interior(cls):
        return cls("interior")

    @classmethod
    def everywhere(cls):
        return cls("all")

    @classmethod
    def face(cls, axis, side):
        if side not in ("min", "max"):
            raise ValueError(f"face side must be min or max, got {side!r}")
        return cls("face", axis=axis, side=side)

    @classmethod
    def slice(cls, axis, value):
        return cls("slice", axis=axis, value=float(value))

    def describe(self):
        if self.kind == "face":
            return f"face {self.axis + 1} {self.side}"
        if self.kind == "slice":
            return f"slice {self.axis + 1} {_FMT % self.value}"
        return self.kind


@dataclass
class Constraint:
    region: Region
    expr: object  # expression AST, residual form (target 0)
    weight: float
    text: str = ""

    def needed_indices(self):
        return derivative_indices(self.expr)


@dataclass
class PdeProblem:
    name: str
    dims: int
    domain: list  # [(lo, hi)] per axis
    constraints: list
    grid: list  # interior resolution per axis
    face_grid: int  # resolution per remaining axis on faces/slices
    solution: object = None  # analytic solution AST when known

    def validate(self):
        if self.dims < 1 or len(self.domain) != self.dims:
            raise ValueError("domain does not match dims")
        for lo, hi in self.domain:
            if not lo < hi:
                raise ValueError(f"empty domain interval [{lo}, {hi}]")
        if not any(c.region.kind in ("interior", "all") for c in self.constraints):
            raise ValueError("problem needs at least one interior constraint")
        if len(self.grid) != self.dims:
            raise ValueError("grid resolution does not match dims")
        return self

    def max_order(self):
        return max(max_derivative_order(c.expr) for c in self.constraints)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch: int = 1024
    lr: float = 1e-3
    milestones: tuple = (0.6, 0.8)  # epoch fractions for lr decay
    decay: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clamp: float = None  # parameter magnitude bound, None = off
    order: int = None  # derivative order; None = problem's max
    engine: str = "shop"
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        if self.clamp is not None and self.clamp <= 0:
            raise ValueError("clamp bound must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        return self


# ------------------------------------------------------------------- grids


def _axis_points(lo, hi, res, open_interval):
    if open_interval:
        return np.linspace(lo, hi, res + 2)[1:-1]
    return np.linspace(lo, hi, res)


def _tensor_grid(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def region_grid(problem, region):
    """Collocation grid for one region, rows in row-major axis order."""
    if region.kind in ("interior", "all"):
        axes = [
            _axis_points(lo, hi, res, open_interval=(region.kind == "interior"))
            for (lo, hi), res in zip(problem.domain, problem.grid)
        ]
        return _tensor_grid(axes)
    if region.kind == "face":
        lo, hi = problem.domain[region.axis]
        fixed = lo if region.side == "min" else hi
    elif region.kind == "slice":
        fixed = region.value
        lo, hi = problem.domain[region.axis]
        if not lo <= fixed <= hi:
            raise ValueError(f"slice value {fixed} outside axis range [{lo}, {hi}]")
    else:
        raise ValueError(f"unknown region kind {region.kind!r}")
    axes = []
    for ax in range(problem.dims):
        if ax == region.axis:
            axes.append(np.array([fixed]))
        else:
            alo, ahi = problem.domain[ax]
            axes.append(_axis_points(alo, ahi, problem.face_grid, open_interval=False))
    return _tensor_grid(axes)


def active_regions(problem):
    """Unique regions in first-appearance order, with constraint counts."""
    order = []
    counts = {}
    for c in problem.constraints:
        if c.region not in counts:
            order.append(c.region)
            counts[c.region] = 0
        counts[c.region] += 1
    return [(r, counts[r]) for r in order]


def sample(problem, batch_size, rng, grids=None):
    """Draw one batch: list of (region, points) with per-region quotas.

    Quotas are proportional to each region's constraint count, floored at
    ceil(batch / (2 * #regions)); sampling is uniform with replacement
    from the precomputed grids.
    """
    regions = active_regions(problem)
    total = sum(k for _, k in regions)
    min_pts = math.ceil(batch_size / (len(regions) * 2))
    grids_by_region = {}
    quotas = {}
    for region, k in regions:
        grid = grids[region] if grids is not None else region_grid(problem, region)
        if grid.shape[0] == 0:
            raise ValueError(f"empty grid for region {region.describe()}")
        grids_by_region[region] = grid
        quotas[region] = max(min_pts, round(batch_size * k / total))
        if grid.shape[0] == 1:
            # mean over copies of one point equals the point's residual
            quotas[region] = 1
    # quota freed by single-point regions flows back to the sampled ones
    spare = batch_size - sum(quotas.values())
    wide = [r for r, _ in regions if grids_by_region[r].shape[0] > 1]
    if spare > 0 and wide:
        counts = {r: k for r, k in regions}
        share = sum(counts[r] for r in wide)
        for r in wide:
            quotas[r] += round(spare * counts[r] / share)
    out = []
    for region, _ in regions:
        grid = grids_by_region[region]
        idx = [rng.randint(grid.shape[0]) for _ in range(quotas[region])]
        out.append((region, grid[idx]))
    return out


# -------------------------------------------------------------------- loss


def residual_loss(net, batch, problem, engine, n, params=None):
    """Weighted sum over constraints of mean squared residual (Eq-style
    interior + boundary penalty, generalized to arbitrary regions)."""
    engine = get_engine(engine)
    need = problem.max_order()
    if need > n:
        raise ValueError(f"constraints need order {need}, loss evaluated at {n}")
    by_region = {}
    for c in problem.constraints:
        by_region.setdefault(c.region, []).append(c)
    loss = None
    for region, pts in batch:
        constraints = by_region.get(region, [])
        if not constraints:
            continue
        alphas = set()
        for c in constraints:
            alphas |= c.needed_indices()
        zero = (0,) * problem.dims
        alphas.add(zero)
        order = max(sum(a) for a in alphas)
        dmap = engine.derivative_map(net, pts, order, alphas=sorted(alphas), params=params)
        for c in constraints:
            r = eval_ast(c.expr, pts, dmap)
            term = vmean(vsquare(r)) * c.weight
            loss = term if loss is None else loss + term
    if loss is None:
        raise ValueError("batch covers no constraint regions")
    return loss


def loss_value(net, batch, problem, engine, n):
    return float(value_of(residual_loss(net, batch, problem, engine, n)))


def interior_residual_rms(net, problem, engine="shop", n=None, samples=2048, seed=0):
    """RMS of the interior residuals on a fixed subsample of the grid."""
    n = problem.max_order() if n is None else n
    engine = get_engine(engine)
    rng = SplitMix64(seed)
    total = 0.0
    count = 0
    for region, constraints in _interior_constraints(problem).items():
        grid = region_grid(problem, region)
        take = min(samples, grid.shape[0])
        idx = [rng.randint(grid.shape[0]) for _ in range(take)]
        pts = grid[idx]
        alphas = set()
        for c in constraints:
            alphas |= c.needed_indices()
        alphas.add((0,) * problem.dims)
        dmap = engine.derivative_map(net, pts, n, alphas=sorted(alphas))
        for c in constraints:
            r = np.asarray(eval_ast(c.expr, pts, dmap))
            total += float(np.sum(r * r))
            count += r.size
    return math.sqrt(total / max(count, 1))


def _interior_constraints(problem):
    out = {}
    for c in problem.constraints:
        if c.region.kind in ("interior", "all"):
            out.setdefault(c.region, []).append(c)
    return out


# ------------------------------------------------------------------ adamax


@dataclass
class AdamaxState:
    m: list
    u: list
    t: int = 0

    @classmethod
    def init(cls, params):
        return cls(m=[np.zeros_like(p) for p in params], u=[np.zeros_like(p) for p in params])


def adamax_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, clamp=None):
    """One infinity-norm Adam step, updating params in place."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    state.t += 1
    correction = 1.0 - beta1**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.u[i] = np.maximum(beta2 * state.u[i], np.abs(g))
        p -= (lr / correction) * state.m[i] / (state.u[i] + eps)
        if clamp is not None:
            np.clip(p, -clamp, clamp, out=p)
    return params, state


# ------------------------------------------------------------------- train


class TrainingDiverged(RuntimeError):
    pass


def train(problem, arch, config, eval_every=50, eval_resolution=None, log=None):
    """Full training loop: one sampled batch and one Adamax step per epoch.

    Returns (network, metrics) where metrics is a list of per-epoch dicts
    with keys epoch, loss, lr and, when the problem has an analytic
    solution, linf_err / l2_err every `eval_every` epochs.
    """
    problem.validate()
    config.validate()
    net = init_from_arch(arch, seed=config.seed)
    n = config.order if config.order is not None else problem.max_order()
    if n < problem.max_order():
        raise ValueError(f"config order {n} below problem order {problem.max_order()}")
    engine = get_engine(config.engine)
    rng = SplitMix64(config.seed ^ 0x5EEDC0111)
    grids = {region: region_grid(problem, region) for region, _ in active_regions(problem)}
    arrays = net.weights + net.biases
    state = AdamaxState.init(arrays)
    milestones = sorted(int(f * config.epochs) for f in config.milestones)
    metrics = []
    lr = config.lr
    for epoch in range(1, config.epochs + 1):
        decays = sum(1 for ms in milestones if epoch > ms)
        lr = config.lr * config.decay**decays
        batch = sample(problem, config.batch, rng, grids=grids)
        tape = Tape()
        params = TapedParams(net, tape)
        loss_t = residual_loss(net, batch, problem, engine, n, params=params)
        loss = float(value_of(loss_t))
        if not math.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss {loss} at epoch {epoch} (lr={lr:g}, "
                f"max|W|={max(float(np.max(np.abs(w))) for w in net.weights):g})"
            )
        grad_map = tape.gradients(loss_t)
        grads = [grad_map[t.id] for t in params.weights] + [grad_map[t.id] for t in params.biases]
        adamax_step(
            arrays, grads, state, lr,
            beta1=config.beta1, beta2=config.beta2, eps=config.eps, clamp=config.clamp,
        )
        rec = {"epoch": epoch, "loss": loss, "lr": lr, "linf_err": None, "l2_err": None}
        if problem.solution is not None and (epoch % eval_every == 0 or epoch == config.epochs):
            res = evaluate(net, problem, resolution=eval_resolution)
            rec["linf_err"] = res.linf
            rec["l2_err"] = res.l2
        metrics.append(rec)
        if log is not None and (epoch % eval_every == 0 or epoch == 1):
            log(rec)
    return net, metrics


# ---------------------------------------------------------------- evaluate


@dataclass
class EvalResult:
    points: np.ndarray
    values: np.ndarray
    errors: np.ndarray = None
    linf: float = None
    l2: float = None


_DEFAULT_EVAL_RES = {1: 2048, 2: 64, 3: 24}


def evaluate(net, problem, resolution=None, box=None, chunk=8192):
    """Network values on a tensor grid, with error norms when the problem
    carries an analytic solution. `box` restricts the evaluation window."""
    from .network import output_values

    box = box if box is not None else problem.domain
    if resolution is None:
        resolution = [_DEFAULT_EVAL_RES[problem.dims]] * problem.dims
    elif isinstance(resolution, int):
        resolution = [resolution] * problem.dims
    if any(r < 2 for r in resolution):
        raise ValueError("evaluation grid needs at least 2 points per axis")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(box, resolution)]
    pts = _tensor_grid(axes)
    vals = np.concatenate(
        [output_values(net, pts[i : i + chunk]) for i in range(0, pts.shape[0], chunk)]
    )
    if problem.solution is None:
        return EvalResult(points=pts, values=vals)
    truth = np.asarray(eval_ast(problem.solution, pts), dtype=np.float64)
    truth = np.broadcast_to(truth, vals.shape)
    err = np.abs(vals - truth)
    return EvalResult(
        points=pts,
        values=vals,
        errors=err,
        linf=float(np.max(err)),
        l2=float(np.sqrt(np.mean(err**2))),
    )


# ------------------------------------------------------------- csv output


def write_metrics_csv(metrics, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "lr", "linf_err", "l2_err"])
        for rec in metrics:
            w.writerow(
                [
                    rec["epoch"],
                    _FMT % rec["loss"],
                    _FMT % rec["lr"],
                    "" if rec.get("linf_err") is None else _FMT % rec["linf_err"],
                    "" if rec.get("l2_err") is None else _FMT % rec["l2_err"],
                ]
            )


def write_field_csv(result, path):
    p = result.points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"x{i + 1}" for i in range(p)] + ["value"]
        if result.errors is not None:
            header.append("error")
        w.writerow(header)
        for i in range(result.points.shape[0]):
            row = [_FMT % v for v in result.points[i]] + [_FMT % result.values[i]]
            if result.errors is not None:
                row.append(_FMT % result.errors[i])
            w.writerow(row)


# ---------------------------------------------------------------- builtins


def _c(region, text, weight, dims):
    return Constraint(region=region, expr=parse_expression(text, dims), weight=weight, text=text)


def builtin_problem(name):
    """The four bundled problems, constraints and data as published."""
    key = str(name).lower()
    if key == "oscillator1d":
        dims = 1
        cons = [
            _c(Region.interior(), "D(4) + 2*D(2) + D(0)", 5.0, dims),
            _c(Region.slice(0, 0.0), "D(0)", 1.0, dims),
            _c(Region.slice(0, 0.0), "D(1) - 1", 1.0, dims),
            _c(Region.slice(0, 0.0), "D(2)", 1.0, dims),
        ]
        return PdeProblem(
            name=key, dims=dims, domain=[(0.0, 2.0 * math.pi)], constraints=cons,
            grid=[2048], face_grid=1, solution=parse_expression("sin(t)", dims),
        ).validate()
    if key == "biharmonic2d":
        dims = 2
        cons = [
            _c(Region.interior(), "D(4,0) + 2*D(2,2) + D(0,4) - 4*sin(x1+x2)", 1.0, dims),
            _c(Region.everywhere(), "D(2,0) + sin(x1+x2)", 1.0, dims),
            _c(Region.everywhere(), "D(0,2) + sin(x1+x2)", 1.0, dims),
            _c(Region.face(0, "min"), "D(0,0) - sin(x2)", 1.0, dims),
            _c(Region.face(0, "max"), "D(0,0) + sin(x2)", 1.0, dims),
            _c(Region.face(1, "min"), "D(0,0) - sin(x1)", 1.0, dims),
            _c(Region.face(1, "max"), "D(0,0) + sin(x1)", 1.0, dims),
        ]
        return PdeProblem(
            name=key, dims=dims, domain=[(0.0, math.pi)] * 2, constraints=cons,
            grid=[128, 128], face_grid=512, solution=parse_expression("sin(x1+x2)", dims),
        ).validate()
    if key == "helmholtz2d":
        dims = 2
        lap4 = "D(8,0) + 4*D(6,2) + 6*D(4,4) + 4*D(2,6) + D(0,8)"
        cons = [
            _c(Region.interior(), f"{lap4} + D(0,0) - 17*exp(-x1-x2)", 1.0, dims),
            _c(Region.face(0, "min"), "D(0,0) - exp(-x2)", 1.0, dims),
            _c(Region.face(0, "max"), "D(0,0) - exp(-1-x2)", 1.0, dims),
            _c(Region.face(1, "min"), "D(0,0) - exp(-x1)", 1.0, dims),
            _c(Region.face(1, "max"), "D(0,0) - exp(-x1-1)", 1.0, dims),
        ]
        return PdeProblem(
            name=key, dims=dims, domain=[(0.0, 1.0)] * 2, constraints=cons,
            grid=[128, 128], face_grid=512, solution=parse_expression("exp(-x1-x2)", dims),
        ).validate()
    if key == "heat3d":
        dims = 3  # coordinates (t, x, y); t aliases x1
        rhs = "pi^2*sin(pi*x2)*sin(pi*x3)*(cos(pi*t) - 4*pi^2*sin(pi*t))"
        cons = [
            _c(
                Region.interior(),
                f"D(1,0,0) - (D(0,4,0) + 2*D(0,2,2) + D(0,0,4)) - ({rhs})",
                1.0,
                dims,
            ),
            _c(Region.slice(0, 0.0), "D(0,0,0)", 1.0, dims),
            _c(Region.face(1, "min"), "D(0,0,0)", 1.0, dims),
            _c(Region.face(1, "max"), "D(0,0,0)", 1.0, dims),
            _c(Region.face(2, "min"), "D(0,0,0)", 1.0, dims),
            _c(Region.face(2, "max"), "D(0,0,0)", 1.0, dims),
        ]
        return PdeProblem(
            name=key, dims=dims, domain=[(0.0, 4.0), (0.0, 1.0), (0.0, 1.0)],
            constraints=cons, grid=[48, 48, 48], face_grid=48, solution=None,
        ).validate()
    raise ValueError(f"unknown builtin problem {name!r}")


BUILTIN_NAMES = ("oscillator1d", "biharmonic2d", "helmholtz2d", "heat3d")


def builtin_setup(name):
    """(problem, architecture, train config) with the published settings."""
    problem = builtin_problem(name)
    key = problem.name
    if key == "oscillator1d":
        arch = Architecture.mlp(1, hidden=64, layers=5, activation="sine", w0=2.0)
        cfg = TrainConfig(epochs=1000, batch=1024, lr=1e-3)
    elif key == "biharmonic2d":
        arch = Architecture.mlp(2, hidden=64, layers=5, activation="sine", w0=4.0)
        cfg = TrainConfig(epochs=1000, batch=1024, lr=1e-3)
    elif key == "helmholtz2d":
        arch = Architecture.mlp(2, hidden=64, layers=5, activation="sine", w0=4.0)
        cfg = TrainConfig(epochs=1000, batch=1024, lr=5e-3)
    else:
        arch = Architecture.mlp(3, hidden=64, layers=7, activation="sine", w0=6.0)
        cfg = TrainConfig(epochs=1000, batch=256, lr=1e-3, clamp=0.9)
    return problem, arch, cfg


# ------------------------------------------------------------ problem file


def _parse_value(text):
    """Numeric literal allowing constant expressions like 2*pi."""
    ast = parse_expression(text, dims=1)
    val = eval_ast(ast, np.zeros((1, 1)))
    return float(np.asarray(val).reshape(-1)[0])


def _parse_region(text, dims):
    parts = text.split()
    kind = parts[0]
    if kind in ("interior", "all"):
        return Region.interior() if kind == "interior" else Region.everywhere()
    if kind == "face":
        axis = int(parts[1]) - 1
        if not 0 <= axis < dims:
            raise ValueError(f"face axis {parts[1]} out of range")
        return Region.face(axis, parts[2])
    if kind == "slice":
        axis = int(parts[1]) - 1
        if not 0 <= axis < dims:
            raise ValueError(f"slice axis {parts[1]} out of range")
        return Region.slice(axis, _parse_value(parts[2]))
    raise ValueError(f"unknown region {text!r}")


def problem_from_text(text, name="custom"):
    """Parse a problem/config document; returns (problem, arch, config).

    Sections: [problem], repeated [constraint], optional [solution],
    [architecture], [train]. Keys are `key = value` lines.
    """
    sections = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        ln = raw.split("#", 1)[0].strip()
        if not ln:
            continue
        if ln.startswith("[") and ln.endswith("]"):
            current = (ln[1:-1].strip().lower(), {})
            sections.append(current)
            continue
        if current is None or "=" not in ln:
            raise ValueError(f"line {lineno}: expected 'key = value' inside a section")
        key, val = ln.split("=", 1)
        current[1][key.strip().lower()] = val.strip()
    prob_fields = next((body for tag, body in sections if tag == "problem"), None)
    if prob_fields is None:
        raise ValueError("missing [problem] section")
    dims = int(prob_fields["dims"])
    domain = []
    for chunk in prob_fields["domain"].split():
        lo, hi = chunk.split(":")
        domain.append((_parse_value(lo), _parse_value(hi)))
    grid = [int(v) for v in prob_fields.get("grid", "").split()] or None
    if grid is None:
        grid = [{1: 2048, 2: 128, 3: 48}.get(dims, 32)] * dims
    face_grid = int(prob_fields.get("face_grid", {1: 1, 2: 512, 3: 48}.get(dims, 32)))
    constraints = []
    for tag, body in sections:
        if tag != "constraint":
            continue
        region = _parse_region(body["region"], dims)
        expr_text = body["expr"]
        weight = float(body.get("weight", "1"))
        if weight < 0:
            raise ValueError("constraint weight must be nonnegative")
        constraints.append(
            Constraint(region=region, expr=parse_expression(expr_text, dims), weight=weight, text=expr_text)
        )
    solution = None
    sol_fields = next((body for tag, body in sections if tag == "solution"), None)
    if sol_fields is not None:
        solution = parse_expression(sol_fields["expr"], dims)
    problem = PdeProblem(
        name=prob_fields.get("name", name), dims=dims, domain=domain,
        constraints=constraints, grid=grid, face_grid=face_grid, solution=solution,
    ).validate()
    arch = None
    arch_fields = next((body for tag, body in sections if tag == "architecture"), None)
    if arch_fields is not None:
        widths = [int(v) for v in arch_fields["widths"].split()]
        acts = arch_fields["activations"].split()
        arch = Architecture(widths=widths, activations=acts, w0=float(arch_fields.get("w0", "1")))
    config = TrainConfig()
    train_fields = next((body for tag, body in sections if tag == "train"), None)
    if train_fields is not None:
        kw = {}
        for key, val in train_fields.items():
            if key in ("epochs", "batch", "seed", "order"):
                kw[key] = int(val)
            elif key in ("lr", "decay", "beta1", "beta2", "eps", "clamp"):
                kw[key] = float(val)
            elif key == "milestones":
                kw[key] = tuple(float(v) for v in val.split())
            elif key == "engine":
                kw[key] = val
            else:
                raise ValueError(f"unknown train key {key!r}")
        config = replace(config, **kw)
    return problem, arch, config.validate()


def load_problem(path):
    with open(path) as fh:
        return problem_from_text(fh.read(), name=str(path))
