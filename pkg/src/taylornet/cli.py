"""Command-line surface: derive, expand, solve, eval, bench, converge.

Every command takes explicit seeds and writes plain-text/CSV artifacts
into --out, so runs are reproducible byte for byte (timing values in
bench CSVs are measurements and naturally vary).
"""

import argparse
import csv
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import engines, network, pde, taylor
from .engines import get_engine
from .jets import jet_forward
from .network import Architecture, init_from_arch
from .rng import SplitMix64

_FMT = "%.17g"


def _parse_point(text, dims=None):
    vals = [float(v) for v in text.split(",") if v.strip() != ""]
    if dims is not None and len(vals) != dims:
        raise SystemExit(f"point {text!r} has dimension {len(vals)}, expected {dims}")
    return np.asarray(vals, dtype=np.float64)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path):
    try:
        return network.load(path)
    except (OSError, ValueError) as err:
        raise SystemExit(f"cannot load model: {err}")


# ---------------------------------------------------------------- derive


def cmd_derive(args):
    net = _load_model(args.model)
    point = _parse_point(args.point, net.input_dim)
    out = _out_dir(args)
    X = point.reshape(1, -1)
    which = ["shop", "exact"] if args.engine == "both" else [args.engine]
    maps = {}
    for name in which:
        dmap = get_engine(name).derivative_map(net, X, args.order)
        maps[name] = dmap
        path = out / f"derivatives_{name}.txt"
        path.write_text(engines.dump_derivative_map(X, dmap))
        print(f"wrote {path}")
    if len(maps) == 2:
        gap = max(
            float(np.max(np.abs(np.asarray(maps["shop"][a]) - np.asarray(maps["exact"][a]))))
            for a in maps["shop"]
        )
        print(f"max |shop - exact| over all multi-indices: {gap:.6g}")
    return 0


# ---------------------------------------------------------------- expand


def cmd_expand(args):
    net = _load_model(args.model)
    point = _parse_point(args.point, net.input_dim)
    out = _out_dir(args)
    if args.engine == "exact":
        result = jet_forward(net, point, args.order)
    else:
        result = get_engine(args.engine).derivative_map(net, point.reshape(1, -1), args.order)
    poly = taylor.expand(result, point, args.order)
    text = taylor.render(poly, digits=args.digits)
    print(text)
    path = Path(args.out) / "polynomial.txt"
    taylor.save_polynomial(poly, path)
    print(f"wrote {path}")
    return 0


# ----------------------------------------------------------------- solve


def _setup_problem(args):
    name = args.problem
    if Path(name).exists():
        problem, arch, config = pde.load_problem(name)
        if arch is None:
            arch = Architecture.mlp(problem.dims, hidden=64, layers=5, w0=2.0)
    else:
        try:
            problem, arch, config = pde.builtin_setup(name)
        except ValueError as err:
            raise SystemExit(str(err))
    return problem, arch, config


def cmd_solve(args):
    try:
        problem, arch, config = _setup_problem(args)
    except (OSError, ValueError) as err:
        raise SystemExit(f"cannot load problem: {err}")
    for field_name in ("epochs", "batch", "lr", "clamp", "seed", "order"):
        val = getattr(args, field_name)
        if val is not None:
            setattr(config, field_name, val)
    if args.engine != "both":
        config.engine = args.engine
    if args.w0 is not None:
        arch.w0 = float(args.w0)
    config.validate()
    out = _out_dir(args)
    start = time.time()

    def log(rec):
        err = "" if rec["linf_err"] is None else f"  linf {rec['linf_err']:.4g}"
        print(f"epoch {rec['epoch']:5d}  loss {rec['loss']:.6g}  lr {rec['lr']:.2g}{err}")

    net, metrics = pde.train(problem, arch, config, log=log)
    print(f"trained {problem.name}: {config.epochs} epochs in {time.time() - start:.1f}s")
    model_path = out / f"{problem.name}_model.txt"
    network.save(net, model_path)
    pde.write_metrics_csv(metrics, out / f"{problem.name}_metrics.csv")
    result = pde.evaluate(net, problem)
    pde.write_field_csv(result, out / f"{problem.name}_field.csv")
    if result.linf is not None:
        print(f"final grid error: linf {result.linf:.6g}, l2 {result.l2:.6g}")
    else:
        rms = pde.interior_residual_rms(net, problem, engine=config.engine)
        print(f"final interior residual rms: {rms:.6g}")
    print(f"wrote {model_path}")
    return 0


# ------------------------------------------------------------------ eval


def cmd_eval(args):
    net = _load_model(args.model)
    try:
        problem, _, _ = _setup_problem(args)
    except (OSError, ValueError) as err:
        raise SystemExit(f"cannot load problem: {err}")
    resolution = [int(v) for v in args.grid.split(",")] if args.grid else None
    box = None
    if args.window:
        vals = [float(v) for v in args.window.split(",")]
        if len(vals) != 2 * problem.dims:
            raise SystemExit("--window needs lo,hi per axis")
        box = [(vals[2 * i], vals[2 * i + 1]) for i in range(problem.dims)]
    result = pde.evaluate(net, problem, resolution=resolution, box=box)
    out = _out_dir(args)
    path = out / "field.csv"
    pde.write_field_csv(result, path)
    if result.linf is not None:
        print(f"linf {result.linf:.6g}, l2 {result.l2:.6g}")
    print(f"wrote {path}")
    return 0


# ----------------------------------------------------------------- bench


def cmd_bench(args):
    orders = [int(v) for v in args.orders.split(",")]
    dims = [int(v) for v in args.dims.split(",")]
    out = _out_dir(args)
    rows = []
    for p in dims:
        arch = Architecture.mlp(p, hidden=args.width, layers=args.layers, w0=2.0)
        net = init_from_arch(arch, seed=args.seed)
        x = np.full((1, p), 0.5)
        for k in orders:
            for name in ("shop", "exact"):
                eng = get_engine(name)
                eng.derivative_map(net, x, k)  # warm caches outside the clock
                times = []
                for _ in range(args.repeats):
                    t0 = time.perf_counter()
                    eng.derivative_map(net, x, k)
                    times.append(time.perf_counter() - t0)
                med = statistics.median(times)
                rows.append((p, k, name, args.repeats, med))
                print(f"p={p} k={k:2d} {name:5s} median {med * 1e3:8.3f} ms")
    path = out / "bench.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "k", "engine", "repeats", "median_seconds"])
        for row in rows:
            w.writerow(row[:4] + (_FMT % row[4],))
    print(f"wrote {path}")
    return 0


# -------------------------------------------------------------- converge


def cmd_converge(args):
    w0s = [float(v) for v in args.w0.split(",")]
    out = _out_dir(args)
    widths = [1] + [args.width] * (args.layers - 1) + [1]
    acts = ["sine"] * (args.layers - 1) + ["identity"]
    table = []
    for w0 in w0s:
        per_seed = []
        for seed in range(args.seeds):
            net = network.init_uniform(widths, acts, w0, seed=seed)
            point = SplitMix64(seed ^ 0xC0FFEE).uniform(-1.0, 1.0)
            ratios = taylor.convergence_profile(net, [point], args.order, engine=args.engine)
            per_seed.append(ratios)
        med = np.median(np.stack(per_seed), axis=0)
        table.append((w0, med))
        cells = " ".join(f"{v:.2e}" for v in med)
        print(f"w0={w0:<8g} {cells}")
    path = out / "convergence.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["w0"] + [f"n{k}" for k in range(1, args.order + 1)])
        for w0, med in table:
            w.writerow([_FMT % w0] + [_FMT % v for v in med])
    print(f"wrote {path}")
    return 0


# ------------------------------------------------------------------ main


def build_parser():
    ap = argparse.ArgumentParser(
        prog="taylornet",
        description="High-order network derivatives, Taylor expansion, and PDE solving",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("derive", help="derivative dump of a saved model at a point")
    d.add_argument("--model", required=True)
    d.add_argument("--point", required=True, help='comma list, e.g. "0.5,0.5"')
    d.add_argument("--order", type=int, default=4)
    d.add_argument("--engine", choices=["shop", "exact", "both"], default="shop")
    d.add_argument("--out", default="out")
    d.set_defaults(func=cmd_derive)

    e = sub.add_parser("expand", help="Taylor polynomial of a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--point", required=True)
    e.add_argument("--order", type=int, default=10)
    e.add_argument("--digits", type=int, default=4)
    e.add_argument("--engine", choices=["shop", "exact"], default="shop")
    e.add_argument("--out", default="out")
    e.set_defaults(func=cmd_expand)

    s = sub.add_parser("solve", help="train a network against a PDE problem")
    s.add_argument("--problem", required=True, help="builtin name or problem file")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--clamp", type=float)
    s.add_argument("--order", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--w0", type=float)
    s.add_argument("--engine", choices=["shop", "exact", "both"], default="shop")
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("eval", help="evaluate a saved model on a problem grid")
    v.add_argument("--model", required=True)
    v.add_argument("--problem", required=True)
    v.add_argument("--grid", help="comma list of per-axis resolutions")
    v.add_argument("--window", help="lo,hi per axis, overrides the domain box")
    v.add_argument("--out", default="out")
    v.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="derivative timing across dims and orders")
    b.add_argument("--orders", default="1,2,3,4,5,6,7,8,9,10")
    b.add_argument("--dims", default="1,2,3")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--width", type=int, default=64)
    b.add_argument("--layers", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="out")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("converge", help="derivative-ratio table across init scales")
    c.add_argument("--w0", default="0.01,0.1,1,10,100")
    c.add_argument("--order", type=int, default=10)
    c.add_argument("--seeds", type=int, default=10)
    c.add_argument("--width", type=int, default=32)
    c.add_argument("--layers", type=int, default=3)
    c.add_argument("--engine", choices=["shop", "exact"], default="shop")
    c.add_argument("--out", default="out")
    c.set_defaults(func=cmd_converge)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except pde.TrainingDiverged as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
