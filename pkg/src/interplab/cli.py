"""Command-line driver: seeded end-to-end runs that write CSV/JSON/text artifacts.

Every option can also be given in a flat ``key = value`` config file passed
with ``--config``; options on the command line override the file. Exit codes:
0 success, 1 configuration/assumption problem or a failed claim, 2 numeric
divergence.
"""

from __future__ import annotations

import argparse
import logging
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._textio import FormatError, atomic_write, fmt, header_fields
from .bounds import FAIL, alpha_bounds_fcn, alpha_bounds_homo, check_claims, trained_stats
from .counterexamples import (BUMP_BOUND, EasyPoint, SymTensor3, easy_bump_sweep, easy_descend,
                              hard_curve, hard_minimizer)
from .errors import (AssumptionError, ConfigError, DivergenceError, HypothesisError,
                     NonDifferentiableError, NumericError, ShapeError)
from .homonet import HomoNet, bias_rate, error_rate
from .interpolate import MODES, InterpSpec, eval_curve, Curve
from .mlpnet import MlpNet, mlp_error_rate, mlp_init, mlp_loss_grad
from .synthdata import Dataset, DatasetConfig, generate_dataset, init_weights
from .trainer import (StageThresholds, TrainConfig, bias_rate_decomposition, check_induction,
                      confusion, default_total_time, detect_stages, train, train_mlp)

log = logging.getLogger("interplab")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_ANGLE = re.compile(r"^([+-]?)(\d+(?:\.\d*)?)?\*?pi(?:/(\d+(?:\.\d*)?))?$")


def parse_angle(s: str) -> float:
    """A float, or a multiple of pi such as ``pi/3``, ``-pi/4`` or ``2*pi/3``."""
    s = s.strip().replace(" ", "")
    m = _ANGLE.match(s)
    if not m:
        return float(s)
    sign = -1.0 if m.group(1) == "-" else 1.0
    num = float(m.group(2)) if m.group(2) else 1.0
    den = float(m.group(3)) if m.group(3) else 1.0
    return sign * num * math.pi / den


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(s).split(",") if t.strip())


def _str_list(s: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in str(s).split(",") if t.strip())


def _angle_list(s: str) -> tuple[float, ...]:
    return tuple(parse_angle(t) for t in str(s).split(",") if t.strip())


# name, parser, default, help. A default of None marks a required value.
_DATA = [
    ("k", int, 4, "number of classes"),
    ("n", int, 400, "number of samples (a multiple of k)"),
    ("dim", int, 4096, "feature dimension"),
    ("sigma", float, 0.05, "noise scale"),
]
_STAGES = [
    ("mu0", float, 0.3, "small diagonal-weight threshold"),
    ("mu1", float, 1.5, "large diagonal-weight threshold"),
    ("mu2", float, 0.1, "class learned once min confidence >= 1 - mu2"),
    ("mu3", float, 0.1, "bias-drop margin"),
]
PARAMS = {
    "gen-data": _DATA,
    "train-homo": _DATA + [
        ("dataset", str, "", "existing dataset file (skips generation)"),
        ("r", int, 3, "homogeneity degree"),
        ("delta", float, 0.1, "initialization scale"),
        ("step", float, 0.01, "Euler step size"),
        ("total_time", float, 0.0, "flow time; 0 means log(1/delta)/delta^(r-2)"),
        ("stride", int, 10, "record every this many steps"),
        ("extend_until_learned", _bool, False, "keep training until all classes are learned"),
        ("max_extension", float, 10.0, "cap on extended training, in multiples of the main run"),
        ("induction_slack", float, 10.0, "constant used by the induction checks"),
    ] + _STAGES,
    "train-mlp": [(n, p, 16 if n == "dim" else d, h) for n, p, d, h in _DATA] + [
        ("dataset", str, "", "existing dataset file (skips generation)"),
        ("widths", _int_list, (16, 32, 32, 32, 32, 16, 4), "comma-separated layer widths"),
        ("activation", str, "relu", "identity or relu"),
        ("bias_mode", str, "last", "all, last or none"),
        ("scale", float, 0.001, "output scale of the initialization"),
        ("step", float, 0.1, "Euler step size"),
        ("total_time", float, 2000.0, "flow time"),
        ("stride", int, 100, "record every this many steps"),
    ],
    "interp": [
        ("init", str, None, "initial model snapshot"),
        ("final", str, None, "trained model snapshot"),
        ("dataset", str, None, "dataset file"),
        ("modes", _str_list, MODES, "comma-separated interpolation modes"),
        ("grid", int, 101, "number of uniform grid points"),
    ],
    "check": [
        ("init", str, None, "initial model snapshot"),
        ("final", str, None, "trained model snapshot"),
        ("curve", str, None, "curve CSV written by interp"),
        ("delta", float, 0.0, "initialization scale; 0 means read it from the snapshot or estimate it"),
        ("epsilon", float, 0.01, "loss-band parameter"),
        ("slack", float, 1.0, "multiplier standing in for unspecified constants"),
        ("tol", float, 1e-9, "absolute tolerance for the loss band"),
    ],
    "counterexample": [
        ("z0", float, 1.25, "hard: starting z coordinate"),
        ("tensor_dim", int, 3, "hard: dimension of the rank-1 tensor"),
        ("grid", int, 1000, "hard: grid points on [0, 1]"),
        ("betas", _angle_list, (-math.pi / 3, 1e-6, math.pi / 4, math.pi / 3), "easy: descent start angles"),
        ("sweep", int, 0, "easy: number of angles in the bump sweep (0 skips it)"),
        ("rho0", float, 1.0, "easy: radius of the sweep start points"),
        ("step", float, 1e-3, "easy: gradient-descent step"),
        ("max_iters", int, 1_000_000, "easy: iteration cap per descent"),
        ("grad_tol", float, 1e-10, "easy: stop once the gradient norm falls below this"),
        ("target_tol", float, 1e-4, "easy: required distance to (0, -1)"),
        ("record", int, 1000, "easy: path recording stride"),
    ],
    "dynamics": [
        ("model", str, None, "model snapshot"),
        ("dataset", str, None, "dataset file"),
    ],
}
GLOBAL = [("seed", int, 0, "base random seed"), ("out", str, ".", "existing output directory")]


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value config file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    for name, _, default, help_ in GLOBAL:
        common.add_argument(_flag(name), dest=name, default=argparse.SUPPRESS,
                            help=f"{help_} (default {default})")
    p = argparse.ArgumentParser(prog="interplab", parents=[common],
                                description="Interpolation experiments on homogeneous and fully-connected models.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, params in PARAMS.items():
        sp = sub.add_parser(cmd, parents=[common])
        if cmd == "counterexample":
            sp.add_argument("which", choices=("hard", "easy"))
        for name, _, default, help_ in params:
            shown = "required" if default is None else f"default {default}"
            sp.add_argument(_flag(name), dest=name, default=argparse.SUPPRESS, help=f"{help_} ({shown})")
    return p


def read_config(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    out = {}
    for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{p}:{n}: expected `key = value`, got {line.strip()!r}")
        key, val = (t.strip() for t in s.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def resolve(ns: argparse.Namespace) -> dict:
    """Defaults, then the config file, then command-line values."""
    params = PARAMS[ns.command] + GLOBAL
    spec = {name: (parse, default) for name, parse, default, _ in params}
    raw = read_config(ns.config) if getattr(ns, "config", None) else {}
    unknown = sorted(set(raw) - set(spec))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {ns.command}: {', '.join(unknown)}")
    cli = {name: getattr(ns, name) for name in spec if hasattr(ns, name)}
    cfg = {}
    for name, (parse, default) in spec.items():
        if name in cli or name in raw:
            text = cli.get(name, raw.get(name))
            try:
                cfg[name] = parse(text)
            except ValueError as exc:
                raise ConfigError(f"invalid value for {name}: {text!r} ({exc})") from None
        elif default is None:
            raise ConfigError(f"missing required option {_flag(name)}")
        else:
            cfg[name] = default
    out = Path(cfg["out"])
    if not out.is_dir():
        raise ConfigError(f"output directory does not exist: {out}")
    cfg["out"] = out
    if "which" in ns:
        cfg["which"] = ns.which
    return cfg


def _input(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"input file not found: {p}")
    return p


def load_model(path):
    """Read a HomoNet or MlpNet snapshot, dispatching on the header word."""
    text = _input(path).read_text(encoding="utf-8")
    for line in text.splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            kind = s.split()[0]
            break
    else:
        raise FormatError(f"{path}: empty snapshot")
    if kind == "homo":
        return HomoNet.from_text(text), header_fields(text)
    if kind == "mlp":
        return MlpNet.from_text(text), header_fields(text)
    raise FormatError(f"{path}: unknown snapshot kind {kind!r}")


def _same_data(digest: str, meta: dict, what: str) -> None:
    tag = meta.get("dataset")
    if tag and digest and tag != digest:
        raise ConfigError(f"{what} was produced from dataset {tag[:12]}..., not {digest[:12]}...")


def _dataset(cfg: dict) -> Dataset:
    if cfg.get("dataset"):
        return Dataset.load(_input(cfg["dataset"]))
    dc = DatasetConfig(cfg["k"], cfg["n"], cfg["dim"], cfg["sigma"], cfg["seed"])
    dc.validate()
    return generate_dataset(dc)


def cmd_gen_data(cfg: dict) -> int:
    ds = _dataset(cfg)
    path = ds.save(cfg["out"] / "dataset.txt")
    print(f"dataset {ds.digest} -> {path}")
    return EXIT_OK


def cmd_train_homo(cfg: dict) -> int:
    delta, r = cfg["delta"], cfg["r"]
    total = cfg["total_time"] or default_total_time(delta, r)
    tc = TrainConfig(cfg["step"], total, cfg["stride"],
                     StageThresholds(cfg["mu0"], cfg["mu1"], cfg["mu2"], cfg["mu3"]),
                     cfg["extend_until_learned"], cfg["max_extension"], cfg["induction_slack"])
    tc.validate()
    ds = _dataset(cfg)
    net0 = HomoNet(init_weights(ds.k, ds.dim, delta, cfg["seed"]), np.zeros(ds.k), r)
    out = cfg["out"]
    ds.save(out / "dataset.txt")
    meta = (f"dataset {ds.digest}", f"delta {fmt(delta)}", f"seed {cfg['seed']}")
    net0.save(out / "homo_init.txt", meta)
    traj = train(net0, ds, tc)
    traj.final_model.save(out / "homo_final.txt", meta + (f"time {fmt(traj.times[-1])}",))
    traj.save_csv(out / "trajectory.csv")
    events = detect_stages(traj, tc)
    events.save(out / "events.json")
    print(f"trained to t={traj.times[-1]:.6g}: error {error_rate(traj.final_model, ds):.4g}, "
          f"learn order {list(events.learn_order)}, step halvings {len(traj.step_halvings)}")
    rep = check_induction(traj, delta, tc)
    for name, ok in rep.summary().items():
        log.info("induction %s: %s", name, "ok" if ok else "violated")
    return EXIT_OK


def cmd_train_mlp(cfg: dict) -> int:
    tc = TrainConfig(cfg["step"], cfg["total_time"], cfg["stride"])
    tc.validate()
    ds = _dataset(cfg)
    widths = cfg["widths"]
    if widths[0] != ds.dim or widths[-1] != ds.k:
        raise ConfigError(f"widths {widths} must start at dim={ds.dim} and end at k={ds.k}")
    net0 = mlp_init(widths, cfg["activation"], cfg["bias_mode"], cfg["seed"], cfg["scale"])
    out = cfg["out"]
    ds.save(out / "dataset.txt")
    meta = (f"dataset {ds.digest}", f"scale {fmt(cfg['scale'])}", f"seed {cfg['seed']}")
    net0.save(out / "mlp_init.txt", meta)
    res = train_mlp(net0, ds, tc)
    res.final_model.save(out / "mlp_final.txt", meta)
    lines = [f"# dataset {ds.digest}", "t,mean_loss,error"]
    lines += [f"{fmt(t)},{fmt(l)},{fmt(e)}" for t, l, e in zip(res.times, res.losses, res.errors)]
    atomic_write(out / "mlp_train.csv", "\n".join(lines) + "\n")
    print(f"trained to t={res.times[-1]:.6g}: loss {res.losses[-1]:.6g}, "
          f"error {mlp_error_rate(res.final_model, ds):.4g}")
    return EXIT_OK


def cmd_interp(cfg: dict) -> int:
    ds = Dataset.load(_input(cfg["dataset"]))
    m0, meta0 = load_model(cfg["init"])
    mT, metaT = load_model(cfg["final"])
    _same_data(ds.digest, meta0, cfg["init"])
    _same_data(ds.digest, metaT, cfg["final"])
    for mode in cfg["modes"]:
        curve = eval_curve(m0, mT, ds, InterpSpec.uniform(cfg["grid"], mode))
        path = curve.save_csv(cfg["out"] / f"curve_{mode}.csv")
        print(f"{mode}: error {curve.errors[0]:.4g} -> {curve.errors[-1]:.4g}, "
              f"loss {curve.losses[0]:.6g} -> {curve.losses[-1]:.6g} ({path})")
    return EXIT_OK


def cmd_check(cfg: dict) -> int:
    m0, meta0 = load_model(cfg["init"])
    mT, metaT = load_model(cfg["final"])
    curve = Curve.load_csv(_input(cfg["curve"]))
    _same_data(curve.dataset_digest, meta0, cfg["init"])
    _same_data(curve.dataset_digest, metaT, cfg["final"])
    kind = "homo" if isinstance(mT, HomoNet) else "mlp"
    if curve.model_kind != kind:
        raise ConfigError(f"curve {cfg['curve']} is for a {curve.model_kind} model, snapshots are {kind}")
    if curve.mode != "linear":
        log.warning("claims are stated for linear interpolation; curve mode is %s", curve.mode)
    delta = cfg["delta"] or (float(meta0["delta"]) if "delta" in meta0 else None)
    stats = trained_stats(m0, mT, delta)
    if kind == "homo":
        bounds = alpha_bounds_homo(stats, mT.r, cfg["epsilon"], cfg["slack"])
    else:
        bounds = alpha_bounds_fcn(stats, mT.depth, cfg["epsilon"])
    report = check_claims(curve, bounds, stats, tol=cfg["tol"])
    bounds.save(cfg["out"] / "bounds.json", stats)
    report.save(cfg["out"] / "report.json")
    print(f"alpha1={bounds.alpha1:.6g} alpha2={bounds.alpha2:.6g} alpha3={bounds.alpha3:.6g} "
          f"alpha4={'n/a' if bounds.alpha4 is None else f'{bounds.alpha4:.6g}'}")
    if not bounds.hypothesis_met:
        effect = "informational only" if kind == "homo" else "claims reported as hypothesis_unmet"
        print(f"note: delta={stats.delta:.6g} exceeds the hypothesis threshold "
              f"{bounds.hypothesis_threshold:.6g} ({effect})")
    for c in report.claims:
        extra = f" (observed {c.observed})" if c.observed else ""
        print(f"{c.name}: {c.status}{extra}")
    return EXIT_CONFIG if any(c.status == FAIL for c in report.claims) else EXIT_OK


def _hard(cfg: dict) -> int:
    d = cfg["tensor_dim"]
    if d < 1:
        raise ConfigError(f"tensor_dim must be >= 1, got {d}")
    T = SymTensor3.rank_one(np.eye(d)[0])
    xstar = hard_minimizer(T).x
    hc = hard_curve(T, cfg["z0"], xstar, cfg["grid"])
    out = cfg["out"]
    atomic_write(out / "hard_curve.csv",
                 "alpha,value\n" + "".join(f"{fmt(a)},{fmt(v)}\n" for a, v in zip(hc.alphas, hc.values)))
    atomic_write(out / "hard_second_diff.csv",
                 "alpha,second_difference\n"
                 + "".join(f"{fmt(a)},{fmt(v)}\n" for a, v in zip(hc.alphas[1:-1], hc.second_diff)))
    print(f"gamma(1) = {hc.values[-1]:.17g}; min second difference {hc.second_diff.min():.6g}; "
          f"max first difference {hc.first_diff.max():.6g}")
    ok = hc.convex and hc.decreasing
    print("convex and decreasing" if ok else "curve is NOT convex and decreasing")
    return EXIT_OK if ok else EXIT_CONFIG


def _easy(cfg: dict) -> int:
    out = cfg["out"]
    ok = True
    for i, beta in enumerate(cfg["betas"]):
        res = easy_descend(EasyPoint(math.sin(beta), math.cos(beta)), cfg["step"], cfg["max_iters"],
                           cfg["grad_tol"], cfg["record"])
        dist = math.hypot(res.final.x, res.final.y + 1.0)
        hit = dist <= cfg["target_tol"]
        ok &= hit
        body = "".join(f"{int(r[0])},{fmt(r[1])},{fmt(r[2])},{fmt(r[3])},{fmt(r[4])}\n" for r in res.path)
        atomic_write(out / f"easy_descent_{i}.csv", f"# beta {fmt(beta)}\niter,x,y,f,grad_norm\n" + body)
        print(f"beta={beta:.6g}: {res.iterations} iterations, final ({res.final.x:.3g}, {res.final.y:.9g}), "
              f"distance {dist:.3g} {'ok' if hit else 'MISSED'}")
    if cfg["sweep"] > 0:
        betas, bumps = easy_bump_sweep(cfg["sweep"], cfg["rho0"])
        atomic_write(out / "easy_sweep.csv",
                     "beta,bump\n" + "".join(f"{fmt(b)},{fmt(v)}\n" for b, v in zip(betas, bumps)))
        lo = float(bumps.min())
        good = lo >= BUMP_BOUND - 1e-9
        ok &= good
        print(f"min bump {lo:.12g} (bound 5/32 = {BUMP_BOUND:.12g}) {'ok' if good else 'VIOLATED'}")
    return EXIT_OK if ok else EXIT_CONFIG


def cmd_counterexample(cfg: dict) -> int:
    return _hard(cfg) if cfg["which"] == "hard" else _easy(cfg)


def cmd_dynamics(cfg: dict) -> int:
    ds = Dataset.load(_input(cfg["dataset"]))
    model, meta = load_model(cfg["model"])
    _same_data(ds.digest, meta, cfg["model"])
    C = confusion(model, ds)
    dec = bias_rate_decomposition(C)
    if isinstance(model, HomoNet):
        direct, bias = bias_rate(model, ds), model.b
    else:
        _, g = mlp_loss_grad(model, ds)
        bias = model.output_bias
        # flow on (k/N) * summed loss = k * mean loss
        direct = -ds.k * g.biases[-1] if g.biases[-1].size else np.full(ds.k, np.nan)
    k = ds.k
    head = f"# dataset {ds.digest}\n"
    atomic_write(cfg["out"] / "confusion.csv",
                 head + "class," + ",".join(f"c{j}" for j in range(1, k + 1)) + "\n"
                 + "".join(f"{i}," + ",".join(fmt(v) for v in C[i]) + "\n" for i in range(k)))
    atomic_write(cfg["out"] / "bias_rate.csv",
                 head + "class,bias,bias_rate,decomposition\n"
                 + "".join(f"{i},{fmt(bias[i])},{fmt(direct[i])},{fmt(dec[i])}\n" for i in range(k)))
    print(f"bias rates {np.array2string(dec, precision=6)}; sum {dec.sum():.3g}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-homo": cmd_train_homo,
    "train-mlp": cmd_train_mlp,
    "interp": cmd_interp,
    "check": cmd_check,
    "counterexample": cmd_counterexample,
    "dynamics": cmd_dynamics,
}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(ns)
        return COMMANDS[ns.command](cfg)
    except (DivergenceError, NumericError) as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, AssumptionError, HypothesisError, ShapeError, FormatError,
            NonDifferentiableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
