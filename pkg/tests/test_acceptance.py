"""End-to-end acceptance checks, one test per criterion.

Each test prints (and records for the terminal summary) a single
``criterion N: PASS|FAIL`` line before asserting. Training runs are shared
through session fixtures, so the heavier criteria reuse the same five seeds.
"""

import math
import time

import numpy as np
import pytest

from interplab.bounds import (FAIL, PASS, VACUOUS, AlphaBounds, CheckReport, alpha_bounds_fcn,
                              alpha_bounds_homo, check_claims, trained_stats)
from interplab.cli import main
from interplab.counterexamples import (BUMP_BOUND, EasyPoint, SymTensor3, easy_bump_sweep, easy_descend,
                                       easy_eval, hard_curve, hard_gamma_closed_form)
from interplab.homonet import HomoNet, bias_rate, error_rate, forward, grad, mean_loss
from interplab.interpolate import Curve, InterpSpec, eval_curve, plateau_length
from interplab.mlpnet import MlpNet, mlp_error_rate, mlp_init, mlp_loss_grad, mlp_mean_loss
from interplab.synthdata import Dataset, DatasetConfig, generate_dataset, init_weights
from interplab.trainer import (StageEvents, TrainConfig, Trajectory, bias_rate_decomposition, confusion,
                               default_total_time, detect_stages, train, train_mlp)

from oracles import central_diff, fcn_alpha_reference, grad_rel_error

SEEDS = range(5)
K, R, DELTA = 4, 3, 0.1
MLP_WIDTHS = (16, 32, 32, 32, 32, 16, 4)


@pytest.fixture(scope="session")
def homo_runs():
    runs = []
    for seed in SEEDS:
        t0 = time.perf_counter()
        ds = generate_dataset(DatasetConfig(K, 400, 4096, 0.05, seed))
        net0 = HomoNet(init_weights(K, 4096, DELTA, seed), np.zeros(K), R)
        cfg = TrainConfig(0.01, default_total_time(DELTA, R))
        traj = train(net0, ds, cfg)
        runs.append(dict(seed=seed, ds=ds, net0=net0, cfg=cfg, traj=traj, events=detect_stages(traj, cfg),
                         seconds=time.perf_counter() - t0))
    return runs


@pytest.fixture(scope="session")
def mlp_runs():
    runs = []
    for seed in SEEDS:
        t0 = time.perf_counter()
        ds = generate_dataset(DatasetConfig(K, 400, 16, 0.05, seed))
        net0 = mlp_init(MLP_WIDTHS, "relu", "last", seed, 0.001)
        res = train_mlp(net0, ds, TrainConfig(0.1, 2000.0, 100))
        runs.append(dict(seed=seed, ds=ds, net0=net0, res=res, seconds=time.perf_counter() - t0))
    return runs


def test_criterion_1_gradients(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    homo_worst = mlp_worst = 0.0
    for trial in range(100):
        k = int(rng.integers(2, 5))
        d = int(rng.integers(k, 7))
        r = int(rng.integers(3, 6))
        ds = generate_dataset(DatasetConfig(k, k * int(rng.integers(1, 4)), d, 0.3, trial))
        net = HomoNet(rng.normal(0, 0.6, (k, d)), rng.normal(0, 0.5, k), r)
        g = grad(net, ds)
        fd = central_diff(lambda p: k * mean_loss(HomoNet(p[0], p[1], r), ds), [net.W, net.b], h=1e-5)
        homo_worst = max(homo_worst, grad_rel_error([g.dW, g.db], fd))

        depth = int(rng.integers(1, 4))
        widths = [d] + [int(rng.integers(2, 5)) for _ in range(depth - 1)] + [k]
        mlp = mlp_init(widths, ("identity", "relu")[trial % 2], ("all", "last", "none")[trial % 3], trial)
        mlp = mlp.replace(biases=tuple(rng.normal(0, 0.3, b.shape) for b in mlp.biases))
        _, gm = mlp_loss_grad(mlp, ds)

        def f(ps, mlp=mlp, depth=depth, ds=ds):
            return mlp_mean_loss(mlp.replace(tuple(ps[:depth]), tuple(ps[depth:])), ds)

        fdm = central_diff(f, list(mlp.layers) + list(mlp.biases), h=1e-5)
        mlp_worst = max(mlp_worst, grad_rel_error(list(gm.layers) + list(gm.biases), fdm))
    secs = time.perf_counter() - t0
    ok = homo_worst <= 1e-6 and mlp_worst <= 1e-6 and secs < 30
    assert criterion(1, ok, f"100+100 configs, worst rel err homo {homo_worst:.2e} mlp {mlp_worst:.2e}, {secs:.1f}s")


def _margin(net, ds):
    f = forward(net, ds.features)
    rows = np.arange(ds.n)
    fy = f[rows, ds.labels]
    f[rows, ds.labels] = -np.inf
    return float((fy - f.max(axis=1)).min())


def test_criterion_2_sequential_learning(homo_runs, criterion):
    good, notes = 0, []
    for run in homo_runs:
        net0, ds, traj, ev = run["net0"], run["ds"], run["traj"], run["events"]
        final = traj.final_model
        want = tuple(int(i) for i in np.argsort(-np.diag(net0.W[:, :K]), kind="stable"))
        order_ok = ev.learn_order == want and all(s is not None for s in ev.s)
        margin = _margin(final, ds)
        fit_ok = error_rate(final, ds) == 0.0 and margin >= 0.1
        last = ev.learn_order[-1]
        gap = float(final.b[last] - np.delete(final.b, last).max())
        bias_ok = gap >= 0.1
        seed_ok = order_ok and fit_ok and bias_ok and run["seconds"] < 300
        good += seed_ok
        seq = "seq" if ev.sequential else "unordered"
        notes.append(f"s{run['seed']}:{'ok' if seed_ok else 'x'}(m={margin:.2f},gap={gap:.2f},{seq})")
    assert criterion(2, good >= 4, f"{good}/5 seeds; " + " ".join(notes))


def _homo_report(run, n=101):
    curve = eval_curve(run["net0"], run["traj"].final_model, run["ds"], InterpSpec.uniform(n, "linear"))
    stats = trained_stats(run["net0"], run["traj"].final_model, DELTA)
    bounds = alpha_bounds_homo(stats, R, 0.01, 1.0)
    return curve, stats, bounds, check_claims(curve, bounds, stats)


def test_criterion_3_homo_curve_claims(homo_runs, criterion):
    good, notes, secs = 0, [], []
    for run in homo_runs:
        t0 = time.perf_counter()
        _, _, _, rep = _homo_report(run)
        secs.append(time.perf_counter() - t0)
        non_vacuous = [c for c in rep.claims if c.status != VACUOUS]
        seed_ok = all(c.status == PASS for c in non_vacuous)
        good += seed_ok
        notes.append(f"s{run['seed']}:{sum(c.status == PASS for c in rep.claims)}/5 pass")
    ok = good >= 4 and max(secs) < 60
    assert criterion(3, ok, f"{good}/5 seeds all non-vacuous claims pass; " + " ".join(notes))


def test_criterion_4_bias_rate_equivalence(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = worst_sum = 0.0
    for trial in range(50):
        k = int(rng.integers(2, 6))
        d = k + int(rng.integers(0, 4))
        ds = generate_dataset(DatasetConfig(k, k * int(rng.integers(1, 5)), d, 0.3, trial))
        net = HomoNet(rng.normal(0, 1.0, (k, d)), rng.normal(0, 1.0, k), int(rng.integers(3, 6)))
        dec = bias_rate_decomposition(confusion(net, ds))
        direct = bias_rate(net, ds)
        worst = max(worst, float(np.abs(dec - direct).max()))
        worst_sum = max(worst_sum, abs(float(dec.sum())), abs(float(direct.sum())))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-12 and worst_sum <= 1e-12 and secs < 10
    assert criterion(4, ok, f"50 models, max |diff| {worst:.1e}, max |sum| {worst_sum:.1e}, {secs:.2f}s")


def test_criterion_5_hard_counterexample(criterion):
    t0 = time.perf_counter()
    T = SymTensor3.rank_one([1.0, 0.0, 0.0])
    xstar = np.array([0.75, 0.0, 0.0])
    hc = hard_curve(T, 1.25, xstar, 1000)
    closed = hard_gamma_closed_form(T(xstar), 0.75, 1.25, hc.alphas)
    err = float(np.abs(hc.values - closed).max())
    end = abs(hc.values[-1] + 27 / 256)
    secs = time.perf_counter() - t0
    ok = hc.convex and hc.decreasing and err <= 1e-12 and end <= 1e-12 and secs < 5
    assert criterion(5, ok, f"min 2nd diff {hc.second_diff.min():.3g}, max 1st diff {hc.first_diff.max():.3g}, "
                            f"closed-form err {err:.1e}, |gamma(1)+27/256| {end:.1e}")


def test_criterion_6_easy_counterexample(criterion):
    t0 = time.perf_counter()
    dists = []
    # the beta = 0 start is perturbed in angle; a radial nudge along the axis never leaves it
    for beta in (-math.pi / 3, 1e-6, math.pi / 4, math.pi / 3):
        res = easy_descend(EasyPoint(math.sin(beta), math.cos(beta)), 1e-3, 1_000_000, 1e-10)
        dists.append(math.hypot(res.final.x, res.final.y + 1.0) if res.iterations <= 1_000_000 else math.inf)
    _, bumps = easy_bump_sweep(100, 1.0)
    s, c = math.sin(math.pi / 6), math.cos(math.pi / 6)
    north = abs(easy_eval(EasyPoint(0.0, 1.0)) + 2 / 3)
    mid = abs(easy_eval(EasyPoint(s * c, -s * s)) + 49 / 96)
    secs = time.perf_counter() - t0
    ok = max(dists) <= 1e-4 and bumps.min() >= BUMP_BOUND - 1e-9 and north <= 1e-12 and mid <= 1e-12 and secs < 30
    assert criterion(6, ok, f"max distance to (0,-1) {max(dists):.1e}, min bump {bumps.min():.6f} "
                            f"(>= {BUMP_BOUND}), spot errors {north:.1e} {mid:.1e}, {secs:.1f}s")


def test_criterion_7_plateau_comparison(mlp_runs, criterion):
    good, notes = 0, []
    for run in mlp_runs:
        final = run["res"].final_model
        pl = {m: plateau_length(eval_curve(run["net0"], final, run["ds"], InterpSpec.uniform(101, m)), 0.01)
              for m in ("linear", "homogeneous_bias")}
        seed_ok = (mlp_error_rate(final, run["ds"]) == 0.0 and pl["homogeneous_bias"] <= pl["linear"]
                   and run["seconds"] < 300)
        good += seed_ok
        notes.append(f"s{run['seed']}:{pl['linear']:.2f}/{pl['homogeneous_bias']:.2f}")
    assert criterion(7, good >= 4, f"{good}/5 seeds; plateau linear/homogeneous " + " ".join(notes))


def test_criterion_8_fcn_bounds(mlp_runs, criterion):
    t0 = time.perf_counter()
    formula_err, failures, notes = 0.0, 0, []
    for run in mlp_runs:
        final = run["res"].final_model
        stats = trained_stats(run["net0"], final)
        bounds = alpha_bounds_fcn(stats, final.depth, 0.01)
        ref = fcn_alpha_reference(stats.delta, stats.delta_min, stats.v_max, final.depth, 0.01)
        formula_err = max(formula_err, max(abs(a - b) for a, b in zip((bounds.alpha1, bounds.alpha2, bounds.alpha3), ref)))
        curve = eval_curve(run["net0"], final, run["ds"], InterpSpec.uniform(101, "linear"))
        plateau = check_claims(curve, bounds, stats).claim("error_plateau")
        # an unmet hypothesis is informational: the observed outcome is reported, not asserted
        failures += plateau.status == FAIL
        notes.append(f"s{run['seed']}:{plateau.status}" + (f"[{plateau.observed}]" if plateau.observed else ""))
    secs = time.perf_counter() - t0
    ok = formula_err <= 1e-12 and failures == 0 and secs < 60
    assert criterion(8, ok, f"formula err {formula_err:.1e}; error_plateau " + " ".join(notes))


def _cli_pipeline(out):
    small = ["--k", "3", "--n", "9", "--dim", "8", "--sigma", "0.05", "--seed", "5"]
    rc = [main(["train-homo", "--out", str(out)] + small),
          main(["interp", "--out", str(out), "--init", str(out / "homo_init.txt"),
                "--final", str(out / "homo_final.txt"), "--dataset", str(out / "dataset.txt"), "--grid", "51"]),
          main(["check", "--out", str(out), "--init", str(out / "homo_init.txt"),
                "--final", str(out / "homo_final.txt"), "--curve", str(out / "curve_linear.csv")]),
          main(["dynamics", "--out", str(out), "--model", str(out / "homo_final.txt"),
                "--dataset", str(out / "dataset.txt")]),
          main(["counterexample", "hard", "--out", str(out), "--grid", "200"])]
    return rc, {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_criterion_9_determinism_round_trip(homo_runs, mlp_runs, tmp_path, criterion):
    t0 = time.perf_counter()
    run, mrun = homo_runs[0], mlp_runs[0]
    curve, stats, bounds, rep = _homo_report(run, 21)
    final = run["traj"].final_model
    events = run["events"]
    checks = {
        "dataset": Dataset.from_text(run["ds"].to_text()).to_text() == run["ds"].to_text(),
        "homo snapshot": HomoNet.from_text(final.to_text()).W.tobytes() == final.W.tobytes(),
        "mlp snapshot": MlpNet.from_text(mrun["res"].final_model.to_text()).to_text()
                        == mrun["res"].final_model.to_text(),
        "trajectory": Trajectory.from_csv(run["traj"].to_csv()).to_csv() == run["traj"].to_csv(),
        "events": StageEvents.from_json(events.to_json()) == events,
        "curve": Curve.from_csv(curve.to_csv()) == curve,
        "bounds": AlphaBounds.from_json(bounds.to_json(stats)) == bounds,
        "report": CheckReport.from_json(rep.to_json()) == rep,
    }
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    rc_a, files_a = _cli_pipeline(a)
    rc_b, files_b = _cli_pipeline(b)
    checks["cli exit codes"] = rc_a == rc_b == [0] * 5
    checks["cli byte-identical"] = files_a == files_b and len(files_a) >= 10
    # plain CSV outputs parse back to the exact values that were written
    hc = hard_curve(SymTensor3.rank_one([1.0, 0.0, 0.0]), 1.25, [0.75, 0.0, 0.0], 200)
    parsed = np.loadtxt(a / "hard_curve.csv", delimiter=",", skiprows=1)
    checks["hard csv"] = parsed[:, 1].tobytes() == hc.values.tobytes()
    secs = time.perf_counter() - t0
    bad = [k for k, v in checks.items() if not v]
    ok = not bad and secs < 60
    assert criterion(9, ok, f"{len(checks) - len(bad)}/{len(checks)} checks" + (f"; failed {bad}" if bad else "")
                     + f", {secs:.1f}s")
