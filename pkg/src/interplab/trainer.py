"""Discretised gradient flow on ``(k/N) L`` with trajectory recording.

The integrator is explicit Euler with a one-level step-halving guard: a step
that raises the mean loss by more than 10% is redone once at half the step
size and then accepted either way. Every such event is logged.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._textio import FormatError, atomic_write, fmt
from .errors import ConfigError, DivergenceError, NumericError, ShapeError
from .homonet import Evaluation, HomoNet, evaluate, grad_from, softmax
from .mlpnet import MlpNet, mlp_error_rate, mlp_forward, mlp_loss_grad
from .synthdata import Dataset

log = logging.getLogger(__name__)

HALVING_TRIGGER = 1.10


@dataclass(frozen=True)
class StageThresholds:
    mu0: float = 0.3   # "small constant" a diagonal weight must reach
    mu1: float = 1.5   # "large constant"
    mu2: float = 0.1   # class learned once min confidence >= 1 - mu2
    mu3: float = 0.1   # bias counted as dropped at max bias - mu3


@dataclass(frozen=True)
class TrainConfig:
    step_size: float
    total_time: float
    record_stride: int = 10
    stage_thresholds: StageThresholds = field(default_factory=StageThresholds)
    extend_until_learned: bool = False
    max_extension: float = 10.0
    induction_slack: float = 10.0

    def validate(self) -> None:
        if not self.step_size > 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if not self.total_time >= self.step_size:
            raise ConfigError(f"total_time must be >= step_size (total_time={self.total_time}, step_size={self.step_size})")
        if self.record_stride < 1:
            raise ConfigError(f"record_stride must be >= 1, got {self.record_stride}")
        if self.max_extension < 1:
            raise ConfigError(f"max_extension must be >= 1, got {self.max_extension}")


def default_total_time(delta: float, r: int) -> float:
    """Training horizon ``log(1/delta) / delta^(r-2)`` with unit constant."""
    if not 0 < delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    return math.log(1.0 / delta) / delta ** (r - 2)


@dataclass
class Trajectory:
    times: np.ndarray
    diag_w: np.ndarray            # (S, k)
    offdiag_max: np.ndarray       # (S,)
    biases: np.ndarray            # (S, k)
    noise_corr_max: np.ndarray    # (S,)
    per_class_loss: np.ndarray    # (S, k)
    per_class_minconf: np.ndarray  # (S, k)
    initial_model: HomoNet | None = None
    final_model: HomoNet | None = None
    step_halvings: list = field(default_factory=list)
    dataset_digest: str = ""

    @property
    def k(self) -> int:
        return self.diag_w.shape[1]

    @property
    def mean_loss(self) -> np.ndarray:
        return self.per_class_loss.mean(axis=1)

    def columns(self) -> list[str]:
        k = self.k
        return (["t"] + [f"w{i}{i}" for i in range(1, k + 1)] + ["offdiag_max"]
                + [f"b{i}" for i in range(1, k + 1)] + [f"loss_c{i}" for i in range(1, k + 1)]
                + [f"minconf_c{i}" for i in range(1, k + 1)] + ["noise_corr_max"])

    def to_csv(self) -> str:
        out = io.StringIO()
        if self.dataset_digest:
            out.write(f"# dataset {self.dataset_digest}\n")
        out.write(",".join(self.columns()) + "\n")
        table = np.column_stack([self.times, self.diag_w, self.offdiag_max, self.biases,
                                 self.per_class_loss, self.per_class_minconf, self.noise_corr_max])
        for row in table:
            out.write(",".join(fmt(v) for v in row) + "\n")
        return out.getvalue()

    def save_csv(self, path) -> Path:
        return atomic_write(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        digest = ""
        rows = []
        header = None
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "dataset":
                    digest = parts[1]
                continue
            if header is None:
                header = line.strip().split(",")
                continue
            rows.append([float(v) for v in line.split(",")])
        if header is None or header[0] != "t":
            raise FormatError("trajectory CSV lacks its header row")
        k = (len(header) - 3) // 4
        if len(header) != 4 * k + 3:
            raise FormatError("trajectory CSV has an unexpected column count")
        a = np.array(rows, dtype=np.float64).reshape(-1, len(header))
        return cls(times=a[:, 0], diag_w=a[:, 1:1 + k], offdiag_max=a[:, 1 + k],
                   biases=a[:, 2 + k:2 + 2 * k], per_class_loss=a[:, 2 + 2 * k:2 + 3 * k],
                   per_class_minconf=a[:, 2 + 3 * k:2 + 4 * k], noise_corr_max=a[:, 2 + 4 * k],
                   dataset_digest=digest)

    @classmethod
    def load_csv(cls, path) -> "Trajectory":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


class _Recorder:
    def __init__(self, ds: Dataset):
        self.ds = ds
        self.rows: dict[str, list] = {key: [] for key in
                                      ("t", "diag", "off", "b", "noise", "loss", "minconf")}

    def __call__(self, t: float, net: HomoNet, ev: Evaluation) -> None:
        ds, k = self.ds, self.ds.k
        block = net.W[:, :k]
        off = block[~np.eye(k, dtype=bool)]
        r = self.rows
        r["t"].append(t)
        r["diag"].append(np.diag(block).copy())
        r["off"].append(float(off.max()))
        r["b"].append(net.b.copy())
        r["noise"].append(float(np.abs(ds.noise @ net.W.T).max()))
        sl = [ds.class_slice(i) for i in range(k)]
        r["loss"].append(np.array([ev.losses[s].mean() for s in sl]))
        r["minconf"].append(np.array([ev.probs[s, i].min() for i, s in enumerate(sl)]))

    @property
    def last_t(self) -> float:
        return self.rows["t"][-1]

    def build(self, net0: HomoNet, net: HomoNet, halvings: list) -> Trajectory:
        r = self.rows
        return Trajectory(np.array(r["t"]), np.vstack(r["diag"]), np.array(r["off"]),
                          np.vstack(r["b"]), np.array(r["noise"]), np.vstack(r["loss"]),
                          np.vstack(r["minconf"]), net0, net, halvings, self.ds.digest)


def _homo_eval(net: HomoNet, ds: Dataset) -> Evaluation:
    ev = evaluate(net, ds)
    if not np.isfinite(ev.mean_loss):
        raise NumericError("non-finite loss")
    return ev


def _guarded_step(params, loss, step_fn, eval_fn, eta, t, halvings, last_good):
    """One Euler step with the halving guard. Returns (params, eval, eta_used)."""
    try:
        cand = step_fn(params, eta)
        ev = eval_fn(cand)
        new_loss = ev.mean_loss if isinstance(ev, Evaluation) else ev[0]
        if new_loss > HALVING_TRIGGER * loss:
            halvings.append({"t": t, "eta": eta, "loss_before": loss, "loss_rejected": new_loss})
            log.info("step at t=%.6g raised loss %.6g -> %.6g; retrying at eta/2", t, loss, new_loss)
            eta = eta / 2
            cand = step_fn(params, eta)
            ev = eval_fn(cand)
        return cand, ev, eta
    except (NumericError, FloatingPointError, OverflowError) as exc:
        raise DivergenceError(f"training diverged at t={t:.6g}: {exc}", last_finite=last_good, time=t) from exc


def _all_learned(ev: Evaluation, ds: Dataset, mu2: float) -> bool:
    return all(ev.probs[ds.class_slice(i), i].min() >= 1 - mu2 for i in range(ds.k))


def train(model: HomoNet, ds: Dataset, cfg: TrainConfig) -> Trajectory:
    """Run gradient flow on ``(k/N) L`` from ``model`` and record a trajectory."""
    cfg.validate()
    if model.dim != ds.dim or model.k != ds.k:
        raise ShapeError(f"model (k={model.k}, d={model.dim}) does not match dataset (k={ds.k}, d={ds.dim})")

    def step_fn(net: HomoNet, eta: float) -> HomoNet:
        g = grad_from(net, ds, cache[0])
        return net.with_params(net.W - eta * g.dW, net.b - eta * g.db)

    def eval_fn(net: HomoNet) -> Evaluation:
        return _homo_eval(net, ds)

    net = model
    ev = eval_fn(net)
    cache = [ev]
    record = _Recorder(ds)
    record(0.0, net, ev)
    halvings: list = []
    n, n_half = 0, 0
    t = 0.0
    n_main = max(1, int(round(cfg.total_time / cfg.step_size)))
    n_cap = int(round(cfg.max_extension * n_main))
    mu2 = cfg.stage_thresholds.mu2
    while True:
        if n >= n_main and not (cfg.extend_until_learned and n < n_cap and not _all_learned(ev, ds, mu2)):
            break
        net, ev, eta = _guarded_step(net, ev.mean_loss, step_fn, eval_fn, cfg.step_size, t, halvings, net)
        cache[0] = ev
        n += 1
        n_half += eta != cfg.step_size
        t = (n - 0.5 * n_half) * cfg.step_size
        if n % cfg.record_stride == 0:
            record(t, net, ev)
    if record.last_t != t:
        record(t, net, ev)
    return record.build(model, net, halvings)


@dataclass
class MlpTrainResult:
    initial_model: MlpNet
    final_model: MlpNet
    times: np.ndarray
    losses: np.ndarray
    errors: np.ndarray
    step_halvings: list


def train_mlp(net: MlpNet, ds: Dataset, cfg: TrainConfig) -> MlpTrainResult:
    """Same integrator applied to the mean cross-entropy of an MLP."""
    cfg.validate()

    def eval_fn(m: MlpNet):
        loss, g = mlp_loss_grad(m, ds)
        if not np.isfinite(loss):
            raise NumericError("non-finite loss")
        return loss, g

    def step_fn(m: MlpNet, eta: float) -> MlpNet:
        g = cache[0][1]
        return m.replace(tuple(V - eta * dV for V, dV in zip(m.layers, g.layers)),
                         tuple(b - eta * db for b, db in zip(m.biases, g.biases)))

    cur = eval_fn(net)
    cache = [cur]
    model = net
    times, losses, errors = [0.0], [cur[0]], [mlp_error_rate(model, ds)]
    halvings: list = []
    t = 0.0
    n_main = max(1, int(round(cfg.total_time / cfg.step_size)))
    for n in range(1, n_main + 1):
        model, cur, eta = _guarded_step(model, cur[0], step_fn, eval_fn, cfg.step_size, t, halvings, model)
        cache[0] = cur
        t += eta
        if n % cfg.record_stride == 0 or n == n_main:
            times.append(t)
            losses.append(cur[0])
            errors.append(mlp_error_rate(model, ds))
    return MlpTrainResult(net, model, np.array(times), np.array(losses), np.array(errors), halvings)


@dataclass(frozen=True)
class StageEvents:
    learn_order: tuple[int, ...]
    s: tuple            # first time min confidence >= 1 - mu2, or None
    t_small: tuple      # first time W_ii >= mu0
    t_large: tuple      # first time W_ii >= mu1
    bias_drop: tuple    # first time b_i <= max_j b_j - mu3
    step_halvings: tuple = ()

    @property
    def sequential(self) -> bool:
        """Every class learned, at strictly increasing times along ``learn_order``,
        and no class whose diagonal weight crosses ``mu0`` does so after it
        is learned. A class may be learned without its diagonal reaching ``mu0``.

        Stage ``i`` is taken to run from the previous learned time to the
        learned time of class ``i``; only this ordering is checked, not the
        stage lengths.
        """
        if any(v is None for v in self.s):
            return False
        times = [self.s[i] for i in self.learn_order]
        grew = all(self.t_small[i] is None or self.t_small[i] <= self.s[i] for i in self.learn_order)
        return grew and all(a < b for a, b in zip(times, times[1:]))

    def to_json(self) -> str:
        d = asdict(self)
        d["learn_order"] = list(self.learn_order)
        for key in ("s", "t_small", "t_large", "bias_drop"):
            d[key] = list(d[key])
        d["step_halvings"] = list(self.step_halvings)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        return atomic_write(path, self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "StageEvents":
        d = json.loads(text)
        return cls(tuple(d["learn_order"]), tuple(d["s"]), tuple(d["t_small"]),
                   tuple(d.get("t_large", [None] * len(d["s"]))), tuple(d["bias_drop"]),
                   tuple(d.get("step_halvings", ())))

    @classmethod
    def load(cls, path) -> "StageEvents":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _first_time(times: np.ndarray, mask: np.ndarray):
    idx = np.flatnonzero(mask)
    return float(times[idx[0]]) if idx.size else None


def detect_stages(traj: Trajectory, cfg: TrainConfig) -> StageEvents:
    th = cfg.stage_thresholds
    t = traj.times
    k = traj.k
    top = traj.biases.max(axis=1)
    s = tuple(_first_time(t, traj.per_class_minconf[:, i] >= 1 - th.mu2) for i in range(k))
    t_small = tuple(_first_time(t, traj.diag_w[:, i] >= th.mu0) for i in range(k))
    t_large = tuple(_first_time(t, traj.diag_w[:, i] >= th.mu1) for i in range(k))
    drop = tuple(_first_time(t, traj.biases[:, i] <= top - th.mu3) for i in range(k))
    order = tuple(sorted(range(k), key=lambda i: (s[i] is None, s[i] if s[i] is not None else 0.0, i)))
    return StageEvents(order, s, t_small, t_large, drop, tuple(traj.step_halvings))


@dataclass
class InductionReport:
    """Per-snapshot outcomes of the trajectory-level induction checks.

    Keys of ``checks``: ``unlearned_bias`` (a), ``learned_bias`` (b),
    ``diag_floor`` (c), ``offdiag`` (d), ``noise_corr`` (e).
    """

    times: np.ndarray
    checks: dict
    last_learned: int | None
    final_bias_gap: float

    def passed(self, name: str) -> bool:
        return bool(np.all(self.checks[name]))

    def first_violation(self, name: str):
        return _first_time(self.times, ~self.checks[name])

    def summary(self) -> dict:
        return {name: {"pass": self.passed(name), "first_violation": self.first_violation(name)}
                for name in self.checks}


def check_induction(traj: Trajectory, delta: float, cfg: TrainConfig) -> InductionReport:
    """Trajectory-level consequences of the sequential-learning induction.

    Slack constant ``c = cfg.induction_slack`` stands in for the unspecified
    big-O factors. A class counts as not yet learned while its diagonal
    weight is below ``mu0``; it counts as learned (for the bias-gap check)
    from the first snapshot its bias dropped ``mu3`` below the maximum.
    """
    ev = detect_stages(traj, cfg)
    c = cfg.induction_slack
    r = traj.final_model.r if traj.final_model is not None else 3
    band = c * delta ** r
    mu3 = cfg.stage_thresholds.mu3
    S, k = traj.biases.shape
    top = traj.biases.max(axis=1)
    unlearned_ok = np.ones(S, dtype=bool)
    learned_ok = np.ones(S, dtype=bool)
    for n in range(S):
        t = traj.times[n]
        b = traj.biases[n]
        pending = [j for j in range(k) if ev.t_small[j] is None or t < ev.t_small[j]]
        if pending:
            bp = b[pending]
            unlearned_ok[n] = bool(np.all(bp >= top[n] - band) and bp.max() - bp.min() <= band)
        dropped = [j for j in range(k) if ev.bias_drop[j] is not None and t >= ev.bias_drop[j]]
        if dropped:
            learned_ok[n] = bool(np.all(b[dropped] <= top[n] - mu3))
    w0 = traj.diag_w[0]
    checks = {
        "unlearned_bias": unlearned_ok,
        "learned_bias": learned_ok,
        "diag_floor": np.all(traj.diag_w >= w0 - c * delta, axis=1),
        "offdiag": traj.offdiag_max <= c * delta,
        "noise_corr": traj.noise_corr_max <= c * delta,
    }
    learned = [i for i in ev.learn_order if ev.s[i] is not None]
    last = learned[-1] if len(learned) == k else None
    if last is None:
        gap = float("nan")
    else:
        b = traj.biases[-1]
        gap = float(b[last] - np.delete(b, last).max())
    return InductionReport(traj.times, checks, last, gap)


def _probs(model, ds: Dataset) -> np.ndarray:
    if isinstance(model, HomoNet):
        return evaluate(model, ds).probs
    if isinstance(model, MlpNet):
        return softmax(mlp_forward(model, ds.features))
    raise TypeError(f"unsupported model type {type(model).__name__}")


def confusion(model, ds: Dataset) -> np.ndarray:
    """Entry ``(i, j)`` is ``(1/N) * sum_{x in S_j} u_i(x)``."""
    u = _probs(model, ds)
    return np.column_stack([u[ds.class_slice(j)].sum(axis=0) for j in range(ds.k)]) / ds.n


def bias_rate_decomposition(conf: np.ndarray) -> np.ndarray:
    """Bias rates ``1 - k * sum_j u_{i,j}`` recovered from confusion averages."""
    conf = np.asarray(conf, dtype=np.float64)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {conf.shape}")
    return 1.0 - conf.shape[0] * conf.sum(axis=1)


def loss_monotone_violations(traj: Trajectory, tol: float = 1e-9) -> list[float]:
    """Snapshot times where mean loss rose by more than ``tol`` without a logged halving."""
    halving_times = [h["t"] for h in traj.step_halvings]
    bad = []
    ml = traj.mean_loss
    for n in range(1, ml.size):
        if ml[n] > ml[n - 1] + tol:
            t0, t1 = traj.times[n - 1], traj.times[n]
            if not any(t0 <= h <= t1 for h in halving_times):
                bad.append(float(t1))
    return bad

