"""Closed-form interpolation boundaries and checks of a measured curve against them.

Four boundaries are computed from trained-model statistics:

* ``alpha1 = delta / Delta_min``: below it the error is left unconstrained.
* ``alpha2``: up to here every sample is predicted as the top-bias class.
* ``alpha3``: up to here the mean loss stays within a band around ``log k``.
* ``alpha4``: from here on the loss strictly decreases (homogeneous model only).

Unspecified big-O factors are realised by a single ``slack`` multiplier.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._textio import atomic_write
from .errors import AssumptionError, ConfigError, ShapeError
from .homonet import HomoNet
from .interpolate import Curve
from .mlpnet import MlpNet, spectral_norms

PASS, FAIL, VACUOUS, UNMET = "pass", "fail", "vacuous", "hypothesis_unmet"
CLAIMS = ("error_plateau", "error_monotone", "loss_band", "loss_monotone", "top_class")


@dataclass(frozen=True)
class TrainedStats:
    kind: str                     # "homo" or "fcn"
    r: int
    delta: float
    bias: tuple[float, ...]
    top: int
    others: tuple[int, ...]
    delta_i: tuple[float, ...]    # top bias minus bias of each class in ``others``
    delta_min: float
    delta_max: float
    w_diag: tuple[float, ...] | None = None
    w_min: float | None = None
    w_max: float | None = None
    r_min: float | None = None
    r_max: float | None = None
    v_max: float | None = None

    @property
    def bias_sorted(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.argsort(-np.asarray(self.bias), kind="stable"))


def _bias_gaps(b: np.ndarray):
    top = int(np.argmax(b))
    others = tuple(i for i in range(b.size) if i != top)
    gaps = b[top] - b[list(others)]
    if gaps.min() <= 0:
        raise AssumptionError(
            f"bias gap assumption violated: top bias b[{top}]={b[top]:.6g} is not strictly "
            f"larger than every other bias (smallest gap {gaps.min():.3g})")
    return top, others, gaps


def trained_stats(model0, modelT, delta: float | None = None) -> TrainedStats:
    """Statistics of a trained model that enter the boundary formulas.

    ``delta`` is the initialization scale. When omitted it is estimated from
    ``model0``: the largest absolute parameter for a HomoNet, the largest
    layer spectral norm for an MLP.
    """
    if isinstance(model0, HomoNet) and isinstance(modelT, HomoNet):
        if model0.W.shape != modelT.W.shape or model0.r != modelT.r:
            raise ShapeError("initial and trained HomoNet differ in architecture")
        r, k = modelT.r, modelT.k
        b = modelT.b
        top, others, gaps = _bias_gaps(b)
        wd = np.diag(modelT.W[:, :k])
        w_other = wd[list(others)]
        with np.errstate(divide="ignore"):
            ratios = gaps / w_other ** r
        if delta is None:
            delta = float(max(np.abs(model0.W).max(), np.abs(model0.b).max()))
        return TrainedStats("homo", r, float(delta), tuple(map(float, b)), top, others,
                            tuple(map(float, gaps)), float(gaps.min()), float(gaps.max()),
                            w_diag=tuple(map(float, wd)), w_min=float(w_other.min()), w_max=float(wd.max()),
                            r_min=float(ratios.min()), r_max=float(ratios.max()))
    if isinstance(model0, MlpNet) and isinstance(modelT, MlpNet):
        if not model0.same_architecture(modelT):
            raise ShapeError("initial and trained MlpNet differ in architecture")
        b = modelT.output_bias
        top, others, gaps = _bias_gaps(b)
        if delta is None:
            delta = spectral_norms(model0).v_max
        return TrainedStats("fcn", modelT.depth, float(delta), tuple(map(float, b)), top, others,
                            tuple(map(float, gaps)), float(gaps.min()), float(gaps.max()),
                            v_max=float(spectral_norms(modelT).v_max))
    raise ShapeError(f"unsupported model pair {type(model0).__name__}/{type(modelT).__name__}")


@dataclass(frozen=True)
class AlphaBounds:
    kind: str
    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float | None
    epsilon: float
    slack: float
    raw: dict = field(default_factory=dict)
    hypothesis_met: bool = True
    hypothesis_threshold: float = math.inf

    def to_dict(self, stats: TrainedStats | None = None) -> dict:
        d = asdict(self)
        if stats is not None:
            d["stats"] = asdict(stats)
        return d

    def to_json(self, stats: TrainedStats | None = None) -> str:
        return json.dumps(self.to_dict(stats), indent=2, sort_keys=True) + "\n"

    def save(self, path, stats: TrainedStats | None = None) -> Path:
        return atomic_write(path, self.to_json(stats))

    @classmethod
    def from_json(cls, text: str) -> "AlphaBounds":
        d = json.loads(text)
        d.pop("stats", None)
        return cls(**d)


def _clamp(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def alpha_bounds_homo(stats: TrainedStats, r: int, epsilon: float = 0.01, slack: float = 1.0) -> AlphaBounds:
    if not 0 < epsilon < 1:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    if slack < 0:
        raise ConfigError(f"slack must be >= 0, got {slack}")
    if stats.r_min is None or stats.w_max is None or stats.delta_min <= 0:
        raise ConfigError("stats lack the HomoNet fields needed for these bounds")
    d = stats.delta
    p = 1.0 / (r - 1)
    raw = {
        "alpha1": d / stats.delta_min,
        "alpha2": (1.0 / (1.0 + slack * math.sqrt(d))) ** (r * p) * stats.r_min ** p,
        "alpha3": epsilon ** (1.0 / r) / stats.w_max,
        "alpha4": (1.0 + slack * d) ** p * (stats.r_max / r) ** p,
    }
    # informational only, unit constants
    thr = min(epsilon ** (1.0 / r), stats.r_min ** p * stats.delta_min ** (1.0 / r),
              (stats.w_min / stats.w_max) ** (2.0 * r / (r - 2)))
    return AlphaBounds("homo", _clamp(raw["alpha1"]), _clamp(raw["alpha2"]), _clamp(raw["alpha3"]),
                       _clamp(raw["alpha4"]), epsilon, slack, raw, d <= thr, thr)


def fcn_delta_threshold(r: int, epsilon: float) -> float:
    return min(epsilon ** (1.0 / r) / r, 1.0 / r ** 2, (1.0 / (2.0 * math.e)) ** (2.0 / (r - 2)))


def alpha_bounds_fcn(stats: TrainedStats, r: int, epsilon: float = 0.01) -> AlphaBounds:
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    if stats.v_max is None or stats.delta_min <= 0:
        raise ConfigError("stats lack v_max; compute them from MlpNet endpoints")
    d, vm = stats.delta, stats.v_max
    p = 1.0 / (r - 1)
    raw = {
        "alpha1": d / stats.delta_min,
        "alpha2": (1.0 / (1.0 + math.sqrt(d))) ** (r * p) * (stats.delta_min / (2.0 * vm ** r)) ** p,
        "alpha3": epsilon ** (1.0 / r) / vm,
    }
    thr = fcn_delta_threshold(r, epsilon)
    return AlphaBounds("fcn", _clamp(raw["alpha1"]), _clamp(raw["alpha2"]), _clamp(raw["alpha3"]),
                       None, epsilon, 1.0, raw, d < thr, thr)


@dataclass(frozen=True)
class ClaimResult:
    name: str
    status: str
    window: tuple[float, float] | None
    n_points: int
    worst_alpha: float | None
    worst_violation: float | None
    tolerance: float
    observed: str | None = None   # raw outcome when status is hypothesis_unmet
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.status != FAIL


@dataclass(frozen=True)
class CheckReport:
    kind: str
    claims: tuple
    hypothesis_met: bool

    @property
    def all_pass(self) -> bool:
        """True iff no claim failed; vacuous and unmet claims do not count."""
        return all(c.passed for c in self.claims)

    def claim(self, name: str) -> ClaimResult:
        for c in self.claims:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> str:
        d = {"kind": self.kind, "hypothesis_met": self.hypothesis_met, "all_pass": self.all_pass,
             "claims": [asdict(c) for c in self.claims]}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        return atomic_write(path, self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "CheckReport":
        d = json.loads(text)
        claims = []
        for c in d["claims"]:
            if c["window"] is not None:
                c["window"] = tuple(c["window"])
            claims.append(ClaimResult(**c))
        return cls(d["kind"], tuple(claims), d["hypothesis_met"])


def _window(alphas: np.ndarray, lo: float | None, hi: float | None) -> np.ndarray:
    if lo is None or hi is None or lo > hi:
        return np.zeros(0, dtype=int)
    return np.flatnonzero((alphas >= lo) & (alphas <= hi))


def _result(name, idx, alphas, viol, tol, window, min_points=1, note=""):
    """Build a claim result from per-point violation amounts (> 0 means violated)."""
    if idx.size < min_points:
        return ClaimResult(name, VACUOUS, window, int(idx.size), None, None, tol, note=note)
    viol = np.asarray(viol, dtype=np.float64)
    j = int(np.argmax(viol))
    status = PASS if viol[j] <= 0 else FAIL
    return ClaimResult(name, status, window, int(idx.size), float(alphas[j]), float(viol[j]), tol, note=note)


def check_claims(curve: Curve, bounds: AlphaBounds, stats: TrainedStats, k: int | None = None,
                 tol: float = 1e-9) -> CheckReport:
    """Evaluate the five interpolation claims on the grid points of ``curve``.

    A window without grid points (or, for monotonicity claims, without a
    consecutive pair) is reported vacuous, never passed.
    """
    k = curve.k if k is None else k
    a = np.array([p.alpha for p in curve.points])
    if a.size == 0 or a[0] != 0.0 or a[-1] != 1.0:
        raise ConfigError("curve grid must cover [0, 1]")
    n = curve.n_samples
    wrong = np.array([p.n_wrong for p in curve.points])
    loss = np.array([p.mean_loss for p in curve.points])
    a1, a2, a3, a4 = bounds.alpha1, bounds.alpha2, bounds.alpha3, bounds.alpha4
    results = []

    idx = _window(a, a1, a2)
    floor = n - n // k
    results.append(_result("error_plateau", idx, a[idx], np.abs(wrong[idx] - floor) / n, 0.0, (a1, a2)))

    if bounds.kind == "homo":
        idx = _window(a, a1, 1.0)
        rise = (wrong[idx][1:] - wrong[idx][:-1]) / n
        results.append(_result("error_monotone", idx, a[idx][1:], rise, 0.0, (a1, 1.0), min_points=2))
    else:
        results.append(ClaimResult("error_monotone", VACUOUS, None, 0, None, None, 0.0,
                                   note="not asserted for fully-connected networks"))

    idx = _window(a, 0.0, a3)
    slack = (1.0 if bounds.kind == "homo" else 2.0) * math.e * bounds.epsilon
    lower = math.log(k) - slack - tol
    upper = math.log(k) + a[idx] * stats.delta_max + slack + tol
    viol = np.maximum(lower - loss[idx], loss[idx] - upper)
    results.append(_result("loss_band", idx, a[idx], viol, tol, (0.0, a3)))

    if a4 is not None:
        idx = _window(a, a4, 1.0)
        rise = loss[idx][1:] - loss[idx][:-1]
        # strict decrease: a zero step is a violation
        viol = np.where(rise >= 0, np.maximum(rise, np.finfo(float).tiny), rise)
        results.append(_result("loss_monotone", idx, a[idx][1:], viol, 0.0, (a4, 1.0), min_points=2))
    else:
        results.append(ClaimResult("loss_monotone", VACUOUS, None, 0, None, None, 0.0,
                                   note="no monotonicity boundary for fully-connected networks"))

    idx = _window(a, a1, a2)
    top_counts = np.array([curve.points[i].pred_counts[stats.top] for i in idx], dtype=np.float64)
    results.append(_result("top_class", idx, a[idx], (n - top_counts) / n, 0.0, (a1, a2)))

    if not bounds.hypothesis_met and bounds.kind == "fcn":
        results = [ClaimResult(c.name, UNMET, c.window, c.n_points, c.worst_alpha, c.worst_violation,
                               c.tolerance, observed=c.status, note=c.note) if c.status != VACUOUS else c
                   for c in results]
    return CheckReport(bounds.kind, tuple(results), bounds.hypothesis_met)
