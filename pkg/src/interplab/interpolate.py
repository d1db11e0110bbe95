"""Interpolation paths between an initial and a trained model.

``linear`` mode mixes every parameter as ``(1 - a) p0 + a pT``.
``homogeneous_bias`` mixes weights linearly but gives a bias that sits at
depth ``h`` the coefficients ``(1 - a)^h`` and ``a^h``, so that bias and
weight signal scale with the same power of ``a``. The HomoNet bias is
treated as depth ``r``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._textio import FormatError, atomic_write, fmt
from .errors import ConfigError, ShapeError
from .homonet import HomoNet, ipow, per_sample_loss, predictions
from .mlpnet import MlpNet, mlp_forward
from .synthdata import Dataset

MODES = ("linear", "homogeneous_bias")


def uniform_grid(n: int = 101) -> np.ndarray:
    """``j / (n - 1)`` for ``j = 0..n-1``; each point is correctly rounded."""
    if n < 2:
        raise ConfigError(f"grid needs at least 2 points, got {n}")
    return np.arange(n) / (n - 1)


@dataclass(frozen=True)
class InterpSpec:
    alphas: tuple
    mode: str = "linear"

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        object.__setattr__(self, "alphas", tuple(float(x) for x in a))
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if a.ndim != 1 or a.size < 2:
            raise ConfigError("alpha grid needs at least two points")
        if a[0] != 0.0 or a[-1] != 1.0:
            raise ConfigError("alpha grid must start at 0 and end at 1")
        if np.any(np.diff(a) <= 0):
            raise ConfigError("alpha grid must be strictly increasing")

    @classmethod
    def uniform(cls, n: int = 101, mode: str = "linear") -> "InterpSpec":
        return cls(tuple(uniform_grid(n)), mode)


def _mix(p0, pT, a: float, h: int | None = None):
    if h is None:
        return (1.0 - a) * p0 + a * pT
    return (1.0 - a) ** h * p0 + a ** h * pT


def interp_params(theta0, thetaT, alpha: float, mode: str = "linear"):
    """Model at ``alpha`` on the path from ``theta0`` to ``thetaT``."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    homo = mode == "homogeneous_bias"
    if isinstance(theta0, HomoNet) and isinstance(thetaT, HomoNet):
        if theta0.W.shape != thetaT.W.shape or theta0.r != thetaT.r:
            raise ShapeError("HomoNet endpoints have different architectures")
        return HomoNet(_mix(theta0.W, thetaT.W, alpha),
                       _mix(theta0.b, thetaT.b, alpha, theta0.r if homo else None), theta0.r)
    if isinstance(theta0, MlpNet) and isinstance(thetaT, MlpNet):
        if not theta0.same_architecture(thetaT):
            raise ShapeError("MlpNet endpoints have different architectures")
        layers = tuple(_mix(V0, VT, alpha) for V0, VT in zip(theta0.layers, thetaT.layers))
        biases = tuple(_mix(b0, bT, alpha, (i + 1) if homo else None)
                       for i, (b0, bT) in enumerate(zip(theta0.biases, thetaT.biases)))
        return theta0.replace(layers, biases)
    raise ShapeError(f"cannot interpolate {type(theta0).__name__} with {type(thetaT).__name__}")


@dataclass(frozen=True)
class CurvePoint:
    alpha: float
    mean_loss: float
    error: float
    n_wrong: int
    pred_counts: tuple[int, ...]


@dataclass(frozen=True)
class Curve:
    points: tuple
    model_kind: str
    mode: str
    n_samples: int
    k: int
    dataset_digest: str = ""

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.points])

    @property
    def losses(self) -> np.ndarray:
        return np.array([p.mean_loss for p in self.points])

    @property
    def errors(self) -> np.ndarray:
        return np.array([p.error for p in self.points])

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# model_kind {self.model_kind}\n# mode {self.mode}\n# grid_size {len(self.points)}\n")
        out.write(f"# n_samples {self.n_samples}\n# k {self.k}\n# dataset {self.dataset_digest or '-'}\n")
        out.write(",".join(["alpha", "mean_loss", "error", "n_wrong"]
                           + [f"pred_c{i}" for i in range(1, self.k + 1)]) + "\n")
        for p in self.points:
            out.write(",".join([fmt(p.alpha), fmt(p.mean_loss), fmt(p.error), str(p.n_wrong)]
                               + [str(c) for c in p.pred_counts]) + "\n")
        return out.getvalue()

    def save_csv(self, path) -> Path:
        return atomic_write(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Curve":
        meta = {}
        points = []
        header_seen = False
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2:
                    meta[parts[0]] = parts[1]
                continue
            if not header_seen:
                header_seen = True
                continue
            f = line.split(",")
            points.append(CurvePoint(float(f[0]), float(f[1]), float(f[2]), int(f[3]),
                                     tuple(int(c) for c in f[4:])))
        try:
            k, n = int(meta["k"]), int(meta["n_samples"])
            kind, mode = meta["model_kind"], meta["mode"]
        except KeyError as exc:
            raise FormatError(f"curve CSV lacks header field {exc}") from None
        digest = meta.get("dataset", "-")
        return cls(tuple(points), kind, mode, n, k, "" if digest == "-" else digest)

    @classmethod
    def load_csv(cls, path) -> "Curve":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def model_logits(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, HomoNet):
        if X.shape[1] != model.W.shape[1]:
            raise ShapeError(f"data dimension {X.shape[1]} does not match model input {model.W.shape[1]}")
        return ipow(X @ model.W.T, model.r) + model.b
    if isinstance(model, MlpNet):
        return mlp_forward(model, X)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def evaluate_point(model, ds: Dataset, alpha: float = 0.0) -> CurvePoint:
    f = model_logits(model, ds.features)
    pred = predictions(f)
    wrong = int(np.count_nonzero(pred != ds.labels))
    counts = tuple(int(c) for c in np.bincount(pred, minlength=ds.k))
    return CurvePoint(float(alpha), float(per_sample_loss(f, ds.labels).mean()), wrong / ds.n, wrong, counts)


def eval_curve(theta0, thetaT, ds: Dataset, spec: InterpSpec) -> Curve:
    kind = "homo" if isinstance(theta0, HomoNet) else "mlp"
    pts = tuple(evaluate_point(interp_params(theta0, thetaT, a, spec.mode), ds, a) for a in spec.alphas)
    return Curve(pts, kind, spec.mode, ds.n, ds.k, ds.digest)


def plateau_length(curve: Curve, err_floor_tolerance: float = 0.01) -> float:
    """Largest grid alpha up to which the error stays at the chance floor.

    Starting from the first grid point above 0, walk the grid while the
    error is at least ``(1 - 1/k) - tolerance``; return the last alpha that
    qualified, or 0 when the first point already fails.
    """
    if not curve.points:
        raise ConfigError("curve has no points")
    floor = 1.0 - 1.0 / curve.k - err_floor_tolerance
    last = 0.0
    for p in curve.points:
        if p.alpha <= 0.0:
            continue
        if p.error < floor:
            break
        last = p.alpha
    return last
