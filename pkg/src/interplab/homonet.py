"""Two-layer model whose i-th logit is ``<W_i, x>^r + b_i``.

Signals are degree ``r`` in the weights while biases are degree one, which
is what makes the bias dominate near the start of an interpolation path.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._textio import FormatError, atomic_write, data_lines, fmt_row, parse_floats
from .errors import ConfigError, NumericError, ShapeError
from .synthdata import Dataset


def ipow(z: np.ndarray, r: int) -> np.ndarray:
    """``z**r`` by repeated multiplication (sign-correct, bit-stable).

    Overflow yields ``inf`` silently; callers reject non-finite logits.
    """
    out = np.array(z, dtype=np.float64, copy=True)
    with np.errstate(over="ignore"):
        for _ in range(r - 1):
            out *= z
    return out


@dataclass(frozen=True, eq=False)
class HomoNet:
    W: np.ndarray
    b: np.ndarray
    r: int

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        if int(self.r) != self.r or self.r < 3:
            raise ConfigError(f"homogeneity degree r must be an integer >= 3, got {self.r}")
        object.__setattr__(self, "r", int(self.r))
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ShapeError(f"W {W.shape} and b {b.shape} are inconsistent")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise NumericError("HomoNet parameters must be finite")

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def with_params(self, W, b) -> "HomoNet":
        return HomoNet(W, b, self.r)

    def to_text(self, comments: tuple[str, ...] = ()) -> str:
        lines = [f"# {c}" for c in comments]
        lines.append(f"homo {self.k} {self.dim} {self.r}")
        lines.extend(fmt_row(row) for row in self.W)
        lines.append(fmt_row(self.b))
        return "\n".join(lines) + "\n"

    def save(self, path, comments: tuple[str, ...] = ()) -> Path:
        return atomic_write(path, self.to_text(comments))

    @classmethod
    def from_text(cls, text: str) -> "HomoNet":
        lines = list(data_lines(text))
        if not lines or lines[0].split()[0] != "homo":
            raise FormatError("not a homo snapshot")
        head = lines[0].split()
        if len(head) != 4:
            raise FormatError("homo header must be `homo k d r`")
        k, d, r = int(head[1]), int(head[2]), int(head[3])
        if len(lines) != k + 2:
            raise FormatError(f"expected {k + 2} lines, got {len(lines)}")
        W = np.vstack([parse_floats(line, d) for line in lines[1:k + 1]])
        b = parse_floats(lines[k + 1], k)
        return cls(W, b, r)

    @classmethod
    def load(cls, path) -> "HomoNet":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class GradientPair:
    dW: np.ndarray
    db: np.ndarray


def _check(net: HomoNet, ds: Dataset) -> None:
    if net.dim != ds.dim or net.k != ds.k:
        raise ShapeError(f"model (k={net.k}, d={net.dim}) does not match dataset (k={ds.k}, d={ds.dim})")


def forward(net: HomoNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.dim:
        raise ShapeError(f"input length {x.shape[-1]} != model dim {net.dim}")
    return ipow(x @ net.W.T, net.r) + net.b


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    f = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise NumericError("softmax received a non-finite logit")
    e = np.exp(f - f.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def per_sample_loss(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cross-entropy ``logsumexp(f) - f_y`` per row."""
    f = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise NumericError("loss received a non-finite logit")
    m = f.max(axis=1)
    lse = np.log(np.exp(f - m[:, None]).sum(axis=1)) + m
    return lse - f[np.arange(f.shape[0]), labels]


@dataclass(frozen=True)
class Evaluation:
    """One forward pass over a dataset, reused by loss/grad/trainer."""

    inner: np.ndarray   # <W_i, x> per sample, shape (N, k)
    logits: np.ndarray
    probs: np.ndarray
    losses: np.ndarray

    @property
    def mean_loss(self) -> float:
        return float(self.losses.mean())


def evaluate(net: HomoNet, ds: Dataset) -> Evaluation:
    _check(net, ds)
    inner = ds.features @ net.W.T
    f = ipow(inner, net.r) + net.b
    return Evaluation(inner, f, softmax(f), per_sample_loss(f, ds.labels))


def mean_loss(net: HomoNet, ds: Dataset) -> float:
    """``L / N``: average cross-entropy over the dataset."""
    return evaluate(net, ds).mean_loss


def grad_from(net: HomoNet, ds: Dataset, ev: Evaluation) -> GradientPair:
    # coefficient of each sample in the gradient of (k/N) L
    g = (ev.probs - ds.onehot) * (ds.k / ds.n)
    dW = (g * (net.r * ipow(ev.inner, net.r - 1))).T @ ds.features
    return GradientPair(dW, g.sum(axis=0))


def grad(net: HomoNet, ds: Dataset) -> GradientPair:
    """Ascent gradient of the scaled objective ``(k/N) L``.

    ``-grad(...).db`` equals :func:`bias_rate`.
    """
    return grad_from(net, ds, evaluate(net, ds))


def bias_rate(net: HomoNet, ds: Dataset) -> np.ndarray:
    """Bias time-derivative under gradient flow: ``1 - (k/N) sum_x u_i(x)``."""
    u = evaluate(net, ds).probs
    return 1.0 - (ds.k / ds.n) * u.sum(axis=0)


def predictions(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(logits, axis=1)


def error_rate(net: HomoNet, ds: Dataset) -> float:
    _check(net, ds)
    f = ipow(ds.features @ net.W.T, net.r) + net.b
    return float(np.count_nonzero(predictions(f) != ds.labels)) / ds.n
