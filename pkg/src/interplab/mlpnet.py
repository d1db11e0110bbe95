"""Depth-r fully-connected network ``V_r s(V_{r-1} ... s(V_1 x) ...) + b``.

``s`` is the identity or ReLU. Biases follow one of three modes:
``all`` (every layer), ``last`` (output layer only) or ``none``. Layer
``i`` (1-based, input is layer 0) adds its bias after ``V_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._textio import FormatError, atomic_write, data_lines, fmt_row, parse_floats
from .errors import ConfigError, NumericError, ShapeError
from .homonet import per_sample_loss, softmax
from .synthdata import _TAG_MLP, Dataset, make_rng

ACTIVATIONS = ("identity", "relu")
BIAS_MODES = ("all", "last", "none")


def _has_bias(mode: str, layer: int, depth: int) -> bool:
    return mode == "all" or (mode == "last" and layer == depth - 1)


@dataclass(frozen=True, eq=False)
class MlpNet:
    layers: tuple
    biases: tuple
    activation: str = "relu"
    bias_mode: str = "last"

    def __post_init__(self):
        layers = tuple(np.asarray(V, dtype=np.float64) for V in self.layers)
        biases = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "biases", biases)
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.bias_mode not in BIAS_MODES:
            raise ConfigError(f"bias_mode must be one of {BIAS_MODES}, got {self.bias_mode!r}")
        if not layers or len(biases) != len(layers):
            raise ShapeError("need one bias slot per layer")
        for i, V in enumerate(layers):
            if V.ndim != 2:
                raise ShapeError(f"layer {i + 1} is not a matrix")
            if i and V.shape[1] != layers[i - 1].shape[0]:
                raise ShapeError(f"layer {i + 1} input width {V.shape[1]} != layer {i} output width {layers[i - 1].shape[0]}")
            want = V.shape[0] if _has_bias(self.bias_mode, i, len(layers)) else 0
            if biases[i].size != want:
                raise ShapeError(f"layer {i + 1} bias has length {biases[i].size}, expected {want} for bias_mode={self.bias_mode}")
        if not all(np.all(np.isfinite(a)) for a in layers + biases):
            raise NumericError("MlpNet parameters must be finite")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.layers[0].shape[1],) + tuple(V.shape[0] for V in self.layers)

    @property
    def k(self) -> int:
        return self.layers[-1].shape[0]

    @property
    def output_bias(self) -> np.ndarray:
        b = self.biases[-1]
        return b if b.size else np.zeros(self.k)

    def replace(self, layers=None, biases=None) -> "MlpNet":
        return MlpNet(self.layers if layers is None else layers,
                      self.biases if biases is None else biases,
                      self.activation, self.bias_mode)

    def same_architecture(self, other: "MlpNet") -> bool:
        return (isinstance(other, MlpNet) and self.widths == other.widths
                and self.activation == other.activation and self.bias_mode == other.bias_mode)

    def to_text(self, comments: tuple[str, ...] = ()) -> str:
        lines = [f"# {c}" for c in comments]
        lines.append(" ".join(["mlp", str(self.depth), self.activation, self.bias_mode]
                              + [str(w) for w in self.widths]))
        for V in self.layers:
            lines.extend(fmt_row(row) for row in V)
        for b in self.biases:
            if b.size:
                lines.append(fmt_row(b))
        return "\n".join(lines) + "\n"

    def save(self, path, comments: tuple[str, ...] = ()) -> Path:
        return atomic_write(path, self.to_text(comments))

    @classmethod
    def from_text(cls, text: str) -> "MlpNet":
        lines = list(data_lines(text))
        if not lines or lines[0].split()[0] != "mlp":
            raise FormatError("not an mlp snapshot")
        head = lines[0].split()
        depth = int(head[1])
        activation, mode = head[2], head[3]
        widths = [int(w) for w in head[4:]]
        if len(widths) != depth + 1:
            raise FormatError("mlp header must list depth + 1 widths")
        pos = 1
        layers = []
        for i in range(depth):
            rows = lines[pos:pos + widths[i + 1]]
            if len(rows) != widths[i + 1]:
                raise FormatError("truncated mlp snapshot")
            layers.append(np.vstack([parse_floats(row, widths[i]) for row in rows]))
            pos += widths[i + 1]
        biases = []
        for i in range(depth):
            if _has_bias(mode, i, depth):
                if pos >= len(lines):
                    raise FormatError("truncated mlp snapshot")
                biases.append(parse_floats(lines[pos], widths[i + 1]))
                pos += 1
            else:
                biases.append(np.zeros(0))
        if pos != len(lines):
            raise FormatError("trailing lines in mlp snapshot")
        return cls(tuple(layers), tuple(biases), activation, mode)

    @classmethod
    def load(cls, path) -> "MlpNet":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def mlp_init(widths, activation: str = "relu", bias_mode: str = "last",
             base_init_seed: int = 0, output_scale: float = 1.0) -> MlpNet:
    """Fan-in scaled Gaussian layers, each multiplied by ``output_scale ** (1/r)``.

    With zero biases the network output is therefore scaled by exactly
    ``output_scale`` (up to rounding) relative to the unscaled draw.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ConfigError(f"widths must list at least input and output sizes, all positive: {widths}")
    if not output_scale > 0:
        raise ConfigError(f"output_scale must be > 0, got {output_scale}")
    depth = len(widths) - 1
    gain = 2.0 if activation == "relu" else 1.0
    factor = output_scale ** (1.0 / depth)
    rng = make_rng(base_init_seed, _TAG_MLP)
    layers, biases = [], []
    for i in range(depth):
        V = rng.standard_normal((widths[i + 1], widths[i])) * np.sqrt(gain / widths[i])
        layers.append(V * factor)
        biases.append(np.zeros(widths[i + 1] if _has_bias(bias_mode, i, depth) else 0))
    return MlpNet(tuple(layers), tuple(biases), activation, bias_mode)


def _forward_cache(net: MlpNet, X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != net.widths[0]:
        raise ShapeError(f"input width {X.shape[-1]} != network input width {net.widths[0]}")
    hs = [X]
    h = X
    for i, (V, b) in enumerate(zip(net.layers, net.biases)):
        a = h @ V.T
        if b.size:
            a = a + b
        if i < net.depth - 1 and net.activation == "relu":
            a = np.maximum(a, 0.0)
        hs.append(a)
        h = a
    return h, hs


def mlp_forward(net: MlpNet, x: np.ndarray) -> np.ndarray:
    """Logits for one input vector or a batch of rows."""
    return _forward_cache(net, x)[0]


@dataclass(frozen=True)
class MlpGrad:
    layers: tuple
    biases: tuple


def mlp_loss_grad(net: MlpNet, ds: Dataset) -> tuple[float, MlpGrad]:
    """Mean cross-entropy and its gradient by backpropagation.

    ReLU's derivative at 0 is taken as 0.
    """
    if net.widths[0] != ds.dim or net.k != ds.k:
        raise ShapeError(f"network widths {net.widths} do not match dataset (d={ds.dim}, k={ds.k})")
    f, hs = _forward_cache(net, ds.features)
    losses = per_sample_loss(f, ds.labels)
    g = (softmax(f) - ds.onehot) / ds.n
    dV = [None] * net.depth
    db = [None] * net.depth
    for i in reversed(range(net.depth)):
        dV[i] = g.T @ hs[i]
        db[i] = g.sum(axis=0) if net.biases[i].size else np.zeros(0)
        if i:
            g = g @ net.layers[i]
            if net.activation == "relu":
                g = g * (hs[i] > 0)
    return float(losses.mean()), MlpGrad(tuple(dV), tuple(db))


def mlp_mean_loss(net: MlpNet, ds: Dataset) -> float:
    return float(per_sample_loss(mlp_forward(net, ds.features), ds.labels).mean())


def mlp_error_rate(net: MlpNet, ds: Dataset) -> float:
    f = mlp_forward(net, ds.features)
    return float(np.count_nonzero(np.argmax(f, axis=1) != ds.labels)) / ds.n


@dataclass(frozen=True)
class SpectralReport:
    norms: tuple[float, ...]
    v_max: float
    iterations: tuple[int, ...]
    residual: tuple[float, ...]
    converged: tuple[bool, ...]


def power_iteration(V: np.ndarray, tol: float = 1e-12, max_iter: int = 10000,
                    seed: int = 0) -> tuple[float, int, float, bool]:
    """Largest singular value of ``V`` via power iteration on ``V^T V``.

    Returns ``(norm, iterations, residual, converged)`` where residual is
    ``||V^T V v - lam v|| / lam`` for the final unit vector ``v``.
    """
    V = np.asarray(V, dtype=np.float64)
    v = np.random.default_rng(seed).standard_normal(V.shape[1])
    v /= np.linalg.norm(v)
    lam, res = 0.0, np.inf
    it = 0
    for it in range(1, max_iter + 1):
        w = V.T @ (V @ v)
        lam = float(v @ w)
        if lam <= 0.0:
            return 0.0, it, 0.0, True
        res = float(np.linalg.norm(w - lam * v)) / lam
        v = w / np.linalg.norm(w)
        if res <= tol:
            break
    lam = float(np.linalg.norm(V @ v)) ** 2
    return float(np.sqrt(lam)), it, res, bool(res <= tol)


def spectral_norms(net: MlpNet, tol: float = 1e-12, max_iter: int = 10000) -> SpectralReport:
    if not tol > 0:
        raise ConfigError(f"tol must be > 0, got {tol}")
    out = [power_iteration(V, tol, max_iter) for V in net.layers]
    norms = tuple(o[0] for o in out)
    return SpectralReport(norms, max(norms), tuple(o[1] for o in out),
                          tuple(o[2] for o in out), tuple(o[3] for o in out))
