"""Balanced synthetic classification data with orthonormal class features.

Class ``i`` has feature vector ``e_i`` (standard basis); every sample is
``e_i + xi`` with ``xi ~ N(0, sigma^2/d I)`` and the noise kept alongside
the features. Class indices are 0-based throughout the package.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._textio import FormatError, atomic_write, data_lines, fmt, fmt_row, parse_floats, sha256_text
from .errors import ConfigError, ShapeError

FORMAT_VERSION = 1

# domain-separation tags: one generator stream per artifact kind
_TAG_DATASET = zlib.crc32(b"interplab/dataset/v1")
_TAG_WEIGHTS = zlib.crc32(b"interplab/homo-weights/v1")
_TAG_MLP = zlib.crc32(b"interplab/mlp-weights/v1")


def make_rng(seed: int, tag: int) -> np.random.Generator:
    """Philox (counter-based) generator keyed by ``(seed, tag)``."""
    if seed < 0 or seed >= 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(tag)])))


@dataclass(frozen=True)
class DatasetConfig:
    k: int
    n_total: int
    dim: int
    noise_sigma: float
    seed: int = 0

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.n_total <= 0 or self.n_total % self.k != 0:
            raise ConfigError(f"n_total mod k must be 0 (n_total={self.n_total}, k={self.k})")
        if self.dim < self.k:
            raise ConfigError(f"dim must be >= k so class features are distinct basis vectors (dim={self.dim}, k={self.k})")
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed}")


@dataclass(frozen=True)
class Sample:
    label: int
    features: np.ndarray
    noise: np.ndarray


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples stored as arrays, grouped by class in label order.

    ``features[n] == e_{labels[n]} + noise[n]`` holds exactly.
    """

    config: DatasetConfig
    labels: np.ndarray
    features: np.ndarray
    noise: np.ndarray
    _hash: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        n, d = self.config.n_total, self.config.dim
        if self.labels.shape != (n,) or self.features.shape != (n, d) or self.noise.shape != (n, d):
            raise ShapeError("dataset arrays do not match config")

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def n(self) -> int:
        return self.config.n_total

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def onehot(self) -> np.ndarray:
        return np.eye(self.k)[self.labels]

    def class_slice(self, i: int) -> slice:
        m = self.n // self.k
        return slice(i * m, (i + 1) * m)

    @property
    def samples(self) -> list[Sample]:
        return [Sample(int(y), self.features[j], self.noise[j]) for j, y in enumerate(self.labels)]

    def groups(self) -> list[list[Sample]]:
        s = self.samples
        m = self.n // self.k
        return [s[i * m:(i + 1) * m] for i in range(self.k)]

    def to_text(self) -> str:
        c = self.config
        lines = [f"# interplab dataset v{FORMAT_VERSION}",
                 f"{c.k} {c.n_total} {c.dim} {fmt(c.noise_sigma)} {c.seed}"]
        for y, x, xi in zip(self.labels, self.features, self.noise):
            lines.append(f"{int(y)} {fmt_row(x)} {fmt_row(xi)}")
        return "\n".join(lines) + "\n"

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical text export; recorded in downstream artifacts."""
        if not self._hash:
            self._hash.append(sha256_text(self.to_text()))
        return self._hash[0]

    def save(self, path) -> Path:
        return atomic_write(path, self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "Dataset":
        lines = data_lines(text)
        try:
            head = next(lines).split()
        except StopIteration:
            raise FormatError("empty dataset file") from None
        if len(head) != 5:
            raise FormatError("dataset header must be `k N d sigma seed`")
        cfg = DatasetConfig(int(head[0]), int(head[1]), int(head[2]), float(head[3]), int(head[4]))
        cfg.validate()
        n, d = cfg.n_total, cfg.dim
        rows = [parse_floats(line, 1 + 2 * d) for line in lines]
        if len(rows) != n:
            raise FormatError(f"expected {n} sample lines, got {len(rows)}")
        arr = np.vstack(rows)
        labels = arr[:, 0].astype(np.int64)
        if not np.array_equal(labels, np.repeat(np.arange(cfg.k), n // cfg.k)):
            raise FormatError("samples must be grouped by class in label order")
        labels.setflags(write=False)
        return cls(cfg, labels, _frozen(arr[:, 1:1 + d]), _frozen(arr[:, 1 + d:]))

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def generate_dataset(cfg: DatasetConfig) -> Dataset:
    cfg.validate()
    k, n, d = cfg.k, cfg.n_total, cfg.dim
    rng = make_rng(cfg.seed, _TAG_DATASET)
    noise = rng.standard_normal((n, d)) * (cfg.noise_sigma / np.sqrt(d))
    labels = np.repeat(np.arange(k, dtype=np.int64), n // k)
    rows = np.arange(n)
    # store the label coordinate as fl(fl(1 + xi) - 1) so that both
    # features == e + noise and features - noise == e hold exactly
    noise[rows, labels] = (noise[rows, labels] + 1.0) - 1.0
    features = noise.copy()
    features[rows, labels] += 1.0
    labels.setflags(write=False)
    return Dataset(cfg, labels, _frozen(features), _frozen(noise))


def init_weights(k: int, d: int, delta: float, seed: int) -> np.ndarray:
    """``|N(0, delta^2)|`` entries, shape ``(k, d)``; all strictly positive."""
    if not delta > 0:
        raise ConfigError(f"delta must be > 0, got {delta}")
    if k < 1 or d < 1:
        raise ConfigError(f"k and d must be positive, got k={k}, d={d}")
    rng = make_rng(seed, _TAG_WEIGHTS)
    w = np.abs(rng.standard_normal((k, d))) * delta
    # a standard-normal draw of exactly 0.0 is possible in principle; keep the contract
    w[w == 0.0] = np.finfo(np.float64).tiny
    return w


@dataclass(frozen=True)
class InitReport:
    entry_min: float
    entry_max: float
    diag_gaps: tuple[float, ...]
    noise_norm_max: float
    max_pair_corr: float
    max_basis_corr: float
    max_row_corr: float


def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    out = np.zeros_like(a)
    np.divide(a, norms, out=out, where=norms > 0)
    return out


def verify_init(w0: np.ndarray, ds: Dataset, delta: float) -> InitReport:
    """Raw statistics behind the initialization properties.

    No thresholds are applied here; the asymptotic constants are unknown,
    so the caller decides what counts as acceptable. ``delta`` is accepted
    for symmetry with the caller's configuration and must be positive.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    k = ds.k
    if w0.ndim != 2 or w0.shape != (k, ds.dim):
        raise ShapeError(f"W0 shape {w0.shape} does not match (k, d) = {(k, ds.dim)}")
    if not delta > 0:
        raise ConfigError(f"delta must be > 0, got {delta}")
    diag = np.diag(w0[:, :k])
    gaps = sorted(abs(diag[i] - diag[j]) for i in range(k) for j in range(i + 1, k))
    xi_bar = _unit_rows(ds.noise)
    w_bar = _unit_rows(w0)
    if ds.n > 1:
        gram = np.abs(xi_bar @ xi_bar.T)
        np.fill_diagonal(gram, 0.0)
        pair = float(gram.max())
    else:
        pair = 0.0
    return InitReport(
        entry_min=float(w0.min()),
        entry_max=float(w0.max()),
        diag_gaps=tuple(float(g) for g in gaps),
        noise_norm_max=float(np.linalg.norm(ds.noise, axis=1).max()),
        max_pair_corr=pair,
        max_basis_corr=float(np.abs(xi_bar[:, :k]).max()),
        max_row_corr=float(np.abs(xi_bar @ w_bar.T).max()),
    )
