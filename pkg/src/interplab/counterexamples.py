"""Two toy objectives where interpolation shape and optimization difficulty disagree.

``hard``: ``f(x, z) = -T(x, x, x) + ||x||^4 + z^4`` for a symmetric 3-tensor
``T``. Minimizing it is as hard as computing the tensor spectral norm, yet the
straight line from ``(0, z0)`` to a minimizer is convex and decreasing once
``|z0| > 3 sqrt(2) / 4``.

``easy``: ``f(x, y) = (1 - y / (3 rho)) (rho^4 - 2 rho^2)`` with
``rho = sqrt(x^2 + y^2)`` and ``f(0, 0) = 0``. Gradient descent from a generic
non-zero start reaches the unique minimizer ``(0, -1)``, but the straight line
to it from ``(sin b, cos b)``, ``|b| <= pi/3``, rises by at least 5/32.

Angle convention for ``easy``: points are parameterised as
``(rho sin(beta), rho cos(beta))``, so ``beta`` is measured from the +y axis.
In the polar form ``h(theta, rho) = (1 - sin(theta)/3)(rho^4 - 2 rho^2)`` the
angle is ``theta = pi/2 - beta`` (``x = rho cos theta``, ``y = rho sin theta``);
``(0, 1)`` has ``sin theta = 1`` and ``(0, -1)`` has ``sin theta = -1``.
Note that ``(0, 1)`` is a saddle point and the ray ``x = 0, y > 0`` is invariant
under gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, HypothesisError, NonDifferentiableError, ShapeError

HARD_Z0_MIN = 3.0 * math.sqrt(2.0) / 4.0
BUMP_BOUND = 5.0 / 32.0


@dataclass(frozen=True)
class SymTensor3:
    """``T = sum_l w_l v_l (x) v_l (x) v_l`` with unit vectors ``v_l``."""

    weights: np.ndarray
    vectors: np.ndarray  # (rank, d)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        V = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if V.shape[0] != w.size:
            raise ShapeError("need one weight per factor vector")
        if not np.allclose(np.linalg.norm(V, axis=1), 1.0, rtol=0, atol=1e-12):
            raise ConfigError("factor vectors must be unit norm")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "vectors", V)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def rank_one(cls, v, weight: float = 1.0) -> "SymTensor3":
        v = np.asarray(v, dtype=np.float64)
        return cls(np.array([weight]), (v / np.linalg.norm(v))[None, :])

    def __call__(self, x: np.ndarray) -> float:
        """``T(x, x, x)``."""
        return float(np.sum(self.weights * (self.vectors @ x) ** 3))

    def contract2(self, x: np.ndarray) -> np.ndarray:
        """``T(., x, x)``, the gradient of ``T(x, x, x) / 3``."""
        return (self.weights * (self.vectors @ x) ** 2) @ self.vectors

    def dense(self) -> np.ndarray:
        return np.einsum("l,li,lj,lk->ijk", self.weights, self.vectors, self.vectors, self.vectors)

    @property
    def frobenius(self) -> float:
        G = self.vectors @ self.vectors.T
        return float(np.sqrt(self.weights @ (G ** 3) @ self.weights))


@dataclass(frozen=True)
class HardPoint:
    x: np.ndarray
    z: float


@dataclass(frozen=True)
class EasyPoint:
    x: float
    y: float


def hard_eval(T: SymTensor3, p: HardPoint) -> float:
    x = np.asarray(p.x, dtype=np.float64)
    if x.shape != (T.dim,):
        raise ShapeError(f"x has shape {x.shape}, tensor dimension is {T.dim}")
    return -T(x) + float(x @ x) ** 2 + float(p.z) ** 4


def hard_minimizer(T: SymTensor3, restarts: int = 16, iters: int = 500, seed: int = 0) -> HardPoint:
    """A minimizer ``(x*, 0)``: ``x* = (3p/4) v`` where ``v`` maximizes ``T(v, v, v)``.

    The unit maximizer is found by shifted symmetric power iteration from
    several random starts plus every factor vector.
    """
    rng = np.random.default_rng(seed)
    starts = list(T.vectors) + list(rng.standard_normal((restarts, T.dim)))
    shift = float(np.abs(T.weights).sum())
    best_v, best_p = None, -np.inf
    for v in starts:
        v = v / np.linalg.norm(v)
        for _ in range(iters):
            w = T.contract2(v) + shift * v
            v = w / np.linalg.norm(w)
        for cand in (v, -v):
            p = T(cand)
            if p > best_p:
                best_v, best_p = cand, p
    return HardPoint(0.75 * best_p * best_v, 0.0)


@dataclass(frozen=True)
class HardCurve:
    alphas: np.ndarray
    values: np.ndarray
    first_diff: np.ndarray
    second_diff: np.ndarray   # central, one per interior grid point

    @property
    def convex(self) -> bool:
        return bool(np.all(self.second_diff > 0))

    @property
    def decreasing(self) -> bool:
        return bool(np.all(self.first_diff < 0))


def hard_curve(T: SymTensor3, z0: float, xstar, n: int = 1000) -> HardCurve:
    """Sample ``gamma(a) = f(a x*, (1 - a) z0)`` on ``n`` uniform points of [0, 1]."""
    if not abs(z0) > HARD_Z0_MIN:
        raise HypothesisError(f"|z0| must exceed 3*sqrt(2)/4 = {HARD_Z0_MIN:.6f}, got {z0}")
    xstar = np.asarray(xstar, dtype=np.float64)
    if xstar.shape != (T.dim,):
        raise ShapeError("xstar dimension does not match tensor")
    alphas = np.arange(n) / (n - 1)
    vals = np.array([hard_eval(T, HardPoint(a * xstar, (1.0 - a) * z0)) for a in alphas])
    h = 1.0 / (n - 1)
    return HardCurve(alphas, vals, np.diff(vals), (vals[2:] - 2 * vals[1:-1] + vals[:-2]) / h ** 2)


def hard_gamma_closed_form(p: float, xnorm: float, z0: float, alpha) -> np.ndarray:
    """``-a^3 T(x*,x*,x*) + a^4 ||x*||^4 + (1 - a)^4 z0^4`` with ``p = T(x*,x*,x*)``."""
    a = np.asarray(alpha, dtype=np.float64)
    return -a ** 3 * p + a ** 4 * xnorm ** 4 + (1 - a) ** 4 * z0 ** 4


def easy_eval(p: EasyPoint) -> float:
    x, y = float(p.x), float(p.y)
    if x == 0.0 and y == 0.0:
        return 0.0
    q = x * x + y * y
    return (1.0 - y / (3.0 * math.sqrt(q))) * (q * q - 2.0 * q)


def easy_grad(p: EasyPoint) -> np.ndarray:
    """Cartesian gradient assembled from the polar partial derivatives."""
    x, y = float(p.x), float(p.y)
    rho = math.hypot(x, y)
    if rho == 0.0:
        raise NonDifferentiableError("the easy objective is not differentiable at the origin")
    c, s = x / rho, y / rho              # cos(theta), sin(theta)
    g = rho ** 4 - 2 * rho ** 2
    d_rho = (1.0 - s / 3.0) * (4 * rho ** 3 - 4 * rho)
    d_theta = -(c / 3.0) * g
    # grad = d_rho * e_rho + (d_theta / rho) * e_theta, e_theta = (-sin, cos)
    return np.array([d_rho * c - d_theta / rho * s, d_rho * s + d_theta / rho * c])


@dataclass(frozen=True)
class DescentResult:
    path: np.ndarray       # rows: iter, x, y, f, grad_norm (recorded every `record` steps)
    final: EasyPoint
    converged: bool
    iterations: int


def easy_descend(start: EasyPoint, step: float = 1e-3, max_iters: int = 1_000_000,
                 tol: float = 1e-8, record: int = 1000) -> DescentResult:
    if not step > 0:
        raise ConfigError(f"step must be > 0, got {step}")
    x, y = float(start.x), float(start.y)
    if x == 0.0 and y == 0.0:
        raise NonDifferentiableError("descent cannot start at the origin")
    rows = []
    it = 0
    while True:
        g = easy_grad(EasyPoint(x, y))
        gn = math.hypot(g[0], g[1])
        if it % record == 0 or gn <= tol or it == max_iters:
            rows.append((it, x, y, easy_eval(EasyPoint(x, y)), gn))
        if gn <= tol or it == max_iters:
            break
        x, y = x - step * g[0], y - step * g[1]
        it += 1
        if x == 0.0 and y == 0.0:
            raise NonDifferentiableError(f"descent reached the origin at iteration {it}")
    return DescentResult(np.array(rows), EasyPoint(x, y), gn <= tol, it)


def _check_beta(beta: float) -> None:
    if not -math.pi / 3 - 1e-15 <= beta <= math.pi / 3 + 1e-15:
        raise ConfigError(f"beta must lie in [-pi/3, pi/3], got {beta}")


def easy_bump(beta: float, rho0: float = 1.0) -> float:
    """``f(midpoint) - f(start)`` on the segment from ``rho0 (sin b, cos b)`` to ``(0, -1)``."""
    _check_beta(beta)
    if not rho0 >= 1.0:
        raise ConfigError(f"rho0 must be >= 1, got {rho0}")
    x0, y0 = rho0 * math.sin(beta), rho0 * math.cos(beta)
    mid = EasyPoint(0.5 * x0, 0.5 * (y0 - 1.0))
    return easy_eval(mid) - easy_eval(EasyPoint(x0, y0))


def easy_curve(beta: float, rho0: float = 1.0, n: int = 1001) -> tuple[np.ndarray, np.ndarray]:
    """Loss along the straight line from ``rho0 (sin b, cos b)`` to ``(0, -1)``."""
    _check_beta(beta)
    x0, y0 = rho0 * math.sin(beta), rho0 * math.cos(beta)
    alphas = np.arange(n) / (n - 1)
    vals = np.array([easy_eval(EasyPoint((1 - a) * x0, (1 - a) * y0 - a)) for a in alphas])
    return alphas, vals


def easy_bump_sweep(n: int = 100, rho0: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    betas = np.linspace(-math.pi / 3, math.pi / 3, n)
    return betas, np.array([easy_bump(b, rho0) for b in betas])
