"""Poincaré-ball geometry (curvature -1).

Every function accepts a single point of shape ``(n,)`` or a batch of shape
``(..., n)``; reductions run over the last axis. Arithmetic is float64.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-5
# slack on the containment test so that projected points (norm == 1 - eps up
# to rounding) pass and projection is exactly idempotent
_BALL_TOL = 1e-12


class DomainError(ValueError):
    pass


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite coordinates")
    return x


def sqnorm(x: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", x, x)


def check_ball(x, eps: float = EPS) -> np.ndarray:
    """Return ``x`` as float64 after asserting every point satisfies ``|x| <= 1 - eps``."""
    x = _as_points(x)
    norms = np.sqrt(sqnorm(x))
    if np.any(norms > 1.0 - eps + _BALL_TOL):
        raise DomainError(f"point outside ball: max norm {norms.max():.12g} > 1 - {eps:g}")
    return x


def in_ball(x, eps: float = EPS) -> bool:
    x = np.asarray(x, dtype=np.float64)
    return bool(np.all(np.isfinite(x)) and np.all(np.sqrt(sqnorm(x)) <= 1.0 - eps + _BALL_TOL))


def arcosh(z):
    """``ln(z + sqrt(z^2 - 1))`` with ``z`` clamped to ``>= 1``."""
    t = np.maximum(np.asarray(z, dtype=np.float64) - 1.0, 0.0)
    return np.log1p(t + np.sqrt(t * (t + 2.0)))


def artanh(r):
    r = np.asarray(r, dtype=np.float64)
    return 0.5 * np.log1p(2.0 * r / (1.0 - r))


def _gamma_minus_one(u, v):
    alpha = 1.0 - sqnorm(u)
    beta = 1.0 - sqnorm(v)
    return 2.0 * sqnorm(u - v) / (alpha * beta), alpha, beta


def distance(u, v, eps: float = EPS):
    """Hyperbolic distance ``arcosh(1 + 2|u-v|^2 / ((1-|u|^2)(1-|v|^2)))``."""
    u = check_ball(u, eps)
    v = check_ball(v, eps)
    gm1, _, _ = _gamma_minus_one(u, v)
    return arcosh(1.0 + gm1) if np.ndim(gm1) else float(arcosh(1.0 + gm1))


def metric_scale(x, eps: float = EPS):
    """Conformal factor ``(2 / (1 - |x|^2))^2``."""
    x = check_ball(x, eps)
    out = (2.0 / (1.0 - sqnorm(x))) ** 2
    return out if np.ndim(out) else float(out)


def riemannian_rescale(x, euclidean_grad, eps: float = EPS) -> np.ndarray:
    """Apply the inverse metric: ``(1 - |x|^2)^2 / 4 * grad``."""
    x = check_ball(x, eps)
    g = np.asarray(euclidean_grad, dtype=np.float64)
    return ((1.0 - sqnorm(x)) ** 2 / 4.0)[..., None] * g


def project_to_ball(x, eps: float = EPS) -> np.ndarray:
    """Radially shrink points with ``|x| > 1 - eps`` onto the sphere of radius ``1 - eps``."""
    x = _as_points(x)
    norms = np.sqrt(sqnorm(x))[..., None]
    limit = 1.0 - eps
    over = norms > limit + _BALL_TOL
    if not np.any(over):
        return x.copy()
    scale = np.where(over, limit / np.where(over, norms, 1.0), 1.0)
    return x * scale


def distance_grad_unchecked(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distances and Euclidean gradients wrt ``u`` and ``v``; broadcasts over leading axes.

    No containment checks; coincident points get a zero gradient instead of an
    error. Used by the training loop, where inputs are already projected.
    """
    su = sqnorm(u)
    sv = sqnorm(v)
    uv = np.einsum("...i,...i->...", u, v)
    alpha = 1.0 - su
    beta = 1.0 - sv
    gm1 = 2.0 * sqnorm(u - v) / (alpha * beta)
    # gamma^2 - 1 = (gamma - 1)(gamma + 1), avoids cancellation for close points
    root = np.sqrt(gm1 * (gm1 + 2.0))
    dist = np.log1p(gm1 + root)
    safe = root > 0
    coef = np.where(safe, 4.0 / np.where(safe, root, 1.0), 0.0)
    cu = (coef / beta)[..., None]
    cv = (coef / alpha)[..., None]
    gu = cu * (((sv - 2.0 * uv + 1.0) / alpha**2)[..., None] * u - v / alpha[..., None])
    gv = cv * (((su - 2.0 * uv + 1.0) / beta**2)[..., None] * v - u / beta[..., None])
    return dist, gu, gv


def distance_grad(u, v, eps: float = EPS) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean gradient of ``distance(u, v)`` with respect to ``u`` and to ``v``."""
    u = check_ball(u, eps)
    v = check_ball(v, eps)
    if np.any(np.all(u == v, axis=-1)):
        raise DomainError("distance is not differentiable at u == v")
    _, gu, gv = distance_grad_unchecked(u, v)
    return gu, gv


def log_map_origin(y, eps: float = EPS) -> np.ndarray:
    """Tangent vector at the origin with ``|log0(y)| == distance(0, y)``."""
    y = check_ball(y, eps)
    r = np.sqrt(sqnorm(y))[..., None]
    nz = r > 0
    scale = np.where(nz, 2.0 * artanh(np.where(nz, r, 0.5)) / np.where(nz, r, 1.0), 0.0)
    return scale * y
