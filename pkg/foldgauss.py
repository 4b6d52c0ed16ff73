#!/usr/bin/env python3
"""
Folded-Gaussian math: densities, conditioning, sampling, and numerical checks.

A Folded-Gaussian component lives in space-time (s, t), s in R^2. Its time
marginal is N(m_t, sigma_t^2); given t, space is Gaussian with mean
m_s + f(m_t - t) and covariance a(t) * Sigma_s, where f is a polynomial
shift with f(0) = 0 and a(t) = exp(-(t - m_t)^2 / (2 sigma_t^2)).
The joint is not Gaussian.

Everything here is a pure function; random draws take an explicit
numpy Generator.

Usage:
  python3 foldgauss.py              # Print normalization checks for a random component
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from errors import DomainError

# Gauss-Hermite order used by the verification helpers
QUADRATURE_POINTS = 64

LOG_2PI = math.log(2.0 * math.pi)


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise DomainError(f"non-finite input: {v!r}")


# === Types ===

@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    var: float

    def __post_init__(self):
        _check_finite(self.mean, self.var)
        if self.var <= 0:
            raise DomainError(f"variance must be positive, got {self.var}")


@dataclass(frozen=True)
class SpatialCov2:
    """Rotated anisotropic covariance R(theta) diag(s1^2, s2^2) R(theta)^T."""
    theta: float
    s1: float
    s2: float

    def __post_init__(self):
        _check_finite(self.theta, self.s1, self.s2)
        if self.s1 <= 0 or self.s2 <= 0:
            raise DomainError(f"scales must be positive, got ({self.s1}, {self.s2})")

    def rotation(self):
        return rotation_matrix(self.theta)

    def matrix(self):
        R = self.rotation()
        return R @ np.diag([self.s1 ** 2, self.s2 ** 2]) @ R.T


@dataclass(frozen=True)
class PolyShift:
    """f(u) = sum_{p=1..P} (cx_p, cy_p) u^p. No constant term."""
    coeffs_x: tuple = ()
    coeffs_y: tuple = ()

    def __post_init__(self):
        if len(self.coeffs_x) != len(self.coeffs_y):
            raise DomainError("coeffs_x and coeffs_y must have the same degree")
        _check_finite(np.asarray(self.coeffs_x, dtype=float), np.asarray(self.coeffs_y, dtype=float))

    @property
    def degree(self):
        return len(self.coeffs_x)

    def coeffs(self):
        """(2, P) array."""
        return np.array([self.coeffs_x, self.coeffs_y], dtype=float).reshape(2, self.degree)

    def eval(self, u):
        """Evaluate at scalar or array u; returns (..., 2)."""
        return poly_eval(self.coeffs(), np.asarray(u, dtype=float))

    def derivative(self, u):
        return poly_derivative(self.coeffs(), np.asarray(u, dtype=float))


@dataclass(frozen=True)
class FoldedGaussian3D:
    m_s: tuple
    cov_s: SpatialCov2
    m_t: float
    sigma_t: float
    poly: PolyShift = field(default_factory=PolyShift)
    opacity: float = 0.5
    color: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        _check_finite(np.asarray(self.m_s, dtype=float), self.m_t, self.sigma_t)
        if len(self.m_s) != 2:
            raise DomainError(f"m_s must be a 2-vector, got {self.m_s!r}")
        if self.sigma_t <= 0:
            raise DomainError(f"sigma_t must be positive, got {self.sigma_t}")
        if not 0.0 < self.opacity < 1.0:
            raise DomainError(f"opacity must be in (0,1), got {self.opacity}")
        if len(self.color) != 3 or any(c < 0.0 or c > 1.0 for c in self.color):
            raise DomainError(f"color must be an RGB triple in [0,1], got {self.color!r}")

    @property
    def mean_s(self):
        return np.asarray(self.m_s, dtype=float)


@dataclass(frozen=True)
class ConditionedGaussian2D:
    """Flat Gaussian N(mean, scale * cov.matrix()) with opacity and colour."""
    mean: tuple
    cov: SpatialCov2
    scale: float
    opacity: float
    color: tuple

    def matrix(self):
        return self.scale * self.cov.matrix()

    def pdf(self, s):
        return np.exp(self.logpdf(s))

    def logpdf(self, s):
        if not self.scale > 0:
            raise DomainError(f"collapsed Gaussian (scale {self.scale}) has no density")
        s = np.asarray(s, dtype=float) - np.asarray(self.mean, dtype=float)
        return _gauss2d_logpdf(s, self.cov, math.log(self.scale))


# === Small helpers ===

def rotation_matrix(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def poly_eval(coeffs, u):
    """Horner evaluation of sum_p c_p u^p (p = 1..P) for coeffs (..., 2, P).

    u broadcasts against the leading dims of coeffs; result is (..., 2).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    u = np.asarray(u, dtype=float)[..., None]
    acc = np.zeros(np.broadcast_shapes(coeffs.shape[:-1], u.shape))
    for p in range(coeffs.shape[-1] - 1, -1, -1):
        acc = acc * u + coeffs[..., p]
    return acc * u


def poly_derivative(coeffs, u):
    """d/du of poly_eval, same shapes."""
    coeffs = np.asarray(coeffs, dtype=float)
    u = np.asarray(u, dtype=float)[..., None]
    P = coeffs.shape[-1]
    acc = np.zeros(np.broadcast_shapes(coeffs.shape[:-1], u.shape))
    for p in range(P - 1, -1, -1):
        acc = acc * u + (p + 1) * coeffs[..., p]
    return acc


def _log_a(t, m_t, sigma_t):
    return -(np.asarray(t, dtype=float) - m_t) ** 2 / (2.0 * sigma_t ** 2)


def _mahalanobis2(d, cov, log_scale):
    """d^T (exp(log_scale) * cov.matrix())^-1 d for offsets d (..., 2).

    The scale enters only through log_scale, so d = 0 gives exactly 0 even
    when the scale itself underflows.
    """
    d = np.asarray(d, dtype=float)
    c, sn = math.cos(cov.theta), math.sin(cov.theta)
    u1 = d[..., 0] * c + d[..., 1] * sn
    u2 = -d[..., 0] * sn + d[..., 1] * c
    with np.errstate(over='ignore', invalid='ignore'):
        inv_root = np.exp(-0.5 * np.asarray(log_scale, dtype=float))
        z1 = np.where(u1 == 0.0, 0.0, u1 * inv_root) / cov.s1
        z2 = np.where(u2 == 0.0, 0.0, u2 * inv_root) / cov.s2
        return z1 ** 2 + z2 ** 2


def _gauss2d_logpdf(d, cov, log_scale):
    """log N(0, exp(log_scale) * cov.matrix()) at offsets d (..., 2)."""
    q = _mahalanobis2(d, cov, log_scale)
    return -0.5 * q - log_scale - math.log(cov.s1) - math.log(cov.s2) - LOG_2PI


# === Operations ===

def gauss1d_pdf(x, g):
    """(2 pi var)^(-1/2) exp(-(x - mean)^2 / (2 var))."""
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite x: {x!r}")
    if not (g.var > 0):
        raise DomainError(f"variance must be positive, got {g.var}")
    x = np.asarray(x, dtype=float)
    return np.exp(-(x - g.mean) ** 2 / (2.0 * g.var)) / np.sqrt(2.0 * math.pi * g.var)


def a_of_t(t, m_t, sigma_t):
    """Temporal likelihood scaled to peak 1: exp(-(t - m_t)^2 / (2 sigma_t^2))."""
    if not (sigma_t > 0):
        raise DomainError(f"sigma_t must be positive, got {sigma_t}")
    t = np.asarray(t, dtype=float)
    return np.exp(-(t - m_t) ** 2 / (2.0 * sigma_t ** 2))


def condition_at(fg, t):
    """Slice a component at time t into the flat Gaussian rendered for that frame."""
    _check_finite(t)
    shift = fg.poly.eval(fg.m_t - t) if fg.poly.degree else np.zeros(2)
    mean = fg.mean_s + shift
    scale = float(a_of_t(t, fg.m_t, fg.sigma_t))
    return ConditionedGaussian2D(
        mean=(float(mean[0]), float(mean[1])),
        cov=fg.cov_s,
        scale=scale,
        opacity=fg.opacity,
        color=tuple(fg.color),
    )


def _slice_mean(fg, t):
    return fg.mean_s + (fg.poly.eval(fg.m_t - np.asarray(t, dtype=float)) if fg.poly.degree else 0.0)


def _log_density_offset(fg, d, t):
    """log density at s = slice mean + d.

    The a(t) of the conditional normalizer cancels the one in the time
    marginal, so a(t) only reaches the quadratic form.
    """
    q = _mahalanobis2(d, fg.cov_s, _log_a(t, fg.m_t, fg.sigma_t))
    return (-0.5 * q - math.log(fg.cov_s.s1) - math.log(fg.cov_s.s2) - LOG_2PI
            - 0.5 * math.log(2.0 * math.pi * fg.sigma_t ** 2))


def fg_log_density(fg, s, t):
    """log of the Folded-Gaussian density; s (..., 2), t broadcastable to s[..., 0]."""
    s = np.asarray(s, dtype=float)
    return _log_density_offset(fg, s - _slice_mean(fg, t), t)


def fg_density(fg, s, t):
    """N(m_s + f(m_t - t), a(t) Sigma_s)(s) * N(m_t, sigma_t^2)(t)."""
    return np.exp(fg_log_density(fg, s, t))


def fold_transform(fg, s, t):
    """Map samples of N(m_s, Sigma_s) to the slice at t:
    s -> sqrt(a(t)) (s - m_s) + m_s + f(m_t - t).
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    root_a = np.sqrt(a_of_t(t, fg.m_t, fg.sigma_t))[..., None]
    shift = fg.poly.eval(fg.m_t - t) if fg.poly.degree else 0.0
    return root_a * (s - fg.mean_s) + fg.mean_s + shift


def fg_sample(fg, rng, size=None):
    """Draw (s, t) by the chain rule: t ~ N(m_t, sigma_t^2), then s | t.

    size=None returns one draw (s: (2,), t: float); otherwise arrays of
    shape (size, 2) and (size,).
    """
    n = 1 if size is None else int(size)
    t = fg.m_t + fg.sigma_t * rng.standard_normal(n)
    z = rng.standard_normal((n, 2))
    L = fg.cov_s.rotation() @ np.diag([fg.cov_s.s1, fg.cov_s.s2])
    s = fold_transform(fg, fg.mean_s + z @ L.T, t)
    if size is None:
        return s[0], float(t[0])
    return s, t


def normalization_estimate(fg, n_samples, rng):
    """Importance-sampled estimate of the total integral of fg_density.

    Proposal: t ~ N(m_t, (2 sigma_t)^2), s | t ~ N(m_{s|t}, 2 a(t) Sigma_s).
    Returns (estimate, standard_error).
    """
    if n_samples < 10_000:
        raise DomainError(f"n_samples must be >= 1e4, got {n_samples}")
    t = fg.m_t + 2.0 * fg.sigma_t * rng.standard_normal(n_samples)
    cond_mean = fg.mean_s + (fg.poly.eval(fg.m_t - t) if fg.poly.degree else 0.0)
    log_a = -(t - fg.m_t) ** 2 / (2.0 * fg.sigma_t ** 2)
    L = fg.cov_s.rotation() @ np.diag([fg.cov_s.s1, fg.cov_s.s2])
    z = rng.standard_normal((n_samples, 2))
    s = cond_mean + np.sqrt(2.0 * np.exp(log_a))[:, None] * (z @ L.T)

    # log q(s, t)
    log_q_t = -0.5 * ((t - fg.m_t) / (2.0 * fg.sigma_t)) ** 2 - 0.5 * math.log(2.0 * math.pi * 4.0 * fg.sigma_t ** 2)
    log_q_s = (-0.5 * np.sum(z ** 2, axis=1) - math.log(2.0) - log_a
               - math.log(fg.cov_s.s1) - math.log(fg.cov_s.s2) - LOG_2PI)
    w = np.exp(fg_log_density(fg, s, t) - log_q_t - log_q_s)
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(n_samples))


def _hermite_nodes(n):
    x, w = np.polynomial.hermite.hermgauss(n)
    return x, w


def log_slice_integral(fg, t, n_points=QUADRATURE_POINTS):
    """log of the integral over s of fg_density(s, t), by 2D Gauss-Hermite
    quadrature in the coordinates of the conditioned Gaussian.

    Nodes are offsets from the slice mean, so narrow slices far from m_t
    keep their resolution.
    """
    x, w = _hermite_nodes(n_points)
    X1, X2 = np.meshgrid(x, x, indexing='ij')
    log_a = float(_log_a(t, fg.m_t, fg.sigma_t))
    root_a = math.exp(0.5 * log_a)
    if root_a == 0.0:
        raise DomainError(f"slice at t={t} is narrower than float64 resolution")
    L = root_a * (fg.cov_s.rotation() @ np.diag([fg.cov_s.s1, fg.cov_s.s2]))
    d = (np.stack([X1, X2], axis=-1) * math.sqrt(2.0)) @ L.T
    log_jac = math.log(2.0) + log_a + math.log(fg.cov_s.s1) + math.log(fg.cov_s.s2)
    log_vals = _log_density_offset(fg, d, t) + X1 ** 2 + X2 ** 2
    return float(logsumexp(log_vals, b=np.outer(w, w)) + log_jac)


def slice_integral(fg, t, n_points=QUADRATURE_POINTS):
    return math.exp(log_slice_integral(fg, t, n_points))


def normalization_quadrature(fg, n_points=QUADRATURE_POINTS):
    """Total integral of fg_density by tensor Gauss-Hermite quadrature
    (outer over t, inner over s given t)."""
    x, w = _hermite_nodes(n_points)
    total = 0.0
    for xi, wi in zip(x, w):
        t = fg.m_t + math.sqrt(2.0) * fg.sigma_t * xi
        inner = slice_integral(fg, t, n_points)
        total += wi * inner * math.exp(xi ** 2) * math.sqrt(2.0) * fg.sigma_t
    return total


def conditional_consistency(fg, s, t, n_points=QUADRATURE_POINTS):
    """|fg_density(s,t) / integral_s fg_density(., t) - condition_at(fg, t).pdf(s)|.

    The ratio is taken in log space; both sides underflow together far from m_t.
    """
    log_ratio = fg_log_density(fg, s, t) - log_slice_integral(fg, t, n_points)
    cond = condition_at(fg, t)
    if cond.scale > 0:
        log_cond = cond.logpdf(s)
    else:
        d = np.asarray(s, dtype=float) - np.asarray(cond.mean)
        log_cond = _gauss2d_logpdf(d, fg.cov_s, _log_a(t, fg.m_t, fg.sigma_t))
    return float(abs(np.exp(log_ratio) - np.exp(log_cond)))


def random_component(rng, degree=7, poly_scale=1.0):
    """A random valid component; used by the verification helpers and tests."""
    P = degree
    return FoldedGaussian3D(
        m_s=tuple(rng.uniform(-1.0, 1.0, 2)),
        cov_s=SpatialCov2(theta=float(rng.uniform(0, 2 * math.pi)),
                          s1=float(rng.uniform(0.05, 0.5)), s2=float(rng.uniform(0.05, 0.5))),
        m_t=float(rng.uniform(0, 1)),
        sigma_t=float(rng.uniform(0.01, 1.0)),
        poly=PolyShift(tuple(rng.uniform(-poly_scale, poly_scale, P)),
                       tuple(rng.uniform(-poly_scale, poly_scale, P))),
        opacity=float(rng.uniform(0.05, 0.95)),
        color=tuple(rng.uniform(0, 1, 3)),
    )


if __name__ == '__main__':
    rng = np.random.default_rng(0)
    fg = random_component(rng)

    print("=" * 50)
    print("FOLDED-GAUSSIAN CHECKS")
    print("=" * 50)
    print(f"m_s={fg.m_s}  m_t={fg.m_t:.3f}  sigma_t={fg.sigma_t:.3f}  degree={fg.poly.degree}")
    est, se = normalization_estimate(fg, 1_000_000, rng)
    print(f"  → MC integral: {est:.6f} ± {se:.6f}")
    print(f"  → quadrature integral: {normalization_quadrature(fg):.10f}")
    s, t = fg_sample(fg, rng)
    print(f"  → consistency residual at sample: {conditional_consistency(fg, s, t):.3e}")
