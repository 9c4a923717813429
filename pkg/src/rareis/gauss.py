"""Dense multivariate Gaussian primitives.

Densities, sampling, rectangle probabilities and first/second moments of
rectangle-truncated Gaussians.  Everything here is deterministic given its
inputs; sampling routines take an explicit numpy Generator.
"""

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

_LOG_2PI = np.log(2.0 * np.pi)

# Fixed point count for the quasi-random rectangle-probability integration.
# Seedless and reproducible; accuracy degrades above d ~ 10.
QMC_POINTS = 2 ** 14

MAX_RECT_DIM = 10


class DegenerateTruncationError(RuntimeError):
    """Raised when a truncation region carries (numerically) no mass."""


class Rect:
    """Axis-aligned hyper-rectangle with possibly infinite bounds."""

    def __init__(self, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError("require lower[i] < upper[i] for all i")
        self.lower = lower
        self.upper = upper

    @property
    def dim(self):
        return self.lower.size

    def is_unbounded(self):
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))

    def contains(self, x):
        """Pointwise membership; x may be a vector or an (n, d) matrix."""
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    @classmethod
    def unbounded(cls, d):
        return cls(np.full(d, -np.inf), np.full(d, np.inf))

    def __repr__(self):
        return "Rect(lower=%s, upper=%s)" % (self.lower.tolist(), self.upper.tolist())


class GaussComponent:
    """A single Gaussian N(mean, cov) with a cached Cholesky factor.

    The covariance is symmetrized before factorization; EM updates can
    accumulate small asymmetries.
    """

    def __init__(self, mean, cov):
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean must be a d-vector and cov a d x d matrix")
        sym_err = np.abs(cov - cov.T).max()
        scale = max(np.abs(cov).max(), 1.0)
        if sym_err > 1e-12 * scale * 1e4:
            raise ValueError("covariance is not symmetric (max asymmetry %.3g)" % sym_err)
        cov = 0.5 * (cov + cov.T)
        self.mean = mean
        self.cov = cov
        self.chol = np.linalg.cholesky(cov)

    @property
    def dim(self):
        return self.mean.size

    def log_det_cov(self):
        return 2.0 * np.sum(np.log(np.diag(self.chol)))


def log_density(x, c):
    """Log density of N(mean, cov) at x (vector) or each row of x (matrix).

    Uses the Cholesky factor; never forms the covariance inverse.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if x.shape[-1] != c.dim:
        raise ValueError("dimension mismatch: x has %d coordinates, component has %d"
                         % (x.shape[-1], c.dim))
    dev = np.atleast_2d(x) - c.mean
    w = _solve_lower(c.chol, dev.T)
    quad = np.sum(w * w, axis=0)
    out = -0.5 * (c.dim * _LOG_2PI + c.log_det_cov() + quad)
    return float(out[0]) if single else out


def _solve_lower(L, b):
    from scipy.linalg import solve_triangular
    return solve_triangular(L, b, lower=True, check_finite=False)


def sample(n, c, rng):
    """n i.i.d. draws from N(mean, cov) via mean + chol @ z."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = rng.standard_normal((n, c.dim))
    return c.mean + z @ c.chol.T


_sobol_cache = {}


def _sobol_points(d, n):
    key = (d, n)
    if key not in _sobol_cache:
        eng = qmc.Sobol(d, scramble=False)
        pts = eng.random(n)
        # nudge off exact 0 so inverse-CDF stays finite
        _sobol_cache[key] = np.clip(pts, 1e-12, 1 - 1e-12)
    return _sobol_cache[key]


def _rect_prob_zero(cov, a, b, n_points=QMC_POINTS):
    """P(a <= Y <= b) for Y ~ N(0, cov), sequential-conditioning QMC."""
    d = a.size
    if d == 0:
        return 1.0
    L = np.linalg.cholesky(0.5 * (cov + cov.T))
    lo0 = ndtr(a[0] / L[0, 0])
    hi0 = ndtr(b[0] / L[0, 0])
    if d == 1:
        return float(hi0 - lo0)
    w = _sobol_points(d - 1, n_points)
    n = n_points
    f = np.full(n, hi0 - lo0)
    lo = np.full(n, lo0)
    hi = np.full(n, hi0)
    y = np.empty((n, d - 1))
    for i in range(1, d):
        u = lo + w[:, i - 1] * (hi - lo)
        y[:, i - 1] = ndtri(np.clip(u, 1e-15, 1 - 1e-15))
        shift = y[:, :i] @ L[i, :i]
        lo = ndtr((a[i] - shift) / L[i, i])
        hi = ndtr((b[i] - shift) / L[i, i])
        f *= hi - lo
    return float(np.mean(f))


def rect_prob(c, r):
    """P(lower <= X <= upper) for X ~ N(mean, cov).

    Deterministic quasi-random integration with a fixed point count; relative
    accuracy ~1e-4 or better at d <= 4, degrading toward d = 10 (documented
    limit).  Returns exactly 1.0 for an unbounded rectangle.
    """
    if r.dim != c.dim:
        raise ValueError("rectangle and component dimension mismatch")
    if c.dim > MAX_RECT_DIM:
        raise ValueError("rect_prob supports d <= %d" % MAX_RECT_DIM)
    if r.is_unbounded():
        return 1.0
    p = _rect_prob_zero(c.cov, r.lower - c.mean, r.upper - c.mean)
    if p < 1e-300:
        raise DegenerateTruncationError(
            "rectangle probability underflow: numerically zero region")
    return min(p, 1.0)


def _phi1(x, var):
    return np.exp(-0.5 * x * x / var) / np.sqrt(2.0 * np.pi * var)


def _phi2(x, y, cov2):
    det = cov2[0, 0] * cov2[1, 1] - cov2[0, 1] ** 2
    quad = (cov2[1, 1] * x * x - 2.0 * cov2[0, 1] * x * y + cov2[0, 0] * y * y) / det
    return np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))


def _edge_density(cov, a, b, k, x):
    """phi(x; cov_kk) times the (d-1)-dim conditional rectangle probability."""
    if not np.isfinite(x):
        return 0.0
    d = a.size
    rest = [i for i in range(d) if i != k]
    dens = _phi1(x, cov[k, k])
    if dens == 0.0 or not rest:
        return float(dens)
    cond_mean = cov[rest, k] * (x / cov[k, k])
    cond_cov = cov[np.ix_(rest, rest)] - np.outer(cov[rest, k], cov[rest, k]) / cov[k, k]
    p = _rect_prob_zero(cond_cov, a[rest] - cond_mean, b[rest] - cond_mean)
    return float(dens * max(p, 0.0))


def _pair_density(cov, a, b, k, q, x, y):
    """phi2((x,y); cov_{kq}) times the (d-2)-dim conditional rectangle probability."""
    if not (np.isfinite(x) and np.isfinite(y)):
        return 0.0
    d = a.size
    pair = [k, q]
    rest = [i for i in range(d) if i not in pair]
    cov_p = cov[np.ix_(pair, pair)]
    dens = _phi2(x, y, cov_p)
    if dens == 0.0 or not rest:
        return float(dens)
    sol = np.linalg.solve(cov_p, np.array([x, y]))
    cond_mean = cov[np.ix_(rest, pair)] @ sol
    cond_cov = (cov[np.ix_(rest, rest)]
                - cov[np.ix_(rest, pair)] @ np.linalg.solve(cov_p, cov[np.ix_(pair, rest)]))
    p = _rect_prob_zero(cond_cov, a[rest] - cond_mean, b[rest] - cond_mean)
    return float(dens * max(p, 0.0))


def _xF(x, F):
    # x * F with the convention inf * 0 = 0 (F decays faster than x grows)
    return 0.0 if F == 0.0 else x * F


def _trunc_moments_zero(cov, a, b):
    """First and raw second moment of N(0, cov) truncated to [a, b]."""
    d = a.size
    alpha = _rect_prob_zero(cov, a, b)
    if alpha < 1e-12:
        raise DegenerateTruncationError(
            "truncation mass %.3g below 1e-12; moments unreliable" % alpha)
    Fa = np.array([_edge_density(cov, a, b, k, a[k]) for k in range(d)])
    Fb = np.array([_edge_density(cov, a, b, k, b[k]) for k in range(d)])
    m1 = cov @ (Fa - Fb) / alpha

    m2 = np.array(cov, copy=True)
    for k in range(d):
        t = np.zeros(d)
        edge = _xF(a[k], Fa[k]) - _xF(b[k], Fb[k])
        t += (cov[:, k] / cov[k, k]) * edge
        for q in range(d):
            if q == k:
                continue
            d2 = (_pair_density(cov, a, b, k, q, a[k], a[q])
                  - _pair_density(cov, a, b, k, q, a[k], b[q])
                  - _pair_density(cov, a, b, k, q, b[k], a[q])
                  + _pair_density(cov, a, b, k, q, b[k], b[q]))
            t += (cov[:, q] - cov[:, k] * (cov[k, q] / cov[k, k])) * d2
        m2 += np.outer(cov[:, k], t) / alpha
    m2 = 0.5 * (m2 + m2.T)
    return m1, m2


def _trunc_moments_1d(var, a, b):
    s = np.sqrt(var)
    za, zb = a / s, b / s
    alpha = ndtr(zb) - ndtr(za)
    if alpha < 1e-12:
        raise DegenerateTruncationError("1-d truncation mass %.3g below 1e-12" % alpha)
    pa = 0.0 if not np.isfinite(za) else np.exp(-0.5 * za * za) / np.sqrt(2 * np.pi)
    pb = 0.0 if not np.isfinite(zb) else np.exp(-0.5 * zb * zb) / np.sqrt(2 * np.pi)
    m1 = s * (pa - pb) / alpha
    edge = (0.0 if pa == 0.0 else za * pa) - (0.0 if pb == 0.0 else zb * pb)
    m2 = var * (1.0 + edge / alpha)
    return np.array([m1]), np.array([[m2]])


def trunc_moments(c, r):
    """First moment and raw second moment of N(mean, cov) truncated to r.

    Computed through the standard recursion expressing truncated-normal
    moments via lower-dimensional rectangle probabilities; closed form at
    d = 1.  Raises DegenerateTruncationError when the truncation mass is
    below 1e-12.
    """
    if r.dim != c.dim:
        raise ValueError("rectangle and component dimension mismatch")
    if r.is_unbounded():
        return c.mean.copy(), c.cov + np.outer(c.mean, c.mean)
    a = r.lower - c.mean
    b = r.upper - c.mean
    if c.dim == 1:
        m1z, m2z = _trunc_moments_1d(c.cov[0, 0], a[0], b[0])
    else:
        m1z, m2z = _trunc_moments_zero(c.cov, a, b)
    m1 = c.mean + m1z
    m2 = m2z + np.outer(c.mean, m1z) + np.outer(m1z, c.mean) + np.outer(c.mean, c.mean)
    return m1, m2


def sample_truncated(n, c, r, rng, max_batches=10000):
    """Rejection sampling of N(mean, cov) conditioned on the rectangle.

    Plain rejection; viable only while the acceptance probability stays
    above ~1e-8.  Callers with thinner regions must reparameterize.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if r.is_unbounded():
        return sample(n, c, rng)
    p = rect_prob(c, r)
    if p < 1e-8:
        raise DegenerateTruncationError(
            "acceptance rate estimate %.3g below 1e-8: degenerate truncation; "
            "reparameterize instead of rejection sampling" % p)
    out = np.empty((n, c.dim))
    filled = 0
    batch = max(int(1.5 * n / p), n)
    batch = min(batch, 10_000_000)
    for _ in range(max_batches):
        cand = sample(batch, c, rng)
        keep = cand[r.contains(cand)]
        take = min(n - filled, keep.shape[0])
        out[filled:filled + take] = keep[:take]
        filled += take
        if filled == n:
            return out
    raise DegenerateTruncationError("rejection sampling failed to fill %d draws" % n)
