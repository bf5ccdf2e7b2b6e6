"""Image quality metrics and closed-form Gaussian oracles.

The oracles instantiate the split model with a Gaussian prior on the
latent image, ``z ~ N(mu, tau2 I)``, ``x | z ~ N(z, rho I)`` and
``y | x ~ N(A x, sigma^2 I)``, for which every posterior and marginal
quantity is available by dense linear algebra. They are meant for images of
at most 32 x 32 pixels per channel.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.signal import convolve2d

from .errors import CapabilityError, ConfigError, ShapeError
from .operators import as_matrix

PSNR_CAP = 100.0
DENSE_LIMIT = 3 * 32 * 32


def psnr(x, reference, peak=1.0):
    """Peak signal-to-noise ratio in dB; identical inputs give ``PSNR_CAP``."""
    x = np.asarray(x, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if x.shape != reference.shape:
        raise ShapeError(f"psnr inputs differ in shape: {x.shape} vs {reference.shape}")
    if not peak > 0:
        raise ConfigError("peak must be > 0")
    mse = float(np.mean((x - reference) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse))


def format_db(value):
    return f"{value:.2f}"


def _ssim_window(size=11, std=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * std**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, reference, data_range=1.0, k1=0.01, k2=0.03, window=11, std=1.5):
    """Mean structural similarity over all valid 11x11 Gaussian windows."""
    x = np.asarray(x, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if x.shape != reference.shape:
        raise ShapeError(f"ssim inputs differ in shape: {x.shape} vs {reference.shape}")
    if x.ndim == 2:
        x, reference = x[None], reference[None]
    if min(x.shape[-2:]) < window:
        raise ShapeError(f"ssim needs images of at least {window}x{window}")
    w = _ssim_window(window, std)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for a, b in zip(x, reference):
        f = lambda im: convolve2d(im, w, mode="valid")  # noqa: E731
        mu_a, mu_b = f(a), f(b)
        saa = f(a * a) - mu_a**2
        sbb = f(b * b) - mu_b**2
        sab = f(a * b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def metric_report(x, reference):
    return {"psnr": psnr(x, reference), "ssim": ssim(x, reference)}


@dataclass(frozen=True)
class GaussianConjugateModel:
    """Fully Gaussian split model. ``prior_var`` is the latent variance ``tau2``."""

    operator: object
    sigma: float
    prior_mean: np.ndarray
    prior_var: float
    rho: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.prior_var > 0 and self.rho > 0):
            raise ConfigError("sigma, prior_var and rho must be > 0")

    @property
    def shape(self):
        return np.shape(self.prior_mean)

    def with_rho(self, rho):
        return GaussianConjugateModel(self.operator, self.sigma, self.prior_mean, self.prior_var, rho)

    def dense(self):
        """``(A, mu)`` as a dense matrix and flat vector."""
        n = int(np.prod(self.shape))
        if n > DENSE_LIMIT:
            raise CapabilityError(
                f"dense oracle limited to {DENSE_LIMIT} unknowns (got {n}); subsample the image grid"
            )
        return _dense_operator(self.operator, self.shape), np.asarray(self.prior_mean, dtype=np.float64).ravel()

    def sample(self, rng):
        """Draw ``(z, x, y)`` from the generative model."""
        mu = np.asarray(self.prior_mean, dtype=np.float64)
        z = mu + np.sqrt(self.prior_var) * rng.normal(mu.shape)
        x = z + np.sqrt(self.rho) * rng.normal(mu.shape)
        ax = self.operator.apply(x)
        y = ax + self.sigma * rng.normal(ax.shape)
        return z, x, y


_dense_cache = {}


def _dense_operator(op, shape):
    key = (id(op), tuple(shape))
    hit = _dense_cache.get(key)
    if hit is not None and hit[0] is op:
        return hit[1]
    mat = as_matrix(op, shape)
    if len(_dense_cache) > 16:
        _dense_cache.clear()
    _dense_cache[key] = (op, mat)
    return mat


def conjugate_posterior_mean(m, y):
    """Posterior mean of x given y with z marginalised (prior N(mu, (tau2 + rho) I))."""
    a, mu = m.dense()
    s2 = m.sigma**2
    v = m.prior_var + m.rho
    lhs = a.T @ a / s2 + np.eye(a.shape[1]) / v
    rhs = a.T @ np.ravel(y) / s2 + mu / v
    return linalg.solve(lhs, rhs, assume_a="pos").reshape(m.shape)


def conjugate_log_posterior(m, y, x):
    """Unnormalised log p(x | y) for the marginalised prior (for stationarity checks)."""
    a, mu = m.dense()
    r = np.ravel(y) - a @ np.ravel(x)
    dx = np.ravel(x) - mu
    return -0.5 * r @ r / m.sigma**2 - 0.5 * dx @ dx / (m.prior_var + m.rho)


_gram_cache = {}


def _gram(a):
    hit = _gram_cache.get(id(a))
    if hit is not None and hit[0] is a:
        return hit[1]
    if len(_gram_cache) > 16:
        _gram_cache.clear()
    aat = a @ a.T
    _gram_cache[id(a)] = (a, aat)
    return aat


def _marginal_cov(m):
    a, mu = m.dense()
    cov = m.sigma**2 * np.eye(a.shape[0]) + (m.prior_var + m.rho) * _gram(a)
    return a, mu, cov


def marginal_log_likelihood_rho(m, y):
    """``log N(y; A mu, sigma^2 I + (tau2 + rho) A A^T)``."""
    a, mu, cov = _marginal_cov(m)
    r = np.ravel(y) - a @ mu
    chol = linalg.cho_factor(cov, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
    quad = r @ linalg.cho_solve(chol, r)
    return float(-0.5 * (quad + logdet + r.size * np.log(2 * np.pi)))


def marginal_log_likelihood_rho_grad(m, y):
    """Analytic d/drho: ``-tr(S^-1 AA^T)/2 + r^T S^-1 AA^T S^-1 r / 2``."""
    a, mu, cov = _marginal_cov(m)
    r = np.ravel(y) - a @ mu
    aat = _gram(a)
    chol = linalg.cho_factor(cov, lower=True)
    s_inv_aat = linalg.cho_solve(chol, aat)
    u = linalg.cho_solve(chol, r)
    return float(-0.5 * np.trace(s_inv_aat) + 0.5 * u @ aat @ u)


def mmle_rho(m, y, lo=1e-4, hi=1.0, n_grid=50, refine=True):
    """Maximiser of ``rho -> log p(y | rho)``: log-spaced grid, then bounded refinement.

    Returns ``(rho_hat, grid, loglik)``.
    """
    grid = np.logspace(np.log10(lo), np.log10(hi), n_grid)
    ll = np.array([marginal_log_likelihood_rho(m.with_rho(r), y) for r in grid])
    i = int(np.argmax(ll))
    best = grid[i]
    if refine:
        a = np.log(grid[max(i - 1, 0)])
        b = np.log(grid[min(i + 1, n_grid - 1)])
        res = optimize.minimize_scalar(
            lambda t: -marginal_log_likelihood_rho(m.with_rho(np.exp(t)), y),
            bounds=(a, b), method="bounded", options={"xatol": 1e-8},
        )
        if -res.fun >= ll[i]:
            best = float(np.exp(res.x))
    return float(best), grid, ll


def marginal_likelihood_score(op, y, sigma, rho, z):
    """Dense ``grad_z log N(y; A z, sigma^2 I + rho A A^T) = A^T S^-1 (y - A z)``."""
    shape = np.shape(z)
    a = _dense_operator(op, shape)
    cov = sigma**2 * np.eye(a.shape[0]) + rho * (a @ a.T)
    r = np.ravel(y) - a @ np.ravel(z)
    return (a.T @ linalg.solve(cov, r, assume_a="pos")).reshape(shape)


def fd_gradient(f, point, h=1e-5):
    """Central-difference gradient of a scalar function at a scalar or array point."""
    if not h > 0:
        raise ConfigError("h must be > 0")
    if np.isscalar(point) or np.ndim(point) == 0:
        p = float(point)
        return (f(p + h) - f(p - h)) / (2 * h)
    p = np.array(point, dtype=np.float64)
    grad = np.empty_like(p)
    for i in range(p.size):
        old = p.flat[i]
        p.flat[i] = old + h
        fp = f(p)
        p.flat[i] = old - h
        fm = f(p)
        p.flat[i] = old
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad
