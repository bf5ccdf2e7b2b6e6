"""Linear measurement operators with circular boundaries.

Every operator maps ``(C, H, W)`` images to ``(C, H', W')`` measurements and
exposes ``apply``, ``adjoint`` and ``solve_regularized``; the latter solves

    (A^T A / sigma^2 + I / rho) x = r

which is all the latent-space sampler needs.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ShapeError, SolverError
from .rng import RngStream
from .tensor import as_image


def gaussian_kernel(size=7, bandwidth=3.0):
    """Truncated isotropic Gaussian PSF normalised to sum 1."""
    if size < 1 or bandwidth <= 0:
        raise ConfigError("kernel size must be >= 1 and bandwidth > 0")
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * bandwidth**2))
    return g / g.sum()


def motion_kernel(size=25, seed=0, steps=None, intensity=0.5):
    """Random camera-shake PSF built from a seeded smooth random walk.

    The walk has Gaussian accelerations with a pull back to the centre; its
    path is splatted bilinearly on a ``size x size`` grid and normalised.
    """
    rng = RngStream(seed)
    steps = steps or 4 * size
    centre = (size - 1) / 2.0
    pos = np.zeros(2)
    vel = rng.normal(2)
    vel /= np.linalg.norm(vel)
    k = np.zeros((size, size))
    limit = centre - 1.0
    for _ in range(steps):
        vel += intensity * rng.normal(2) - 0.05 * pos / max(limit, 1.0)
        vel /= max(np.linalg.norm(vel), 1e-12)
        pos = np.clip(pos + 0.5 * vel, -limit, limit)
        i, j = pos + centre
        i0, j0 = int(np.floor(i)), int(np.floor(j))
        di, dj = i - i0, j - j0
        for a, wa in ((0, 1 - di), (1, di)):
            for b, wb in ((0, 1 - dj), (1, dj)):
                if 0 <= i0 + a < size and 0 <= j0 + b < size:
                    k[i0 + a, j0 + b] += wa * wb
    return k / k.sum()


def random_mask(shape, rate, seed):
    """Binary keep-map dropping a fraction ``rate`` of the pixels."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("mask rate must lie in [0, 1)")
    u = RngStream(seed).uniform(shape)
    return (u >= rate).astype(np.float64)


def _check_kernel(kernel):
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2:
        raise ConfigError(f"kernel must be 2-D, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ConfigError("kernel has non-finite entries")
    s = k.sum()
    if abs(s - 1.0) > 1e-6:
        raise ConfigError(f"kernel must sum to 1 (sums to {s:.6g})")
    return k


@lru_cache(maxsize=32)
def _transfer(kernel_bytes, kshape, hw):
    """rfft2 of the kernel zero-padded to ``hw`` with its centre at the origin."""
    k = np.frombuffer(kernel_bytes, dtype=np.float64).reshape(kshape)
    h, w = hw
    if kshape[0] > h or kshape[1] > w:
        raise ShapeError(f"kernel {kshape} larger than image {hw}")
    pad = np.zeros(hw)
    pad[: kshape[0], : kshape[1]] = k
    pad = np.roll(pad, (-(kshape[0] // 2), -(kshape[1] // 2)), axis=(0, 1))
    out = np.fft.rfft2(pad)
    out.setflags(write=False)
    return out


class _Convolution:
    def __init__(self, kernel):
        self.kernel = _check_kernel(kernel)
        self.kernel.setflags(write=False)
        self._kbytes = self.kernel.tobytes()

    def transfer(self, hw):
        return _transfer(self._kbytes, self.kernel.shape, tuple(hw))

    def _conv(self, x, conj=False):
        hw = x.shape[-2:]
        tf = self.transfer(hw)
        if conj:
            tf = np.conj(tf)
        return np.fft.irfft2(np.fft.rfft2(x) * tf, s=hw)


class LinearOperator:
    """Base class; subclasses define the forward map and its adjoint."""

    kind = "abstract"

    def output_shape(self, shape):
        return tuple(shape)

    def input_shape(self, shape):
        return tuple(shape)

    def _check_in(self, x):
        x = as_image(x)
        self._validate_input(x.shape)
        return x

    def _validate_input(self, shape):
        pass

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, v):
        raise NotImplementedError

    def normal(self, x):
        return self.adjoint(self.apply(x))

    def solve_regularized(self, rhs, sigma2, rho, cfg=None):
        cfg = cfg or SolverConfig()
        return conjugate_gradient(
            lambda u: self.normal(u) / sigma2 + u / rho, rhs, cfg.cg_tol, cfg.cg_max_iter
        )

    def posterior_variance(self, shape, sigma2, rho, cfg=None):
        """Diagonal of ``(A^T A/sigma2 + I/rho)^-1`` on ``shape`` images (probing)."""
        out = np.empty(int(np.prod(shape)))
        e = np.zeros(shape)
        for i in range(out.size):
            e.flat[i] = 1.0
            out[i] = self.solve_regularized(e, sigma2, rho, cfg).flat[i]
            e.flat[i] = 0.0
        return out.reshape(shape)

    def describe(self):
        return {"kind": self.kind}


class Blur(LinearOperator, _Convolution):
    """Circular convolution with a normalised point-spread function."""

    kind = "blur"

    def __init__(self, kernel):
        _Convolution.__init__(self, kernel)

    def _validate_input(self, shape):
        if self.kernel.shape[0] > shape[-2] or self.kernel.shape[1] > shape[-1]:
            raise ShapeError(f"kernel {self.kernel.shape} larger than image {shape[-2:]}")

    def apply(self, x):
        return self._conv(self._check_in(x))

    def adjoint(self, v):
        return self._conv(self._check_in(v), conj=True)

    def solve_regularized(self, rhs, sigma2, rho, cfg=None):
        cfg = cfg or SolverConfig()
        if cfg.method in (None, "spectral"):
            rhs = self._check_in(rhs)
            hw = rhs.shape[-2:]
            tf = self.transfer(hw)
            denom = (tf.real**2 + tf.imag**2) / sigma2 + 1.0 / rho
            return np.fft.irfft2(np.fft.rfft2(rhs) / denom, s=hw)
        if cfg.method == "cg":
            return super().solve_regularized(rhs, sigma2, rho, cfg)
        raise ConfigError(f"solver method {cfg.method!r} not available for blur")

    def posterior_variance(self, shape, sigma2, rho, cfg=None):
        hw = tuple(shape[-2:])
        full = np.abs(np.fft.fft2(np.fft.irfft2(self.transfer(hw), s=hw))) ** 2
        return np.full(shape, np.mean(1.0 / (full / sigma2 + 1.0 / rho)))

    def describe(self):
        return {"kind": self.kind, "kernel_shape": list(self.kernel.shape)}


class Mask(LinearOperator):
    """Pointwise product with a binary keep-map (unobserved pixels set to 0)."""

    kind = "mask"

    def __init__(self, mask):
        m = np.asarray(mask, dtype=np.float64)
        if m.ndim not in (2, 3):
            raise ConfigError(f"mask must be 2-D or 3-D, got shape {m.shape}")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ConfigError("mask entries must be 0 or 1")
        self.mask = m.copy()
        self.mask.setflags(write=False)

    def _validate_input(self, shape):
        ms = self.mask.shape
        if ms[-2:] != tuple(shape[-2:]) or (len(ms) == 3 and ms[0] != shape[0]):
            raise ShapeError(f"mask shape {ms} incompatible with image shape {shape}")

    def apply(self, x):
        return self._check_in(x) * self.mask

    adjoint = apply

    def solve_regularized(self, rhs, sigma2, rho, cfg=None):
        cfg = cfg or SolverConfig()
        if cfg.method in (None, "diagonal"):
            return self._check_in(rhs) / (self.mask / sigma2 + 1.0 / rho)
        if cfg.method == "cg":
            return super().solve_regularized(rhs, sigma2, rho, cfg)
        raise ConfigError(f"solver method {cfg.method!r} not available for mask")

    def posterior_variance(self, shape, sigma2, rho, cfg=None):
        return np.broadcast_to(1.0 / (self.mask / sigma2 + 1.0 / rho), shape).copy()

    def describe(self):
        return {"kind": self.kind, "kept_fraction": float(self.mask.mean())}


class Downsample(LinearOperator, _Convolution):
    """Anti-alias blur followed by decimation by an integer factor."""

    kind = "downsample"

    def __init__(self, kernel, factor):
        _Convolution.__init__(self, kernel)
        if int(factor) != factor or factor < 2:
            raise ConfigError("downsampling factor must be an integer >= 2")
        self.factor = int(factor)

    def output_shape(self, shape):
        c, h, w = shape
        return (c, h // self.factor, w // self.factor)

    def input_shape(self, shape):
        c, h, w = shape
        return (c, h * self.factor, w * self.factor)

    def _validate_input(self, shape):
        f = self.factor
        if shape[-2] % f or shape[-1] % f:
            raise ShapeError(f"image {shape[-2:]} not divisible by factor {f}")

    def apply(self, x):
        x = self._check_in(x)
        f = self.factor
        return np.ascontiguousarray(self._conv(x)[..., ::f, ::f])

    def adjoint(self, v):
        v = as_image(v)
        f = self.factor
        up = np.zeros(self.input_shape(v.shape))
        up[..., ::f, ::f] = v
        return self._conv(up, conj=True)

    def solve_regularized(self, rhs, sigma2, rho, cfg=None):
        cfg = cfg or SolverConfig()
        if cfg.method in (None, "cg"):
            return super().solve_regularized(rhs, sigma2, rho, cfg)
        if cfg.method == "coset":
            return self._coset_solve(self._check_in(rhs), sigma2, rho)
        raise ConfigError(f"solver method {cfg.method!r} not available for downsample")

    def posterior_variance(self, shape, sigma2, rho, cfg=None):
        # the diagonal is periodic with period `factor`; probe one delta per phase
        f = self.factor
        out = np.empty(shape)
        e = np.zeros(shape)
        for i in range(f):
            for j in range(f):
                e[:, i, j] = 1.0
                col = self._coset_solve(e, sigma2, rho)
                e[:, i, j] = 0.0
                out[:, i::f, j::f] = col[:, i, j][:, None, None]
        return out

    def _coset_solve(self, rhs, sigma2, rho):
        # Woodbury: (I/rho + B^T B/s2)^-1 = rho I - rho^2 B^T (s2 I + rho B B^T)^-1 B,
        # and B B^T is circulant on the coarse grid with aliased symbol.
        f = self.factor
        h, w = rhs.shape[-2:]
        tf = self.transfer((h, w))
        full = np.abs(np.fft.fft2(np.fft.irfft2(tf, s=(h, w)))) ** 2
        symbol = full.reshape(f, h // f, f, w // f).mean(axis=(0, 2))
        u = self.apply(rhs)
        u_hat = np.fft.fft2(u) / (sigma2 + rho * symbol)
        correction = self.adjoint(np.real(np.fft.ifft2(u_hat)))
        return rho * rhs - rho**2 * correction

    def describe(self):
        return {"kind": self.kind, "kernel_shape": list(self.kernel.shape), "factor": self.factor}


@dataclass(frozen=True)
class SolverConfig:
    """How to solve the regularised normal equations.

    ``method=None`` picks the operator's exact default (spectral for blur,
    diagonal for masks, conjugate gradient for downsampling).
    """

    method: str | None = None
    cg_tol: float = 1e-8
    cg_max_iter: int = 500

    def __post_init__(self):
        if self.method not in (None, "spectral", "diagonal", "cg", "coset"):
            raise ConfigError(f"unknown solver method {self.method!r}")
        if self.cg_tol <= 0 or self.cg_max_iter < 1:
            raise ConfigError("cg tolerance must be > 0 and max iterations >= 1")


def conjugate_gradient(matvec, b, tol=1e-8, max_iter=500, x0=None):
    """Solve ``matvec(x) = b`` for a symmetric positive-definite map.

    Stops when ``|b - Ax| <= tol |b|``; raises :class:`SolverError` otherwise.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - matvec(x) if x0 is not None else b.copy()
    p = r.copy()
    rs = np.vdot(r, r).real
    for _ in range(max_iter):
        if np.sqrt(rs) <= tol * bnorm:
            return x
        ap = matvec(p)
        alpha = rs / np.vdot(p, ap).real
        x += alpha * p
        r -= alpha * ap
        rs_new = np.vdot(r, r).real
        p = r + (rs_new / rs) * p
        rs = rs_new
    res = np.sqrt(rs) / bnorm
    if res <= tol:
        return x
    raise SolverError(f"conjugate gradient did not converge in {max_iter} iterations", res)


@dataclass(frozen=True)
class Observation:
    """A measurement ``y = A x + sigma n`` together with its forward model."""

    y: np.ndarray
    sigma: float
    operator: LinearOperator = field(repr=False)

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError("observation noise sigma must be >= 0")
        object.__setattr__(self, "y", as_image(self.y))

    @property
    def sigma2(self):
        if self.sigma == 0:
            raise ConfigError("noiseless observation has no Gaussian likelihood; sigma must be > 0")
        return self.sigma**2

    @property
    def image_shape(self):
        return self.operator.input_shape(self.y.shape)


def operator_norm(op, shape, iterations=1000, tol=1e-12, seed=0):
    """Power-iteration estimate of the spectral norm of ``op`` on ``shape`` images."""
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    v = RngStream(seed).normal(shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iterations):
        w = op.normal(v)
        new = float(np.vdot(v, w))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(new - est) <= tol * abs(new):
            est = new
            break
        est = new
    return float(np.sqrt(est))


def degrade(op, x, sigma, rng):
    """Simulate ``y = A x + sigma n`` with ``n`` standard normal per pixel."""
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    ax = op.apply(x)
    y = ax if sigma == 0 else ax + sigma * rng.normal(ax.shape)
    return Observation(y=y, sigma=float(sigma), operator=op)


def posterior_x_mean(obs, z, rho, cfg=None):
    """Mean of x | y, z, rho: ``(A^T A/s2 + I/rho)^-1 (A^T y/s2 + z/rho)``."""
    if not rho > 0:
        raise ConfigError("rho must be > 0")
    rhs = obs.operator.adjoint(obs.y) / obs.sigma2 + np.asarray(z) / rho
    return obs.operator.solve_regularized(rhs, obs.sigma2, rho, cfg)


def as_matrix(op, shape):
    """Dense matrix of ``op`` acting on flattened ``shape`` images (small sizes only)."""
    n = int(np.prod(shape))
    cols = []
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        cols.append(op.apply(e.reshape(shape)).ravel())
        e[i] = 0.0
    return np.stack(cols, axis=1)
