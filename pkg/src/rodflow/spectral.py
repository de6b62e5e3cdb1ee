"""Fourier calculus on uniform periodic grids.

A :class:`GridFunction` holds samples ``f(x_j)`` at ``x_j = j * L / N`` on the
torus of length ``L``. Fourier coefficients use the normalisation

    f_hat[k] = (1/L) * integral_0^L f(x) exp(-2 pi i k x / L) dx,

which on the grid is ``numpy.fft.fft(f) / N`` with wavenumbers
``k = -N/2 .. N/2 - 1``. Off-grid values are obtained from the trigonometric
interpolant, with the Nyquist mode split symmetrically so the interpolant is
real and reproduces the samples exactly.
"""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass
from functools import cached_property

import finufft
import numpy as np

from .errors import (
    DiffeoDomainError,
    InvalidInputError,
    NumericalError,
    ParameterError,
    ResolutionError,
)

TWO_PI = 2.0 * math.pi

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
NUFFT_EPS = 1e-14
MIN_BUMP_CELLS = 4

_local = threading.local()


class SobolevIndex(float):
    """A Sobolev exponent admissible for the rod equation (``s > 3/2``)."""

    def __new__(cls, s):
        value = float(s)
        if not value > 1.5:
            raise ParameterError(f"Sobolev index must satisfy s > 3/2, got {value}")
        return super().__new__(cls, value)


# ---------------------------------------------------------------------------
# Grid functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real periodic function sampled on ``N`` equispaced points of ``[0, L)``."""

    samples: np.ndarray
    domain_length: float = TWO_PI

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        if arr.ndim != 1:
            raise InvalidInputError(f"samples must be one-dimensional, got shape {arr.shape}")
        n = arr.size
        if n < 16 or n % 2:
            raise InvalidInputError(f"grid size must be even and >= 16, got {n}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("samples contain non-finite values")
        length = float(self.domain_length)
        if not (math.isfinite(length) and length > 0):
            raise InvalidInputError(f"domain_length must be positive, got {length}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "domain_length", length)

    @classmethod
    def from_function(cls, func, N, domain_length=TWO_PI):
        x = grid_points(N, domain_length)
        return cls(np.broadcast_to(np.asarray(func(x), dtype=float), x.shape), domain_length)

    @classmethod
    def zeros(cls, N, domain_length=TWO_PI):
        return cls(np.zeros(N), domain_length)

    @classmethod
    def constant(cls, value, N, domain_length=TWO_PI):
        return cls(np.full(N, float(value)), domain_length)

    @property
    def N(self) -> int:
        return self.samples.size

    @property
    def dx(self) -> float:
        return self.domain_length / self.N

    @property
    def x(self) -> np.ndarray:
        return grid_points(self.N, self.domain_length)

    def same_grid(self, other: "GridFunction") -> bool:
        return self.N == other.N and self.domain_length == other.domain_length

    def like(self, samples) -> "GridFunction":
        """New function on this grid."""
        return GridFunction(samples, self.domain_length)

    def sup(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def __call__(self, points):
        """Evaluate the trigonometric interpolant at arbitrary points."""
        return evaluate(self, points)

    # arithmetic -----------------------------------------------------------

    def _operand(self, other):
        if isinstance(other, GridFunction):
            if not self.same_grid(other):
                raise InvalidInputError(
                    f"grid mismatch: (N={self.N}, L={self.domain_length}) vs "
                    f"(N={other.N}, L={other.domain_length})"
                )
            return other.samples
        if np.isscalar(other):
            return float(other)
        return NotImplemented

    def __add__(self, other):
        o = self._operand(other)
        return NotImplemented if o is NotImplemented else self.like(self.samples + o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._operand(other)
        return NotImplemented if o is NotImplemented else self.like(self.samples - o)

    def __rsub__(self, other):
        o = self._operand(other)
        return NotImplemented if o is NotImplemented else self.like(o - self.samples)

    def __mul__(self, other):
        o = self._operand(other)
        return NotImplemented if o is NotImplemented else self.like(self.samples * o)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._operand(other)
        return NotImplemented if o is NotImplemented else self.like(self.samples / o)

    def __neg__(self):
        return self.like(-self.samples)

    # serialisation --------------------------------------------------------

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("x,value\n")
            for xj, fj in zip(self.x, self.samples):
                fh.write(f"{xj:.15g},{fj:.15g}\n")

    @classmethod
    def from_csv(cls, path, domain_length=None):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        x = np.array([float(r["x"]) for r in rows])
        values = np.array([float(r["value"]) for r in rows])
        if domain_length is None:
            domain_length = (x[1] - x[0]) * len(x)
        return cls(values, domain_length)

    def to_json(self) -> str:
        return json.dumps({"domain_length": self.domain_length, "samples": self.samples.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GridFunction":
        data = json.loads(text)
        return cls(data["samples"], data["domain_length"])


def grid_points(N, domain_length=TWO_PI):
    return np.arange(N) * (domain_length / N)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Fourier coefficients in numpy FFT order, normalised by ``1/N``.

    Index ``N/2`` holds the ``k = -N/2`` mode.
    """

    coefficients: np.ndarray
    domain_length: float = TWO_PI

    @property
    def wavenumbers(self) -> np.ndarray:
        n = self.coefficients.size
        return np.fft.fftfreq(n, 1.0 / n)

    def to_grid(self) -> GridFunction:
        n = self.coefficients.size
        return GridFunction(np.fft.ifft(self.coefficients * n).real, self.domain_length)


def to_spectrum(f: GridFunction) -> Spectrum:
    return Spectrum(np.fft.fft(f.samples) / f.N, f.domain_length)


# ---------------------------------------------------------------------------
# array level helpers (rfft layout, k = 0 .. N/2)
# ---------------------------------------------------------------------------


def _rfft(a):
    return np.fft.rfft(a) / a.shape[-1]


def _irfft(c, N):
    return np.fft.irfft(c * N, n=N)


def _kappa(N, L):
    """Angular wavenumbers 2 pi k / L for k = 0 .. N/2."""
    return (TWO_PI / L) * np.arange(N // 2 + 1)


def _derivative_multiplier(N, L, order):
    mult = (1j * _kappa(N, L)) ** order
    if order % 2:
        mult[-1] = 0.0
    return mult


def _derivative_array(a, L, order=1):
    N = a.shape[-1]
    return _irfft(_rfft(a) * _derivative_multiplier(N, L, order), N)


def _helmholtz_symbol(N, L, gamma):
    return 1.0 + (_kappa(N, L) / gamma) ** 2


def _check_gamma(gamma):
    if gamma == 0 or not math.isfinite(gamma):
        raise ParameterError(f"gamma must be finite and non-zero, got {gamma}")


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def derivative(f: GridFunction, order: int = 1) -> GridFunction:
    """Spectral derivative of order 1, 2 or 3.

    The Nyquist coefficient is dropped for odd orders.
    """
    if order not in (1, 2, 3):
        raise ParameterError(f"derivative order must be 1, 2 or 3, got {order}")
    return f.like(_derivative_array(f.samples, f.domain_length, order))


def helmholtz_forward(f: GridFunction, gamma: float) -> GridFunction:
    """Apply ``1 - gamma^-2 d^2/dx^2``."""
    _check_gamma(gamma)
    c = _rfft(f.samples) * _helmholtz_symbol(f.N, f.domain_length, gamma)
    return f.like(_irfft(c, f.N))


def helmholtz_inverse(f: GridFunction, gamma: float) -> GridFunction:
    """Solve ``(1 - gamma^-2 d^2/dx^2) u = f`` exactly on the grid."""
    _check_gamma(gamma)
    c = _rfft(f.samples) / _helmholtz_symbol(f.N, f.domain_length, gamma)
    return f.like(_irfft(c, f.N))


def sobolev_norm(f: GridFunction, s: float) -> float:
    """``sqrt(sum_k (1 + (2 pi k / L)^2)^s |f_hat_k|^2)`` over all N modes.

    Any real ``s`` is accepted; negative values give the dual norms.
    """
    c = _rfft(f.samples)
    w = (1.0 + _kappa(f.N, f.domain_length) ** 2) ** float(s)
    terms = w * np.abs(c) ** 2
    # interior modes appear twice (k and -k), k = 0 and Nyquist once
    total = terms[0] + 2.0 * np.sum(terms[1:-1]) + terms[-1]
    return float(math.sqrt(total))


def minimal_grid_size(halfwidth, domain_length=TWO_PI, cells=MIN_BUMP_CELLS) -> int:
    """Smallest even N >= 16 placing at least ``cells`` grid cells in ``halfwidth``."""
    n = math.ceil(cells * domain_length / halfwidth - 1e-9)
    n += n % 2
    return max(n, 16)


def bump(center, halfwidth, s, target_norm, N, domain_length=TWO_PI) -> GridFunction:
    """Smooth compactly supported bump with prescribed H^s norm.

    Samples ``exp(-1 / (1 - xi^2))`` with ``xi = (x - center) / halfwidth``
    (periodically wrapped), zero for ``|xi| >= 1``, scaled so that
    ``sobolev_norm(result, s) == target_norm``.

    Raises
    ------
    ResolutionError
        If fewer than four grid cells fit into ``halfwidth``.
    """
    L = float(domain_length)
    if not 0 < halfwidth < L / 2:
        raise ParameterError(f"halfwidth must lie in (0, L/2), got {halfwidth}")
    if not target_norm > 0:
        raise ParameterError(f"target_norm must be positive, got {target_norm}")
    dx = L / N
    if halfwidth < MIN_BUMP_CELLS * dx:
        n_min = minimal_grid_size(halfwidth, L)
        raise ResolutionError(
            f"bump halfwidth {halfwidth:.3e} spans {halfwidth / dx:.2f} grid cells "
            f"(< {MIN_BUMP_CELLS}); need N >= {n_min}",
            minimal_N=n_min,
        )
    x = grid_points(N, L)
    offset = np.mod(x - center + L / 2, L) - L / 2
    xi = offset / halfwidth
    raw = np.zeros(N)
    inside = np.abs(xi) < 1.0
    raw[inside] = np.exp(-1.0 / (1.0 - xi[inside] ** 2))
    raw_fn = GridFunction(raw, L)
    return raw_fn * (target_norm / sobolev_norm(raw_fn, s))


# ---------------------------------------------------------------------------
# trigonometric interpolation at arbitrary points
# ---------------------------------------------------------------------------


def _nufft_plan(n_modes, n_trans):
    cache = getattr(_local, "plans", None)
    if cache is None:
        cache = _local.plans = {}
    key = (n_modes, n_trans)
    plan = cache.get(key)
    if plan is None:
        plan = finufft.Plan(2, (n_modes,), n_trans=n_trans, eps=NUFFT_EPS, isign=1, nthreads=1)
        cache[key] = plan
    return plan


def _trig_eval(coeffs, points, N, L, method="nufft"):
    """Evaluate interpolants given by rfft-layout coefficient rows at ``points``.

    ``coeffs`` has shape (m, N/2 + 1); returns an array of shape (m, len(points)).
    """
    coeffs = np.atleast_2d(coeffs)
    theta = (TWO_PI / L) * np.mod(np.asarray(points, dtype=float), L)
    half = N // 2
    if method == "direct":
        w = np.full(half + 1, 2.0)
        w[0] = w[-1] = 1.0
        weighted = (coeffs * w).T
        k = np.arange(half + 1)
        out = np.empty((coeffs.shape[0], theta.size))
        chunk = max(1, 2**22 // (half + 1))
        for start in range(0, theta.size, chunk):
            sl = slice(start, start + chunk)
            E = np.exp(1j * np.outer(theta[sl], k))
            out[:, sl] = (E @ weighted).real.T
        return out
    if method != "nufft":
        raise ParameterError(f"unknown evaluation method {method!r}")
    # symmetric mode layout k = -N/2 .. N/2 (odd count), Nyquist split in halves
    full = np.zeros((coeffs.shape[0], N + 1), dtype=complex)
    full[:, half:] = coeffs
    full[:, :half] = np.conj(coeffs[:, :0:-1])
    full[:, 0] = full[:, -1] = 0.5 * coeffs[:, -1].real
    plan = _nufft_plan(N + 1, coeffs.shape[0])
    plan.setpts(np.ascontiguousarray(theta))
    out = plan.execute(np.ascontiguousarray(full))
    return np.atleast_2d(out).real


def evaluate(f: GridFunction, points, method="nufft") -> np.ndarray:
    """Values of the trigonometric interpolant of ``f`` at ``points``."""
    pts = np.asarray(points, dtype=float)
    vals = _trig_eval(_rfft(f.samples), pts.ravel(), f.N, f.domain_length, method)[0]
    return vals.reshape(pts.shape)


# ---------------------------------------------------------------------------
# diffeomorphisms of the circle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Diffeo:
    """Circle diffeomorphism ``phi = id + displacement`` with ``phi_x > 0``."""

    displacement: GridFunction

    def __post_init__(self):
        if not isinstance(self.displacement, GridFunction):
            raise InvalidInputError("displacement must be a GridFunction")
        low = float(np.min(self.phi_x.samples))
        if not low > 0:
            raise DiffeoDomainError(f"not orientation preserving: min phi_x = {low:.3e}")

    @classmethod
    def identity(cls, N, domain_length=TWO_PI):
        return cls(GridFunction.zeros(N, domain_length))

    @classmethod
    def shift(cls, c, N, domain_length=TWO_PI):
        return cls(GridFunction.constant(c, N, domain_length))

    @cached_property
    def phi_x(self) -> GridFunction:
        return 1.0 + derivative(self.displacement, 1)

    @property
    def N(self) -> int:
        return self.displacement.N

    @property
    def domain_length(self) -> float:
        return self.displacement.domain_length

    @property
    def values(self) -> np.ndarray:
        """The lift ``x_j + displacement_j`` (not reduced modulo L)."""
        return self.displacement.x + self.displacement.samples

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        return pts + self.displacement(pts)

    def inverse(self) -> "Diffeo":
        return invert_diffeo(self)

    def after(self, inner: "Diffeo") -> "Diffeo":
        """The composition ``self o inner``."""
        return Diffeo(inner.displacement + compose(self.displacement, inner))


def compose(f: GridFunction, phi: Diffeo, method="nufft") -> GridFunction:
    """``(f o phi)(x_j) = f(phi(x_j))`` via the trigonometric interpolant of f."""
    if not f.same_grid(phi.displacement):
        raise InvalidInputError("compose: function and diffeomorphism live on different grids")
    return f.like(evaluate(f, phi.values, method))


def _inverse_points(displacement, L, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Solve ``y_j + d(y_j) = x_j`` for every grid point.

    Safeguarded Newton iteration on the monotone lift, falling back to
    bisection whenever a Newton step leaves the current bracket.
    """
    d = np.asarray(displacement, dtype=float)
    N = d.size
    x = grid_points(N, L)
    c = _rfft(d)
    coeffs = np.vstack([c, c * _derivative_multiplier(N, L, 1)])

    def residual(y, target):
        dv, dpv = _trig_eval(coeffs, y, N, L)
        return y + dv - target, 1.0 + dpv

    pad = 0.1 * (d.max() - d.min()) + 1e-9 * L
    lo = x - d.max() - pad
    hi = x - d.min() + pad
    for _ in range(60):
        f_ends, _ = residual(np.concatenate([lo, hi]), np.concatenate([x, x]))
        f_lo, f_hi = f_ends[:N], f_ends[N:]
        bad = (f_lo > 0) | (f_hi < 0)
        if not bad.any():
            break
        width = hi - lo
        lo = np.where(f_lo > 0, lo - width, lo)
        hi = np.where(f_hi < 0, hi + width, hi)
    else:
        raise NumericalError("could not bracket the inverse diffeomorphism")

    y = np.clip(x - d, lo, hi)
    active = np.arange(N)
    for _ in range(max_iter):
        ya, xa = y[active], x[active]
        F, Fp = residual(ya, xa)
        neg = F < 0
        lo[active] = np.where(neg, ya, lo[active])
        hi[active] = np.where(neg, hi[active], ya)
        la, ha = lo[active], hi[active]
        good_slope = Fp > 0
        newton = ya - np.where(good_slope, F / np.where(good_slope, Fp, 1.0), 0.0)
        done = (np.abs(F) <= tol) | (ha - la <= tol)
        take_newton = good_slope & (newton > la) & (newton < ha)
        # converged points keep a final Newton polish when it stays bracketed
        y[active] = np.where(
            done,
            np.where(take_newton, newton, ya),
            np.where(take_newton, newton, 0.5 * (la + ha)),
        )
        active = active[~done]
        if active.size == 0:
            return y
    F, _ = residual(y[active], x[active])
    worst = int(np.argmax(np.abs(F)))
    j = int(active[worst])
    raise NumericalError(
        f"diffeomorphism inversion did not converge in {max_iter} iterations; "
        f"worst point x={x[j]:.6g} with residual {abs(F[worst]):.3e}"
    )


def invert_diffeo(phi: Diffeo) -> Diffeo:
    """The inverse diffeomorphism, ``phi(psi(x_j)) = x_j`` to ~1e-12."""
    L = phi.domain_length
    y = _inverse_points(phi.displacement.samples, L)
    return Diffeo(GridFunction(y - grid_points(phi.N, L), L))
