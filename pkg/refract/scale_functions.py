"""
q-scale functions W^(q), W^(q)' and Z^(q) of a spectrally negative Levy process.

Three backends are provided. When psi is a rational function of theta
(Gaussian part plus exponential, mixed-exponential or Erlang jumps)
1/(psi - q) is split into partial fractions and W^(q) is an exact finite sum
of exponential polynomials. For a bounded variation driver with point-mass
jumps of size s, expanding 1/(psi - q) in powers of exp(-theta s) gives W^(q)
as a finite sum over the jumps felt by x. Otherwise (or on request) W^(q) is
obtained by Euler inversion of the transform.
"""

import logging
import math
from functools import cached_property
from typing import List, Optional, Tuple

import mpmath
import numpy as np
import pandas as pd
from scipy import integrate, signal

from refract.errors import DomainError, RangeError, UnsupportedBackendError
from refract.laplace_inversion import DEFAULT_PARAMS, InversionParams, invert_shifted
from refract.levy_model import LevyModel, PointMassLaw, RefractedModel

logger = logging.getLogger(__name__)

RATIONAL = "rational"
SERIES = "point-mass-series"
NUMERIC = "numeric-inversion"
BACKENDS = (RATIONAL, SERIES, NUMERIC)

X_MAX = 40.0
Z_ABS_TOL = 1e-9
# Poles closer than this are treated as one repeated pole.
POLE_TOL = 1e-3
# The point-mass series alternates; float64 is used while its terms stay
# within this many digits of W(0+), mpmath beyond.
SERIES_FLOAT_DIGITS = 6.0
SERIES_GUARD_DIGITS = 20


def default_grid(x_max: float = X_MAX) -> np.ndarray:
    """Geometric nodes on (0, 1), uniform nodes of width about 0.05 on [1, x_max]."""
    near_zero = np.geomspace(1e-6, 1.0, 40)[:-1]
    bulk = np.linspace(1.0, x_max, max(2, int(round((x_max - 1.0) / 0.05)) + 1))
    return np.concatenate([[0.0], near_zero, bulk])


class ScaleFunctionSet:
    """
    W^(q), W^(q)' and Z^(q) for one Laplace exponent and one q.

    W^(q)(x) is 0 for x < 0, and w(0) returns the right limit W^(q)(0+),
    which is 1/c0 for bounded variation exponents and 0 otherwise.
    """

    def __init__(
        self,
        model: LevyModel,
        q: float = 0.0,
        backend: Optional[str] = None,
        params: InversionParams = DEFAULT_PARAMS,
        x_max: float = X_MAX,
    ):
        if q < 0:
            raise DomainError(f"scale functions need q >= 0, got {q}")
        self.model = model
        self.q = float(q)
        self.params = params
        self.x_max = x_max
        self.phi = model.big_phi(self.q)
        self.w0 = 1.0 / model.c0 if model.is_bv else 0.0

        rational = model.rational_exponent(self.q)
        self._point_mass = self._point_mass_params(model)
        if backend is None:
            if rational is not None:
                backend = RATIONAL
            elif self._point_mass is not None:
                backend = SERIES
            else:
                backend = NUMERIC
        if backend not in BACKENDS:
            raise DomainError(f"unknown scale backend {backend!r}")
        if backend == RATIONAL and rational is None:
            raise UnsupportedBackendError("psi is not rational for point-mass jumps")
        if backend == SERIES and self._point_mass is None:
            raise UnsupportedBackendError("the finite series needs a bounded variation driver with point-mass jumps")
        self.backend = backend
        self._terms: List[Tuple[complex, complex, int]] = []
        if backend == RATIONAL:
            self._terms = self._partial_fractions(*rational)

        self.kinks = self._kinks()
        self.grid = default_grid(x_max)
        logger.info(
            "Scale functions ready: backend=%s q=%g Phi(q)=%.10g W(0+)=%g",
            self.backend, self.q, self.phi, self.w0,
        )

    # Construction helpers

    @staticmethod
    def _partial_fractions(numer: np.poly1d, denom: np.poly1d) -> List[Tuple[complex, complex, int]]:
        # 1/(psi - q) = denom / numer
        residues, poles, direct = signal.residue(denom.coeffs, numer.coeffs, tol=POLE_TOL)
        if len(direct) and np.any(np.abs(direct) > 1e-12):
            raise UnsupportedBackendError("1/(psi - q) is not a proper rational function")
        terms = []
        power, previous = 0, None
        for r, p in zip(residues, poles):
            if previous is not None and abs(p - previous) <= POLE_TOL * max(1.0, abs(previous)):
                power += 1
            else:
                power = 0
            previous = p
            terms.append((complex(r), complex(p), power))
        return terms

    @staticmethod
    def _point_mass_params(model: LevyModel) -> Optional[Tuple[float, float, float]]:
        """(c0, rate, size) for a bounded variation driver with point-mass jumps."""
        jumps = model.jumps
        if not jumps or not model.is_bv or not isinstance(jumps.magnitude, PointMassLaw):
            return None
        return model.c0, jumps.rate, jumps.magnitude.size

    def _kinks(self) -> List[float]:
        jumps = self.model.jumps
        if not jumps or not self.model.is_bv:
            return []
        kinks = []
        for size, _ in jumps.magnitude.atoms():
            kinks.extend(size * k for k in range(1, int(self.x_max // size) + 1))
        return sorted(kinks)

    # Backends

    def _transform(self, s):
        return 1.0 / (self.model.psi(s) - self.q)

    def _w_positive(self, x: np.ndarray) -> np.ndarray:
        if self.backend == RATIONAL:
            total = np.zeros(x.shape, dtype=complex)
            for r, p, n in self._terms:
                total += r * x**n / math.factorial(n) * np.exp(p * x)
            return total.real
        if self.backend == SERIES:
            return np.array([self._series(float(v), 0) for v in x])
        if np.any(x > self.x_max):
            raise RangeError(f"numeric scale backend covers x <= {self.x_max}")
        return invert_shifted(self._transform, x, self.phi, self.params)

    def _series(self, x: float, order: int) -> float:
        """W (order 0) or its right derivative (order 1) from the point-mass series."""
        c, rate, _ = self._point_mass
        digits = (2.0 * rate + self.q) / c * x / math.log(10.0)
        if digits <= SERIES_FLOAT_DIGITS:
            return float(self._series_sum(x, order, math.exp, float))
        with mpmath.workdps(SERIES_GUARD_DIGITS + int(digits)):
            return float(self._series_sum(x, order, mpmath.exp, mpmath.mpf))

    def _series_sum(self, x, order: int, exp, num):
        """
        (1/c) sum_{k s <= x} (r u)^k / k! exp(a u), u = x - k s, r = -rate/c, a = (rate + q)/c.

        Each term inverts (-rate)^k exp(-k s theta) / (c theta - rate - q)^(k+1).
        """
        c, rate, size = (num(v) for v in self._point_mass)
        a = (rate + num(self.q)) / c
        r = -rate / c
        x = num(x)
        total = num(0)
        k = 0
        while k * size <= x:
            u = x - k * size
            grow = exp(a * u)
            term = (r * u) ** k / math.factorial(k)
            if order == 0:
                total += term * grow
            else:
                total += a * term * grow
                if k >= 1:
                    total += r**k * u ** (k - 1) / math.factorial(k - 1) * grow
            k += 1
        return total / c

    def _w_prime_rational(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros(x.shape, dtype=complex)
        for r, p, n in self._terms:
            term = p * x**n / math.factorial(n)
            if n >= 1:
                term = term + x ** (n - 1) / math.factorial(n - 1)
            total += r * term * np.exp(p * x)
        return total.real

    def _w_prime_numeric(self, x: float) -> float:
        h = min(1e-2, x / 4.0)
        ahead = [k for k in self.kinks if x - 2.0 * h < k <= x + 4.0 * h]
        if not ahead:
            f = self._w_positive(np.array([x - 2 * h, x - h, x + h, x + 2 * h]))
            return float((f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h))
        # Right derivative: one-sided stencil that stays clear of the next kink.
        later = [k for k in self.kinks if k > x]
        if later:
            h = min(h, (later[0] - x) / 5.0)
        f = self._w_positive(x + h * np.arange(5.0))
        return float((-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h))

    def _integral_rational(self, x: np.ndarray) -> np.ndarray:
        """int_0^x W^(q)(y) dy."""
        total = np.zeros(x.shape, dtype=complex)
        for r, p, n in self._terms:
            total += self._integral_rational_term(r, p, n, x)
        return total.real

    @staticmethod
    def _integral_rational_term(r: complex, p: complex, n: int, x: np.ndarray) -> np.ndarray:
        """int_0^x r y^n / n! e^{p y} dy."""
        if abs(p) < 1e-14:
            return r * x ** (n + 1) / math.factorial(n + 1)
        epx = np.exp(p * x)
        integral = (epx - 1.0) / p
        for k in range(1, n + 1):
            integral = (x**k / math.factorial(k) * epx - integral) / p
        return r * integral

    # Public evaluators

    def w(self, x):
        scalar = np.isscalar(x)
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros(xs.shape)
        out[xs == 0.0] = self.w0
        positive = xs > 0.0
        if np.any(positive):
            out[positive] = self._w_positive(xs[positive])
        return float(out[0]) if scalar else out

    def w_prime(self, x):
        scalar = np.isscalar(x)
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(xs <= 0.0):
            raise DomainError("w_prime is defined for x > 0 only")
        if self.backend == RATIONAL:
            out = self._w_prime_rational(xs)
        elif self.backend == SERIES:
            out = np.array([self._series(float(v), 1) for v in xs])
        else:
            out = np.array([self._w_prime_numeric(float(v)) for v in xs])
        return float(out[0]) if scalar else out

    def w_prime_at_zero(self) -> float:
        """Right limit W^(q)'(0+): (q + Pi(R)) / c0^2 for bounded variation, 2 / sigma2 otherwise."""
        if self.model.is_bv:
            rate = self.model.jumps.rate if self.model.jumps else 0.0
            return (self.q + rate) / self.model.c0**2
        return 2.0 / self.model.sigma2

    @cached_property
    def grid_values(self) -> np.ndarray:
        """W on `grid`, computed on first use."""
        return self.w(self.grid)

    def z(self, x):
        scalar = np.isscalar(x)
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.ones(xs.shape)
        positive = xs > 0.0
        if self.q > 0.0 and np.any(positive):
            if self.backend == RATIONAL:
                out[positive] = 1.0 + self.q * self._integral_rational(xs[positive])
            else:
                out[positive] = [1.0 + self.q * self._integral_numeric(v) for v in xs[positive]]
        return float(out[0]) if scalar else out

    def _integral_numeric(self, x: float) -> float:
        points = [k for k in self.kinks if 0.0 < k < x] or None
        value, _ = integrate.quad(self.w, 0.0, x, epsabs=Z_ABS_TOL, epsrel=1e-10, limit=200, points=points)
        return value

    def _is_dominant(self, p: complex, n: int) -> bool:
        return n == 0 and abs(p - self.phi) <= 1e-8 * max(1.0, self.phi)

    def resolvent(self, x):
        """
        Z(x) - (q / Phi(q)) W(x), which stays bounded as x grows.

        The rational backend drops the exp(Phi x) term analytically, so the
        result carries no cancellation error for large x.
        """
        scalar = np.isscalar(x)
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if self.q == 0.0 or self.phi == 0.0:
            out = self.z(xs)
        elif self.backend == RATIONAL:
            out = np.ones(xs.shape)
            positive = xs > 0.0
            xp = xs[positive]
            total = np.zeros(xp.shape, dtype=complex)
            for r, p, n in self._terms:
                if self._is_dominant(p, n):
                    total += -self.q * r / p
                    continue
                part = self._integral_rational_term(r, p, n, xp)
                total += self.q * part - self.q / self.phi * r * xp**n / math.factorial(n) * np.exp(p * xp)
            out[positive] = 1.0 + total.real
            out[xs == 0.0] = 1.0 - self.q / self.phi * self.w0
        else:
            out = self.z(xs) - self.q / self.phi * self.w(xs)
        return float(out[0]) if scalar else out

    def w_prime_excess(self, x):
        """W'(x) - Phi(q) W(x), for x > 0."""
        scalar = np.isscalar(x)
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(xs <= 0.0):
            raise DomainError("w_prime_excess is defined for x > 0 only")
        if self.backend == RATIONAL:
            total = np.zeros(xs.shape, dtype=complex)
            for r, p, n in self._terms:
                if self._is_dominant(p, n):
                    continue
                term = (p - self.phi) * xs**n / math.factorial(n)
                if n >= 1:
                    term = term + xs ** (n - 1) / math.factorial(n - 1)
                total += r * term * np.exp(p * xs)
            out = total.real
        else:
            out = self.w_prime(xs) - self.phi * self.w(xs)
        return float(out[0]) if scalar else out

    def two_sided_exit_up(self, x: float, upper: float) -> float:
        """E_x[e^{-q tau+_upper}; tau+_upper < tau-_0] = W(x) / W(upper)."""
        self._check_exit_args(x, upper)
        if x == upper:
            return 1.0
        return self.w(x) / self.w(upper)

    def two_sided_exit_down(self, x: float, upper: float) -> float:
        """E_x[e^{-q tau-_0}; tau-_0 < tau+_upper] = Z(x) - Z(upper) W(x) / W(upper)."""
        self._check_exit_args(x, upper)
        if x == upper:
            return 0.0
        return self.resolvent(x) - self.resolvent(upper) * self.w(x) / self.w(upper)

    @staticmethod
    def _check_exit_args(x: float, upper: float) -> None:
        if not 0.0 <= x <= upper or upper <= 0.0:
            raise DomainError(f"two-sided exit needs 0 <= x <= upper, upper > 0; got x={x}, upper={upper}")

    def tabulate(self, xs) -> pd.DataFrame:
        """Columns x, w, w_prime, z; w_prime at x = 0 is the right limit."""
        xs = np.asarray(xs, dtype=float)
        positive = xs > 0.0
        w_prime = np.full(xs.shape, self.w_prime_at_zero())
        if np.any(positive):
            w_prime[positive] = self.w_prime(xs[positive])
        return pd.DataFrame({
            "x": xs,
            "w": self.w(xs),
            "w_prime": w_prime,
            "z": self.z(xs),
        })


def overshoot_kernel(
    rmodel: RefractedModel,
    z: float,
    cap: float,
    y_scale: Optional[ScaleFunctionSet] = None,
) -> float:
    """
    Density in z of P(Y at first passage below 0 is in dz, sup of Y before < cap).

    (W(0+) / W(cap)) * int_0^cap W(cap - y) pi(z - y) dy, with W the 0-scale
    function of Y and pi the Levy density of the jumps.
    """
    y_model = rmodel.y_model
    if not y_model.is_bv:
        raise UnsupportedBackendError("overshoot kernel needs a bounded variation Y")
    if z >= 0.0 or cap <= 0.0:
        raise DomainError(f"overshoot kernel needs z < 0 and cap > 0, got z={z}, cap={cap}")
    jumps = y_model.jumps
    if not jumps:
        return 0.0
    if y_scale is None:
        y_scale = ScaleFunctionSet(y_model, 0.0)

    law = jumps.magnitude
    prefactor = y_scale.w0 / y_scale.w(cap)
    atoms = law.atoms()
    if atoms:
        total = 0.0
        for size, prob in atoms:
            y = z + size
            if 0.0 < y < cap:
                total += prob * y_scale.w(cap - y)
        return prefactor * jumps.rate * total

    value, _ = integrate.quad(
        lambda y: y_scale.w(cap - y) * law.pdf(y - z), 0.0, cap, epsabs=1e-12, limit=200
    )
    return prefactor * jumps.rate * value
