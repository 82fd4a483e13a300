"""
Occupation times below the barrier b for a refracted Levy process started at b.

For lo < b < hi the four functionals

    E_b[exp(-theta * int_0^T 1{U_t < b} dt)]

with T the first exit of U from (lo, hi), from (-inf, hi), from (lo, inf) or
T = inf are written as a ratio numerator / denominator of scale function
expressions plus double integrals against the Levy measure. `OccupationLaws`
holds the two scale sets every such ratio needs (W^(theta) of X and the
0-scale function of Y = X - delta t) and evaluates the kernels and ratios;
the module functions are thin entry points over it.

The double integrals are computed in their Fubini form: with u = z - y the
jump of size m = -u contributes int_0^m kernel(y - m, y) dy, an integral over
a compact range. The part of a kernel that is exp(-phi(0) y) on all of (0, m)
is integrated in closed form.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, NonNegativeFloat
from scipy import integrate, optimize, signal, special

from refract.errors import (
    AccuracyError,
    DomainError,
    InternalConsistencyError,
    RangeError,
    UnsupportedBackendError,
)
from refract.laplace_inversion import euler_inversion
from refract.levy_model import LevyModel, RefractedModel
from refract.scale_functions import NUMERIC, ScaleFunctionSet

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
# Inverted scale functions carry noise near 1e-8; quadrature is held to this instead.
NUMERIC_TOL = 1e-6
# Barrier gaps below this make 1/W(gap) meaningless for unbounded variation.
MIN_GAP = 1e-6
THETA_ZERO = 1e-12
DENSITY_POINTS = 400
DENSITY_TAIL = 1e-4
SERIES_CELLS = 8000
RUIN_EPS = 1e-4

BOTH, UP, DOWN, TOTAL = "both", "up", "down", "total"


class OccupationQuery(BaseModel):
    """theta and the exit window (lo, hi); lo = -inf or hi = inf drop that barrier."""

    model_config = ConfigDict(frozen=True)

    theta: NonNegativeFloat
    lo: float = -math.inf
    hi: float = math.inf

    @property
    def kind(self) -> str:
        finite_lo, finite_hi = math.isfinite(self.lo), math.isfinite(self.hi)
        if finite_lo and finite_hi:
            return BOTH
        if finite_hi:
            return UP
        if finite_lo:
            return DOWN
        return TOTAL

    def check(self, rmodel: RefractedModel) -> None:
        b = rmodel.b
        if not self.lo < b < self.hi:
            raise DomainError(f"query needs lo < b < hi, got lo={self.lo}, b={b}, hi={self.hi}")
        if self.hi - b < MIN_GAP or b - self.lo < MIN_GAP:
            raise DomainError(f"barriers must be at least {MIN_GAP} away from b")


class LaplaceResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    numerator: float
    denominator: float
    quad_error: float = 0.0


@dataclass(frozen=True)
class DoubleIntegrand:
    """
    Integrand of int_0^inf int_(-inf,0) k(z, y) Pi(dz - y) dy in Fubini form.

    For a jump of size m the inner integral runs over y in y_range(m) (a
    subinterval of (0, m)) of compact(y - m, y), split at y_breaks(m). When
    exp_rate is set, exp(-exp_rate * y) over the whole of (0, m) is added in
    closed form. m_breaks are the jump sizes where y_range changes shape.
    """

    compact: Callable[[np.ndarray, np.ndarray], np.ndarray]
    y_range: Callable[[float], Tuple[float, float]]
    y_breaks: Callable[[float], Sequence[float]] = lambda m: ()
    m_breaks: Tuple[float, ...] = ()
    exp_rate: Optional[float] = None


@dataclass(frozen=True)
class OccupationDensity:
    """Law of the total occupation time below b: an atom at 0 plus a density."""

    ladder_drift: float
    atom0: float
    grid: np.ndarray
    density: np.ndarray
    n_terms: int
    ac_mass: float
    series: Optional[np.ndarray] = field(default=None)

    @property
    def total_mass(self) -> float:
        return self.atom0 + self.ac_mass

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"x": self.grid, "density": self.density})
        if self.series is not None:
            frame["series"] = self.series
        return frame


# Quadrature helpers


@lru_cache(maxsize=None)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _gauss_legendre(func, a: float, b: float) -> Tuple[float, float]:
    """64-point rule with the 32-point rule as error estimate."""
    half, mid = 0.5 * (b - a), 0.5 * (b + a)
    x32, w32 = _legendre(32)
    x64, w64 = _legendre(64)
    coarse = half * float(np.dot(w32, func(mid + half * x32)))
    fine = half * float(np.dot(w64, func(mid + half * x64)))
    return fine, abs(fine - coarse)


def _quad(func, a: float, b: float, tol: float, points=None) -> Tuple[float, float]:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        value, error = integrate.quad(func, a, b, epsabs=tol, epsrel=tol, limit=200, points=points)
    if caught and error > tol:
        raise AccuracyError(f"quadrature over [{a}, {b}] missed tolerance {tol:g}", achieved=error)
    return value, error


def _inner_integral(integrand: DoubleIntegrand, m: float, tol: float) -> Tuple[float, float]:
    lower, upper = integrand.y_range(m)
    if upper <= lower:
        return 0.0, 0.0
    cuts = sorted({lower, upper, *(c for c in integrand.y_breaks(m) if lower < c < upper)})

    def vector(y):
        return integrand.compact(y - m, y)

    def scalar(y):
        return float(integrand.compact(np.array([y - m]), np.array([y]))[0])

    value = error = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        v, e = _gauss_legendre(vector, a, b)
        if e > tol:
            v, e = _quad(scalar, a, b, tol)
        value += v
        error += e
    return value, error


def pi_double_integral(
    integrand: DoubleIntegrand,
    rmodel: RefractedModel,
    tol: float = DEFAULT_TOL,
) -> Tuple[float, float]:
    """
    int_{u<0} Pi(du) int_0^{-u} k(u + y, y) dy, with its error bound.

    The outer integral over the jump law is adaptive to `tol`; inner
    integrals are held to tol / 10. Point-mass laws reduce the outer
    integral to a sum over atoms.
    """
    jumps = rmodel.x_model.jumps
    if not jumps:
        return 0.0, 0.0
    rate, law = jumps.rate, jumps.magnitude

    total = 0.0
    if integrand.exp_rate is not None:
        r = integrand.exp_rate
        total += (1.0 - float(law.laplace(r))) / r if r > 0.0 else law.expected()

    inner_errors = [0.0]

    def inner(m: float) -> float:
        value, error = _inner_integral(integrand, m, tol / 10.0)
        inner_errors.append(error)
        return value

    outer_error = 0.0
    atoms = law.atoms()
    if atoms:
        total += sum(prob * inner(size) for size, prob in atoms)
    else:
        cuts = sorted({c for c in integrand.m_breaks if math.isfinite(c) and c > 0.0})
        edge = cuts[-1] if cuts else law.expected()

        def outer(m: float) -> float:
            return float(law.pdf(m)) * inner(m)

        head, head_error = _quad(outer, 0.0, edge, tol, points=cuts[:-1] or None)
        tail, tail_error = _quad(outer, edge, np.inf, tol)
        total += head + tail
        outer_error = head_error + tail_error

    return rate * total, rate * (outer_error + max(inner_errors))


def _assemble(numerator: float, denominator: float, error: float) -> LaplaceResult:
    if not denominator > 0.0:
        raise InternalConsistencyError(f"denominator {denominator!r} is not positive")
    value = numerator / denominator
    if value > 1.0 + 1e-6:
        logger.warning("Laplace transform %.12g exceeds 1; quadrature error %.3e", value, error)
    return LaplaceResult(value=value, numerator=numerator, denominator=denominator, quad_error=error)


class OccupationLaws:
    """
    Kernels and Laplace transforms for one refracted model and one theta.

    Builds W^(theta) of X and the 0-scale function of Y once; every method
    takes barriers in absolute coordinates.
    """

    def __init__(
        self,
        rmodel: RefractedModel,
        theta: float,
        backend: Optional[str] = None,
        tol: float = DEFAULT_TOL,
    ):
        if theta < 0.0:
            raise DomainError(f"theta must be >= 0, got {theta}")
        self.rmodel = rmodel
        self.theta = float(theta)
        self.x_scale = ScaleFunctionSet(rmodel.x_model, self.theta, backend)
        self.y_scale = ScaleFunctionSet(rmodel.y_model, 0.0, backend)
        self.tol = tol
        if NUMERIC in (self.x_scale.backend, self.y_scale.backend) and tol < NUMERIC_TOL:
            logger.debug("Numeric scale backend: quadrature tolerance relaxed to %g", NUMERIC_TOL)
            self.tol = NUMERIC_TOL
        self.phi0 = self.y_scale.phi
        self.big_phi = self.x_scale.phi

    # Pieces shared by the kernels

    def _depths(self, lo: float, hi: float) -> Tuple[float, float]:
        OccupationQuery(theta=self.theta, lo=lo, hi=hi).check(self.rmodel)
        return self.rmodel.b - lo, hi - self.rmodel.b

    def _y_ratio(self, y, above: float) -> np.ndarray:
        """W_Y(above - y) / W_Y(above) on 0 < y < above, else 0."""
        y = np.asarray(y, dtype=float)
        inside = (y > 0.0) & (y < above)
        values = self.y_scale.w(np.where(inside, above - y, 0.0))
        return np.where(inside, values / self.y_scale.w(above), 0.0)

    def _x_ratio(self, x, below: float) -> np.ndarray:
        """W(x) / W(below), 0 for x < 0."""
        x = np.asarray(x, dtype=float)
        inside = x >= 0.0
        values = self.x_scale.w(np.where(inside, x, 0.0))
        return np.where(inside, values / self.x_scale.w(below), 0.0)

    def _exit_below(self, x, below: float) -> np.ndarray:
        """Z(x) - Z(below) W(x) / W(below), which is 1 for x < 0."""
        x = np.asarray(x, dtype=float)
        inside = x >= 0.0
        xs = np.where(inside, x, 0.0)
        scale = self.x_scale
        values = scale.resolvent(xs) - scale.resolvent(below) * scale.w(xs) / scale.w(below)
        return np.where(inside, values, 1.0)

    def _y_breaks(self, m: float, below: float, above: float):
        breaks = []
        if math.isfinite(below):
            start = m - below
            breaks.append(start)
            breaks.extend(start + k for k in self.x_scale.kinks)
        if math.isfinite(above):
            breaks.extend(above - k for k in self.y_scale.kinks)
        return breaks

    @staticmethod
    def _out(values, *args):
        if all(np.isscalar(a) for a in args):
            return float(np.asarray(values))
        return values

    # Kernels

    def kernel_a(self, z, y, lo: float, hi: float):
        """
        Weight of a jump from b + y to b + z in the numerator.

        Jumps landing below lo count in full: the exit bracket is 1 there.
        """
        below, above = self._depths(lo, hi)
        z_arr = np.asarray(z, dtype=float)
        values = self._y_ratio(y, above) * self._exit_below(z_arr + below, below)
        return self._out(np.where(z_arr < 0.0, values, 0.0), z, y)

    def kernel_b(self, z, y, lo: float, hi: float):
        below, above = self._depths(lo, hi)
        z_arr = np.asarray(z, dtype=float)
        y_arr = np.asarray(y, dtype=float)
        subtracted = self._y_ratio(y_arr, above) * self._x_ratio(z_arr + below, below)
        values = np.exp(-self.phi0 * y_arr) - np.where(z_arr < 0.0, subtracted, 0.0)
        return self._out(values, z, y)

    def kernel_c(self, lo: float) -> float:
        below = self.rmodel.b - lo
        if not below > 0.0:
            raise DomainError(f"kernel C needs lo < b, got lo={lo}")
        scale = self.x_scale
        log_slope = scale.w_prime(below) / scale.w(below)
        if self.theta == 0.0:
            return log_slope
        # Z W'/W - theta W, regrouped around Z - (theta/Phi) W and W' - Phi W.
        return scale.resolvent(below) * log_slope + self.theta / self.big_phi * scale.w_prime_excess(below)

    def kernel_d(self, lo: float, hi: float) -> float:
        below, above = self._depths(lo, hi)
        return (
            self.y_scale.w_prime(above) / self.y_scale.w(above)
            + self.x_scale.w_prime(below) / self.x_scale.w(below)
            - self.phi0
        )

    # Laplace transforms

    def _sigma_half(self) -> float:
        return 0.5 * self.rmodel.x_model.sigma2

    def theorem1(self, lo: float, hi: float) -> LaplaceResult:
        below, above = self._depths(lo, hi)
        breaks = lambda m: self._y_breaks(m, below, above)
        m_breaks = (below, above, below + above)

        numerator_jumps = DoubleIntegrand(
            compact=lambda z, y: self.kernel_a(z, y, lo, hi),
            y_range=lambda m: (0.0, min(m, above)),
            y_breaks=breaks,
            m_breaks=m_breaks,
        )
        denominator_jumps = DoubleIntegrand(
            compact=lambda z, y: -self._y_ratio(y, above) * self._x_ratio(z + below, below),
            y_range=lambda m: (max(0.0, m - below), min(m, above)),
            y_breaks=breaks,
            m_breaks=m_breaks,
            exp_rate=self.phi0,
        )
        num_pi, num_err = pi_double_integral(numerator_jumps, self.rmodel, self.tol)
        den_pi, den_err = pi_double_integral(denominator_jumps, self.rmodel, self.tol)

        numerator = 1.0 / self.y_scale.w(above) + num_pi
        denominator = self.rmodel.drift_gap_plus + den_pi
        if self._sigma_half() > 0.0:
            numerator += self._sigma_half() * self.kernel_c(lo)
            denominator += self._sigma_half() * self.kernel_d(lo, hi)
        logger.debug("theorem1 theta=%g lo=%g hi=%g: %.12g / %.12g", self.theta, lo, hi, numerator, denominator)
        result = _assemble(numerator, denominator, num_err + den_err)
        if self.theta == 0.0:
            # exp(0) = 1; the two sides agree up to quadrature error
            return result.model_copy(update={"value": 1.0})
        return result

    def corollary1_up(self, hi: float) -> LaplaceResult:
        _, above = self._depths(-math.inf, hi)
        denominator_jumps = DoubleIntegrand(
            compact=lambda z, y: -self._y_ratio(y, above) * np.exp(self.big_phi * z),
            y_range=lambda m: (0.0, min(m, above)),
            y_breaks=lambda m: self._y_breaks(m, math.inf, above),
            m_breaks=(above,),
            exp_rate=self.phi0,
        )
        den_pi, den_err = pi_double_integral(denominator_jumps, self.rmodel, self.tol)

        numerator = 1.0 / self.y_scale.w(above)
        denominator = self.rmodel.drift_gap_plus + den_pi
        if self._sigma_half() > 0.0:
            slope = self.y_scale.w_prime(above) / self.y_scale.w(above)
            denominator += self._sigma_half() * (slope + self.big_phi - self.phi0)
        return _assemble(numerator, denominator, den_err)

    def corollary1_down(self, lo: float) -> LaplaceResult:
        below, _ = self._depths(lo, math.inf)
        y_range = lambda m: (max(0.0, m - below), m)
        breaks = lambda m: self._y_breaks(m, below, math.inf)

        numerator_jumps = DoubleIntegrand(
            compact=lambda z, y: -np.exp(-self.phi0 * y) * (1.0 - self._exit_below(z + below, below)),
            y_range=y_range,
            y_breaks=breaks,
            m_breaks=(below,),
            exp_rate=self.phi0,
        )
        denominator_jumps = DoubleIntegrand(
            compact=lambda z, y: -np.exp(-self.phi0 * y) * self._x_ratio(z + below, below),
            y_range=y_range,
            y_breaks=breaks,
            m_breaks=(below,),
            exp_rate=self.phi0,
        )
        num_pi, num_err = pi_double_integral(numerator_jumps, self.rmodel, self.tol)
        den_pi, den_err = pi_double_integral(denominator_jumps, self.rmodel, self.tol)

        gap = self.rmodel.drift_gap_plus
        numerator = gap + num_pi
        denominator = gap + den_pi
        if self._sigma_half() > 0.0:
            numerator += self._sigma_half() * self.kernel_c(lo)
            denominator += self._sigma_half() * self.x_scale.w_prime(below) / self.x_scale.w(below)
        return _assemble(numerator, denominator, num_err + den_err)


# Entry points


def theorem1_lt(
    rmodel: RefractedModel,
    query: OccupationQuery,
    backend: Optional[str] = None,
    tol: float = DEFAULT_TOL,
) -> LaplaceResult:
    """Transform of the occupation below b up to the exit from (lo, hi)."""
    if query.kind != BOTH:
        raise DomainError("theorem1_lt needs finite lo and hi")
    query.check(rmodel)
    return OccupationLaws(rmodel, query.theta, backend, tol).theorem1(query.lo, query.hi)


def corollary1_up_lt(
    rmodel: RefractedModel,
    theta: float,
    hi: float,
    backend: Optional[str] = None,
    tol: float = DEFAULT_TOL,
) -> LaplaceResult:
    """Transform of the occupation below b up to the first passage above hi."""
    return OccupationLaws(rmodel, theta, backend, tol).corollary1_up(hi)


def corollary1_down_lt(
    rmodel: RefractedModel,
    theta: float,
    lo: float,
    backend: Optional[str] = None,
    tol: float = DEFAULT_TOL,
) -> LaplaceResult:
    """Transform of the occupation below b up to the first passage below lo."""
    return OccupationLaws(rmodel, theta, backend, tol).corollary1_down(lo)


def _require_positive_gap(rmodel: RefractedModel) -> float:
    gap = rmodel.drift_gap
    if not gap > 0.0:
        raise DomainError(f"total occupation is infinite unless psi'(0+) > delta; psi'(0+) - delta = {gap}")
    return gap


def corollary2_lt(rmodel: RefractedModel, theta: float) -> float:
    """E_b[exp(-theta * total time spent below b)], finite when psi'(0+) > delta."""
    gap = _require_positive_gap(rmodel)
    if theta < 0.0:
        raise DomainError(f"theta must be >= 0, got {theta}")
    if theta < THETA_ZERO:
        return 1.0
    phi = rmodel.x_model.big_phi(theta)
    return gap * phi / (theta - rmodel.delta * phi)


def _total_lt_complex(rmodel: RefractedModel, s: np.ndarray) -> np.ndarray:
    phi = rmodel.x_model.big_phi_complex(s)
    return rmodel.drift_gap * phi / (s - rmodel.delta * phi)


def sparre_andersen_lt(model: LevyModel, theta: float) -> float:
    """psi'(0+) Phi(theta) / theta: total time below the start for the unrefracted process."""
    drift = model.psi_prime_at_zero()
    if not drift > 0.0:
        raise DomainError(f"Sparre-Andersen transform needs psi'(0+) > 0, got {drift}")
    if theta < THETA_ZERO:
        return 1.0
    return drift * model.big_phi(theta) / theta


def ladder_drift(model: LevyModel) -> float:
    """lim Phi(theta)/theta as theta grows: 1/c0 for bounded variation, else 0."""
    return 1.0 / model.c0 if model.is_bv else 0.0


def laplace_transform(
    rmodel: RefractedModel,
    query: OccupationQuery,
    backend: Optional[str] = None,
    tol: float = DEFAULT_TOL,
) -> LaplaceResult:
    """Dispatch a query to the formula matching its barriers."""
    kind = query.kind
    if kind == BOTH:
        return theorem1_lt(rmodel, query, backend, tol)
    if kind == UP:
        return corollary1_up_lt(rmodel, query.theta, query.hi, backend, tol)
    if kind == DOWN:
        return corollary1_down_lt(rmodel, query.theta, query.lo, backend, tol)
    value = corollary2_lt(rmodel, query.theta)
    if query.theta < THETA_ZERO:
        return LaplaceResult(value=value, numerator=1.0, denominator=1.0)
    phi = rmodel.x_model.big_phi(query.theta)
    return LaplaceResult(
        value=value,
        numerator=rmodel.drift_gap * phi,
        denominator=query.theta - rmodel.delta * phi,
    )


# Total occupation law


def atom_at_zero(rmodel: RefractedModel) -> float:
    """P(total occupation below b = 0) = (psi'(0+) - delta) a / (1 - delta a)."""
    gap = _require_positive_gap(rmodel)
    a = ladder_drift(rmodel.x_model)
    return gap * a / (1.0 - rmodel.delta * a)


def _brownian_nu(model: LevyModel):
    """Density of nu, where Phi(theta)/theta = int exp(-theta x) nu(x) dx, for a Brownian driver."""
    sigma = math.sqrt(model.sigma2)
    k = model.drift**2 / (2.0 * model.sigma2)
    norm = sigma * math.sqrt(2.0 * math.pi)

    def nu(x):
        x = np.asarray(x, dtype=float)
        tail = 2.0 * np.exp(-k * x) / np.sqrt(x) - 2.0 * math.sqrt(math.pi * k) * special.erfc(np.sqrt(k * x))
        return tail / norm

    return nu


def series_density(
    rmodel: RefractedModel,
    grid,
    n_terms: int = 30,
    cells: int = SERIES_CELLS,
) -> np.ndarray:
    """
    (psi'(0+) - delta) * sum_{n=1}^{n_terms} delta^(n-1) nu^{*n}, evaluated on `grid`.

    Needs a closed form for nu, which is available for drivers without jumps.
    Convolution powers are taken on a uniform mesh of `cells` cells.
    """
    x_model = rmodel.x_model
    if x_model.jumps or x_model.sigma2 == 0.0:
        raise UnsupportedBackendError("closed-form nu is available for Brownian drivers only")
    gap = _require_positive_gap(rmodel)
    grid = np.asarray(grid, dtype=float)
    nu = _brownian_nu(x_model)

    h = grid.max() / cells
    left = np.arange(cells) * h
    masses = h / 6.0 * (nu(np.maximum(left, h)) + 4.0 * nu(left + 0.5 * h) + nu(left + h))
    masses[0], _ = integrate.quad(nu, 0.0, h, limit=200)

    total = np.zeros(grid.shape)
    power = masses.copy()
    for n in range(1, n_terms + 1):
        if n > 1:
            power = signal.fftconvolve(power, masses)[:cells]
        centers = (np.arange(cells) + 0.5 * n) * h
        total += rmodel.delta ** (n - 1) * np.interp(grid, centers, power / h)
    return gap * np.clip(total, 0.0, None)


def occupation_density(
    rmodel: RefractedModel,
    grid=None,
    n_terms: int = 30,
) -> OccupationDensity:
    """
    Atom at 0 and density of the total occupation time below b.

    The density inverts theta -> corollary2_lt(theta) - atom0. Without a
    grid, 400 points on (0, x_max] are used, x_max being doubled until the
    absolutely continuous mass beyond it is at most 1e-4.
    """
    gap = _require_positive_gap(rmodel)
    a = ladder_drift(rmodel.x_model)
    atom0 = gap * a / (1.0 - rmodel.delta * a)

    def continuous(s):
        return _total_lt_complex(rmodel, s) - atom0

    def cumulative(s):
        return continuous(s) / s

    ac_total = 1.0 - atom0
    if grid is None:
        x_max = 1.0
        for _ in range(20):
            if ac_total - euler_inversion(cumulative, x_max) <= DENSITY_TAIL:
                break
            x_max *= 2.0
        else:
            logger.warning("Occupation tail still above %g at x=%g", DENSITY_TAIL, x_max)
        grid = np.linspace(0.0, x_max, DENSITY_POINTS + 1)[1:]
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0.0):
        raise DomainError("density grid must be strictly positive")

    density = euler_inversion(continuous, grid)
    if np.any(density < 0.0):
        logger.warning("Clipping %d negative density values (min %.3e)", int(np.sum(density < 0.0)), density.min())
        density = np.clip(density, 0.0, None)
    ac_mass = float(euler_inversion(cumulative, float(grid.max())))

    series = None
    if not rmodel.x_model.jumps and rmodel.x_model.sigma2 > 0.0:
        series = series_density(rmodel, grid, n_terms)

    logger.info("Occupation density: atom0=%.6g ac_mass=%.6g x_max=%g", atom0, ac_mass, grid.max())
    return OccupationDensity(
        ladder_drift=a,
        atom0=atom0,
        grid=grid,
        density=density,
        n_terms=n_terms,
        ac_mass=ac_mass,
        series=series,
    )


# Ruin quantities


def parisian_ruin(rmodel: RefractedModel, q: float) -> float:
    """Parisian ruin probability from 0 with exponential(q) clocks, barrier b = 0."""
    if rmodel.b != 0.0:
        raise DomainError(f"Parisian ruin is stated for b = 0, got b={rmodel.b}")
    if not q > 0.0:
        raise DomainError(f"Parisian ruin needs q > 0, got {q}")
    return 1.0 - corollary2_lt(rmodel, q)


def ruin_probability_y(rmodel: RefractedModel, x: float = 0.0, y_scale: Optional[ScaleFunctionSet] = None) -> float:
    """P_x(Y ever goes below 0) = 1 - (psi'(0+) - delta) W_Y(x), or 1 if Y does not drift up."""
    if x < 0.0:
        return 1.0
    gap = rmodel.drift_gap
    if gap <= 0.0:
        return 1.0
    if y_scale is None:
        y_scale = ScaleFunctionSet(rmodel.y_model, 0.0)
    return max(0.0, 1.0 - gap * y_scale.w(x))


def censor_level(rmodel: RefractedModel, eps: float = RUIN_EPS) -> float:
    """Smallest height x above b from which Y returns below b with probability at most eps."""
    _require_positive_gap(rmodel)
    y_scale = ScaleFunctionSet(rmodel.y_model, 0.0)

    def excess(x: float) -> float:
        return ruin_probability_y(rmodel, x, y_scale) - eps

    if excess(0.0) <= 0.0:
        return 0.0
    hi = 1.0
    while excess(hi) > 0.0:
        if 2.0 * hi > y_scale.x_max and y_scale.backend == NUMERIC:
            raise RangeError(f"ruin probability still above {eps} at x={hi}")
        hi *= 2.0
    return float(optimize.brentq(excess, 0.0, hi, xtol=1e-10))
