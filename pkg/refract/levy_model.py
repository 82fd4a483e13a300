"""
Parametric spectrally negative Levy processes and the refracted pair (X, Y).

X jumps downwards by the magnitudes of a compound Poisson process, so every
model here has finite activity and a finite first moment. The Laplace
exponent is stored in Levy-Khintchine form: the user supplies gamma, and the
bounded-variation drift c0 is derived from it.
"""

import logging
import math
from typing import Annotated, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)
from scipy import optimize, special, stats

from refract.errors import ConvergenceError, DomainError, HypothesisError, ModelConfigError
from refract.roots import newton_bisect

logger = logging.getLogger(__name__)

PHI_RTOL = 1e-12
# Jumps below this size are compensated in the Levy-Khintchine formula.
SMALL_JUMP_LEVEL = 1.0


class ExponentialLaw(BaseModel):
    model_config = ConfigDict(frozen=True)

    law: Literal["exponential"] = "exponential"
    mean: PositiveFloat

    def laplace(self, s):
        return 1.0 / (1.0 + self.mean * s)

    def laplace_derivative(self, s):
        return -self.mean / (1.0 + self.mean * s) ** 2

    def expected(self) -> float:
        return self.mean

    def truncated_mean(self, level: float = SMALL_JUMP_LEVEL) -> float:
        """E[M; M < level]."""
        r = level / self.mean
        return self.mean * (1.0 - math.exp(-r) * (1.0 + r))

    def pdf(self, m):
        return stats.expon.pdf(m, scale=self.mean)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(self.mean, size)

    def rational(self) -> Optional[Tuple[np.poly1d, np.poly1d]]:
        return np.poly1d([1.0]), np.poly1d([self.mean, 1.0])

    def atoms(self):
        return []


class MixedExponentialLaw(BaseModel):
    model_config = ConfigDict(frozen=True)

    law: Literal["mixed-exponential"] = "mixed-exponential"
    weights: Tuple[PositiveFloat, ...]
    means: Tuple[PositiveFloat, ...]

    @model_validator(mode="after")
    def _check_weights(self):
        if len(self.weights) != len(self.means) or not self.weights:
            raise ValueError("weights and means must be non-empty and of equal length")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)!r}")
        return self

    def _components(self):
        return [ExponentialLaw(mean=m) for m in self.means]

    def laplace(self, s):
        return sum(w * c.laplace(s) for w, c in zip(self.weights, self._components()))

    def laplace_derivative(self, s):
        return sum(w * c.laplace_derivative(s) for w, c in zip(self.weights, self._components()))

    def expected(self) -> float:
        return float(np.dot(self.weights, self.means))

    def truncated_mean(self, level: float = SMALL_JUMP_LEVEL) -> float:
        return sum(w * c.truncated_mean(level) for w, c in zip(self.weights, self._components()))

    def pdf(self, m):
        return sum(w * c.pdf(m) for w, c in zip(self.weights, self._components()))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        return rng.exponential(np.asarray(self.means)[idx])

    def rational(self) -> Optional[Tuple[np.poly1d, np.poly1d]]:
        factors = [np.poly1d([m, 1.0]) for m in self.means]
        denom = np.poly1d([1.0])
        for f in factors:
            denom = denom * f
        numer = np.poly1d([0.0])
        for i, w in enumerate(self.weights):
            term = np.poly1d([w])
            for j, f in enumerate(factors):
                if j != i:
                    term = term * f
            numer = numer + term
        return numer, denom

    def atoms(self):
        return []


class ErlangLaw(BaseModel):
    model_config = ConfigDict(frozen=True)

    law: Literal["erlang"] = "erlang"
    shape: PositiveInt
    mean: PositiveFloat

    @property
    def rate(self) -> float:
        return self.shape / self.mean

    def laplace(self, s):
        return (self.rate / (self.rate + s)) ** self.shape

    def laplace_derivative(self, s):
        r, k = self.rate, self.shape
        return -k * r**k / (r + s) ** (k + 1)

    def expected(self) -> float:
        return self.mean

    def truncated_mean(self, level: float = SMALL_JUMP_LEVEL) -> float:
        return self.mean * float(special.gammainc(self.shape + 1, self.rate * level))

    def pdf(self, m):
        return stats.gamma.pdf(m, a=self.shape, scale=1.0 / self.rate)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def rational(self) -> Optional[Tuple[np.poly1d, np.poly1d]]:
        return np.poly1d([self.rate**self.shape]), np.poly1d([1.0, self.rate]) ** self.shape

    def atoms(self):
        return []


class PointMassLaw(BaseModel):
    model_config = ConfigDict(frozen=True)

    law: Literal["point-mass"] = "point-mass"
    size: PositiveFloat

    def laplace(self, s):
        return np.exp(-self.size * s)

    def laplace_derivative(self, s):
        return -self.size * np.exp(-self.size * s)

    def expected(self) -> float:
        return self.size

    def truncated_mean(self, level: float = SMALL_JUMP_LEVEL) -> float:
        return self.size if self.size < level else 0.0

    def pdf(self, m):
        raise DomainError("point-mass law has no density; use atoms()")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.size)

    def rational(self) -> Optional[Tuple[np.poly1d, np.poly1d]]:
        return None

    def atoms(self):
        return [(self.size, 1.0)]


MagnitudeLaw = Annotated[
    Union[ExponentialLaw, MixedExponentialLaw, ErlangLaw, PointMassLaw],
    Field(discriminator="law"),
]


class JumpSpec(BaseModel):
    """Compound Poisson jumps of X: rate per unit time and the law of |jump|."""

    model_config = ConfigDict(frozen=True)

    rate: PositiveFloat
    magnitude: MagnitudeLaw


class LevyModel(BaseModel):
    """Levy triplet (gamma, sigma2, Pi) with Pi a finite compound Poisson measure."""

    model_config = ConfigDict(frozen=True)

    gamma: float
    sigma2: NonNegativeFloat = 0.0
    jumps: Optional[JumpSpec] = None

    @model_validator(mode="after")
    def _check_not_subordinator(self):
        if self.is_bv and self.drift <= 0.0:
            raise ValueError(
                f"bounded variation model with drift c0={self.drift!r} <= 0 has monotone paths"
            )
        self._check_convexity()
        return self

    @classmethod
    def from_bv_drift(cls, c0: float, jumps: Optional[JumpSpec] = None) -> "LevyModel":
        """Build a bounded variation model from its drift c0 = gamma + lambda E[M; M<1]."""
        small = jumps.rate * jumps.magnitude.truncated_mean() if jumps else 0.0
        return cls(gamma=c0 - small, sigma2=0.0, jumps=jumps)

    @property
    def jump_rate(self) -> float:
        return self.jumps.rate if self.jumps else 0.0

    @property
    def is_bv(self) -> bool:
        return self.sigma2 == 0.0

    @property
    def drift(self) -> float:
        """Coefficient of t when X is written as drift*t + sigma*B_t - (sum of magnitudes)."""
        if not self.jumps:
            return self.gamma
        return self.gamma + self.jumps.rate * self.jumps.magnitude.truncated_mean()

    @property
    def c0(self) -> float:
        if not self.is_bv:
            raise DomainError("c0 is defined only for bounded variation models")
        return self.drift

    def psi(self, theta):
        """Laplace exponent; accepts scalars, arrays and complex arguments."""
        value = self.drift * theta + 0.5 * self.sigma2 * theta * theta
        if self.jumps:
            value = value - self.jumps.rate * (1.0 - self.jumps.magnitude.laplace(theta))
        return value

    def psi_derivative(self, theta):
        value = self.drift + self.sigma2 * theta
        if self.jumps:
            value = value + self.jumps.rate * self.jumps.magnitude.laplace_derivative(theta)
        return value

    def psi_prime_at_zero(self) -> float:
        """psi'(0+) = E[X_1]."""
        if not self.jumps:
            return self.drift
        return self.drift - self.jumps.rate * self.jumps.magnitude.expected()

    def big_phi(self, q: float) -> float:
        """Largest root of psi(theta) = q."""
        if q < 0:
            raise DomainError(f"big_phi needs q >= 0, got {q}")
        lo = 0.0
        if q == 0.0:
            if self.psi_prime_at_zero() >= 0.0:
                return 0.0
            lo = self._argmin_psi()

        hi = max(1.0, 2.0 * lo)
        for _ in range(200):
            if self.psi(hi) > q:
                break
            hi *= 2.0
        else:
            raise DomainError(f"psi never exceeds q={q}")

        root = newton_bisect(
            lambda t: self.psi(t) - q,
            self.psi_derivative,
            lo,
            hi,
            tol=PHI_RTOL * max(1.0, q),
        )
        logger.debug("big_phi(%g) = %.16g", q, root)
        return root

    def big_phi_complex(self, s, maxiter: int = 100) -> np.ndarray:
        """
        Phi continued to Re(s) > 0: the root of psi(theta) = s with Re(theta) > 0.

        Newton iteration on the whole array, started from the real inverse at
        |s| rotated by the asymptotic phase of Phi (linear for bounded
        variation, square root otherwise); steps that increase the residual
        are halved.
        """
        s = np.asarray(s, dtype=complex)
        modulus = np.abs(s).ravel()
        knots = np.geomspace(max(modulus.min(), 1e-12), max(modulus.max(), 1e-12) * 1.01 + 1e-12, 64)
        real_phi = np.interp(modulus, knots, [self.big_phi(k) for k in knots]).reshape(s.shape)
        power = 1.0 if self.is_bv else 0.5
        theta = real_phi * np.exp(1j * power * np.angle(s))

        residual = self.psi(theta) - s
        scale = np.maximum(1.0, np.abs(s))
        for _ in range(maxiter):
            if np.all(np.abs(residual) <= 1e-12 * scale):
                return theta
            step = residual / self.psi_derivative(theta)
            candidate = theta - step
            new_residual = self.psi(candidate) - s
            worse = np.abs(new_residual) > np.abs(residual)
            for _ in range(30):
                if not np.any(worse):
                    break
                step = np.where(worse, 0.5 * step, step)
                candidate = theta - step
                new_residual = self.psi(candidate) - s
                worse = np.abs(new_residual) > np.abs(residual)
            theta, residual = candidate, new_residual
        if np.all(np.abs(residual) <= 1e-9 * scale):
            return theta
        raise ConvergenceError(f"complex Phi did not converge; max residual {np.abs(residual).max():.3e}")

    def with_drift_shift(self, shift: float) -> "LevyModel":
        return LevyModel(gamma=self.gamma + shift, sigma2=self.sigma2, jumps=self.jumps)

    def rational_exponent(self, q: float) -> Optional[Tuple[np.poly1d, np.poly1d]]:
        """(N, D) with psi(theta) - q = N(theta) / D(theta), or None if psi is not rational."""
        base = np.poly1d([0.5 * self.sigma2, self.drift, -q])
        if not self.jumps:
            return base, np.poly1d([1.0])
        form = self.jumps.magnitude.rational()
        if form is None:
            return None
        p, d = form
        lam = self.jumps.rate
        return (base - lam) * d + lam * p, d

    def _argmin_psi(self) -> float:
        hi = 1.0
        while self.psi_derivative(hi) <= 0.0:
            hi *= 2.0
        return optimize.brentq(self.psi_derivative, 0.0, hi, xtol=1e-14)

    def _check_convexity(self) -> None:
        grid = np.linspace(0.0, 10.0, 41)
        values = self.psi(grid)
        second = values[:-2] - 2.0 * values[1:-1] + values[2:]
        if np.any(second < -1e-9 * (1.0 + np.abs(values[1:-1]))):
            raise ValueError("Laplace exponent is not convex on [0, 10]")


class RefractedModel(BaseModel):
    """X together with the refraction rate delta above the barrier b."""

    model_config = ConfigDict(frozen=True)

    x_model: LevyModel
    delta: NonNegativeFloat = 0.0
    b: float = 0.0

    @model_validator(mode="after")
    def _check_hypothesis_h(self):
        if self.x_model.is_bv and self.delta >= self.x_model.c0:
            raise HypothesisError(
                f"hypothesis (H) violated: delta={self.delta} must be below the "
                f"bounded variation drift c0={self.x_model.c0}"
            )
        return self

    @property
    def y_model(self) -> LevyModel:
        return self.x_model.with_drift_shift(-self.delta)

    @property
    def drift_gap(self) -> float:
        """psi'(0+) - delta."""
        return self.x_model.psi_prime_at_zero() - self.delta

    @property
    def drift_gap_plus(self) -> float:
        return max(self.drift_gap, 0.0)

    def small_phi(self, q: float) -> float:
        """Right inverse of theta -> psi(theta) - delta*theta."""
        return self.y_model.big_phi(q)

    @classmethod
    def from_document(cls, doc: dict) -> "RefractedModel":
        """Parse {"gamma", "sigma2", "jumps", "delta", "b"}."""
        if not isinstance(doc, dict):
            raise ModelConfigError(f"model document must be a JSON object, got {type(doc).__name__}")
        known = {"gamma", "sigma2", "jumps", "delta", "b"}
        unknown = set(doc) - known
        if unknown:
            raise ModelConfigError(f"unknown model fields: {sorted(unknown)}")
        try:
            x_model = LevyModel(
                gamma=doc.get("gamma"),
                sigma2=doc.get("sigma2", 0.0),
                jumps=doc.get("jumps"),
            )
            return cls(x_model=x_model, delta=doc.get("delta", 0.0), b=doc.get("b", 0.0))
        except ValidationError as e:
            raise ModelConfigError(f"invalid model document: {e}") from e

    def to_document(self) -> dict:
        jumps = self.x_model.jumps.model_dump() if self.x_model.jumps else None
        return {
            "gamma": self.x_model.gamma,
            "sigma2": self.x_model.sigma2,
            "jumps": jumps,
            "delta": self.delta,
            "b": self.b,
        }
