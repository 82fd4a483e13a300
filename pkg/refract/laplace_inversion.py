"""
Numerical inversion of Laplace transforms along the Bromwich line.

The Bromwich integral is discretised with the trapezoidal rule on the line
Re(s) = A / (2t); the resulting alternating series is summed with Euler
(binomial) averaging of its last partial sums. The discretisation error is
about exp(-A) relative to the size of f, so transforms of growing functions
should be shifted first (see `invert_shifted`).
"""

import logging
from typing import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import comb

from refract.errors import DomainError

logger = logging.getLogger(__name__)


class InversionParams(BaseModel):
    """Precision controls for the Euler inversion.

    a : abscissa parameter; the discretisation error is roughly exp(-a).
    n_terms : partial sums computed before averaging starts.
    n_euler : number of binomial averaging steps.
    shift : added to the exponential damping rate beyond the transform's
        rightmost singularity.
    """

    model_config = ConfigDict(frozen=True)

    a: float = Field(default=18.4, gt=0)
    n_terms: int = Field(default=15, ge=1)
    n_euler: int = Field(default=11, ge=1)
    shift: float = Field(default=0.0, ge=0)


DEFAULT_PARAMS = InversionParams()


def euler_inversion(
    transform: Callable[[np.ndarray], np.ndarray],
    times,
    params: InversionParams = DEFAULT_PARAMS,
):
    """
    Invert `transform` at strictly positive `times`.

    Parameters
    ----------
    transform : callable
        Laplace transform, evaluated on a complex array of any shape.
    times : float or array
        Points where the inverse is wanted; all must be > 0.
    params : InversionParams
        Precision controls.

    Returns
    -------
    Inverse transform values with the shape of `times`.
    """
    scalar = np.isscalar(times)
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(t <= 0.0):
        raise DomainError("Euler inversion needs strictly positive abscissae")

    k = np.arange(params.n_terms + params.n_euler + 1)
    s = (params.a + 2j * np.pi * k)[None, :] / (2.0 * t[:, None])
    terms = np.real(transform(s)) * np.where(k % 2 == 0, 1.0, -1.0)
    terms[:, 0] *= 0.5

    partial = np.cumsum(terms, axis=1)[:, params.n_terms:]
    weights = comb(params.n_euler, np.arange(params.n_euler + 1)) / 2.0**params.n_euler
    result = np.exp(params.a / 2.0) / t * (partial @ weights)
    return float(result[0]) if scalar else result.reshape(np.shape(times))


def invert_shifted(
    transform: Callable[[np.ndarray], np.ndarray],
    times,
    beta: float,
    params: InversionParams = DEFAULT_PARAMS,
):
    """
    Invert a transform whose inverse grows like exp(beta * t).

    e^{-beta t} f(t) has transform F(s + beta), which is inverted instead and
    multiplied back, keeping the discretisation error relative to f.
    """
    beta = beta + params.shift
    damped = euler_inversion(lambda s: transform(s + beta), times, params)
    return np.exp(beta * np.asarray(times, dtype=float)) * damped
