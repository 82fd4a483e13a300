"""Safeguarded Newton iteration for increasing functions on a bracket."""

import logging
from typing import Callable

from refract.errors import ConvergenceError

logger = logging.getLogger(__name__)


def newton_bisect(
    func: Callable[[float], float],
    fprime: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-12,
    xtol: float = 1e-15,
    maxiter: int = 200,
) -> float:
    """
    Find the root of `func` in [a, b], where func(a) < 0 < func(b).

    Newton steps are taken from the most recent iterate and replaced by a
    bisection step whenever they leave the current bracket. The bracket is
    shrunk with every function evaluation, so the iteration cannot diverge.

    Parameters
    ----------
    func : callable
        Function whose root is sought.
    fprime : callable
        Derivative of `func`.
    a, b : float
        Bracket with func(a) < 0 < func(b).
    tol : float
        Exit when |func(x)| <= tol.
    xtol : float
        Exit when the bracket is narrower than xtol * max(1, |x|).
    maxiter : int
        Maximum number of iterations.

    Returns
    -------
    x : float
        The root.
    """
    fa, fb = func(a), func(b)
    if fa > 0.0 or fb < 0.0:
        raise ValueError(f"Invalid initial bracket [{a}, {b}]: f(a)={fa}, f(b)={fb}")
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b

    x = 0.5 * (a + b)
    for it in range(1, maxiter + 1):
        fx = func(x)
        if abs(fx) <= tol:
            logger.debug("newton_bisect converged in %d iterations at x=%.16g", it, x)
            return x

        # Shrink the bracket; f is increasing through the root.
        if fx < 0.0:
            a = x
        else:
            b = x
        if b - a <= xtol * max(1.0, abs(x)):
            return x

        fpx = fprime(x)
        step_ok = fpx > 0.0
        if step_ok:
            x_new = x - fx / fpx
            step_ok = a < x_new < b
        x = x_new if step_ok else 0.5 * (a + b)

    raise ConvergenceError(
        f"newton_bisect did not converge in {maxiter} iterations; bracket [{a}, {b}]"
    )
