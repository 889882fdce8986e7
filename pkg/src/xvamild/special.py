"""Gamma-tail primitives shared by the default clocks.

Three quantities are exported.  The unnormalised upper tail

    ugamma(a, x) = int_x^inf y**(a-1) * exp(-y) dy,

the survival function of a Gamma(shape, rate) threshold,

    G(x) = ugamma(shape, rate*x) / Gamma(shape),

and the tail-decay factor

    rate**shape * x**(shape-1) * exp(-rate*x) / ugamma(shape, rate*x)

which equals -d/dx log G(x).  Evaluation uses the classic regime split:
a power series for the lower tail when the scaled argument is below
shape + 1, a modified-Lentz continued fraction above it, and log-space
assembly once the shape parameter is large enough that Gamma(shape)
magnitudes start eating precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_MAX_ITER = 600
_CONV_EPS = 1e-17
_FPMIN = 1e-300
_LOG_SPACE_SHAPE = 30.0


class DomainError(ValueError):
    """An argument left the mathematical domain."""


class SingularInputError(ValueError):
    """The requested quantity diverges at this input."""


@dataclass(frozen=True)
class GammaParams:
    """Shape/rate parameters of a gamma threshold distribution."""

    shape: float
    rate: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.shape) and self.shape > 0.0):
            raise DomainError(f"shape must be finite and positive, got {self.shape!r}")
        if not (math.isfinite(self.rate) and self.rate > 0.0):
            raise DomainError(f"rate must be finite and positive, got {self.rate!r}")


def _check_args(shape: float, x: float) -> None:
    if not (math.isfinite(shape) and shape > 0.0):
        raise DomainError(f"shape must be finite and positive, got {shape!r}")
    if not math.isfinite(x) or x < 0.0:
        raise DomainError(f"x must be finite and non-negative, got {x!r}")


def _lower_series_sum(a: float, x: float) -> float:
    # sum_{n>=0} x^n / (a*(a+1)*...*(a+n)); converges for x < a + 1.
    term = 1.0 / a
    total = term
    for n in range(1, _MAX_ITER):
        term *= x / (a + n)
        total += term
        if abs(term) < abs(total) * _CONV_EPS:
            return total
    raise ArithmeticError(f"series for shape={a}, x={x} did not converge")


def _upper_cf(a: float, x: float) -> float:
    # Modified Lentz evaluation of the continued fraction C(a, x) with
    # ugamma(a, x) = exp(-x + a*log(x)) * C(a, x); used for x >= a + 1.
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CONV_EPS:
            return h
    raise ArithmeticError(f"continued fraction for shape={a}, x={x} did not converge")


def log_upper_incomplete_gamma(shape: float, x: float) -> float:
    """log ugamma(shape, x), stable for large shape and deep tails."""
    _check_args(shape, x)
    if x == 0.0:
        return math.lgamma(shape)
    if shape == 1.0:
        return -x
    if x < shape + 1.0:
        series = _lower_series_sum(shape, x)
        log_p = math.log(series) + shape * math.log(x) - x - math.lgamma(shape)
        p = math.exp(log_p)
        if p >= 1.0:
            raise SingularInputError(
                f"upper tail underflows at shape={shape}, x={x}"
            )
        return math.lgamma(shape) + math.log1p(-p)
    return math.log(_upper_cf(shape, x)) + shape * math.log(x) - x


def upper_incomplete_gamma(shape: float, x: float) -> float:
    """Unnormalised upper incomplete gamma: int_x^inf y**(shape-1) e**-y dy."""
    _check_args(shape, x)
    if shape == 1.0:
        return math.exp(-x)
    if x == 0.0:
        return math.exp(math.lgamma(shape))
    if shape > _LOG_SPACE_SHAPE:
        return math.exp(log_upper_incomplete_gamma(shape, x))
    if x < shape + 1.0:
        series = _lower_series_sum(shape, x)
        lower = series * math.exp(shape * math.log(x) - x)
        return math.gamma(shape) - lower
    return _upper_cf(shape, x) * math.exp(shape * math.log(x) - x)


def _survival_scalar(shape: float, rate: float, x: float) -> float:
    if not math.isfinite(x) or x < 0.0:
        raise DomainError(f"x must be finite and non-negative, got {x!r}")
    u = rate * x
    if u == 0.0:
        return 1.0
    if shape == 1.0:
        return math.exp(-u)
    if shape > _LOG_SPACE_SHAPE:
        return math.exp(log_upper_incomplete_gamma(shape, u) - math.lgamma(shape))
    if u < shape + 1.0:
        series = _lower_series_sum(shape, u)
        p = series * math.exp(shape * math.log(u) - u - math.lgamma(shape))
        return 1.0 - p
    return _upper_cf(shape, u) * math.exp(shape * math.log(u) - u - math.lgamma(shape))


def gamma_survival(params: GammaParams, x):
    """P(threshold > x) for a Gamma(shape, rate) threshold.

    Accepts a scalar or an ndarray of non-negative abscissae and returns
    the matching shape.  Values live in [0, 1] and decrease in x.
    """
    xs = np.asarray(x, dtype=float)
    if xs.ndim == 0:
        return _survival_scalar(params.shape, params.rate, float(xs))
    flat = [_survival_scalar(params.shape, params.rate, xi) for xi in xs.ravel()]
    return np.array(flat).reshape(xs.shape)


def _hazard_scalar(shape: float, rate: float, x: float) -> float:
    if not math.isfinite(x) or x < 0.0:
        raise DomainError(f"x must be finite and non-negative, got {x!r}")
    if x == 0.0:
        # Boundary conventions: the factor tends to 0 for shape > 1, to the
        # rate for shape == 1, and diverges for shape < 1.
        if shape > 1.0:
            return 0.0
        if shape == 1.0:
            return rate
        raise SingularInputError(
            f"hazard factor diverges at x=0 for shape={shape} < 1"
        )
    if shape == 1.0:
        return rate
    u = rate * x
    log_f = (
        shape * math.log(rate)
        + (shape - 1.0) * math.log(x)
        - u
        - log_upper_incomplete_gamma(shape, u)
    )
    return math.exp(log_f)


def gamma_hazard_factor(params: GammaParams, x):
    """-d/dx log gamma_survival(params, x); tends to the rate as x grows.

    Scalar or ndarray x.  At x = 0 the value is 0 for shape > 1 and the
    rate for shape == 1; for shape < 1 the factor diverges and a
    SingularInputError is raised.
    """
    xs = np.asarray(x, dtype=float)
    if xs.ndim == 0:
        return _hazard_scalar(params.shape, params.rate, float(xs))
    flat = [_hazard_scalar(params.shape, params.rate, xi) for xi in xs.ravel()]
    return np.array(flat).reshape(xs.shape)
