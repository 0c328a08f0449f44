"""Architecture schedule, rate curve and size statistics of the recurrent class.

Constants without known values (the rate prefactor, the covering-bound
constant) are plain arguments defaulting to 1.0; results built from them
describe a shape, not a certified number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import PreconditionError
from .network import NetConfig, count_distinct_weights

# values within this relative distance of an integer are snapped before ceil
_CEIL_SLACK = 1e-9


@dataclass(frozen=True)
class ScheduleConstants:
    c4: float = 8.0
    c5: float = 8.0
    c6: float = 0.5
    c7: float = 0.5
    c2: float = 1.0

    def __post_init__(self):
        for name in ("c4", "c5", "c6", "c7", "c2"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")


@dataclass(frozen=True)
class RatePoint:
    n: int
    rate_value: float
    exponent: float


def _ceil(value: float) -> int:
    nearest = round(value)
    if abs(value - nearest) <= _CEIL_SLACK * max(1.0, abs(value)):
        return int(nearest)
    return math.ceil(value)


def depth_exponent(d: int, p: float) -> float:
    """Exponent of n in the depth of a block approximating a p-smooth function of d+1 inputs."""
    return (d + 1) / (2 * (2 * p + d + 1))


def schedule(n: int, d: int, p_g: float, p_h: float, consts: ScheduleConstants,
             k: int = 1, hidden_bias: bool = False) -> NetConfig:
    """Widths fixed by c4, c5; depths growing like a power of n set by the smoothness."""
    if n < 2 or d < 1 or p_g <= 0 or p_h <= 0:
        raise PreconditionError("need n >= 2, d >= 1 and positive smoothness")
    return NetConfig(
        k=k,
        d=d,
        k1=_ceil(consts.c4),
        k2=_ceil(consts.c5),
        l1=_ceil(consts.c6 * n ** depth_exponent(d, p_h)),
        l2=_ceil(consts.c7 * n ** depth_exponent(d, p_g)),
        hidden_bias=hidden_bias,
    )


def rate_exponent(d: int, p_g: float, p_h: float) -> float:
    p = min(p_g, p_h)
    return -2.0 * p / (2.0 * p + d + 1)


def rate(n: int, d: int, p_g: float, p_h: float) -> RatePoint:
    """(log n)^6 * n^exponent with the leading constant dropped."""
    if n < 2:
        raise PreconditionError("need n >= 2")
    exponent = rate_exponent(d, p_g, p_h)
    return RatePoint(n=n, rate_value=math.log(n) ** 6 * n**exponent, exponent=exponent)


def unfolded_stats(config: NetConfig) -> dict:
    """Layer count, width bound and parameter count of the time-unfolded network.

    ``max_width`` is the counting bound ``max(k1, k2) + 2d + 2`` (+1 with
    hidden biases). The strictly layered unfolding built by
    :func:`recnet.network.unfold` may be wider, see its ``max_width``.
    """
    width = max(config.k1, config.k2) + 2 * config.d + 2 + (1 if config.hidden_bias else 0)
    return {
        "layers": (config.k + 1) * (config.l1 + config.l2),
        "max_width": width,
        "distinct_weights": count_distinct_weights(config),
    }


def log_covering_bound(config: NetConfig, n: int, c20: float = 1.0) -> float:
    """c20 * k * L^2 * K^2 * (log n)^2 with L, K the larger depth and width."""
    if c20 <= 0 or n < 2:
        raise PreconditionError("need c20 > 0 and n >= 2")
    depth = max(config.l1, config.l2)
    width = max(config.k1, config.k2)
    return c20 * config.k * depth**2 * width**2 * math.log(n) ** 2
