"""Node count to training speed.

Throughput on ``k`` nodes is ``k * base**log2(k)`` node-hours of single-node
work per hour: every doubling of the node count multiplies speed by
``2 * base`` (1.6 with the default base of 0.8) instead of 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError

DEFAULT_BASE = 0.8
DEFAULT_LEGAL_SET = (1, 2, 4, 8, 16)
SECONDS_PER_HOUR = 3600.0


def is_power_of_two(k) -> bool:
    return isinstance(k, (int, np.integer)) and k >= 1 and (int(k) & (int(k) - 1)) == 0


def log2_int(k: int) -> int:
    return int(k).bit_length() - 1


@dataclass(frozen=True)
class SpeedCurve:
    attenuation_base: float = DEFAULT_BASE
    legal_set: tuple = DEFAULT_LEGAL_SET
    _cache: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.attenuation_base:
            raise DomainError("attenuation_base must be positive")
        ks = tuple(int(k) for k in self.legal_set)
        if not all(is_power_of_two(k) for k in ks):
            raise DomainError(f"legal set must contain powers of two, got {ks}")
        object.__setattr__(self, "legal_set", ks)
        object.__setattr__(
            self, "_cache", {k: k * self.attenuation_base ** log2_int(k) for k in ks}
        )

    def speed(self, k) -> float:
        """Node-hours of work per hour on ``k`` nodes; zero nodes make no progress."""
        if k == 0:
            return 0.0
        try:
            return self._cache[k]
        except (KeyError, TypeError):
            raise DomainError(f"node count {k!r} is not in {{0}} U {self.legal_set}") from None

    def exact(self, k) -> Fraction:
        """Rational speed, evaluated with the decimal base as an exact fraction."""
        self.speed(k)
        if k == 0:
            return Fraction(0)
        return k * Fraction(str(self.attenuation_base)) ** log2_int(k)

    def step_progress(self, k, p: float) -> float:
        """Work served by ``k`` nodes over a step of ``p`` hours."""
        if p <= 0:
            raise DomainError("step length must be positive")
        return p * self.speed(k)

    def per_second_progress(self, k) -> float:
        return self.speed(k) / SECONDS_PER_HOUR

    def speeds(self, ks) -> np.ndarray:
        return np.array([self.speed(k) for k in ks], dtype=np.float64)


DEFAULT_CURVE = SpeedCurve()


def speed(k, base: float = DEFAULT_BASE) -> float:
    """Module-level shortcut; accepts any power of two, not just the default set."""
    if k == 0:
        return 0.0
    if not is_power_of_two(k):
        raise DomainError(f"node count {k!r} is not a power of two")
    return k * base ** log2_int(k)


def step_progress(k, p: float, base: float = DEFAULT_BASE) -> float:
    if p <= 0:
        raise DomainError("step length must be positive")
    return p * speed(k, base)


def per_second_progress(k, base: float = DEFAULT_BASE) -> float:
    return speed(k, base) / SECONDS_PER_HOUR
