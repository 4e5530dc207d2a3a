"""Closed-form evaluators for the protocol's risk-rate expressions.

The high-probability KL risk of the distillation protocol splits into four
terms: a pooled statistical term ``c1 * d / (K * n)``, a probe-coverage
term ``c2 * rho * sqrt(V * log(V / delta) / m)``, an exponentially
decaying bandwidth term, and additive optimization/fit slack.  This module
evaluates each term for the homogeneous, heterogeneous, multi-round, and
lower-bound variants, plus the small-error regime checks that gate the
second-order analysis behind them.

Constants ``c1`` and ``c2`` are configuration with default 1.0 and are
reported as illustrative; ``c3`` defaults to the concrete dithered-channel
value ``L**2 / 6``.  Logs are natural throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BoundParams",
    "BoundEstimates",
    "RegimeWarning",
    "upper_bound_homogeneous",
    "lower_bound_fpld",
    "multiround_bound",
    "multiround_remainder",
    "het_bandwidth_term",
    "check_small_error",
]


class RegimeWarning(UserWarning):
    """A bound was evaluated outside its stated parameter regime."""


def _as_tuple(x):
    if x is None or np.isscalar(x):
        return x
    return tuple(float(v) for v in np.asarray(x, dtype=float).ravel())


@dataclass(frozen=True)
class BoundParams:
    """Every symbol the rate expressions need, validated at construction.

    ``B`` is the total uplink budget per node per probe context (so
    ``B / V`` is bits per coordinate); pass a length-K sequence for
    heterogeneous budgets.  ``L`` may likewise be per-node.  Fractional
    budgets are fine here; only the simulated channel needs integers.
    """

    d: float
    K: int
    n: float
    m: int
    V: int
    B: float | tuple
    delta: float = 0.05
    rho: float = 1.0
    L: float | tuple = 1.0
    c1: float = 1.0
    c2: float = 1.0
    c3: float | None = None  # default L**2 / 6
    eps_opt: float = 0.0
    eps_fit: float = 0.0
    cp: float = 1.0
    T: int = 1
    c0: float = 1.0      # small-error threshold for (SE)
    cubic_C: float = 1.0  # cubic-remainder constant entering (SE')

    def __post_init__(self):
        object.__setattr__(self, "B", _as_tuple(self.B))
        object.__setattr__(self, "L", _as_tuple(self.L))
        if self.d <= 0:
            raise ValueError("d must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not (self.n >= 1):
            raise ValueError("n must be >= 1 (math.inf allowed)")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.V < 1:
            raise ValueError("V must be >= 1")
        if not (0 < self.delta < 1):
            raise ValueError("delta must lie in (0, 1)")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")
        if self.eps_opt < 0 or self.eps_fit < 0:
            raise ValueError("slack terms must be >= 0")
        if not (0 <= self.cp <= 1):
            raise ValueError("cp must lie in [0, 1]")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.c1 <= 0 or self.c2 <= 0 or self.c0 <= 0 or self.cubic_C <= 0:
            raise ValueError("constants must be positive")
        for name, val in (("B", self.B), ("L", self.L)):
            arr = np.atleast_1d(np.asarray(val, dtype=float))
            if name == "B" and np.any(arr < 0):
                raise ValueError("budgets must be >= 0")
            if name == "L" and np.any(arr <= 0):
                raise ValueError("clip levels must be positive")
            if arr.size > 1 and arr.size != self.K:
                raise ValueError(f"per-node {name} needs length K={self.K}, got {arr.size}")

    @property
    def heterogeneous(self) -> bool:
        return not np.isscalar(self.B)

    def B_scalar(self) -> float:
        if self.heterogeneous:
            raise ValueError("heterogeneous budgets: use het_bandwidth_term")
        return float(self.B)

    def L_scalar(self) -> float:
        if not np.isscalar(self.L):
            raise ValueError("per-node clip levels supplied where a scalar is needed")
        return float(self.L)

    def c3_value(self) -> float:
        if self.c3 is not None:
            return float(self.c3)
        return self.L_scalar() ** 2 / 6.0


@dataclass(frozen=True)
class BoundEstimates:
    statistical_term: float
    probe_term: float
    bandwidth_term: float
    slack_term: float
    total: float
    se_ok: bool
    se_prime_ok: bool

    def __post_init__(self):
        s = self.statistical_term + self.probe_term + self.bandwidth_term + self.slack_term
        if not math.isclose(s, self.total, rel_tol=1e-12, abs_tol=1e-300):
            raise ValueError("total must equal the sum of terms")


def _statistical_term(p: BoundParams) -> float:
    if math.isinf(p.n):
        return 0.0
    return p.c1 * p.d / (p.K * p.n)


def _probe_term(p: BoundParams) -> float:
    return p.c2 * p.rho * math.sqrt(p.V * math.log(p.V / p.delta) / p.m)


def upper_bound_homogeneous(p: BoundParams) -> BoundEstimates:
    """Four-term upper bound with the trace-sharpened bandwidth constant."""
    bandwidth = (p.c3_value() / p.K) * 2.0 ** (-2.0 * p.B_scalar() / p.V)
    stat = _statistical_term(p)
    probe = _probe_term(p)
    slack = p.eps_opt + p.eps_fit
    se_ok, se_prime_ok = check_small_error(p, p.c0)
    return BoundEstimates(
        statistical_term=stat,
        probe_term=probe,
        bandwidth_term=bandwidth,
        slack_term=slack,
        total=stat + probe + bandwidth + slack,
        se_ok=se_ok,
        se_prime_ok=se_prime_ok,
    )


def lower_bound_fpld(p: BoundParams) -> float:
    """Matching lower bound on the dithered construction's bandwidth term:
    ``cp * L**2 / (12 K) * 2**(-2 B / V)``.

    Stated for B >= V; smaller budgets still evaluate but raise a
    :class:`RegimeWarning`.
    """
    B = p.B_scalar()
    if B < p.V:
        warnings.warn(
            f"lower bound stated for B >= V (got B={B}, V={p.V})", RegimeWarning,
            stacklevel=2,
        )
    return p.cp * p.L_scalar() ** 2 / (12.0 * p.K) * 2.0 ** (-2.0 * B / p.V)


def multiround_bound(p: BoundParams) -> float:
    """Sequential-refinement bandwidth term ``(L**2 / 6K) * 2**(-2 T B / V)``.

    At T=1 this is exactly the homogeneous bandwidth term; the cubic
    remainder diagnostic lives in :func:`multiround_remainder`.
    """
    return (p.c3_value() / p.K) * 2.0 ** (-2.0 * p.T * p.B_scalar() / p.V)


def multiround_remainder(p: BoundParams) -> float:
    """Cubic-remainder diagnostic ``(log V)**1.5 / K**1.5 * 2**(-3 T B / V)``."""
    return (
        math.log(p.V) ** 1.5 / p.K ** 1.5
        * 2.0 ** (-3.0 * p.T * p.B_scalar() / p.V)
    )


def het_bandwidth_term(p: BoundParams) -> float:
    """Heterogeneous bandwidth term.

    Uniform clip: ``(L**2 / 6) / K**2 * sum_i 2**(-2 B_i / V)``; per-node
    clips replace ``L**2`` inside the sum with ``L_i**2``.
    """
    B = np.atleast_1d(np.asarray(p.B, dtype=float))
    if B.size != p.K:
        raise ValueError(f"need {p.K} per-node budgets, got {B.size}")
    decay = 2.0 ** (-2.0 * B / p.V)
    if np.isscalar(p.L):
        if p.c3 is not None:
            return p.c3 / p.K ** 2 * float(decay.sum())
        return (float(p.L) ** 2 / 6.0) / p.K ** 2 * float(decay.sum())
    L = np.asarray(p.L, dtype=float)
    if L.size != p.K:
        raise ValueError(f"need {p.K} per-node clip levels, got {L.size}")
    return float((L ** 2 * decay).sum() / (6.0 * p.K ** 2))


def check_small_error(p: BoundParams, c0: float | None = None) -> tuple[bool, bool]:
    """Evaluate the small-error conditions (SE) and (SE').

    Both compare ``2**(-B/V) * (log V)**1.5 / sqrt(K)`` against a
    threshold: ``c0`` for (SE), and for (SE') the cp-calibrated value
    derived from requiring the cubic remainder to stay below a quarter of
    the quadratic term, ``cp * sqrt(3) / (4 * cubic_C * L)``.
    """
    if c0 is None:
        c0 = p.c0
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    B = p.B if np.isscalar(p.B) else float(np.mean(np.asarray(p.B, dtype=float)))
    lhs = 2.0 ** (-float(B) / p.V) * math.log(p.V) ** 1.5 / math.sqrt(p.K)
    L = p.L_scalar() if np.isscalar(p.L) else float(np.max(np.asarray(p.L, dtype=float)))
    c0_prime = p.cp * math.sqrt(3.0) / (4.0 * p.cubic_C * L)
    return lhs <= c0, lhs <= c0_prime
