"""Two-stage adaptive bandwidth allocation.

Stage A runs the channel for a few warm-up rounds at the uniform pilot
allocation and estimates each node's weight as the mean squared
reconstructed logit coordinate; Stage B plugs those estimates into the
water-filling allocation.  The estimator sees only data the aggregator
already receives, so adaptivity costs no extra uplink.

The quality guarantee is a deterministic transfer bound, ratio <=
1 + 2*eta + 4*eta**2 whenever every weight is estimated within relative
error eta <= 1/2, composed with a Hoeffding radius for the per-node
estimates.  Both pieces are exposed here so they can be checked directly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import alloc

__all__ = [
    "WarmupRecord",
    "WeightEstimate",
    "estimate_weights",
    "adaptive_allocate",
    "suboptimality_ratio",
    "transfer_bound",
]

W_FLOOR_RATIO = 1e-9


@dataclass(frozen=True)
class WarmupRecord:
    """Reconstructed logits from Stage A: shape (K, T0, m, V).

    ``clip`` holds the per-node quantizer range and ``pilot_bits`` the
    uniform warm-up bits per coordinate, which together bound the
    post-quantization magnitude of every entry.
    """

    recon: np.ndarray
    clip: np.ndarray
    pilot_bits: int

    def __post_init__(self):
        recon = np.asarray(self.recon, dtype=float)
        clip = np.atleast_1d(np.asarray(self.clip, dtype=float))
        if recon.ndim != 4:
            raise ValueError("recon must have shape (K, T0, m, V)")
        if clip.size == 1:
            clip = np.full(recon.shape[0], float(clip[0]))
        if clip.size != recon.shape[0]:
            raise ValueError("need one clip level per node")
        if np.any(clip <= 0):
            raise ValueError("clip levels must be positive")
        if self.pilot_bits < 0:
            raise ValueError("pilot_bits must be >= 0")
        if recon.size == 0:
            raise ValueError("warm-up record is empty (need T0 >= 1, m >= 1)")
        object.__setattr__(self, "recon", recon)
        object.__setattr__(self, "clip", clip)

    @property
    def K(self) -> int:
        return self.recon.shape[0]

    @property
    def T0(self) -> int:
        return self.recon.shape[1]

    @property
    def m(self) -> int:
        return self.recon.shape[2]

    @property
    def V(self) -> int:
        return self.recon.shape[3]

    def post_quant_range(self) -> np.ndarray:
        """Worst-case |reconstruction| per node: clip * (1 + 2**-pilot_bits)."""
        return self.clip * (1.0 + 2.0 ** (-self.pilot_bits))


@dataclass(frozen=True)
class WeightEstimate:
    w_hat: np.ndarray
    eta_bound: float
    R_ell: float
    delta: float


def estimate_weights(record: WarmupRecord, delta: float = 0.05) -> WeightEstimate:
    """Per-node mean squared reconstructed coordinate, with its Hoeffding
    radius at confidence 1 - delta.

    The radius ``R_ell**2 * sqrt(log(2K/delta) / (2 m T0))`` is a
    diagnostic, not a gate: it is reported alongside the estimate.
    """
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    R_i = record.post_quant_range()
    blocks = (record.recon ** 2).mean(axis=3)  # (K, T0, m) per-context averages
    if np.any(blocks < 0) or np.any(blocks > (R_i ** 2)[:, None, None] * (1 + 1e-12)):
        raise ValueError("warm-up block averages leave [0, R_ell**2]; record is corrupt")
    w_hat = blocks.mean(axis=(1, 2))
    R = float(R_i.max())
    eta = R ** 2 * math.sqrt(
        math.log(2.0 * record.K / delta) / (2.0 * record.m * record.T0)
    )
    return WeightEstimate(w_hat=w_hat, eta_bound=eta, R_ell=R, delta=delta)


def adaptive_allocate(est: WeightEstimate, B_tot: float, V: int,
                      B_max: float | None = None) -> alloc.AllocationPlan:
    """Plug-in water-filling on the estimated weights.

    Zero or near-zero estimates are floored at ``W_FLOOR_RATIO * max(w)``
    with a warning before the logs are taken; saturated nodes trigger the
    usual redistribution inside :func:`fpld.alloc.waterfill_clipped`.
    """
    w = np.asarray(est.w_hat, dtype=float).copy()
    if not w.size:
        raise ValueError("empty weight estimate")
    floor = W_FLOOR_RATIO * float(w.max())
    if floor <= 0:
        raise ValueError("all estimated weights are zero")
    if np.any(w < floor):
        warnings.warn(
            f"flooring {int((w < floor).sum())} near-zero weight estimate(s)",
            stacklevel=2,
        )
        w = np.maximum(w, floor)
    return alloc.waterfill_clipped(w, B_tot, V, B_max)


def suboptimality_ratio(w_true, w_hat, B_tot: float, V: int) -> float:
    """F(plug-in allocation under true weights) / F(true optimum).

    Uses the unclipped closed form on both sides; always >= 1 up to
    roundoff, and equal to ``mean_i (w_i / w_hat_i) * (ghat / g)`` with
    g the geometric means.
    """
    w_true = np.asarray(w_true, dtype=float)
    w_hat = np.asarray(w_hat, dtype=float)
    plan_hat = alloc.waterfill(w_hat, B_tot, V)
    plan_opt = alloc.waterfill(w_true, B_tot, V)
    return alloc.objective_F(plan_hat.B, w_true, V) / alloc.objective_F(plan_opt.B, w_true, V)


def transfer_bound(eta: float) -> float:
    """Deterministic suboptimality cap 1 + 2*eta + 4*eta**2, valid for
    uniform relative weight error eta <= 1/2."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    return 1.0 + 2.0 * eta + 4.0 * eta ** 2
