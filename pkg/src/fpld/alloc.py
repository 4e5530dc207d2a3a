"""Optimal bandwidth allocation across nodes under a total uplink budget.

Minimizing the weighted distortion objective
``F(B) = (1/K^2) * sum_i w_i * 2**(-2 B_i / V)`` subject to
``sum_i B_i = B_tot`` has the closed-form water-filling solution
``B_i = B_tot / K + (V/2) * log2(w_i / geomean(w))``: every doubling of a
node's weight buys it V/2 extra bits.  Box constraints are handled by the
standard active-set loop (pin violators at their bound, redistribute the
residual budget over the rest), and :func:`kkt_oracle` re-solves the same
KKT system by bisection on the multiplier as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "InfeasibleBudgetError",
    "AllocationPlan",
    "objective_F",
    "waterfill",
    "waterfill_clipped",
    "kkt_oracle",
    "inverse_weighted_baseline",
    "integerize",
]

_BUDGET_TOL = 1e-9


class InfeasibleBudgetError(ValueError):
    """The budget cannot be met within the per-node caps."""


@dataclass(frozen=True)
class AllocationPlan:
    """Per-node budgets (bits per probe context) plus the solve metadata.

    ``B`` sums to ``B_tot`` within 1e-9.  Entries respect ``[0, B_max]``
    when ``B_max`` is set; the unclipped closed form may go negative and
    carries ``B_max=None``.
    """

    B: np.ndarray
    weights: np.ndarray
    B_tot: float
    B_max: float | None
    saturated: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "saturated", np.asarray(self.saturated, dtype=bool))
        if abs(self.B.sum() - self.B_tot) > _BUDGET_TOL * max(1.0, abs(self.B_tot)):
            raise ValueError(
                f"allocation sums to {self.B.sum()!r}, budget is {self.B_tot!r}"
            )
        if self.B_max is not None and (
            np.any(self.B < -_BUDGET_TOL) or np.any(self.B > self.B_max + _BUDGET_TOL)
        ):
            raise ValueError("allocation violates the [0, B_max] box")

    @property
    def K(self) -> int:
        return self.B.size


def _check_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise ValueError("weights must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and positive")
    return w


def objective_F(B, w, V: int) -> float:
    """Weighted distortion objective (1/K^2) * sum_i w_i * 2**(-2 B_i / V)."""
    B = np.asarray(B, dtype=float)
    w = _check_weights(w)
    if B.shape != w.shape:
        raise ValueError(f"budget/weight length mismatch: {B.shape} vs {w.shape}")
    K = w.size
    return float((w * 2.0 ** (-2.0 * B / V)).sum() / K ** 2)


def waterfill(w, B_tot: float, V: int) -> AllocationPlan:
    """Unclipped closed form; entries may be negative (callers that feed a
    channel want :func:`waterfill_clipped`)."""
    w = _check_weights(w)
    if not B_tot > 0:
        raise ValueError("B_tot must be positive")
    tilt = (V / 2.0) * np.log2(w)
    B = B_tot / w.size + (tilt - tilt.mean())
    return AllocationPlan(B=B, weights=w, B_tot=float(B_tot), B_max=None,
                          saturated=np.zeros(w.size, dtype=bool))


def _check_feasible(K: int, B_tot: float, B_max: float | None) -> None:
    if not B_tot > 0:
        raise ValueError("B_tot must be positive")
    if B_max is not None and K * B_max < B_tot - _BUDGET_TOL:
        raise InfeasibleBudgetError(
            f"budget {B_tot} exceeds K * B_max = {K * B_max}"
        )


def waterfill_clipped(w, B_tot: float, V: int, B_max: float | None = None) -> AllocationPlan:
    """Water-filling with box constraints via the threshold structure.

    Allocations are monotone in weight, so at the optimum the nodes pinned
    at 0 are a prefix and the nodes pinned at B_max a suffix of the weight
    order.  Scan pin counts, solve the unclipped closed form on the middle
    with the residual budget, and accept the first candidate whose interior
    values stay inside the box and whose boundary groups satisfy the
    stationarity inequalities (i.e. KKT holds).  Independent of
    :func:`kkt_oracle`, which bisects the multiplier instead.
    """
    w = _check_weights(w)
    K = w.size
    _check_feasible(K, B_tot, B_max)
    order = np.argsort(w, kind="stable")
    ws = w[order]
    tilt = (V / 2.0) * np.log2(ws)
    cap = np.inf if B_max is None else float(B_max)
    tol = _BUDGET_TOL
    for m in range(K + 1):  # nodes pinned at the cap, from the heaviest down
        if m and B_max is None:
            break
        residual = B_tot - m * (0.0 if B_max is None else B_max)
        if residual < -tol:
            break
        for z in range(K - m + 1):  # nodes pinned at 0, from the lightest up
            interior = slice(z, K - m)
            n_int = K - m - z
            if n_int == 0:
                if abs(residual) > tol:
                    continue
                trial = np.empty(0)
            else:
                t = tilt[interior]
                trial = residual / n_int + (t - t.mean())
                if trial.min() < -tol or trial.max() > cap + tol:
                    continue
                # shared water level must keep pinned groups at their bounds
                level = trial[0] - t[0]
                if z and level + tilt[z - 1] > tol:
                    continue
                if m and level + tilt[K - m] < cap - tol:
                    continue
            if n_int == 0 and z and m:
                # degenerate split: heaviest zeroed node must not out-tilt
                # the lightest capped one
                if tilt[z - 1] > tilt[z] + tol:
                    continue
            B_sorted = np.concatenate([
                np.zeros(z), np.clip(trial, 0.0, cap), np.full(m, cap),
            ])
            B = np.empty(K)
            B[order] = B_sorted
            saturated = (B <= tol) | (B >= cap - tol)
            return AllocationPlan(B=B, weights=w, B_tot=float(B_tot),
                                  B_max=B_max, saturated=saturated)
    raise InfeasibleBudgetError("no feasible threshold allocation found")


def kkt_oracle(w, B_tot: float, V: int, B_max: float | None = None,
               budget_tol: float = 1e-10) -> AllocationPlan:
    """Independent solver: bisection on the stationarity multiplier.

    Stationarity gives ``2**(-2 B_i / V) = lambda V K^2 / (2 w_i ln 2)``,
    i.e. ``B_i = (V/2) * (log2 w_i - mu)`` for a single scalar ``mu``;
    box-project and bisect ``mu`` until the budget residual is within
    ``budget_tol``.  Shares no code with :func:`waterfill_clipped`.
    """
    w = _check_weights(w)
    K = w.size
    _check_feasible(K, B_tot, B_max)
    log2w = np.log2(w)
    cap = B_max if B_max is not None else B_tot + 1.0

    def alloc_at(mu: float) -> np.ndarray:
        return np.clip((V / 2.0) * (log2w - mu), 0.0, cap)

    lo = float(log2w.min()) - 2.0 * (B_tot + K * cap) / V  # sum >= B_tot here
    hi = float(log2w.max())                                # sum == 0 here
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        total = alloc_at(mid).sum()
        if total > B_tot:
            lo = mid
        else:
            hi = mid
        if abs(total - B_tot) <= budget_tol and total <= B_tot:
            break
    B = alloc_at(hi)
    # Spread the residual roundoff over interior coordinates.
    interior = (B > 0.0) & (B < cap)
    gap = B_tot - B.sum()
    if interior.any():
        B[interior] += gap / interior.sum()
    if abs(B.sum() - B_tot) > budget_tol * max(1.0, B_tot):
        raise InfeasibleBudgetError("bisection failed to meet the budget")
    saturated = (B <= 0.0) | ((B >= B_max) if B_max is not None else np.zeros(K, bool))
    return AllocationPlan(B=B, weights=w, B_tot=float(B_tot),
                          B_max=B_max, saturated=saturated)


def inverse_weighted_baseline(w, B_tot: float, V: int,
                              B_max: float | None = None) -> AllocationPlan:
    """Anti-optimal comparison policy: the water-filling tilt with its sign
    flipped, so lower-weight nodes get more bits.  Equivalent to
    water-filling on 1/w, which is how the clipping/redistribution is
    reused."""
    w = _check_weights(w)
    plan = waterfill_clipped(1.0 / w, B_tot, V, B_max)
    return AllocationPlan(B=plan.B, weights=w, B_tot=plan.B_tot,
                          B_max=B_max, saturated=plan.saturated)


def integerize(plan: AllocationPlan, V: int) -> np.ndarray:
    """Integer bits-per-coordinate for the channel.

    Rounds each ``B_i / V`` to the nearest integer, then repairs any budget
    overshoot by removing single bits where the objective penalty is
    smallest, and spends any leftover whole-coordinate budget where the
    gain is largest.  Returns the per-node bits-per-coordinate vector.
    """
    w = plan.weights
    bits = np.rint(plan.B / V).astype(np.int64)
    np.maximum(bits, 0, out=bits)
    cap = None
    if plan.B_max is not None:
        cap = int(plan.B_max // V)
        np.minimum(bits, cap, out=bits)

    def marginal(b):
        # F change magnitude of one bit at level b: w * (4**-(b) - 4**-(b+1))
        return w * (4.0 ** (-b.astype(float)) - 4.0 ** (-(b.astype(float) + 1)))

    while bits.sum() * V > plan.B_tot + _BUDGET_TOL:
        candidates = bits > 0
        if not candidates.any():
            break
        penalty = np.where(candidates, marginal(bits - 1), np.inf)
        bits[int(np.argmin(penalty))] -= 1
    while True:
        if bits.sum() * V + V > plan.B_tot + _BUDGET_TOL:
            break
        candidates = np.ones_like(bits, dtype=bool) if cap is None else bits < cap
        if not candidates.any():
            break
        gain = np.where(candidates, marginal(bits), -np.inf)
        bits[int(np.argmax(gain))] += 1
    return bits
