"""Simplex numerics: softmax, KL, and the softmax-Hessian trace identity.

Probability vectors are plain float64 arrays.  They are produced either by
:func:`softmax` or by explicit :func:`normalize`; both guarantee
non-negative entries summing to one within 1e-12, which is the invariant
the rest of the package relies on.

All exponentials are max-shifted and KL is evaluated in log space, so the
functions stay usable for the extreme parameter sweeps the bound
evaluators admit, not just the default simulator ranges.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "softmax",
    "log_softmax",
    "normalize",
    "kl",
    "hessian_trace",
    "cumulant_kl_exact",
    "nondegeneracy_cp",
]

_SUM_TOL = 1e-12


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    ell = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(ell)):
        raise ValueError("logits must be finite")
    shifted = ell - ell.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax: adding a constant to all logits is a no-op."""
    ell = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(ell)):
        raise ValueError("logits must be finite")
    shifted = np.exp(ell - ell.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def normalize(weights) -> np.ndarray:
    """Explicitly renormalize non-negative weights into a distribution."""
    p = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("weights must be finite and non-negative")
    s = p.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError("weights must have positive sum")
    p = p / s
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > _SUM_TOL):
        raise ValueError("normalization failed to reach tolerance")
    return p


def kl(p, q, axis: int = -1):
    """Kullback-Leibler divergence sum(p * log(p / q)) with 0 log 0 = 0.

    Support violations (p > 0 where q == 0) yield +inf rather than an
    exception, flagging the divergence to the caller.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * (np.log(p) - np.log(q)), 0.0)
    out = terms.sum(axis=axis)
    # Roundoff can leave tiny negatives for p ~ q; the divergence is >= 0.
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def hessian_trace(p, axis: int = -1):
    """Trace of the softmax Hessian diag(p) - p p^T, i.e. 1 - ||p||^2.

    Bounded between ``1 - max(p)`` and 1; zero exactly for one-hot p.
    """
    p = np.asarray(p, dtype=float)
    out = 1.0 - (p * p).sum(axis=axis)
    return out if out.ndim else float(out)


def cumulant_kl_exact(ell_star, eta) -> float:
    """KL(softmax(l), softmax(l + eta)) via the log-partition cumulant form.

    Evaluates log E_{Y~p}[exp(eta_Y)] - p^T eta.  Centering eta at its
    p-mean first turns the expression into log1p of a non-negative sum of
    expm1(delta) - delta terms, which keeps full relative precision even
    for perturbations whose KL is many orders below 1; very large centered
    perturbations fall back to a max-shifted log-sum-exp.  Agrees with the
    direct softmax/KL path to 1e-12 relative away from that path's own
    cancellation floor.
    """
    ell = np.asarray(ell_star, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if ell.shape != eta.shape:
        raise ValueError("logit and perturbation shapes differ")
    logp = log_softmax(ell)
    p = np.exp(logp)
    mean = float(p @ eta)
    delta = eta - mean
    if delta.max() > 30.0:
        return float(logsumexp(logp + delta))
    return max(0.0, float(np.log1p(p @ (np.expm1(delta) - delta))))


def nondegeneracy_cp(prob_rows) -> float:
    """Average Hessian trace over probe rows: the empirical non-degeneracy
    constant that calibrates the channel lower bound."""
    rows = np.atleast_2d(np.asarray(prob_rows, dtype=float))
    if rows.size == 0:
        raise ValueError("need at least one probability row")
    rows = normalize(rows)
    return float(np.mean(hessian_trace(rows, axis=-1)))
