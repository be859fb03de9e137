"""Prior constructors and samplers.

Covers the Dirichlet prior on cause-specific case fractions, Beta
TPR/FPR priors with quantile range-matching elicitation, and truncated
stick-breaking priors on subclass weights with Gamma hyperpriors on the
concentration parameters (shape-rate parameterization, default
Gamma(0.25, 0.25), prior mean 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .core import InputError, TprPriorSpec

RANGE_QUANTILES = (0.025, 0.975)


@dataclass
class BetaRange:
    """Prior 2.5% and 97.5% quantiles for an elicited Beta distribution."""

    low: float
    up: float

    def __post_init__(self):
        if not (0.0 < self.low < self.up < 1.0):
            raise InputError(f"need 0 < low < up < 1, got ({self.low}, {self.up})")


@dataclass
class StickBreakingPrior:
    """Truncated stick-breaking prior at K subclasses with a Gamma
    hyperprior on the concentration parameter."""

    K: int
    alpha_shape: float = 0.25
    alpha_rate: float = 0.25

    def __post_init__(self):
        if self.K < 1:
            raise InputError("K must be >= 1")
        if self.alpha_shape <= 0 or self.alpha_rate <= 0:
            raise InputError("Gamma hyperparameters must be positive")


def beta_from_range(r: BetaRange, tol: float = 1e-8, max_restarts: int = 8) -> tuple:
    """Beta parameters whose 0.025/0.975 quantiles match ``(low, up)``.

    Solves the two quantile equations by root finding on
    (log c1, log c2); the returned parameters are re-verified so that
    both quantile residuals are below ``tol``.
    """
    ql, qu = RANGE_QUANTILES
    target = np.array([ql, qu])

    def residual(log_c):
        c1, c2 = np.exp(log_c)
        return stats.beta.cdf([r.low, r.up], c1, c2) - target

    # moment-matched start: treat (low, up) as mean +/- 2 sd
    m = 0.5 * (r.low + r.up)
    s = max((r.up - r.low) / 4.0, 1e-3)
    nu = max(m * (1.0 - m) / s**2 - 1.0, 0.1)
    x0 = np.log([max(m * nu, 1e-3), max((1.0 - m) * nu, 1e-3)])

    best = None
    for attempt in range(max_restarts):
        sol = optimize.root(residual, x0, method="hybr", tol=1e-12)
        res = residual(sol.x)
        if best is None or np.abs(res).max() < np.abs(best[1]).max():
            best = (sol.x, res)
        if np.abs(res).max() < tol:
            c1, c2 = np.exp(sol.x)
            return float(c1), float(c2)
        # jitter the start deterministically and retry
        x0 = x0 + 0.5 * np.array([(-1) ** attempt, (-1) ** (attempt // 2)]) * (1 + attempt)
    raise InputError(
        f"beta_from_range failed for ({r.low}, {r.up}); residuals {best[1]}"
    )


def tpr_beta_params(prior: TprPriorSpec) -> tuple:
    """Resolve a TPR prior spec into per-item (c1, c2) vectors."""
    if prior.kind == "beta":
        return prior.a.copy(), prior.b.copy()
    c1 = np.empty_like(prior.a)
    c2 = np.empty_like(prior.b)
    for j, (lo, up) in enumerate(zip(prior.a, prior.b)):
        c1[j], c2[j] = beta_from_range(BetaRange(float(lo), float(up)))
    return c1, c2


def stick_weights(v) -> np.ndarray:
    """Simplex of length K from K-1 stick fractions in [0, 1].

    w_k = v_k * prod_{s<k}(1 - v_s); the last weight takes the
    remainder of the stick.  Boundary fractions are allowed (a fraction
    of 1 concentrates all remaining mass on that subclass).
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size and not ((v >= 0) & (v <= 1)).all():
        raise InputError("stick fractions must lie in [0, 1]")
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - v)])
    w = np.empty(v.size + 1)
    w[:-1] = v * remaining[:-1]
    w[-1] = remaining[-1]
    return w


def _log_gamma_draw(shape, rng):
    """log of Gamma(shape, 1) draws, accurate for tiny shapes.

    Uses the boost G = G' * U^(1/shape) with G' ~ Gamma(shape + 1), so
    the logarithm never underflows even when the draw itself would.
    """
    shape = np.atleast_1d(np.asarray(shape, dtype=float))
    g = rng.gamma(shape + 1.0)
    u = rng.random(shape.shape)
    return np.log(g) + np.log(u) / shape


def sample_stick_fracs(a, b, rng) -> tuple:
    """Stick fractions v ~ Beta(a, b) together with exact log(1 - v).

    The log complement is computed in log space (via log-Gamma draws),
    which stays exact when ``b`` is near zero and ``1 - v`` underflows;
    a naive Beta draw would round v to 1 and lose the tail that the
    concentration-parameter update depends on.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    log_ga = _log_gamma_draw(a, rng)
    log_gb = _log_gamma_draw(b, rng)
    log1mv = log_gb - np.logaddexp(log_ga, log_gb)
    v = -np.expm1(log1mv)
    return v, log1mv


def sample_prior_state(data, spec, rng):
    """Draw a full parameter state (including latents consistent with
    the data layout) from the joint prior."""
    from .sampler import NplcmModel

    return NplcmModel(data, spec).sample_prior_state(rng)


def sample_stick_arm(prior: StickBreakingPrior, rng) -> tuple:
    """Draw (alpha, stick fractions, weights) from the truncated
    stick-breaking prior."""
    alpha = rng.gamma(prior.alpha_shape, 1.0 / prior.alpha_rate)
    if prior.K == 1:
        return alpha, np.empty(0), np.ones(1)
    v, _ = sample_stick_fracs(np.ones(prior.K - 1), np.full(prior.K - 1, alpha), rng)
    return alpha, v, stick_weights(v)
