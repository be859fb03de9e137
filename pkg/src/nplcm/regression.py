"""Covariate machinery for the regression model variants.

Formula mini-language (deterministically parsed):

    "~ 1"                                intercept only
    "~ -1 + factor(SITE)"                factor dummies, no intercept
    "~ AGE + factor(SITE)"               standardized linear + dummies
    "~ -1 + s(DATE, ps, dof=7) + factor(SITE)"   penalized B-spline block

Terms are "+"-separated; "-1" (or "0") removes the intercept.  Bare
column names are standardized continuous linear terms; ``factor(NAME)``
expands to indicator columns (full-rank one-hot when there is no
intercept, drop-first otherwise); ``s(NAME, ps, dof=M)`` is a cubic
B-spline block with knots at quantiles of the training data.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import expit

from .core import CovariateTable, FactorColumn, InputError

# coefficient prior scales (logit scale), shared by the CSCF and the
# subclass-weight regressions; spline blocks additionally carry a
# first-difference Gaussian penalty with precision tau
LINEAR_PRIOR_SD = 3.0
SPLINE_RIDGE_SD = 10.0
TAU_PRIOR_SHAPE = 0.5
TAU_PRIOR_RATE = 0.5

_SMOOTH_RE = re.compile(
    r"^s\(\s*(\w+)\s*,\s*(?:basis\s*=\s*)?['\"]?ps['\"]?\s*,\s*dof\s*=\s*(\d+)\s*\)$"
)
_FACTOR_RE = re.compile(r"^(?:as\.)?factor\(\s*(\w+)\s*\)$")


@dataclass
class Term:
    kind: str  # "linear" | "factor" | "smooth"
    column: str
    dof: int = 0


@dataclass
class Formula:
    intercept: bool
    terms: list[Term]


def parse_formula(formula: str) -> Formula:
    body = formula.strip()
    if body.startswith("~"):
        body = body[1:]
    intercept = True
    terms = []
    for raw in body.split("+"):
        t = raw.strip()
        if not t or t == "1":
            continue
        if t in ("-1", "0"):
            intercept = False
            continue
        m = _SMOOTH_RE.match(t)
        if m:
            dof = int(m.group(2))
            if dof < 3:
                raise InputError(f"smooth term {t!r}: dof must be >= 3")
            terms.append(Term("smooth", m.group(1), dof))
            continue
        m = _FACTOR_RE.match(t)
        if m:
            terms.append(Term("factor", m.group(1)))
            continue
        if re.fullmatch(r"\w+", t):
            terms.append(Term("linear", t))
            continue
        raise InputError(f"cannot parse formula term {t!r}")
    return Formula(intercept=intercept, terms=terms)


@dataclass
class Block:
    """One column block of a design matrix, with everything needed to
    rebuild the same columns at prediction time."""

    name: str
    kind: str  # "intercept" | "linear" | "factor" | "spline"
    start: int
    stop: int
    levels: tuple = ()
    drop_first: bool = False
    mean: float = 0.0
    sd: float = 1.0
    knots: np.ndarray | None = None
    degree: int = 3

    @property
    def n_cols(self) -> int:
        return self.stop - self.start


@dataclass
class DesignMatrix:
    matrix: np.ndarray
    blocks: list[Block] = field(default_factory=list)

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def spline_blocks(self) -> list[Block]:
        return [b for b in self.blocks if b.kind == "spline"]

    def rows_for(self, covariates: CovariateTable) -> np.ndarray:
        """Evaluate the design at new covariate rows using the stored
        standardization statistics, factor codings, and knots."""
        n = covariates.n_rows
        out = np.zeros((n, self.n_cols))
        for b in self.blocks:
            if b.kind == "intercept":
                out[:, b.start] = 1.0
                continue
            col = covariates[b.name]
            if b.kind == "factor":
                if not isinstance(col, FactorColumn):
                    raise InputError(f"column {b.name!r} must be a factor")
                if tuple(col.levels) != tuple(b.levels):
                    raise InputError(
                        f"factor {b.name!r} levels {col.levels} do not match "
                        f"training levels {b.levels}"
                    )
                out[:, b.start : b.stop] = _one_hot(col.codes, len(b.levels), b.drop_first)
            elif b.kind == "linear":
                out[:, b.start] = (col.values - b.mean) / b.sd
            else:
                z = (col.values - b.mean) / b.sd
                out[:, b.start : b.stop] = _spline_design(z, b.knots, b.degree)
        return out


def _one_hot(codes, n_levels, drop_first):
    eye = np.eye(n_levels)
    cols = eye[codes]
    return cols[:, 1:] if drop_first else cols


def spline_knots(x: np.ndarray, dof: int, degree: int = 3) -> np.ndarray:
    """Clamped knot vector with interior knots at equally spaced
    quantiles and boundary knots at the data range."""
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi <= lo:
        raise InputError("cannot place spline knots on a constant column")
    n_interior = dof - degree - 1
    if n_interior < 0:
        raise InputError(f"dof={dof} too small for degree {degree}")
    if n_interior:
        qs = np.linspace(0, 1, n_interior + 2)[1:-1]
        interior = np.quantile(x, qs)
    else:
        interior = np.empty(0)
    return np.concatenate([[lo] * (degree + 1), interior, [hi] * (degree + 1)])


def _spline_design(x, knots, degree):
    lo, hi = knots[0], knots[-1]
    xc = np.clip(x, lo, hi)  # out-of-range points are clamped
    dm = BSpline.design_matrix(xc, knots, degree, extrapolate=False).toarray()
    return dm


def bspline_basis(x, dof: int, degree: int = 3, knots: np.ndarray | None = None) -> np.ndarray:
    """N x dof cubic B-spline basis on standardized values.

    Knots default to :func:`spline_knots` of ``x``.  Rows sum to one
    (partition of unity) for points inside the boundary knots;
    out-of-range points are clamped to the boundary.
    """
    x = np.asarray(x, dtype=float)
    if dof < degree + 1:
        raise InputError(f"dof must be >= {degree + 1}")
    if knots is None:
        knots = spline_knots(x, dof, degree)
    basis = _spline_design(x, knots, degree)
    if basis.shape[1] != dof:
        raise InputError(f"knot vector implies {basis.shape[1]} basis functions, not {dof}")
    return basis


def build_design(formula: Formula | str, covariates: CovariateTable) -> DesignMatrix:
    """Column-blocked design matrix from a parsed formula.

    Continuous columns are standardized (training mean 0, SD 1); the
    statistics are retained in the block metadata along with spline
    knots so the same design can be evaluated at prediction points.
    """
    if isinstance(formula, str):
        formula = parse_formula(formula)
    n = covariates.n_rows
    cols: list[np.ndarray] = []
    blocks: list[Block] = []
    pos = 0
    have_main = formula.intercept
    if formula.intercept:
        cols.append(np.ones((n, 1)))
        blocks.append(Block("(intercept)", "intercept", 0, 1))
        pos = 1
    for term in formula.terms:
        if term.column not in covariates:
            raise InputError(f"formula references missing column {term.column!r}")
        col = covariates[term.column]
        if term.kind == "factor":
            if not isinstance(col, FactorColumn):
                raise InputError(f"factor() applied to continuous column {term.column!r}")
            drop_first = have_main
            have_main = True
            block_cols = _one_hot(col.codes, len(col.levels), drop_first)
            blocks.append(
                Block(
                    term.column, "factor", pos, pos + block_cols.shape[1],
                    levels=tuple(col.levels), drop_first=drop_first,
                )
            )
        elif term.kind == "linear":
            if isinstance(col, FactorColumn):
                raise InputError(f"continuous term on factor column {term.column!r}")
            mean = float(np.mean(col.values))
            sd = float(np.std(col.values))
            if sd == 0.0:
                raise InputError(f"column {term.column!r} is constant")
            block_cols = ((col.values - mean) / sd)[:, None]
            blocks.append(Block(term.column, "linear", pos, pos + 1, mean=mean, sd=sd))
        else:  # smooth
            if isinstance(col, FactorColumn):
                raise InputError(f"smooth term on factor column {term.column!r}")
            mean = float(np.mean(col.values))
            sd = float(np.std(col.values))
            if sd == 0.0:
                raise InputError(f"column {term.column!r} is constant")
            z = (col.values - mean) / sd
            knots = spline_knots(z, term.dof)
            block_cols = bspline_basis(z, term.dof, knots=knots)
            blocks.append(
                Block(term.column, "spline", pos, pos + term.dof,
                      mean=mean, sd=sd, knots=knots)
            )
        cols.append(block_cols)
        pos += block_cols.shape[1]
    if not cols:
        raise InputError("formula yields an empty design (no intercept, no terms)")
    return DesignMatrix(matrix=np.hstack(cols), blocks=blocks)


def cscf_weights(design_row, gamma) -> np.ndarray:
    """Length-L simplex from the multinomial-logit link.

    ``gamma`` has one coefficient row per class; accepts a single design
    row or an N x P matrix (returns N x L)."""
    row = np.asarray(design_row, dtype=float)
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    phi = row @ gamma.T
    phi = phi - np.max(phi, axis=-1, keepdims=True)
    w = np.exp(phi)
    return w / w.sum(axis=-1, keepdims=True)


def subclass_weights(design_row, coefs, mu) -> np.ndarray:
    """Length-K simplex from the logistic stick-breaking link.

    Linear predictors are ``mu[k] + design_row @ coefs[k]`` for sticks
    ``k = 1..K-1``; the last weight takes the remainder.  Accepts a
    single design row or an N x P matrix (returns N x K).
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    K = mu.size + 1
    row = np.asarray(design_row, dtype=float)
    single = row.ndim == 1
    row2 = np.atleast_2d(row)
    if K == 1:
        out = np.ones((row2.shape[0], 1))
        return out[0] if single else out
    coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
    alpha = mu[None, :] + row2 @ coefs.T  # N x (K-1)
    g = expit(alpha)
    remaining = np.concatenate(
        [np.ones((row2.shape[0], 1)), np.cumprod(1.0 - g, axis=1)], axis=1
    )
    w = np.empty((row2.shape[0], K))
    w[:, :-1] = g * remaining[:, :-1]
    w[:, -1] = remaining[:, -1]
    return w[0] if single else w


def first_difference_matrix(m: int) -> np.ndarray:
    d = np.zeros((m - 1, m))
    idx = np.arange(m - 1)
    d[idx, idx] = -1.0
    d[idx, idx + 1] = 1.0
    return d


def coef_log_prior(beta_row: np.ndarray, design: DesignMatrix, taus: np.ndarray) -> float:
    """Log prior density (up to a constant) for one coefficient row.

    Non-spline coefficients get independent Normal(0, LINEAR_PRIOR_SD^2);
    each spline block gets a first-difference Gaussian penalty with its
    own precision plus a weak ridge that fixes the level.
    """
    total = 0.0
    spline_cols = np.zeros(len(beta_row), dtype=bool)
    for b_idx, b in enumerate(design.spline_blocks):
        beta = beta_row[b.start : b.stop]
        spline_cols[b.start : b.stop] = True
        d = first_difference_matrix(b.n_cols)
        tau = taus[b_idx]
        total += 0.5 * (b.n_cols - 1) * np.log(tau)
        total -= 0.5 * tau * float(np.sum((d @ beta) ** 2))
        total -= 0.5 * float(np.sum(beta**2)) / SPLINE_RIDGE_SD**2
    other = beta_row[~spline_cols]
    total -= 0.5 * float(np.sum(other**2)) / LINEAR_PRIOR_SD**2
    return total


def sample_coef_prior(design: DesignMatrix, rng) -> tuple:
    """Draw (coefficient row, spline block precisions) from the prior."""
    p = design.n_cols
    beta = rng.normal(0.0, LINEAR_PRIOR_SD, size=p)
    taus = np.empty(len(design.spline_blocks))
    for b_idx, b in enumerate(design.spline_blocks):
        tau = rng.gamma(TAU_PRIOR_SHAPE, 1.0 / TAU_PRIOR_RATE)
        taus[b_idx] = tau
        d = first_difference_matrix(b.n_cols)
        prec = tau * (d.T @ d) + np.eye(b.n_cols) / SPLINE_RIDGE_SD**2
        cov = np.linalg.inv(prec)
        beta[b.start : b.stop] = rng.multivariate_normal(np.zeros(b.n_cols), cov)
    return beta, taus


def update_penalty_precisions(beta_row: np.ndarray, design: DesignMatrix, rng) -> np.ndarray:
    """Conjugate Gamma update of the spline penalty precisions."""
    taus = np.empty(len(design.spline_blocks))
    for b_idx, b in enumerate(design.spline_blocks):
        beta = beta_row[b.start : b.stop]
        d = first_difference_matrix(b.n_cols)
        rss = float(np.sum((d @ beta) ** 2))
        shape = TAU_PRIOR_SHAPE + 0.5 * (b.n_cols - 1)
        rate = TAU_PRIOR_RATE + 0.5 * rss
        taus[b_idx] = rng.gamma(shape, 1.0 / rate)
    return taus
