"""Exact NPLCM likelihood evaluation.

Class indices follow the convention that ``ell = 0`` is the control
class (all-zero latent state) and ``ell = 1..L`` are the case classes in
cause-list order.  All arithmetic is done in the log domain; probability
parameters are clamped away from {0, 1} by ``PROB_EPS`` except the
structural zero of silver-standard false positives, which is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import BRS, SS, Dataset, InputError, ModelSpec, Template, make_template

PROB_EPS = 1e-12


def _clamp(p) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=float), PROB_EPS, 1.0 - PROB_EPS)


@dataclass
class MeasurementParams:
    """TPR/FPR parameters per slice.

    ``brs`` maps a BrS slice name to a pair of J x K matrices
    (theta, psi); ``ss`` maps an SS slice name to a length-J TPR vector
    (FPR is structurally zero, and SS responses have no subclass).
    """

    brs: dict = field(default_factory=dict)
    ss: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, (theta, psi) in list(self.brs.items()):
            theta = np.atleast_2d(np.asarray(theta, dtype=float))
            psi = np.atleast_2d(np.asarray(psi, dtype=float))
            if theta.shape != psi.shape:
                raise InputError(f"slice {name!r}: theta and psi shapes differ")
            if not ((theta > 0) & (theta < 1)).all() or not ((psi > 0) & (psi < 1)).all():
                raise InputError(f"slice {name!r}: rates must lie in (0, 1)")
            self.brs[name] = (theta, psi)
        for name, theta in list(self.ss.items()):
            theta = np.atleast_1d(np.asarray(theta, dtype=float))
            if not ((theta > 0) & (theta < 1)).all():
                raise InputError(f"SS slice {name!r}: rates must lie in (0, 1)")
            self.ss[name] = theta


def _check_simplex(w, what):
    w = np.asarray(w, dtype=float)
    if (w < 0).any():
        raise InputError(f"{what} has negative entries")
    if np.abs(w.sum(axis=-1) - 1.0).max() > 1e-12:
        raise InputError(f"{what} rows must sum to 1 within 1e-12")
    return w


@dataclass
class MixingWeights:
    """Mixing weights: CSCFs pi, case subclass weights eta, control
    subclass weights nu.

    ``pi`` is a length-L simplex or an N x L per-subject array under
    regression (rows indexed by global subject index; control rows are
    ignored).  ``eta`` and ``nu`` map BrS slice names to length-K
    simplexes or N x K per-subject arrays.
    """

    pi: np.ndarray
    eta: dict = field(default_factory=dict)
    nu: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pi = _check_simplex(self.pi, "pi")
        self.eta = {k: _check_simplex(v, f"eta[{k}]") for k, v in self.eta.items()}
        self.nu = {k: _check_simplex(v, f"nu[{k}]") for k, v in self.nu.items()}


def build_templates(data: Dataset, spec: ModelSpec) -> dict:
    """Causative-item template per slice (BrS and SS), keyed by name."""
    return {
        s.name: make_template(s.items, spec.cause_list, slice_name=s.name)
        for s in data.mbs + data.mss
    }


def response_prob(template: Template, j: int, k: int, ell: int, theta, psi=None) -> float:
    """Positive response probability for item ``j`` under subclass ``k``
    and class ``ell`` (``ell = 0`` means control).

    For BrS slices pass J x K ``theta`` and ``psi``; for SS slices pass
    the length-J ``theta`` vector and ``psi=None`` (non-causative items
    respond with probability exactly 0).
    """
    L = template.n_causes
    if not (0 <= ell <= L):
        raise IndexError(f"class index {ell} out of range 0..{L}")
    row = L if ell == 0 else ell - 1
    causative = bool(template.matrix[row, j])
    if psi is None:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return float(theta[j]) if causative else 0.0
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    if not (0 <= k < theta.shape[1]):
        raise IndexError(f"subclass index {k} out of range")
    return float(theta[j, k]) if causative else float(psi[j, k])


def _bern_logpmf(m, p):
    """Bernoulli log-pmf with NaN entries contributing zero (MAR)."""
    p = _clamp(p)
    obs = ~np.isnan(m)
    m0 = np.where(obs, m, 0.0)
    return np.where(obs, m0 * np.log(p) + (1.0 - m0) * np.log1p(-p), 0.0)


def subject_loglik(
    i: int,
    ell: int,
    z,
    data: Dataset,
    params: MeasurementParams,
    spec: ModelSpec,
    templates: dict | None = None,
) -> float:
    """Log-likelihood of subject ``i``'s measurements given class ``ell``
    and per-BrS-slice subclass indices ``z``.

    ``z`` is a dict mapping BrS slice name to a 0-based subclass index
    (an int is accepted when there is a single BrS slice).  SS terms are
    included only for cases and only when SS data are in use; a positive
    SS result on a non-causative item yields ``-inf``.
    """
    if templates is None:
        templates = build_templates(data, spec)
    if isinstance(z, (int, np.integer)):
        if len(data.mbs) > 1:
            raise InputError("z must be a dict when there are multiple BrS slices")
        z = {s.name: int(z) for s in data.mbs}
    is_case = data.y[i] == 1
    if ell == 0 and is_case:
        raise InputError("class 0 is reserved for controls")
    total = 0.0
    if BRS in spec.use_measurements:
        for s in data.mbs:
            theta, psi = params.brs[s.name]
            t = templates[s.name]
            k = int(z[s.name])
            row = t.n_causes if ell == 0 else ell - 1
            for j in range(s.n_items):
                m = s.data[i, j]
                if np.isnan(m):
                    continue
                p = theta[j, k] if t.matrix[row, j] else psi[j, k]
                total += float(_bern_logpmf(np.array(m), p))
    if SS in spec.use_measurements and is_case:
        for s in data.mss:
            theta = params.ss[s.name]
            t = templates[s.name]
            row = ell - 1
            for j in range(s.n_items):
                m = s.data[i, j]
                if np.isnan(m):
                    continue
                if t.matrix[row, j]:
                    total += float(_bern_logpmf(np.array(m), theta[j]))
                elif m == 1.0:
                    return -np.inf
    return total


def brs_loglik_cube(s, template: Template, theta, psi) -> np.ndarray:
    """N x (L+1) x K log-likelihood of one BrS slice.

    Axis 1 indexes template rows: 0..L-1 are the case classes, L is the
    control class.  Missing entries contribute zero.
    """
    theta = np.atleast_2d(theta)
    psi = np.atleast_2d(psi)
    m = s.data
    ll_theta = _bern_logpmf(m[:, :, None], theta[None, :, :])  # N x J x K
    ll_psi = _bern_logpmf(m[:, :, None], psi[None, :, :])
    t = template.matrix.astype(float)  # (L+1) x J
    cube = np.einsum("ijk,lj->ilk", ll_theta - ll_psi, t)
    cube += ll_psi.sum(axis=1)[:, None, :]
    return cube


def ss_loglik_matrix(s, template: Template, theta) -> np.ndarray:
    """N x (L+1) log-likelihood of one SS slice (no subclass).

    A positive result on an item that is non-causative under a class
    gives ``-inf`` for that class; missing entries contribute zero.
    """
    theta = np.atleast_1d(theta)
    m = s.data
    obs = ~np.isnan(m)
    caus_term = _bern_logpmf(m, theta[None, :])  # N x J
    t = template.matrix.astype(float)
    mat = caus_term @ t.T  # N x (L+1)
    positive = (obs & (m == 1.0)).astype(float)
    n_violations = positive @ (1.0 - t).T
    mat[n_violations > 0] = -np.inf
    return mat


def _per_subject_rows(w, n, idx):
    """Rows of a weight array for subjects ``idx`` (broadcast if 1-D)."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        return np.broadcast_to(w, (len(idx), w.size))
    if w.shape[0] != n:
        raise InputError("per-subject weights must have one row per subject")
    return w[idx]


def marginal_loglik(
    data: Dataset,
    params: MeasurementParams,
    weights: MixingWeights,
    spec: ModelSpec,
    templates: dict | None = None,
) -> float:
    """Marginal log-likelihood with all latent class and subclass
    assignments summed out (log-sum-exp over the (ell, k) grid).

    Intended for small instances and as a testing reference; no
    performance guarantee.
    """
    if templates is None:
        templates = build_templates(data, spec)
    n = data.n_subjects
    L = len(spec.cause_list)
    cases = np.where(data.y == 1)[0]
    controls = np.where(data.y == 0)[0]
    total = 0.0

    # controls: per slice, mix over subclasses with nu
    if BRS in spec.use_measurements and len(controls):
        for s in data.mbs:
            theta, psi = params.brs[s.name]
            cube = brs_loglik_cube(s, templates[s.name], theta, psi)
            nu = _per_subject_rows(weights.nu[s.name], n, controls)
            total += logsumexp(cube[controls, L, :] + np.log(_clamp(nu)), axis=1).sum()

    if len(cases):
        per_class = np.zeros((len(cases), L))
        if BRS in spec.use_measurements:
            for s in data.mbs:
                theta, psi = params.brs[s.name]
                cube = brs_loglik_cube(s, templates[s.name], theta, psi)
                eta = _per_subject_rows(weights.eta[s.name], n, cases)
                per_class += logsumexp(
                    cube[cases, :L, :] + np.log(_clamp(eta))[:, None, :], axis=2
                )
        if SS in spec.use_measurements:
            for s in data.mss:
                mat = ss_loglik_matrix(s, templates[s.name], params.ss[s.name])
                per_class += mat[cases, :L]
        pi = _per_subject_rows(weights.pi, n, cases)
        with np.errstate(divide="ignore"):
            total += logsumexp(per_class + np.log(pi), axis=1).sum()
    return float(total)
