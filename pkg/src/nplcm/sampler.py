"""Native MCMC engine: data-augmentation Gibbs kernels for the
no-regression model and Metropolis-within-Gibbs for regression
coefficients.

Sweep order is fixed for reproducibility: latent classes, latent
subclasses, response rates, then mixing weights or regression
coefficients.  Chains are independent; chain ``c`` uses the RNG stream
``default_rng([seed, c])``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import regression as reg
from .core import (
    BRS,
    SS,
    Dataset,
    InputError,
    McmcSettings,
    ModelSpec,
    validate_dataset,
)
from .likelihood import (
    PROB_EPS,
    brs_loglik_cube,
    build_templates,
    MixingWeights,
    MeasurementParams,
    ss_loglik_matrix,
)
from .priors import (
    StickBreakingPrior,
    sample_stick_arm,
    sample_stick_fracs,
    stick_weights,
    tpr_beta_params,
)

ADAPT_BATCH = 50
ACCEPT_TARGET = (0.2, 0.4)


class DataInconsistencyError(RuntimeError):
    """A case's silver-standard positives are impossible under every
    latent class; the data contradict the cause list."""


@dataclass
class ParameterState:
    """One full assignment of all unknowns (latent and top-level)."""

    classes: np.ndarray  # length N; 0 for controls, 1..L for cases
    subclass: dict  # BrS slice name -> length-N 0-based subclass index
    theta: dict  # BrS slice name -> J x K TPRs
    psi: dict  # BrS slice name -> J x K FPRs
    theta_ss: dict  # SS slice name -> length-J TPRs
    pi: np.ndarray | None = None  # length L, absent under CSCF regression
    sticks_eta: dict = field(default_factory=dict)  # name -> K-1 fractions
    sticks_nu: dict = field(default_factory=dict)
    alpha0: dict = field(default_factory=dict)  # control-arm concentration
    alpha1: dict = field(default_factory=dict)  # case-arm concentration
    coef_eti: np.ndarray | None = None  # L x P
    tau_eti: np.ndarray | None = None  # L x n_spline_blocks
    coef_nu: dict = field(default_factory=dict)  # name -> (K-1) x P_s
    coef_eta: dict = field(default_factory=dict)
    mu0: dict = field(default_factory=dict)  # name -> K-1 shared intercepts
    tau_nu: dict = field(default_factory=dict)
    tau_eta: dict = field(default_factory=dict)

    def copy(self) -> "ParameterState":
        return ParameterState(
            classes=self.classes.copy(),
            subclass={k: v.copy() for k, v in self.subclass.items()},
            theta={k: v.copy() for k, v in self.theta.items()},
            psi={k: v.copy() for k, v in self.psi.items()},
            theta_ss={k: v.copy() for k, v in self.theta_ss.items()},
            pi=None if self.pi is None else self.pi.copy(),
            sticks_eta={k: v.copy() for k, v in self.sticks_eta.items()},
            sticks_nu={k: v.copy() for k, v in self.sticks_nu.items()},
            alpha0=dict(self.alpha0),
            alpha1=dict(self.alpha1),
            coef_eti=None if self.coef_eti is None else self.coef_eti.copy(),
            tau_eti=None if self.tau_eti is None else self.tau_eti.copy(),
            coef_nu={k: v.copy() for k, v in self.coef_nu.items()},
            coef_eta={k: v.copy() for k, v in self.coef_eta.items()},
            mu0={k: v.copy() for k, v in self.mu0.items()},
            tau_nu={k: v.copy() for k, v in self.tau_nu.items()},
            tau_eta={k: v.copy() for k, v in self.tau_eta.items()},
        )


@dataclass
class ChainOutput:
    samples: pd.DataFrame
    seed: int
    chain: int
    accept: dict = field(default_factory=dict)
    individual: np.ndarray | None = None  # n_retained x n_cases class draws
    case_index: np.ndarray | None = None
    ppc: dict = field(default_factory=dict)  # slice name -> replicated stats


class NplcmModel:
    """Compiled model structure: data, spec, templates, resolved priors,
    and design matrices.  Immutable; shared by concurrent chains."""

    def __init__(self, data: Dataset, spec: ModelSpec):
        self.data = data
        self.spec = spec
        self.report = validate_dataset(data, spec)
        self.templates = build_templates(data, spec)
        self.L = len(spec.cause_list)
        self.n = data.n_subjects
        self.cases = np.where(data.y == 1)[0]
        self.controls = np.where(data.y == 0)[0]
        self.mbs = list(data.mbs) if BRS in spec.use_measurements else []
        self.mss = list(data.mss) if SS in spec.use_measurements else []
        if not self.mbs and not self.mss:
            raise InputError("no measurement slices selected by use_measurements")

        self.k = {s.name: spec.k_for(s.name) for s in self.mbs}
        self.tpr_beta = {}
        for s in self.mbs:
            prior = spec.tpr_prior.get(s.name)
            if prior is None:
                c1 = np.ones(s.n_items)
                c2 = np.ones(s.n_items)
            else:
                c1, c2 = tpr_beta_params(prior)
                if c1.size != s.n_items:
                    raise InputError(
                        f"TPR prior for {s.name!r} has {c1.size} items, slice has {s.n_items}"
                    )
            self.tpr_beta[s.name] = (c1, c2)
        self.ss_beta = {}
        for s in self.mss:
            prior = spec.tpr_prior.get(s.name)
            if prior is None:
                self.ss_beta[s.name] = (np.ones(s.n_items), np.ones(s.n_items))
            else:
                c1, c2 = tpr_beta_params(prior)
                if c1.size != s.n_items:
                    raise InputError(
                        f"TPR prior for {s.name!r} has {c1.size} items, slice has {s.n_items}"
                    )
                self.ss_beta[s.name] = (c1, c2)

        self.eti_design = (
            reg.build_design(spec.eti_formula, data.x) if spec.do_reg_eti() else None
        )
        self.fpr_design = {
            s.name: reg.build_design(spec.fpr_formula[s.name], data.x)
            for s in self.mbs
            if spec.do_reg_fpr(s.name)
        }
        self.stick_prior = StickBreakingPrior(
            K=max(self.k.values(), default=1),
            alpha_shape=spec.stick_shape,
            alpha_rate=spec.stick_rate,
        )
        self._allowed = self._ss_allowed_classes()
        self.eti_strata = self._eti_strata()

    # ---------- structure helpers ----------

    def _ss_allowed_classes(self) -> np.ndarray:
        """allowed[i, l] for cases: no positive SS entry on an item that
        is non-causative under class l+1."""
        allowed = np.ones((self.n, self.L), dtype=bool)
        for s in self.mss:
            t = self.templates[s.name].matrix
            positive = (~np.isnan(s.data)) & (s.data == 1.0)
            violations = positive.astype(float) @ (1.0 - t[: self.L]).T
            allowed &= violations == 0
        bad = self.cases[~allowed[self.cases].any(axis=1)]
        if bad.size:
            raise DataInconsistencyError(
                f"case(s) {bad.tolist()} have SS positives impossible under "
                "every class in the cause list"
            )
        return allowed

    def _eti_strata(self):
        """Unique CSCF design rows with labels and counts, available when
        the CSCF regression uses only discrete covariates."""
        if self.eti_design is None or not self.report.is_discrete_eti:
            return None
        rows = self.eti_design.matrix[self.cases]
        uniq, first_idx, counts = np.unique(
            rows, axis=0, return_index=True, return_counts=True
        )
        order = np.argsort(first_idx)
        uniq, first_idx, counts = uniq[order], first_idx[order], counts[order]
        labels = []
        factor_cols = [
            b.name for b in self.eti_design.blocks if b.kind == "factor"
        ]
        for idx in first_idx:
            subj = self.cases[idx]
            parts = []
            for name in factor_cols:
                col = self.data.x[name]
                parts.append(f"{name}={col.levels[col.codes[subj]]}")
            labels.append("|".join(parts) if parts else "all")
        return {"rows": uniq, "counts": counts, "labels": labels}

    # ---------- weights ----------

    def case_pi(self, state) -> np.ndarray:
        """n_cases x L CSCF matrix under the current state."""
        if self.eti_design is None:
            return np.broadcast_to(state.pi, (len(self.cases), self.L))
        return reg.cscf_weights(self.eti_design.matrix[self.cases], state.coef_eti)

    def subclass_weight_rows(self, state, name: str, idx: np.ndarray, arm: str) -> np.ndarray:
        """len(idx) x K subclass weights for one arm of one BrS slice."""
        K = self.k[name]
        if K == 1:
            return np.ones((len(idx), 1))
        if name in self.fpr_design:
            coefs = state.coef_eta[name] if arm == "case" else state.coef_nu[name]
            return reg.subclass_weights(
                self.fpr_design[name].matrix[idx], coefs, state.mu0[name]
            )
        sticks = state.sticks_eta[name] if arm == "case" else state.sticks_nu[name]
        return np.broadcast_to(stick_weights(sticks), (len(idx), K))

    def measurement_params(self, state) -> MeasurementParams:
        return MeasurementParams(
            brs={s.name: (state.theta[s.name], state.psi[s.name]) for s in self.mbs},
            ss={s.name: state.theta_ss[s.name] for s in self.mss},
        )

    def mixing_weights(self, state) -> MixingWeights:
        """Weights in the form the exact likelihood expects (per-subject
        rows under regression)."""
        n = self.n
        if self.eti_design is None:
            pi = state.pi
        else:
            pi = np.zeros((n, self.L))
            pi[self.cases] = self.case_pi(state)
            pi[self.controls] = 1.0 / self.L  # unused rows, kept valid
        eta, nu = {}, {}
        for s in self.mbs:
            name = s.name
            if name in self.fpr_design:
                all_idx = np.arange(n)
                eta[name] = self.subclass_weight_rows(state, name, all_idx, "case")
                nu[name] = self.subclass_weight_rows(state, name, all_idx, "control")
            else:
                K = self.k[name]
                eta[name] = (
                    stick_weights(state.sticks_eta[name]) if K > 1 else np.ones(1)
                )
                nu[name] = (
                    stick_weights(state.sticks_nu[name]) if K > 1 else np.ones(1)
                )
        return MixingWeights(pi=pi, eta=eta, nu=nu)

    # ---------- initialization and prior draws ----------

    def init_state(self, rng) -> ParameterState:
        """Deterministic parameter start (prior means, coefficients 0)
        with random SS-consistent latent assignments."""
        classes = np.zeros(self.n, dtype=int)
        for i in self.cases:
            ok = np.where(self._allowed[i])[0]
            classes[i] = rng.choice(ok) + 1
        subclass, theta, psi = {}, {}, {}
        sticks_eta, sticks_nu, alpha0, alpha1 = {}, {}, {}, {}
        coef_nu, coef_eta, mu0, tau_nu, tau_eta = {}, {}, {}, {}, {}
        for s in self.mbs:
            K = self.k[s.name]
            subclass[s.name] = rng.integers(0, K, size=self.n)
            c1, c2 = self.tpr_beta[s.name]
            theta[s.name] = np.repeat((c1 / (c1 + c2))[:, None], K, axis=1)
            b1, b2 = self.spec.fpr_prior
            psi[s.name] = np.full((s.n_items, K), b1 / (b1 + b2))
            if K > 1:
                if s.name in self.fpr_design:
                    p = self.fpr_design[s.name].n_cols
                    coef_nu[s.name] = np.zeros((K - 1, p))
                    coef_eta[s.name] = np.zeros((K - 1, p))
                    mu0[s.name] = np.zeros(K - 1)
                    nb = len(self.fpr_design[s.name].spline_blocks)
                    tau_nu[s.name] = np.ones((K - 1, nb))
                    tau_eta[s.name] = np.ones((K - 1, nb))
                else:
                    sticks_eta[s.name] = np.full(K - 1, 0.5)
                    sticks_nu[s.name] = np.full(K - 1, 0.5)
                    alpha0[s.name] = self.spec.stick_shape / self.spec.stick_rate
                    alpha1[s.name] = self.spec.stick_shape / self.spec.stick_rate
        theta_ss = {}
        for s in self.mss:
            c1, c2 = self.ss_beta[s.name]
            theta_ss[s.name] = c1 / (c1 + c2)
        if self.eti_design is None:
            pi = self.spec.eti_prior / self.spec.eti_prior.sum()
            coef_eti = tau_eti = None
        else:
            pi = None
            coef_eti = np.zeros((self.L, self.eti_design.n_cols))
            tau_eti = np.ones((self.L, len(self.eti_design.spline_blocks)))
        return ParameterState(
            classes=classes, subclass=subclass, theta=theta, psi=psi,
            theta_ss=theta_ss, pi=pi, sticks_eta=sticks_eta, sticks_nu=sticks_nu,
            alpha0=alpha0, alpha1=alpha1, coef_eti=coef_eti, tau_eti=tau_eti,
            coef_nu=coef_nu, coef_eta=coef_eta, mu0=mu0,
            tau_nu=tau_nu, tau_eta=tau_eta,
        )

    def sample_prior_state(self, rng) -> ParameterState:
        """Draw every parameter from its prior, then latent classes and
        subclasses from the implied mixing weights."""
        state = self.init_state(rng)
        clip = lambda p: np.clip(p, PROB_EPS, 1 - PROB_EPS)
        for s in self.mbs:
            K = self.k[s.name]
            c1, c2 = self.tpr_beta[s.name]
            state.theta[s.name] = clip(
                rng.beta(c1[:, None], c2[:, None], size=(s.n_items, K))
            )
            b1, b2 = self.spec.fpr_prior
            state.psi[s.name] = clip(rng.beta(b1, b2, size=(s.n_items, K)))
            if K > 1:
                if s.name in self.fpr_design:
                    d = self.fpr_design[s.name]
                    for k in range(K - 1):
                        state.coef_nu[s.name][k], state.tau_nu[s.name][k] = (
                            reg.sample_coef_prior(d, rng)
                        )
                        state.coef_eta[s.name][k], state.tau_eta[s.name][k] = (
                            reg.sample_coef_prior(d, rng)
                        )
                    state.mu0[s.name] = rng.normal(0, reg.LINEAR_PRIOR_SD, size=K - 1)
                else:
                    prior = StickBreakingPrior(K, self.spec.stick_shape, self.spec.stick_rate)
                    a0, v0, _ = sample_stick_arm(prior, rng)
                    a1, v1, _ = sample_stick_arm(prior, rng)
                    state.alpha0[s.name], state.sticks_nu[s.name] = a0, v0
                    state.alpha1[s.name], state.sticks_eta[s.name] = a1, v1
        for s in self.mss:
            c1, c2 = self.ss_beta[s.name]
            state.theta_ss[s.name] = clip(rng.beta(c1, c2))
        if self.eti_design is None:
            state.pi = rng.dirichlet(self.spec.eti_prior)
        else:
            for ell in range(self.L):
                state.coef_eti[ell], state.tau_eti[ell] = reg.sample_coef_prior(
                    self.eti_design, rng
                )
        self.draw_latents(state, rng)
        return state

    def draw_latents(self, state, rng) -> None:
        """Draw classes (cases) and subclasses from the current mixing
        weights, ignoring measurements (forward model)."""
        pi = self.case_pi(state)
        cum = np.cumsum(pi, axis=1)
        u = rng.random(len(self.cases))
        state.classes[self.cases] = (cum > u[:, None]).argmax(axis=1) + 1
        state.classes[self.controls] = 0
        for s in self.mbs:
            for arm, idx in (("case", self.cases), ("control", self.controls)):
                if len(idx) == 0:
                    continue
                w = self.subclass_weight_rows(state, s.name, idx, arm)
                cum = np.cumsum(w, axis=1)
                u = rng.random(len(idx))
                state.subclass[s.name][idx] = (cum > u[:, None]).argmax(axis=1)

    # ---------- measurement simulation (PPD / calibration) ----------

    def simulate_measurements(self, state, rng, keep_mask: bool = True) -> dict:
        """Simulate measurement arrays given the state's latent
        assignments; optionally re-apply the observed missingness mask."""
        out = {}
        row_idx = np.where(state.classes == 0, self.L, state.classes - 1)
        for s in self.mbs:
            t = self.templates[s.name].matrix
            caus = t[row_idx]
            z = state.subclass[s.name]
            p = np.where(caus == 1, state.theta[s.name][:, z].T, state.psi[s.name][:, z].T)
            m = (rng.random(s.data.shape) < p).astype(float)
            if keep_mask:
                m[np.isnan(s.data)] = np.nan
            out[s.name] = m
        for s in self.mss:
            t = self.templates[s.name].matrix
            m = np.full(s.data.shape, np.nan)
            caus = t[row_idx[self.cases]]
            p = caus * state.theta_ss[s.name][None, :]
            m[self.cases] = (rng.random((len(self.cases), s.n_items)) < p).astype(float)
            if keep_mask:
                m[np.isnan(s.data)] = np.nan
            out[s.name] = m
        return out

    def replicate(self, state, rng) -> dict:
        """Posterior-predictive replication: redraw latents from the
        current weights, then measurements, with the observed mask."""
        rep = state.copy()
        self.draw_latents(rep, rng)
        return self.simulate_measurements(rep, rng, keep_mask=True)

    # ---------- likelihood caches ----------

    def brs_cubes(self, state) -> dict:
        return {
            s.name: brs_loglik_cube(
                s, self.templates[s.name], state.theta[s.name], state.psi[s.name]
            )
            for s in self.mbs
        }

    def ss_case_loglik(self, state) -> np.ndarray:
        """n_cases x L silver-standard log-likelihood (with structural
        -inf entries)."""
        out = np.zeros((len(self.cases), self.L))
        for s in self.mss:
            mat = ss_loglik_matrix(s, self.templates[s.name], state.theta_ss[s.name])
            out += mat[self.cases, : self.L]
        return out

    # ---------- Gibbs kernels ----------

    def update_class(self, state, rng, cubes=None) -> None:
        """Draw each case's latent class from its full conditional."""
        if len(self.cases) == 0:
            return
        if cubes is None:
            cubes = self.brs_cubes(state)
        with np.errstate(divide="ignore"):
            logw = np.log(self.case_pi(state))
        for s in self.mbs:
            z = state.subclass[s.name][self.cases]
            cube = cubes[s.name][self.cases]  # n_cases x (L+1) x K
            logw += np.take_along_axis(
                cube[:, : self.L, :], z[:, None, None], axis=2
            )[:, :, 0]
        logw += self.ss_case_loglik(state)
        state.classes[self.cases] = _sample_categorical_rows(logw, rng) + 1

    def update_subclass(self, state, rng, cubes=None) -> None:
        """Draw each subject's subclass per BrS slice; SS terms carry no
        subclass dependence and are excluded."""
        if cubes is None:
            cubes = self.brs_cubes(state)
        row_idx = np.where(state.classes == 0, self.L, state.classes - 1)
        for s in self.mbs:
            if self.k[s.name] == 1:
                continue
            cube = cubes[s.name]
            sel = np.take_along_axis(cube, row_idx[:, None, None], axis=1)[:, 0, :]
            for arm, idx in (("case", self.cases), ("control", self.controls)):
                if len(idx) == 0:
                    continue
                w = self.subclass_weight_rows(state, s.name, idx, arm)
                logw = np.log(np.clip(w, 1e-300, None)) + sel[idx]
                state.subclass[s.name][idx] = _sample_categorical_rows(logw, rng)

    def update_rates(self, state, rng) -> None:
        """Conjugate Beta updates of all TPRs and FPRs."""
        row_idx = np.where(state.classes == 0, self.L, state.classes - 1)
        for s in self.mbs:
            K = self.k[s.name]
            t = self.templates[s.name].matrix
            caus = t[row_idx].astype(bool)
            obs = ~np.isnan(s.data)
            pos = obs & (s.data == 1.0)
            neg = obs & (s.data == 0.0)
            zoh = np.eye(K)[state.subclass[s.name]]  # N x K
            s1 = np.einsum("nj,nk->jk", (pos & caus).astype(float), zoh)
            f1 = np.einsum("nj,nk->jk", (neg & caus).astype(float), zoh)
            s0 = np.einsum("nj,nk->jk", (pos & ~caus).astype(float), zoh)
            f0 = np.einsum("nj,nk->jk", (neg & ~caus).astype(float), zoh)
            c1, c2 = self.tpr_beta[s.name]
            b1, b2 = self.spec.fpr_prior
            state.theta[s.name] = np.clip(
                rng.beta(c1[:, None] + s1, c2[:, None] + f1), PROB_EPS, 1 - PROB_EPS
            )
            state.psi[s.name] = np.clip(
                rng.beta(b1 + s0, b2 + f0), PROB_EPS, 1 - PROB_EPS
            )
        for s in self.mss:
            t = self.templates[s.name].matrix
            caus = t[row_idx].astype(bool)
            obs = ~np.isnan(s.data)
            s1 = ((s.data == 1.0) & obs & caus).sum(axis=0)
            f1 = ((s.data == 0.0) & obs & caus).sum(axis=0)
            c1, c2 = self.ss_beta[s.name]
            state.theta_ss[s.name] = np.clip(
                rng.beta(c1 + s1, c2 + f1), PROB_EPS, 1 - PROB_EPS
            )

    def update_mixing_noreg(self, state, rng) -> None:
        """Dirichlet CSCF update and truncated stick-breaking updates
        with their Gamma concentration refreshes (conjugate closed
        forms); skipped for parts handled by regression."""
        if self.eti_design is None:
            counts = np.bincount(
                state.classes[self.cases] - 1, minlength=self.L
            ) if len(self.cases) else np.zeros(self.L)
            state.pi = rng.dirichlet(self.spec.eti_prior + counts)
        for s in self.mbs:
            K = self.k[s.name]
            if K == 1 or s.name in self.fpr_design:
                continue
            for arm, idx in (("case", self.cases), ("control", self.controls)):
                z = state.subclass[s.name][idx]
                n_k = np.bincount(z, minlength=K).astype(float)
                tail = np.concatenate([np.cumsum(n_k[::-1])[::-1][1:], [0.0]])
                alpha = state.alpha1[s.name] if arm == "case" else state.alpha0[s.name]
                # exact log(1 - v) keeps the concentration update
                # unbiased when the sticks saturate numerically
                v, log1mv = sample_stick_fracs(
                    1.0 + n_k[: K - 1], alpha + tail[: K - 1], rng
                )
                new_alpha = rng.gamma(
                    self.spec.stick_shape + K - 1,
                    1.0 / (self.spec.stick_rate - log1mv.sum()),
                )
                if arm == "case":
                    state.sticks_eta[s.name], state.alpha1[s.name] = v, new_alpha
                else:
                    state.sticks_nu[s.name], state.alpha0[s.name] = v, new_alpha

    # ---------- Metropolis regression kernels ----------

    def _eti_loglik(self, coef, state) -> float:
        phi = self.eti_design.matrix[self.cases] @ coef.T
        phi -= phi.max(axis=1, keepdims=True)
        logpi = phi - np.log(np.exp(phi).sum(axis=1))[:, None]
        return float(logpi[np.arange(len(self.cases)), state.classes[self.cases] - 1].sum())

    def _arm_loglik(self, name, coefs, mu, state, idx) -> float:
        w = reg.subclass_weights(self.fpr_design[name].matrix[idx], coefs, mu)
        sel = w[np.arange(len(idx)), state.subclass[name][idx]]
        return float(np.log(np.clip(sel, 1e-300, None)).sum())

    def update_regression(self, state, rng, mh: "MhController") -> None:
        """Blockwise random-walk Metropolis on regression coefficients,
        plus conjugate Gamma refreshes of spline penalty precisions."""
        if self.eti_design is not None:
            d = self.eti_design
            for ell in range(self.L):
                name = f"eti[{ell + 1}]"
                cur = state.coef_eti[ell]
                cur_target = self._eti_loglik(state.coef_eti, state) + reg.coef_log_prior(
                    cur, d, state.tau_eti[ell]
                )
                prop = cur + mh.scale(name) * rng.standard_normal(cur.size)
                cand = state.coef_eti.copy()
                cand[ell] = prop
                new_target = self._eti_loglik(cand, state) + reg.coef_log_prior(
                    prop, d, state.tau_eti[ell]
                )
                if mh.accept(name, new_target - cur_target, rng):
                    state.coef_eti = cand
                state.tau_eti[ell] = reg.update_penalty_precisions(
                    state.coef_eti[ell], d, rng
                )
        for s in self.mbs:
            name = s.name
            if name not in self.fpr_design:
                continue
            d = self.fpr_design[name]
            K = self.k[name]
            for k in range(K - 1):
                for arm, coef_map, tau_map, idx in (
                    ("nu", state.coef_nu, state.tau_nu, self.controls),
                    ("eta", state.coef_eta, state.tau_eta, self.cases),
                ):
                    block = f"{name}:{arm}[{k + 1}]"
                    cur = coef_map[name][k]
                    cur_target = self._arm_loglik(
                        name, coef_map[name], state.mu0[name], state, idx
                    ) + reg.coef_log_prior(cur, d, tau_map[name][k])
                    prop = cur + mh.scale(block) * rng.standard_normal(cur.size)
                    cand = coef_map[name].copy()
                    cand[k] = prop
                    new_target = self._arm_loglik(
                        name, cand, state.mu0[name], state, idx
                    ) + reg.coef_log_prior(prop, d, tau_map[name][k])
                    if mh.accept(block, new_target - cur_target, rng):
                        coef_map[name] = cand
                    tau_map[name][k] = reg.update_penalty_precisions(
                        coef_map[name][k], d, rng
                    )[:]
            # shared stick intercepts: one block over both arms
            block = f"{name}:mu0"
            cur = state.mu0[name]
            cur_target = (
                self._arm_loglik(name, state.coef_nu[name], cur, state, self.controls)
                + self._arm_loglik(name, state.coef_eta[name], cur, state, self.cases)
                - 0.5 * float(np.sum(cur**2)) / reg.LINEAR_PRIOR_SD**2
            )
            prop = cur + mh.scale(block) * rng.standard_normal(cur.size)
            new_target = (
                self._arm_loglik(name, state.coef_nu[name], prop, state, self.controls)
                + self._arm_loglik(name, state.coef_eta[name], prop, state, self.cases)
                - 0.5 * float(np.sum(prop**2)) / reg.LINEAR_PRIOR_SD**2
            )
            if mh.accept(block, new_target - cur_target, rng):
                state.mu0[name] = prop

    @property
    def has_regression(self) -> bool:
        return self.eti_design is not None or bool(self.fpr_design)

    def sweep(self, state, rng, mh: "MhController | None" = None) -> None:
        """One full kernel scan in the documented fixed order."""
        cubes = self.brs_cubes(state)
        self.update_class(state, rng, cubes=cubes)
        self.update_subclass(state, rng, cubes=cubes)
        self.update_rates(state, rng)
        self.update_mixing_noreg(state, rng)
        if self.has_regression:
            if mh is None:
                mh = MhController()
            self.update_regression(state, rng, mh)


class MhController:
    """Per-block proposal scales with burn-in-only adaptation toward a
    20-40% acceptance rate; scales are frozen afterwards."""

    def __init__(self, initial_scale: float = 0.25, adapting: bool = False):
        self.initial = initial_scale
        self.adapting = adapting
        self.scales: dict = {}
        self.accepted: dict = {}
        self.proposed: dict = {}
        self.total_accepted: dict = {}
        self.total_proposed: dict = {}
        self.overflow_events = 0
        self._batch = 0

    def scale(self, block: str) -> float:
        return self.scales.setdefault(block, self.initial)

    def accept(self, block: str, log_ratio: float, rng) -> bool:
        self.proposed[block] = self.proposed.get(block, 0) + 1
        self.total_proposed[block] = self.total_proposed.get(block, 0) + 1
        if not np.isfinite(log_ratio):
            if np.isnan(log_ratio) or log_ratio == np.inf:
                # overflow or 0/0 in the target: reject and log
                if np.isnan(log_ratio):
                    self.overflow_events += 1
                    return False
                ok = True
            else:
                ok = False
        else:
            ok = np.log(rng.random()) < log_ratio
        if ok:
            self.accepted[block] = self.accepted.get(block, 0) + 1
            self.total_accepted[block] = self.total_accepted.get(block, 0) + 1
        return ok

    def end_iteration(self) -> None:
        if not self.adapting:
            return
        self._batch += 1
        if self._batch % ADAPT_BATCH:
            return
        step = min(0.5, (self._batch / ADAPT_BATCH) ** -0.5)
        for block, n in self.proposed.items():
            rate = self.accepted.get(block, 0) / max(n, 1)
            if rate > ACCEPT_TARGET[1]:
                self.scales[block] = self.scale(block) * np.exp(step)
            elif rate < ACCEPT_TARGET[0]:
                self.scales[block] = self.scale(block) * np.exp(-step)
        self.accepted.clear()
        self.proposed.clear()

    def freeze(self) -> None:
        self.adapting = False

    def rates(self) -> dict:
        return {
            b: self.total_accepted.get(b, 0) / n
            for b, n in self.total_proposed.items()
        }


def _sample_categorical_rows(logw: np.ndarray, rng) -> np.ndarray:
    """Vectorized categorical draws from unnormalized row log-weights."""
    m = logw.max(axis=1)
    if not np.isfinite(m).all():
        bad = np.where(~np.isfinite(m))[0]
        raise DataInconsistencyError(
            f"rows {bad.tolist()} have zero probability under every class"
        )
    p = np.exp(logw - m[:, None])
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(logw.shape[0])
    return (np.cumsum(p, axis=1) > u[:, None]).argmax(axis=1)


# ---------- draw flattening ----------

def sample_columns(model: NplcmModel) -> list:
    """Stable, documented column names for the per-iteration sample
    table (identical across chains)."""
    cols = []
    L = model.L
    if model.eti_design is None:
        cols += [f"pEti[{l}]" for l in range(1, L + 1)]
    else:
        p = model.eti_design.n_cols
        cols += [f"betaEti[{l}][{j}]" for l in range(1, L + 1) for j in range(1, p + 1)]
        nb = len(model.eti_design.spline_blocks)
        cols += [f"tauEti[{l}][{b}]" for l in range(1, L + 1) for b in range(1, nb + 1)]
        if model.eti_strata is not None:
            g_n = len(model.eti_strata["labels"])
            cols += [
                f"pEti_strat[{g}][{l}]"
                for g in range(1, g_n + 1)
                for l in range(1, L + 1)
            ]
    for si, s in enumerate(model.mbs, start=1):
        K = model.k[s.name]
        J = s.n_items
        cols += [
            f"thetaBS[{si}][{j}][{k}]"
            for j in range(1, J + 1)
            for k in range(1, K + 1)
        ]
        cols += [
            f"psiBS[{si}][{j}][{k}]"
            for j in range(1, J + 1)
            for k in range(1, K + 1)
        ]
        if K > 1:
            if s.name in model.fpr_design:
                p = model.fpr_design[s.name].n_cols
                nb = len(model.fpr_design[s.name].spline_blocks)
                for arm in ("Nu", "Eta"):
                    cols += [
                        f"beta{arm}[{si}][{k}][{j}]"
                        for k in range(1, K)
                        for j in range(1, p + 1)
                    ]
                    cols += [
                        f"tau{arm}[{si}][{k}][{b}]"
                        for k in range(1, K)
                        for b in range(1, nb + 1)
                    ]
                cols += [f"muK0[{si}][{k}]" for k in range(1, K)]
            else:
                cols += [f"eta[{si}][{k}]" for k in range(1, K + 1)]
                cols += [f"nu[{si}][{k}]" for k in range(1, K + 1)]
                cols += [f"alpha1[{si}]", f"alpha0[{si}]"]
    for si, s in enumerate(model.mss, start=1):
        cols += [f"thetaSS[{si}][{j}]" for j in range(1, s.n_items + 1)]
    return cols


def flatten_state(model: NplcmModel, state: ParameterState) -> np.ndarray:
    vals = []
    if model.eti_design is None:
        vals.append(state.pi)
    else:
        vals.append(state.coef_eti.ravel())
        vals.append(state.tau_eti.ravel())
        if model.eti_strata is not None:
            pis = reg.cscf_weights(model.eti_strata["rows"], state.coef_eti)
            vals.append(pis.ravel())
    for s in model.mbs:
        K = model.k[s.name]
        vals.append(state.theta[s.name].ravel())
        vals.append(state.psi[s.name].ravel())
        if K > 1:
            if s.name in model.fpr_design:
                vals.append(state.coef_nu[s.name].ravel())
                vals.append(state.tau_nu[s.name].ravel())
                vals.append(state.coef_eta[s.name].ravel())
                vals.append(state.tau_eta[s.name].ravel())
                vals.append(state.mu0[s.name])
            else:
                vals.append(stick_weights(state.sticks_eta[s.name]))
                vals.append(stick_weights(state.sticks_nu[s.name]))
                vals.append([state.alpha1[s.name], state.alpha0[s.name]])
    for s in model.mss:
        vals.append(state.theta_ss[s.name])
    return np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in vals])


# ---------- PPC statistics ----------

def lor_pairs(n_items: int) -> list:
    return [(a, b) for a in range(n_items) for b in range(a + 1, n_items)]


def pairwise_lor(m: np.ndarray, pairs) -> np.ndarray:
    """Pairwise log odds ratios with a 0.5 continuity correction,
    using pairwise-complete rows."""
    out = np.empty(len(pairs))
    for p_idx, (a, b) in enumerate(pairs):
        both = ~np.isnan(m[:, a]) & ~np.isnan(m[:, b])
        xa = m[both, a]
        xb = m[both, b]
        n11 = float(((xa == 1) & (xb == 1)).sum()) + 0.5
        n10 = float(((xa == 1) & (xb == 0)).sum()) + 0.5
        n01 = float(((xa == 0) & (xb == 1)).sum()) + 0.5
        n00 = float(((xa == 0) & (xb == 0)).sum()) + 0.5
        out[p_idx] = np.log(n11 * n00 / (n10 * n01))
    return out


def pattern_strings(m: np.ndarray) -> np.ndarray:
    """Complete-case rows as '0101'-style strings (incomplete rows are
    dropped)."""
    complete = ~np.isnan(m).any(axis=1)
    rows = m[complete].astype(int)
    return np.array(["".join(map(str, r)) for r in rows])


def observed_ppc_layout(model: NplcmModel) -> dict:
    """Fixed layout for PPC statistics: item pairs and the distinct
    observed complete patterns per group, per BrS slice."""
    layout = {}
    for s in model.mbs:
        groups = {}
        for gname, idx in (("case", model.cases), ("control", model.controls)):
            pats = pattern_strings(s.data[idx])
            labels, counts = np.unique(pats, return_counts=True) if pats.size else (
                np.array([], dtype=str), np.array([], dtype=int)
            )
            order = np.argsort(-counts, kind="stable")
            groups[gname] = {
                "labels": labels[order].tolist(),
                "observed_counts": counts[order].tolist(),
                "n_complete": int(pats.size),
            }
        layout[s.name] = {"pairs": lor_pairs(s.n_items), "groups": groups}
    return layout


def ppc_statistics(model: NplcmModel, replicated: dict, layout: dict) -> dict:
    """LOR vectors and observed-pattern counts for one replicated
    measurement array."""
    stats = {}
    for s in model.mbs:
        lay = layout[s.name]
        m = replicated[s.name]
        entry = {"lor": {}, "pattern_counts": {}}
        for gname, idx in (("case", model.cases), ("control", model.controls)):
            entry["lor"][gname] = pairwise_lor(m[idx], lay["pairs"])
            pats = pattern_strings(m[idx])
            labels = lay["groups"][gname]["labels"]
            lookup = {lab: i for i, lab in enumerate(labels)}
            counts = np.zeros(len(labels))
            for pat in pats:
                if pat in lookup:
                    counts[lookup[pat]] += 1
            entry["pattern_counts"][gname] = counts
        stats[s.name] = entry
    return stats


# ---------- chain runner ----------

def run_chain(
    model: NplcmModel, mcmc: McmcSettings, chain: int
) -> ChainOutput:
    rng = np.random.default_rng([int(mcmc.seed), int(chain)])
    state = model.init_state(rng)
    mh = MhController(adapting=True)
    cols = sample_columns(model)
    n_ret = mcmc.n_retained
    draws = np.empty((n_ret, len(cols)))
    individual = (
        np.empty((n_ret, len(model.cases)), dtype=np.int32)
        if mcmc.individual_pred
        else None
    )
    layout = observed_ppc_layout(model) if mcmc.ppd else None
    ppc_acc = None
    if mcmc.ppd:
        ppc_acc = {
            s.name: {
                "lor": {g: np.empty((n_ret, len(layout[s.name]["pairs"]))) for g in ("case", "control")},
                "pattern_counts": {
                    g: np.empty((n_ret, len(layout[s.name]["groups"][g]["labels"])))
                    for g in ("case", "control")
                },
            }
            for s in model.mbs
        }
    r = 0
    for it in range(mcmc.n_iter):
        if it == mcmc.n_burnin:
            mh.freeze()
        model.sweep(state, rng, mh=mh)
        mh.end_iteration()
        if it >= mcmc.n_burnin and (it - mcmc.n_burnin) % mcmc.n_thin == 0 and r < n_ret:
            draws[r] = flatten_state(model, state)
            if individual is not None:
                individual[r] = state.classes[model.cases]
            if mcmc.ppd:
                rep = model.replicate(state, rng)
                stats = ppc_statistics(model, rep, layout)
                for name, entry in stats.items():
                    for g in ("case", "control"):
                        ppc_acc[name]["lor"][g][r] = entry["lor"][g]
                        ppc_acc[name]["pattern_counts"][g][r] = entry["pattern_counts"][g]
            r += 1
    samples = pd.DataFrame(draws[:r], columns=cols)
    ppc = {}
    if mcmc.ppd:
        for name in ppc_acc:
            ppc[name] = {
                "pairs": layout[name]["pairs"],
                "groups": layout[name]["groups"],
                "lor": {g: ppc_acc[name]["lor"][g][:r] for g in ("case", "control")},
                "pattern_counts": {
                    g: ppc_acc[name]["pattern_counts"][g][:r] for g in ("case", "control")
                },
            }
    return ChainOutput(
        samples=samples,
        seed=int(mcmc.seed),
        chain=int(chain),
        accept=mh.rates(),
        individual=individual[:r] if individual is not None else None,
        case_index=model.cases.copy() if mcmc.individual_pred else None,
        ppc=ppc,
    )


def run(data: Dataset, spec: ModelSpec, mcmc: McmcSettings):
    """Fit the model: validate, run ``n_chains`` independent chains, and
    persist everything under ``mcmc.out_dir`` when it is set.

    Returns a :class:`nplcm.runio.PosteriorRun`.
    """
    from .runio import PosteriorRun, write_run

    model = NplcmModel(data, spec)
    chains = [run_chain(model, mcmc, c) for c in range(mcmc.n_chains)]
    run_obj = PosteriorRun(
        spec=spec, settings=mcmc, data=data, chains=chains,
        eti_strata=model.eti_strata,
    )
    if mcmc.out_dir:
        write_run(mcmc.out_dir, run_obj)
    return run_obj
