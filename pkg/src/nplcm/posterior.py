"""Posterior summaries, convergence diagnostics, and posterior
predictive checks computed from retained draws.

Cause-specific case fraction (CSCF) summaries come in two shapes: a
pooled table when the etiology part of the model has no covariates, and
per-stratum tables plus a weight-averaged marginal table when the CSCF
regression uses discrete covariates only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import InputError
from .sampler import pairwise_lor, pattern_strings

_QUANTS = (0.025, 0.25, 0.5, 0.75, 0.975)


# ---------- CSCF summaries ----------

@dataclass
class CscfSummary:
    """One summary table per stratum (a single "all" entry when the
    model has no CSCF covariates) plus an optional marginal table."""

    fitted_type: str  # "no_reg" or "reg_discrete"
    tables: dict  # stratum label -> DataFrame indexed by cause
    marginal: pd.DataFrame | None = None
    weights: np.ndarray | None = None
    counts: dict = field(default_factory=dict)


def _summary_table(draws: np.ndarray, causes: list) -> pd.DataFrame:
    """Moment and quantile summary of an n_draws x L matrix."""
    qs = np.quantile(draws, _QUANTS, axis=0)
    return pd.DataFrame(
        {
            "mean": draws.mean(axis=0),
            "sd": draws.std(axis=0, ddof=1),
            **{f"q{q}": qs[i] for i, q in enumerate(_QUANTS)},
        },
        index=pd.Index(causes, name="cause"),
    )


def summarize_cscf(run, stratum_weights=None) -> CscfSummary:
    """Summarize cause-specific case fractions across all chains.

    Parameters
    ----------
    run : PosteriorRun
    stratum_weights : array-like, optional
        Population weights for the marginal CSCF under a discrete
        regression fit.  Defaults to the empirical stratum frequencies
        among cases.
    """
    causes = list(run.spec.cause_list.causes)
    L = len(causes)
    pooled = run.pooled()
    if run.eti_strata is None:
        cols = [f"pEti[{l}]" for l in range(1, L + 1)]
        if not all(c in pooled.columns for c in cols):
            raise InputError("run has no CSCF draws")
        draws = pooled[cols].to_numpy()
        return CscfSummary(
            fitted_type="no_reg", tables={"all": _summary_table(draws, causes)}
        )

    labels = run.eti_strata["labels"]
    counts = np.asarray(run.eti_strata["counts"], dtype=float)
    if stratum_weights is None:
        w = counts / counts.sum()
    else:
        w = np.asarray(stratum_weights, dtype=float)
        if w.size != len(labels) or (w < 0).any():
            raise InputError("stratum_weights must be nonnegative, one per stratum")
        w = w / w.sum()
    tables = {}
    stacked = np.empty((len(pooled), len(labels), L))
    for g, lab in enumerate(labels):
        cols = [f"pEti_strat[{g + 1}][{l}]" for l in range(1, L + 1)]
        stacked[:, g, :] = pooled[cols].to_numpy()
        tables[lab] = _summary_table(stacked[:, g, :], causes)
    marginal_draws = np.tensordot(stacked, w, axes=([1], [0]))
    return CscfSummary(
        fitted_type="reg_discrete",
        tables=tables,
        marginal=_summary_table(marginal_draws, causes),
        weights=w,
        counts={lab: int(c) for lab, c in zip(labels, counts)},
    )


# ---------- individual etiology predictions ----------

def individual_predictions(run) -> pd.DataFrame:
    """Per-case posterior cause probabilities from retained class draws.

    Rows are cases (indexed by subject row number), columns are causes;
    each row sums to one.
    """
    chains = [c for c in run.chains if c.individual is not None]
    if not chains:
        raise InputError("run was fitted without individual predictions")
    causes = list(run.spec.cause_list.causes)
    L = len(causes)
    draws = np.concatenate([c.individual for c in chains], axis=0)
    case_index = chains[0].case_index
    freq = np.stack([(draws == l).mean(axis=0) for l in range(1, L + 1)], axis=1)
    return pd.DataFrame(freq, index=pd.Index(case_index, name="subject"), columns=causes)


# ---------- convergence diagnostics ----------

def split_rhat(chains: list) -> float:
    """Potential scale reduction factor on split chains."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        half = len(c) // 2
        if half < 2:
            return np.nan
        halves.append(c[:half])
        halves.append(c[len(c) - half:])
    x = np.stack(halves)  # m x n
    m, n = x.shape
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w == 0:
        return 1.0
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))


def _autocorr(x: np.ndarray) -> np.ndarray:
    """Autocorrelation function via FFT."""
    n = len(x)
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def ess(chains: list) -> float:
    """Effective sample size using the initial monotone positive
    sequence estimator on chain-averaged autocorrelations."""
    arrs = [np.asarray(c, dtype=float) for c in chains]
    n = min(len(a) for a in arrs)
    if n < 4:
        return float(len(arrs) * n)
    rho = np.mean([_autocorr(a[:n]) for a in arrs], axis=0)
    # pair sums Gamma_t = rho_{2t} + rho_{2t+1}; truncate at first
    # negative pair, then enforce monotone decrease
    t_max = (n - 1) // 2
    gammas = []
    for t in range(t_max):
        g = rho[2 * t] + rho[2 * t + 1]
        if g <= 0:
            break
        gammas.append(g)
    if not gammas:
        return float(len(arrs) * n)
    gammas = np.minimum.accumulate(gammas)
    tau = -1.0 + 2.0 * float(np.sum(gammas))
    total = sum(len(a) for a in arrs)
    return float(min(total, total / max(tau, 1.0 / total)))


def convergence(run, columns=None) -> pd.DataFrame:
    """Split-Rhat and effective sample size per sampled column."""
    if columns is None:
        columns = list(run.chains[0].samples.columns)
    rows = []
    for col in columns:
        series = [c.samples[col].to_numpy() for c in run.chains]
        rows.append((col, split_rhat(series), ess(series)))
    return pd.DataFrame(rows, columns=["column", "rhat", "ess"]).set_index("column")


# ---------- posterior predictive checks ----------

def _observed_slice(run, slice_name):
    for s in run.data.mbs:
        if s.name == slice_name:
            return s
    raise InputError(f"no BrS slice named {slice_name!r}")


def _ppc_entry(run, slice_name):
    if not run.has_ppd:
        raise InputError("run was fitted without posterior predictive replication")
    entries = [c.ppc[slice_name] for c in run.chains if slice_name in c.ppc]
    if not entries:
        raise InputError(f"no PPC record for slice {slice_name!r}")
    return entries


def ppc_slord(run, slice_name: str) -> pd.DataFrame:
    """Standardized log odds ratio differences for one BrS slice.

    For each item pair and group, the observed pairwise log odds ratio
    (0.5 continuity correction) is standardized by the mean and standard
    deviation of the same statistic over posterior predictive
    replications: ``slord = (observed - rep_mean) / rep_sd``.
    """
    s = _observed_slice(run, slice_name)
    entries = _ppc_entry(run, slice_name)
    pairs = entries[0]["pairs"]
    rows = []
    groups = (("case", run.data.y == 1), ("control", run.data.y == 0))
    for gname, mask in groups:
        obs = pairwise_lor(s.data[mask], pairs)
        rep = np.concatenate([e["lor"][gname] for e in entries], axis=0)
        mean = rep.mean(axis=0)
        sd = rep.std(axis=0, ddof=1)
        sd = np.where(sd > 0, sd, np.nan)
        slord = (obs - mean) / sd
        for p_idx, (a, b) in enumerate(pairs):
            rows.append(
                (
                    gname, s.items[a], s.items[b], obs[p_idx],
                    mean[p_idx], sd[p_idx], slord[p_idx],
                )
            )
    return pd.DataFrame(
        rows,
        columns=["group", "item1", "item2", "observed", "rep_mean", "rep_sd", "slord"],
    )


def ppc_top_patterns(run, slice_name: str, n_pat: int = 10) -> pd.DataFrame:
    """Observed versus replicated frequencies of the ``n_pat`` most
    common complete measurement patterns, with a trailing "(rest)" row
    absorbing all remaining patterns."""
    entries = _ppc_entry(run, slice_name)
    lay_groups = entries[0]["groups"]
    rows = []
    for gname in ("case", "control"):
        info = lay_groups[gname]
        labels = info["labels"]
        obs_counts = np.asarray(info["observed_counts"], dtype=float)
        n_complete = float(info["n_complete"])
        if n_complete == 0:
            continue
        rep = np.concatenate([e["pattern_counts"][gname] for e in entries], axis=0)
        top = min(n_pat, len(labels))
        head_obs = obs_counts[:top]
        head_rep = rep[:, :top]
        rest_obs = obs_counts[top:].sum()
        rest_rep = n_complete - head_rep.sum(axis=1)
        all_labels = list(labels[:top]) + ["(rest)"]
        all_obs = np.concatenate([head_obs, [rest_obs]])
        all_rep = np.column_stack([head_rep, rest_rep])
        lo, hi = np.quantile(all_rep, [0.025, 0.975], axis=0)
        for q, lab in enumerate(all_labels):
            rows.append(
                (
                    gname, lab,
                    all_obs[q] / n_complete,
                    all_rep[:, q].mean() / n_complete,
                    lo[q] / n_complete,
                    hi[q] / n_complete,
                )
            )
    return pd.DataFrame(
        rows,
        columns=["group", "pattern", "obs_freq", "rep_freq", "rep_lo", "rep_hi"],
    )
