"""Sampler kernel tests: conjugate corner cases with frozen latents,
determinism, and basic mechanics of the Metropolis controller."""

import numpy as np
import pytest

from nplcm.core import (
    BRS,
    SS,
    CauseList,
    Dataset,
    McmcSettings,
    MeasurementSlice,
    ModelSpec,
)
from nplcm.sampler import (
    DataInconsistencyError,
    MhController,
    NplcmModel,
    _sample_categorical_rows,
    run,
    run_chain,
    sample_columns,
)


def k1_fixed_class_model(seed=0):
    """PLCM (K=1) with a single item; latent classes will be pinned so
    the Beta updates have closed-form posteriors."""
    rng = np.random.default_rng(seed)
    n = 40
    y = np.concatenate([np.ones(20, dtype=int), np.zeros(20, dtype=int)])
    data = Dataset(
        mbs=[
            MeasurementSlice(
                "MBS1", BRS, ["A"], (rng.random((n, 1)) < 0.5).astype(float)
            )
        ],
        mss=[],
        y=y,
    )
    spec = ModelSpec(
        use_measurements=(BRS,), cause_list=CauseList(["A"]), k_subclass={"MBS1": 1}
    )
    return NplcmModel(data, spec)


def test_update_rates_matches_beta_posterior():
    model = k1_fixed_class_model()
    rng = np.random.default_rng(1)
    state = model.init_state(rng)
    state.classes[model.cases] = 1  # pin: every case caused by A
    m = model.data.mbs[0].data[:, 0]
    caus = model.data.y == 1  # K=1, cause A causative for all cases
    s1 = float(((m == 1) & caus).sum())
    f1 = float(((m == 0) & caus).sum())
    s0 = float(((m == 1) & ~caus).sum())
    f0 = float(((m == 0) & ~caus).sum())
    n_draws = 10_000
    th = np.empty(n_draws)
    ps = np.empty(n_draws)
    for d in range(n_draws):
        state.classes[model.cases] = 1
        model.update_rates(state, rng)
        th[d] = state.theta["MBS1"][0, 0]
        ps[d] = state.psi["MBS1"][0, 0]
    # prior Beta(1,1) on both rates here
    for draws, a, b in ((th, 1 + s1, 1 + f1), (ps, 1 + s0, 1 + f0)):
        want_mean = a / (a + b)
        want_sd = np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
        se = want_sd / np.sqrt(n_draws)
        assert abs(draws.mean() - want_mean) < 3 * se


def test_update_mixing_matches_dirichlet_posterior():
    model = k1_fixed_class_model()
    rng = np.random.default_rng(2)
    # two causes now
    spec = ModelSpec(
        use_measurements=(BRS,),
        cause_list=CauseList(["A", "NoS"]),
        k_subclass={"MBS1": 1},
    )
    model = NplcmModel(model.data, spec)
    state = model.init_state(rng)
    fixed = np.where(np.arange(len(model.cases)) < 14, 1, 2)
    n_draws = 10_000
    pis = np.empty(n_draws)
    for d in range(n_draws):
        state.classes[model.cases] = fixed
        model.update_mixing_noreg(state, rng)
        pis[d] = state.pi[0]
    a = np.array([1.0 + 14, 1.0 + 6])  # symmetric Dirichlet(1) prior
    want_mean = a[0] / a.sum()
    want_sd = np.sqrt(a[0] * (a.sum() - a[0]) / (a.sum() ** 2 * (a.sum() + 1)))
    se = want_sd / np.sqrt(n_draws)
    assert abs(pis.mean() - want_mean) < 3 * se


def test_stick_update_matches_beta_posterior():
    """With subclass assignments pinned, each stick fraction follows
    Beta(1 + n_k, alpha + n_{>k}) exactly."""
    rng = np.random.default_rng(3)
    n = 30
    y = np.ones(n, dtype=int)
    y[15:] = 0
    data = Dataset(
        mbs=[
            MeasurementSlice(
                "MBS1", BRS, ["A"], (rng.random((n, 1)) < 0.5).astype(float)
            )
        ],
        mss=[],
        y=y,
    )
    spec = ModelSpec(
        use_measurements=(BRS,), cause_list=CauseList(["A"]), k_subclass={"MBS1": 3}
    )
    model = NplcmModel(data, spec)
    state = model.init_state(rng)
    z_fixed = np.tile([0, 0, 1], 10)  # 20 in k=0, 10 in k=1, 0 in k=2
    alpha_fixed = 1.7
    n_draws = 10_000
    v1 = np.empty(n_draws)
    for d in range(n_draws):
        state.subclass["MBS1"] = z_fixed.copy()
        state.alpha1[model.mbs[0].name] = alpha_fixed
        state.alpha0[model.mbs[0].name] = alpha_fixed
        model.update_mixing_noreg(state, rng)
        v1[d] = state.sticks_eta["MBS1"][0]
    # case arm: n_0 = 10 (cases at k=0), tail = 5
    n0 = (z_fixed[:15] == 0).sum()
    tail = (z_fixed[:15] > 0).sum()
    a, b = 1.0 + n0, alpha_fixed + tail
    want_mean = a / (a + b)
    want_sd = np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    se = want_sd / np.sqrt(n_draws)
    assert abs(v1.mean() - want_mean) < 3 * se


def test_run_is_deterministic(small_data, small_spec, quick_mcmc):
    data, _ = small_data
    r1 = run(data, small_spec, quick_mcmc)
    r2 = run(data, small_spec, quick_mcmc)
    assert r1.chains[0].samples.equals(r2.chains[0].samples)
    assert np.array_equal(r1.chains[0].individual, r2.chains[0].individual)


def test_chains_differ(small_data, small_spec, quick_mcmc):
    data, _ = small_data
    c0 = run_chain(NplcmModel(data, small_spec), quick_mcmc, 0)
    c1 = run_chain(NplcmModel(data, small_spec), quick_mcmc, 1)
    assert not c0.samples.equals(c1.samples)


def test_sample_columns_match_flatten(small_data, small_spec, quick_mcmc):
    data, _ = small_data
    model = NplcmModel(data, small_spec)
    cols = sample_columns(model)
    out = run_chain(model, quick_mcmc, 0)
    assert list(out.samples.columns) == cols
    # simplex columns
    pis = out.samples[[f"pEti[{l}]" for l in (1, 2, 3)]].to_numpy()
    assert np.abs(pis.sum(axis=1) - 1.0).max() < 1e-12
    etas = out.samples[["eta[1][1]", "eta[1][2]"]].to_numpy()
    assert np.abs(etas.sum(axis=1) - 1.0).max() < 1e-12


def test_impossible_ss_case_detected():
    data = Dataset(
        mbs=[MeasurementSlice("MBS1", BRS, ["A", "B"], np.array([[1.0, 0.0], [0.0, 0.0]]))],
        mss=[
            MeasurementSlice(
                "MSS1", SS, ["A", "B"], np.array([[1.0, 1.0], [np.nan, np.nan]])
            )
        ],
        y=np.array([1, 0]),
    )
    # single-agent causes only: a case SS-positive on both A and B is
    # impossible under every class
    spec = ModelSpec(
        use_measurements=(BRS, SS), cause_list=CauseList(["A", "B"]), k_subclass={"MBS1": 1}
    )
    with pytest.raises(DataInconsistencyError):
        NplcmModel(data, spec)


def test_sample_categorical_rows_distribution():
    rng = np.random.default_rng(9)
    logw = np.log(np.array([[0.2, 0.8]] * 20000))
    draws = _sample_categorical_rows(logw, rng)
    assert draws.mean() == pytest.approx(0.8, abs=0.01)


def test_sample_categorical_rows_all_impossible():
    with pytest.raises(DataInconsistencyError):
        _sample_categorical_rows(np.full((1, 3), -np.inf), np.random.default_rng(0))


class TestMhController:
    def test_adaptation_direction(self):
        rng = np.random.default_rng(0)
        mh = MhController(adapting=True)
        s0 = mh.scale("b")
        for _ in range(50):
            mh.accept("b", 10.0, rng)  # always accepted -> too high
            mh.end_iteration()
        assert mh.scale("b") > s0

        mh2 = MhController(adapting=True)
        for _ in range(50):
            mh2.accept("b", -1e9, rng)  # never accepted -> too low
            mh2.end_iteration()
        assert mh2.scale("b") < s0

    def test_freeze_stops_adaptation(self):
        rng = np.random.default_rng(0)
        mh = MhController(adapting=True)
        mh.freeze()
        for _ in range(200):
            mh.accept("b", 10.0, rng)
            mh.end_iteration()
        assert mh.scale("b") == mh.initial

    def test_nan_log_ratio_rejected_and_logged(self):
        mh = MhController()
        assert not mh.accept("b", np.nan, np.random.default_rng(0))
        assert mh.overflow_events == 1

    def test_rates(self):
        rng = np.random.default_rng(0)
        mh = MhController()
        for _ in range(10):
            mh.accept("b", 10.0, rng)
        assert mh.rates() == {"b": 1.0}


def test_prior_state_respects_structure(small_data, small_spec):
    data, _ = small_data
    model = NplcmModel(data, small_spec)
    state = model.sample_prior_state(np.random.default_rng(4))
    assert (state.classes[model.controls] == 0).all()
    assert np.isin(state.classes[model.cases], [1, 2, 3]).all()
    assert ((state.theta["MBS1"] > 0) & (state.theta["MBS1"] < 1)).all()
    assert state.pi.sum() == pytest.approx(1.0, abs=1e-12)


def test_replicate_keeps_missingness_mask(small_data, small_spec):
    data, _ = small_data
    model = NplcmModel(data, small_spec)
    rng = np.random.default_rng(5)
    state = model.init_state(rng)
    rep = model.replicate(state, rng)
    ss_obs = ~np.isnan(data.mss[0].data)
    assert np.array_equal(~np.isnan(rep["MSS1"]), ss_obs)
