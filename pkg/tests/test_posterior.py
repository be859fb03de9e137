import numpy as np
import pandas as pd
import pytest

from nplcm.core import InputError
from nplcm.posterior import (
    convergence,
    ess,
    individual_predictions,
    ppc_slord,
    ppc_top_patterns,
    split_rhat,
    summarize_cscf,
)
from nplcm.sampler import run


@pytest.fixture(scope="module")
def fitted(request):
    """One short fitted run shared by the summary tests."""
    from nplcm.core import CauseList, McmcSettings, ModelSpec, TprPriorSpec
    from nplcm.datagen import BrsSliceRecipe, SimulationRecipe, SsSliceRecipe, simulate

    recipe = SimulationRecipe(
        n_cases=60, n_controls=60,
        cause_list=CauseList(["A", "B", "C"]),
        etiology=[0.5, 0.3, 0.2],
        bronze=[
            BrsSliceRecipe(
                "MBS1", ["A", "B", "C"],
                theta=[[0.95, 0.9], [0.9, 0.9], [0.9, 0.85]],
                psi=[[0.4, 0.05], [0.4, 0.05], [0.35, 0.05]],
            )
        ],
        silver=[SsSliceRecipe("MSS1", ["A", "B"], theta=[0.15, 0.1])],
        control_subclass=[0.5, 0.5], case_subclass=[0.3, 0.7], seed=7,
    )
    data, _ = simulate(recipe)
    spec = ModelSpec(
        use_measurements=("BrS", "SS"),
        cause_list=CauseList(["A", "B", "C"]),
        k_subclass={"MBS1": 2},
        tpr_prior={
            "MBS1": TprPriorSpec(kind="range", a=[0.55] * 3, b=[0.99] * 3),
            "MSS1": TprPriorSpec(kind="range", a=[0.05] * 2, b=[0.2] * 2),
        },
    )
    mcmc = McmcSettings(
        n_chains=2, n_iter=150, n_burnin=50, n_thin=1,
        individual_pred=True, ppd=True, seed=9,
    )
    return run(data, spec, mcmc)


class TestCscfSummary:
    def test_pooled_table(self, fitted):
        s = summarize_cscf(fitted)
        assert s.fitted_type == "no_reg"
        tab = s.tables["all"]
        assert list(tab.index) == ["A", "B", "C"]
        assert tab["mean"].sum() == pytest.approx(1.0, abs=1e-10)
        assert (tab["q0.025"] <= tab["q0.975"]).all()

    def test_invariant_to_chain_order(self, fitted):
        import dataclasses

        flipped = dataclasses.replace(fitted, chains=list(reversed(fitted.chains)))
        a = summarize_cscf(fitted).tables["all"]
        b = summarize_cscf(flipped).tables["all"]
        assert np.allclose(a.to_numpy(), b.to_numpy())


def test_individual_prediction_rows_sum_to_one(fitted):
    pred = individual_predictions(fitted)
    assert pred.shape == (60, 3)
    assert np.abs(pred.to_numpy().sum(axis=1) - 1.0).max() < 1e-12
    assert (pred.to_numpy() >= 0).all()


class TestConvergence:
    def test_white_noise(self):
        rng = np.random.default_rng(0)
        chains = [rng.standard_normal(2000) for _ in range(4)]
        r = split_rhat(chains)
        assert abs(r - 1.0) < 0.05
        e = ess(chains)
        assert abs(e - 8000) / 8000 < 0.2

    def test_ar1_ess_shrinks(self):
        # AR(1) with rho = 0.9 has ESS factor (1-rho)/(1+rho) ~ 1/19
        rng = np.random.default_rng(1)
        n = 20000
        x = np.empty(n)
        x[0] = rng.standard_normal()
        eps = rng.standard_normal(n)
        for t in range(1, n):
            x[t] = 0.9 * x[t - 1] + eps[t]
        e = ess([x])
        expect = n * (1 - 0.9) / (1 + 0.9)
        assert 0.5 * expect < e < 2.0 * expect

    def test_disjoint_chains_rhat_large(self):
        rng = np.random.default_rng(2)
        c1 = rng.standard_normal(500)
        c2 = rng.standard_normal(500) + 10.0
        assert split_rhat([c1, c2]) > 2.0

    def test_table_over_run(self, fitted):
        tab = convergence(fitted, columns=["pEti[1]", "pEti[2]"])
        assert set(tab.index) == {"pEti[1]", "pEti[2]"}
        assert (tab["ess"] > 0).all()


class TestPpc:
    def test_slord_table_shape(self, fitted):
        t = ppc_slord(fitted, "MBS1")
        # 3 pairs x 2 groups
        assert len(t) == 6
        assert set(t["group"]) == {"case", "control"}
        assert np.isfinite(t["slord"]).all()

    def test_top_patterns_frequencies(self, fitted):
        t = ppc_top_patterns(fitted, "MBS1", n_pat=3)
        for g in ("case", "control"):
            sub = t[t["group"] == g]
            assert len(sub) <= 4  # 3 + rest
            assert sub["obs_freq"].sum() == pytest.approx(1.0, abs=1e-10)
            assert sub["rep_freq"].sum() == pytest.approx(1.0, abs=1e-10)
            assert sub["pattern"].iloc[-1] == "(rest)"

    def test_unknown_slice(self, fitted):
        with pytest.raises(InputError, match="no BrS slice"):
            ppc_slord(fitted, "nope")

    def test_requires_ppd(self, fitted):
        import dataclasses

        bare = [dataclasses.replace(c, ppc={}) for c in fitted.chains]
        no_ppd = dataclasses.replace(fitted, chains=bare)
        with pytest.raises(InputError, match="replication"):
            ppc_slord(no_ppd, "MBS1")


def test_individual_requires_flag(fitted):
    import dataclasses

    bare = [dataclasses.replace(c, individual=None) for c in fitted.chains]
    r = dataclasses.replace(fitted, chains=bare)
    with pytest.raises(InputError, match="individual"):
        individual_predictions(r)
