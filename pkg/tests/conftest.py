import numpy as np
import pytest

from nplcm.core import CauseList, McmcSettings, ModelSpec, TprPriorSpec
from nplcm.datagen import BrsSliceRecipe, SimulationRecipe, SsSliceRecipe, simulate


@pytest.fixture
def small_recipe():
    """Three causes, one nested BrS slice, one SS slice."""
    return SimulationRecipe(
        n_cases=60,
        n_controls=60,
        cause_list=CauseList(["A", "B", "C"]),
        etiology=[0.5, 0.3, 0.2],
        bronze=[
            BrsSliceRecipe(
                "MBS1",
                ["A", "B", "C"],
                theta=[[0.95, 0.9], [0.9, 0.9], [0.9, 0.85]],
                psi=[[0.4, 0.05], [0.4, 0.05], [0.35, 0.05]],
            )
        ],
        silver=[SsSliceRecipe("MSS1", ["A", "B"], theta=[0.15, 0.1])],
        control_subclass=[0.5, 0.5],
        case_subclass=[0.3, 0.7],
        seed=7,
    )


@pytest.fixture
def small_data(small_recipe):
    data, truth = simulate(small_recipe)
    return data, truth


@pytest.fixture
def small_spec():
    return ModelSpec(
        use_measurements=("BrS", "SS"),
        cause_list=CauseList(["A", "B", "C"]),
        k_subclass={"MBS1": 2},
        tpr_prior={
            "MBS1": TprPriorSpec(kind="range", a=[0.55] * 3, b=[0.99] * 3),
            "MSS1": TprPriorSpec(kind="range", a=[0.05] * 2, b=[0.2] * 2),
        },
    )


@pytest.fixture
def quick_mcmc():
    return McmcSettings(
        n_chains=1, n_iter=120, n_burnin=60, n_thin=1,
        individual_pred=True, ppd=True, seed=5,
    )
