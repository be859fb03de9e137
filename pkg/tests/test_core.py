import numpy as np
import pytest

from nplcm.core import (
    BRS,
    SS,
    CauseList,
    CovariateTable,
    Dataset,
    InputError,
    McmcSettings,
    MeasurementSlice,
    ModelSpec,
    TprPriorSpec,
    _formula_active,
    make_template,
    summarize_slice,
    validate_dataset,
)


def slice_of(rows, quality=BRS, name="MBS1", items=None):
    rows = np.asarray(rows, dtype=float)
    if items is None:
        items = [f"it{j}" for j in range(rows.shape[1])]
    return MeasurementSlice(name=name, quality=quality, items=items, data=rows)


class TestMeasurementSlice:
    def test_rejects_non_binary(self):
        with pytest.raises(InputError, match="0, 1, or missing"):
            slice_of([[0, 2.0]])

    def test_accepts_missing(self):
        s = slice_of([[0, np.nan], [1, 1]])
        assert s.n_items == 2 and s.n_subjects == 2

    def test_data_is_read_only(self):
        s = slice_of([[0, 1]])
        with pytest.raises(ValueError):
            s.data[0, 0] = 1

    def test_item_count_mismatch(self):
        with pytest.raises(InputError, match="columns"):
            MeasurementSlice("MBS1", BRS, ["a"], np.zeros((2, 2)))

    def test_duplicate_items(self):
        with pytest.raises(InputError, match="duplicate"):
            MeasurementSlice("MBS1", BRS, ["a", "a"], np.zeros((2, 2)))


class TestTemplate:
    def test_simple_match(self):
        t = make_template(["A", "B", "C"], CauseList(["A", "B", "C"]))
        assert t.matrix.shape == (4, 3)
        assert np.array_equal(t.matrix[:3], np.eye(3, dtype=int))
        assert not t.matrix[-1].any()

    def test_multi_agent_cause(self):
        t = make_template(["A", "B"], CauseList(["A+B", "A"]))
        assert t.matrix[0].tolist() == [1, 1]
        assert t.matrix[1].tolist() == [1, 0]

    def test_nos_cause_is_all_zero(self):
        t = make_template(["A"], CauseList(["A", "NoS"]))
        assert t.matrix[1].tolist() == [0]

    def test_unmeasured_component_gives_zero_column(self):
        # cause D is unobservable in a slice measuring only A, B
        t = make_template(["A", "B"], CauseList(["A", "D"]))
        assert t.matrix[1].tolist() == [0, 0]

    def test_n_causes(self):
        t = make_template(["A"], CauseList(["A", "NoS"]))
        assert t.n_causes == 2


class TestSummarize:
    def test_rates_exclude_missing(self):
        s = slice_of([[1, np.nan], [0, 1], [1, 1], [np.nan, 0]])
        out = summarize_slice(s, [1, 1, 0, 0])
        assert out.case_rate[0] == pytest.approx(0.5)
        assert out.case_rate[1] == pytest.approx(1.0)
        assert out.control_rate[1] == pytest.approx(0.5)

    def test_all_missing_item_flagged(self):
        s = slice_of([[np.nan, 1], [np.nan, 0]])
        out = summarize_slice(s, [1, 0])
        assert out.undefined_items == ["it0"]
        assert np.isnan(out.case_rate[0])

    def test_ss_has_no_control_rates(self):
        s = slice_of([[1, 0], [np.nan, np.nan]], quality=SS, name="MSS1")
        out = summarize_slice(s, [1, 0])
        assert out.control_rate is None


class TestFormulaActivation:
    @pytest.mark.parametrize("f", [None, "~ -1", "~-1", "~ 0", "~ -1 + 0"])
    def test_inactive(self, f):
        assert not _formula_active(f)

    @pytest.mark.parametrize("f", ["~ 1", "~ -1 + factor(SITE)", "~ AGE"])
    def test_active(self, f):
        assert _formula_active(f)


def _toy_dataset():
    mbs = [slice_of([[1, 0], [0, 1], [0, 0], [1, 1]], items=["A", "B"])]
    mss = [
        MeasurementSlice(
            "MSS1", SS, ["A"],
            np.array([[1.0], [0.0], [np.nan], [np.nan]]),
        )
    ]
    return Dataset(mbs=mbs, mss=mss, y=np.array([1, 1, 0, 0]))


def _toy_spec(**kw):
    base = dict(
        use_measurements=("BrS", "SS"),
        cause_list=CauseList(["A", "B"]),
        k_subclass={"MBS1": 2},
    )
    base.update(kw)
    return ModelSpec(**base)


class TestValidation:
    def test_report_fields(self):
        rep = validate_dataset(_toy_dataset(), _toy_spec())
        assert rep.num_slice == {"MBS": 1, "MSS": 1}
        assert rep.nested is True
        assert rep.do_reg_eti is False
        assert rep.do_reg_fpr == {"MBS1": False}

    def test_ss_control_positive_rejected(self):
        mss = [
            MeasurementSlice(
                "MSS1", SS, ["A"], np.array([[1.0], [1.0], [1.0], [np.nan]])
            )
        ]
        d = Dataset(mbs=_toy_dataset().mbs, mss=mss, y=np.array([1, 1, 0, 0]))
        with pytest.raises(InputError, match="perfect specificity"):
            validate_dataset(d, _toy_spec())

    def test_missing_formula_column(self):
        with pytest.raises(InputError, match="missing column"):
            validate_dataset(
                _toy_dataset(), _toy_spec(eti_formula="~ -1 + factor(SITE)")
            )

    def test_unknown_k_subclass_slice(self):
        with pytest.raises(InputError, match="unknown BrS slice"):
            validate_dataset(_toy_dataset(), _toy_spec(k_subclass={"nope": 2}))

    def test_discrete_flag(self):
        d = _toy_dataset()
        d = Dataset(
            mbs=d.mbs, mss=d.mss, y=d.y,
            x=CovariateTable.from_dict({"SITE": ["a", "b", "a", "b"]}),
        )
        rep = validate_dataset(d, _toy_spec(eti_formula="~ -1 + factor(SITE)"))
        assert rep.do_reg_eti and rep.is_discrete_eti


class TestSpecTypes:
    def test_eti_prior_broadcast(self):
        m = _toy_spec(eti_prior=2.0)
        assert m.eti_prior.tolist() == [2.0, 2.0]

    def test_eti_prior_wrong_length(self):
        with pytest.raises(InputError, match="length 2"):
            _toy_spec(eti_prior=[1.0, 1.0, 1.0])

    def test_tpr_range_ordering(self):
        with pytest.raises(InputError):
            TprPriorSpec(kind="range", a=[0.9], b=[0.5])

    def test_mcmc_burnin_bound(self):
        with pytest.raises(InputError):
            McmcSettings(n_iter=10, n_burnin=10)

    def test_n_retained(self):
        assert McmcSettings(n_iter=100, n_burnin=40, n_thin=3).n_retained == 20

    def test_y_binary(self):
        with pytest.raises(InputError):
            Dataset(mbs=[], mss=[], y=np.array([0, 2]))
