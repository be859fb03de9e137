import numpy as np
import pytest
from scipy import stats

from nplcm.core import InputError, TprPriorSpec
from nplcm.priors import (
    BetaRange,
    StickBreakingPrior,
    beta_from_range,
    sample_stick_arm,
    stick_weights,
    tpr_beta_params,
)

try:
    from hypothesis import given, settings
    from hypothesis import strategies as st

    HAVE_HYPOTHESIS = True
except ImportError:  # pragma: no cover
    HAVE_HYPOTHESIS = False


RANGES = [(0.55, 0.99), (0.01, 0.5), (0.5, 0.9), (0.05, 0.2)]


@pytest.mark.parametrize("low,up", RANGES)
def test_beta_from_range_quantile_residuals(low, up):
    c1, c2 = beta_from_range(BetaRange(low, up))
    assert stats.beta.ppf(0.025, c1, c2) == pytest.approx(low, abs=1e-6)
    assert stats.beta.ppf(0.975, c1, c2) == pytest.approx(up, abs=1e-6)


def test_beta_from_range_rejects_bad_order():
    with pytest.raises(InputError):
        BetaRange(0.9, 0.5)
    with pytest.raises(InputError):
        BetaRange(0.0, 0.5)


if HAVE_HYPOTHESIS:

    @given(
        low=st.floats(0.01, 0.6),
        width=st.floats(0.05, 0.38),
    )
    @settings(max_examples=40, deadline=None)
    def test_beta_from_range_property(low, width):
        up = min(low + width, 0.99)
        c1, c2 = beta_from_range(BetaRange(low, up))
        q = stats.beta.ppf([0.025, 0.975], c1, c2)
        assert abs(q[0] - low) < 1e-6 and abs(q[1] - up) < 1e-6


def test_tpr_beta_params_range_kind():
    spec = TprPriorSpec(kind="range", a=[0.55, 0.5], b=[0.99, 0.9])
    c1, c2 = tpr_beta_params(spec)
    for j, (lo, up) in enumerate([(0.55, 0.99), (0.5, 0.9)]):
        assert stats.beta.ppf(0.025, c1[j], c2[j]) == pytest.approx(lo, abs=1e-6)


def test_tpr_beta_params_passthrough():
    spec = TprPriorSpec(kind="beta", a=[2.0], b=[3.0])
    c1, c2 = tpr_beta_params(spec)
    assert c1[0] == 2.0 and c2[0] == 3.0


class TestStickWeights:
    def test_k1(self):
        assert stick_weights([]).tolist() == [1.0]

    def test_simplex(self):
        w = stick_weights([0.3, 0.6, 0.1])
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert (w > 0).all()

    def test_known_values(self):
        w = stick_weights([0.5, 0.5])
        assert np.allclose(w, [0.5, 0.25, 0.25])

    def test_out_of_range_fraction(self):
        with pytest.raises(InputError):
            stick_weights([1.5])


def test_sample_stick_arm_shapes():
    rng = np.random.default_rng(0)
    prior = StickBreakingPrior(K=4)
    alpha, v, w = sample_stick_arm(prior, rng)
    assert alpha > 0 and v.size == 3 and w.size == 4
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_sample_stick_arm_alpha_moments():
    # Gamma(0.25, rate 0.25) has mean 1 and variance 4
    rng = np.random.default_rng(1)
    draws = np.array(
        [sample_stick_arm(StickBreakingPrior(K=2), rng)[0] for _ in range(4000)]
    )
    assert draws.mean() == pytest.approx(1.0, abs=0.12)
    assert draws.var() == pytest.approx(4.0, rel=0.2)
