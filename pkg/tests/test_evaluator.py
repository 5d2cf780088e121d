from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scbench.errors import ValidationError
from scbench.evaluator import CausalEstimates, eval_report, sigma_y, true_ate, true_erf


def toy(cf, outcome=None, treatment_type=None):
    cf = np.asarray(cf, dtype=float)
    if outcome is None:
        outcome = cf[:, 0] + np.arange(len(cf))
    return SimpleNamespace(
        counterfactuals=cf,
        outcome=np.asarray(outcome, dtype=float),
        treatment_type=treatment_type or ("binary" if cf.shape[1] == 2 else "continuous"),
    )


def oracle(ds):
    est = CausalEstimates(erf=true_erf(ds), ite=ds.counterfactuals.copy())
    if ds.treatment_type == "binary":
        est.ate = true_ate(ds)
    return est


cf_arrays = st.tuples(st.integers(2, 8), st.integers(2, 5)).flatmap(
    lambda s: arrays(float, s, elements=st.floats(-50, 50))
)


class TestTruth:
    def test_ate_examples(self):
        y0 = np.array([1.0, -2.0, 4.0])
        assert true_ate(toy(np.column_stack([y0, y0]))) == 0.0
        assert true_ate(toy(np.column_stack([y0, y0 + 2]))) == pytest.approx(2.0)

    def test_ate_needs_binary(self):
        with pytest.raises(ValidationError):
            true_ate(toy(np.ones((3, 4))))

    def test_erf_constant(self):
        assert true_erf(toy(np.full((4, 3), 2.5))).tolist() == [2.5, 2.5, 2.5]

    @given(arrays(float, st.tuples(st.integers(1, 10), st.just(2)), elements=st.floats(-50, 50)))
    def test_binary_erf_difference_is_ate(self, cf):
        ds = toy(cf)
        erf = true_erf(ds)
        assert erf[1] - erf[0] == pytest.approx(true_ate(ds), abs=1e-9)

    def test_bruteforce(self, rng):
        cf = rng.standard_normal((6, 2))
        ate = sum(cf[s, 1] - cf[s, 0] for s in range(6)) / 6
        assert true_ate(toy(cf)) == pytest.approx(ate, rel=1e-12)
        cf = rng.standard_normal((7, 4))
        assert true_erf(toy(cf)).tolist() == pytest.approx([sum(cf[:, a]) / 7 for a in range(4)], rel=1e-12)


class TestReport:
    def test_oracle_is_zero(self, rng):
        ds = toy(rng.standard_normal((9, 2)))
        r = eval_report(oracle(ds), ds)
        assert r.bias == r.rmise == r.pehe == 0.0

    def test_constant_offset(self, rng):
        ds = toy(rng.standard_normal((9, 4)))
        r = eval_report(CausalEstimates(erf=true_erf(ds) - 0.7), ds)
        assert r.rmise == pytest.approx(0.7 / np.std(ds.outcome))
        assert r.bias is None and r.pehe is None

    def test_hand_computed_toy(self):
        # 5 nodes, 3 levels; every quantity spelled out
        cf = np.arange(15, dtype=float).reshape(5, 3)
        y = np.array([0.0, 4.0, 8.0, 9.0, 14.0])
        est_ite = cf + np.array([[1, 0, 0], [0, -1, 0], [0, 0, 2], [0, 0, 0], [1, 1, 1]])
        est_erf = np.array([6.5, 7.0, 8.0])
        ds = toy(cf, y)
        mean_y = sum(y) / 5
        s = (sum((v - mean_y) ** 2 for v in y) / 5) ** 0.5
        # column means of cf are 6, 7, 8
        rmise = ((0.5**2 + 0 + 0) / 3) ** 0.5 / s
        pehe = ((1 + 1 + 4 + 0 + 3) / 15) ** 0.5 / s
        r = eval_report(CausalEstimates(erf=est_erf, ite=est_ite), ds)
        assert r.sigma_y == pytest.approx(s, rel=1e-12)
        assert r.rmise == pytest.approx(rmise, rel=1e-12)
        assert r.pehe == pytest.approx(pehe, rel=1e-12)

    def test_binary_pehe_averages_both_columns(self):
        cf = np.zeros((2, 2))
        ds = toy(cf, [0.0, 2.0])
        r = eval_report(CausalEstimates(ite=[[0.0, 2.0], [0.0, 0.0]]), ds)
        assert r.pehe == pytest.approx(np.sqrt(4 / 4) / 1.0)

    def test_nan_rows_skipped(self):
        cf = np.zeros((3, 2))
        ds = toy(cf, [0.0, 1.0, 2.0])
        r = eval_report(CausalEstimates(ite=[[np.nan, np.nan], [1.0, 1.0], [0.0, 0.0]]), ds)
        assert r.pehe == pytest.approx(np.sqrt(2 / 4) / np.std([0, 1, 2]))

    @pytest.mark.parametrize("est, match", [
        (CausalEstimates(), "no estimates"),
        (CausalEstimates(erf=np.zeros(3)), "erf has shape"),
        (CausalEstimates(ite=np.zeros((4, 2))), "ite has shape"),
        (CausalEstimates(ite=np.full((5, 2), np.nan)), "no finite rows"),
    ])
    def test_errors(self, est, match):
        with pytest.raises(ValidationError, match=match):
            eval_report(est, toy(np.ones((5, 2))))

    def test_zero_variance_outcome(self):
        with pytest.raises(ValidationError, match="zero variance"):
            eval_report(CausalEstimates(ate=0.0), toy(np.ones((3, 2)), np.ones(3)))

    def test_population_sd(self):
        assert sigma_y([1.0, 3.0]) == 1.0

    @given(cf_arrays, st.floats(0.01, 100), st.integers(0, 2**32 - 1))
    def test_scale_invariance(self, cf, c, seed):
        rng = np.random.default_rng(seed)
        y = rng.standard_normal(len(cf))
        ds = toy(cf, y)
        est = CausalEstimates(erf=true_erf(ds) + rng.standard_normal(cf.shape[1]),
                              ite=cf + rng.standard_normal(cf.shape))
        scaled = CausalEstimates(erf=est.erf * c, ite=est.ite * c)
        a = eval_report(est, ds)
        b = eval_report(scaled, toy(cf * c, y * c))
        assert b.rmise == pytest.approx(a.rmise, rel=1e-9)
        assert b.pehe == pytest.approx(a.pehe, rel=1e-9)

    @given(cf_arrays, st.randoms(use_true_random=False))
    def test_permutation_invariance(self, cf, rnd):
        n = len(cf)
        rng = np.random.default_rng(rnd.randrange(2**32))
        y = rng.standard_normal(n)
        ite = cf + rng.standard_normal(cf.shape)
        perm = np.array(rnd.sample(range(n), n))
        a = eval_report(CausalEstimates(erf=ite.mean(0), ite=ite), toy(cf, y))
        b = eval_report(CausalEstimates(erf=ite[perm].mean(0), ite=ite[perm]), toy(cf[perm], y[perm]))
        assert b.rmise == pytest.approx(a.rmise, rel=1e-9, abs=1e-12)
        assert b.pehe == pytest.approx(a.pehe, rel=1e-9)

    @given(cf_arrays)
    def test_aggregation_consistency(self, cf):
        ds = toy(cf, np.arange(len(cf), dtype=float))
        r = eval_report(CausalEstimates(erf=cf.mean(0), ite=cf), ds)
        assert r.pehe == 0.0 and r.rmise == pytest.approx(0.0, abs=1e-12)
