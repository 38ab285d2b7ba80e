import math

import numpy as np
import pytest

from confidence_engine.errors import DegenerateWeightsError
from confidence_engine.gaussian import (
    Diagram,
    GaussNode,
    VariableId,
    condition_all,
    marginal,
    to_joint,
)
from confidence_engine.oracle import exact_bayes_mc, gaussian_mc_check, weighted_moments
from confidence_engine.solver import CompiledModel, CompiledVariable, Evidence
from confidence_engine.transforms import PriorSpec, Scale, StudyArm, rct_summary

from generators import random_diagram
from oracles import logit_normal_binomial_moments

X, Y, Z = VariableId(0, "X"), VariableId(1, "Y"), VariableId(2, "Z")


def one_var(arms=(), prior=None):
    p = VariableId(0, "p")
    ev = tuple(Evidence(f"s{k}", p, rct_summary(a), a) for k, a in enumerate(arms))
    return CompiledModel((CompiledVariable(p, Scale.PROBABILITY, prior or PriorSpec.jeffreys()),), ev)


def within(est, ref, k=3.0, floor=1e-10):
    return abs(est.mean - ref) <= k * est.mean_se + floor


class TestExactBayes:
    def test_deterministic(self):
        m = one_var([StudyArm(3, 9)])
        a = exact_bayes_mc(m, 20_000, seed=5)
        b = exact_bayes_mc(m, 20_000, seed=5)
        assert a == b

    def test_worker_and_partition_invariance(self, tpa_revised_model):
        a = exact_bayes_mc(tpa_revised_model, 40_000, seed=2, chunk_size=8192)
        b = exact_bayes_mc(tpa_revised_model, 40_000, seed=2, chunk_size=8192, workers=4)
        assert a == b

    def test_minimum_samples(self):
        with pytest.raises(ValueError):
            exact_bayes_mc(one_var(), 9_999)

    def test_prior_only(self):
        est = exact_bayes_mc(one_var(), 100_000, seed=1)
        assert within(est["p"], 0.5, k=4)
        assert est.ess == pytest.approx(100_000)

    @pytest.mark.parametrize("proposal", ["local", "prior"])
    def test_one_study_matches_quadrature(self, proposal):
        mean, sd = logit_normal_binomial_moments(0.0, math.pi**2, [(10, 20)])
        assert mean == pytest.approx(0.5, abs=1e-12)
        est = exact_bayes_mc(one_var([StudyArm(10, 20)]), 200_000, seed=3, proposal=proposal)["p"]
        assert within(est, mean)
        assert abs(est.sd - sd) <= 3 * est.sd_se

    @pytest.mark.parametrize("proposal", ["local", "prior"])
    def test_skewed_study_matches_quadrature(self, proposal):
        arms = [(2, 31), (0, 14)]
        mean, sd = logit_normal_binomial_moments(0.5, 2.0, arms)
        model = one_var([StudyArm(*a) for a in arms], PriorSpec.normal(0.5, 2.0))
        est = exact_bayes_mc(model, 200_000, seed=4, proposal=proposal)["p"]
        assert within(est, mean)
        assert abs(est.sd - sd) <= 3 * est.sd_se

    def test_seed_independence(self, tpa_revised_model):
        a = exact_bayes_mc(tpa_revised_model, 100_000, seed=10)
        b = exact_bayes_mc(tpa_revised_model, 100_000, seed=11)
        for name in a.estimates:
            ea, eb = a[name], b[name]
            assert abs(ea.mean - eb.mean) <= 4 * math.hypot(ea.mean_se, eb.mean_se)

    def test_standard_error_halves(self):
        m = one_var([StudyArm(7, 40)])
        for trial in range(10):
            small = exact_bayes_mc(m, 20_000, seed=100 + trial, proposal="prior")["p"]
            large = exact_bayes_mc(m, 80_000, seed=200 + trial, proposal="prior")["p"]
            assert 0.35 <= large.mean_se / small.mean_se <= 0.65

    def test_degenerate_weights(self, tpa_model):
        with pytest.raises(DegenerateWeightsError) as err:
            exact_bayes_mc(tpa_model, 10_000, seed=0, proposal="prior")
        assert err.value.ess < 100

    def test_standard_errors_positive(self, tpa_revised_model):
        est = exact_bayes_mc(tpa_revised_model, 50_000, seed=0)
        assert est.ess <= est.samples
        assert all(e.mean_se > 0 and e.sd_se > 0 for e in est.estimates.values())


class TestWeightedMoments:
    def test_uniform_weights_match_numpy(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(10_000, 2))
        est, ess = weighted_moments(v, np.zeros(10_000), ["a", "b"])
        assert ess == pytest.approx(10_000)
        assert est["a"].mean == pytest.approx(v[:, 0].mean(), abs=1e-14)
        assert est["b"].sd == pytest.approx(v[:, 1].std(), rel=1e-12)
        assert est["a"].mean_se == pytest.approx(v[:, 0].std() / 100, rel=0.15)

    def test_all_zero_weights(self):
        with pytest.raises(DegenerateWeightsError):
            weighted_moments(np.zeros((500, 1)), np.full(500, -np.inf), ["a"])


class TestGaussianCheck:
    def test_conjugate_pair(self):
        d = Diagram((GaussNode(X, (), 0.0, 1.0), GaussNode(Y, (X,), 0.0, 1.0, (1.0,))))
        est = gaussian_mc_check(d, [(Y, 2.0)], 100_000, seed=0)
        assert est.scale == "working"
        assert within(est["X"], 1.0)
        assert abs(est["X"].sd ** 2 - 0.5) <= 3 * 2 * est["X"].sd * est["X"].sd_se

    def test_deterministic_intermediate(self):
        d = Diagram(
            (
                GaussNode(X, (), 1.0, 2.0),
                GaussNode(Z, (X,), -0.5, 0.0, (1.5,)),
                GaussNode(Y, (Z,), 0.0, 0.7, (1.0,)),
            )
        )
        post = condition_all(to_joint(d), [(Y, 3.0)])
        est = gaussian_mc_check(d, [(Y, 3.0)], 100_000, seed=1)
        for v in (X, Z):
            assert within(est[v.name], marginal(post, v)[0])

    @pytest.mark.parametrize("seed", range(5))
    def test_random_five_node(self, seed):
        rng = np.random.default_rng(50 + seed)
        d = random_diagram(rng, 5, p_det=0.0)
        joint = to_joint(d)
        draw = rng.multivariate_normal(joint.mean, joint.cov, method="eigh")
        ev_ids = [d.ids[i] for i in rng.choice(5, 2, replace=False)]
        ev = [(v, float(draw[joint.position(v)])) for v in ev_ids]
        post = condition_all(joint, ev)
        est = gaussian_mc_check(d, ev, 100_000, seed=seed)
        for v in post.ids:
            assert within(est[v.name], marginal(post, v)[0])

    def test_zero_variance_evidence_rejected(self):
        d = Diagram((GaussNode(X, (), 0.0, 1.0), GaussNode(Y, (X,), 0.0, 0.0, (1.0,))))
        with pytest.raises(ValueError):
            gaussian_mc_check(d, [(Y, 1.0)])
