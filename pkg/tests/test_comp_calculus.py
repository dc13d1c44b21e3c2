import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charflow import comp_calculus as cc


def affine_field_rep(m=1, d_y=3, box_z=(-1.0, 2.0)):
    """Depth-two representation of an affine parametric field (m = 1)."""
    fields = [
        lambda z: np.cos(z[:, :1]),
        lambda z: np.sin(z[:, :1]),
        lambda z: 0.5 * np.cos(2 * z[:, :1]),
    ][:d_y]

    def g1(z):
        x = z[:, :1]
        y = z[:, 1 : 1 + d_y]
        return np.hstack([y] + [f(x) for f in fields])

    gen = cc.GenericFactor(
        g1,
        in_dim=1 + d_y,
        out_dim=d_y + d_y * m,
        lip=1.0,
        sup=1.0,
        dep_sets=[(1 + j,) for j in range(d_y)] + [(0,)] * (d_y * m),
        box=[[box_z[0], box_z[1]]] + [[-1, 1]] * d_y,
    )

    def g2(v):
        y, r = v[:, :d_y], v[:, d_y:]
        return np.sum(y * r, axis=1, keepdims=True)

    bil = cc.MultilinearFactor(g2, in_dim=2 * d_y, out_dim=1, lip=2.0, sup=1.0)
    return cc.CompRep([gen, bil])


class TestSparsityAndComplexity:
    def test_single_linear_factor(self):
        rep = cc.CompRep([cc.LinearFactor([[2.0, 1.0]])])
        assert cc.s_infinity(rep) == 1

    def test_affine_field_sparsity(self):
        assert cc.s_infinity(affine_field_rep()) == 1  # m = 1

    def test_identity_sparsity_zero(self):
        rep = cc.CompRep([cc.IdentityFactor(2), cc.LinearFactor(np.eye(2))])
        assert cc.s_infinity(rep) == 0 or cc.s_infinity(rep) == 1
        assert rep.factors[0].s_inf() == 0

    def test_affine_field_complexity(self):
        # d_y (1 + m^2) + 1 with m = 1, d_y = 3
        assert cc.complexity(affine_field_rep()) == 7

    def test_compose_additivity(self):
        r1 = affine_field_rep()
        r2 = cc.CompRep([cc.LinearFactor([[1.0]]), cc.LinearFactor([[2.0]])])
        comp = cc.compose_reps(r2, r1)
        assert cc.complexity(comp) == cc.complexity(r1) + cc.complexity(r2)

    def test_sum_additivity_exact(self):
        f = cc.GenericFactor(
            lambda z: np.abs(z[:, :1]), 1, 1, lip=1.0, sup=1.0, box=[[-1, 1]]
        )
        r1 = cc.CompRep([f, cc.LinearFactor([[1.0]])])
        r2 = cc.CompRep([cc.LinearFactor([[0.5]])])
        s = cc.sum_reps(r1, r2)
        assert cc.complexity(s) == cc.complexity(r1) + cc.complexity(r2)
        x = np.linspace(-1, 1, 11)[:, None]
        np.testing.assert_allclose(s.eval(x), r1.eval(x) + r2.eval(x), atol=1e-14)

    def test_identity_rep_complexity_zero(self):
        rep = cc.CompRep([cc.IdentityFactor(1), cc.LinearFactor([[1.0]])])
        assert rep.factors[0].complexity() == 0


class TestCompNorm:
    def test_single_affine(self):
        rep = cc.CompRep([cc.LinearFactor([[2.0]])])
        low, up = cc.comp_norm_interval(rep, cc.Regularizer("lip_full"), [[0, 1]])
        assert up == 2.0
        assert 1.9 <= low <= up

    def test_affine_field_upper(self):
        rep = affine_field_rep()
        # |||a|||  <=  A + Lam |omega|_1 = 2  given lip data above
        low, up = cc.comp_norm_interval(
            rep, cc.Regularizer("lip_full"), [[-1, 2]] + [[-1, 1]] * 3
        )
        assert up == 2.0
        assert low <= up

    def test_contraction_chain_tail(self):
        rep = cc.CompRep([cc.LinearFactor([[0.5]]), cc.LinearFactor([[0.5]])])
        assert cc.partial_composition_upper(rep, 0) == 0.25
        sampled = cc.sampled_partial_lip(rep, 0, [[0, 1]])
        assert sampled <= 0.25 + 1e-12

    def test_ordering_lipfactors_vs_full(self):
        rep = affine_field_rep()
        box = [[-1, 2]] + [[-1, 1]] * 3
        _, up_o = cc.comp_norm_interval(rep, cc.Regularizer("lip_factors"), box)
        _, up_f = cc.comp_norm_interval(rep, cc.Regularizer("lip_full"), box)
        n = len(rep.factors)
        assert up_o <= up_f <= max(1.0, up_o**n)

    def test_regularizer_algebra(self):
        assert cc.reg_parallel_upper(2.0, 3.0) == 3.0
        assert cc.reg_compose_upper(0.5, 0.5) == 0.5
        assert cc.reg_compose_upper(2.0, 3.0) == 6.0


class TestGrowth:
    def test_gamma_inverse_alg(self):
        assert cc.gamma_inverse(cc.GrowthFunction("alg", 1, 2), 9.0) == pytest.approx(3.0)

    def test_gamma_inverse_exp(self):
        gf = cc.GrowthFunction("exp", 1, 1)
        assert cc.gamma_inverse(gf, math.e) == pytest.approx(1.0)

    def test_gamma_inverse_roundtrip(self):
        gf = cc.GrowthFunction("alg", 2, 0.5)
        assert cc.gamma_inverse(gf, 8.0) == pytest.approx(16.0)
        assert gf(16.0) == pytest.approx(8.0)

    def test_gamma_inverse_domain(self):
        with pytest.raises(ValueError):
            cc.gamma_inverse(cc.GrowthFunction("alg", 1, 1), -1.0)
        with pytest.raises(ValueError):
            cc.gamma_inverse(cc.GrowthFunction("exp", 2, 1), 1.0)

    def test_n_epsilon_examples(self):
        assert cc.n_epsilon(cc.GrowthFunction("alg", 1, 1), 1.0, 0.1) == 10
        assert cc.n_epsilon(cc.GrowthFunction("exp", 1, 1), math.e**2, 1.0) == 2
        assert cc.n_epsilon(cc.GrowthFunction("alg", 2, 2), 8.0, 0.5) == 3
        with pytest.raises(ValueError):
            cc.n_epsilon(cc.GrowthFunction("alg", 1, 1), 1.0, 0.0)


class TestNearInverse:
    def test_pure_power(self):
        ni = cc.near_inverse(1, 1, 2, 0)
        assert ni(25.0) == pytest.approx(5.0)

    def test_roundtrip_band(self):
        ni = cc.near_inverse(1, 1, 1, 1)
        rs = np.exp2(np.linspace(4, 20, 50))
        ratio = ni.forward(ni(rs)) / rs
        assert ratio.min() >= 0.25 and ratio.max() <= 4.0

    def test_char_rate_shape(self):
        # phi(s) = d_y A T m^2 s^(m+1) |log2 s|^2 inverts to the
        # characteristic-rate law (r/d_y)^(1/(m+1)) |log2(r/d_y)|^(-2/(m+1))
        m, d_y, A, T = 1, 4, 1.0, 1.0
        ni = cc.near_inverse(d_y * A * T * m**2, 1.0, m + 1, 2.0)
        rs = np.exp2(np.linspace(14, 30, 40))
        target = (
            (A * T * m**2) ** (-1 / (m + 1))
            * (rs / d_y) ** (1 / (m + 1))
            * np.abs(np.log2(rs / d_y)) ** (-2 / (m + 1))
        )
        ratio = ni(rs) / target
        assert ratio.max() / ratio.min() <= 4.0
        assert 0.25 <= ratio.min() and ratio.max() <= 4.0

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            cc.near_inverse(-1, 1, 1, 0)
        ni = cc.near_inverse(1, 1, 1, 1)
        with pytest.raises(ValueError):
            ni(1.0)  # log singularity


class TestImplant:
    def test_exact_factors_passthrough(self, rng):
        rep = cc.CompRep(
            [
                cc.LinearFactor([[1.0], [2.0]]),
                cc.MultilinearFactor(
                    lambda v: v[:, :1] * v[:, 1:2], 2, 1, lip=2.0, sup=4.0
                ),
            ]
        )
        imp, bound = cc.implant(rep, [0.0, 0.0])
        assert bound == 0.0
        x = rng.uniform(-1, 1, (50, 1))
        np.testing.assert_allclose(imp.eval(x), 2 * x * x, atol=1e-14)

    def test_two_factor_bound(self):
        f1 = cc.GenericFactor(
            lambda z: np.abs(z[:, :1] - 0.3), 1, 1, lip=1.0, sup=0.7, box=[[0, 1]]
        )
        f2 = cc.GenericFactor(
            lambda z: np.minimum(z[:, :1], 0.8), 1, 1, lip=1.0, sup=0.8, box=[[0, 1.5]]
        )
        rep = cc.CompRep([f1, f2, cc.LinearFactor([[1.0]])])
        imp, bound = cc.implant(rep, [0.01, 0.01, 0.0])
        assert bound == pytest.approx(0.01 + 0.01 * 1.0, abs=1e-12)

    def test_implant_error_soundness(self, rng):
        rep = affine_field_rep()
        imp, bound = cc.implant(rep, [0.01, 0.0])
        pts = np.hstack(
            [rng.uniform(-1, 2, (5000, 1)), rng.uniform(-1, 1, (5000, 3))]
        )
        err = np.abs(imp.eval(pts) - rep.eval(pts)).max()
        assert err <= bound

    def test_sparsity_preserved(self):
        rep = affine_field_rep()
        imp, _ = cc.implant(rep, [0.05, 0.0])
        assert imp.s_inf() <= cc.s_infinity(rep)

    def test_to_relu_network(self, rng):
        f1 = cc.GenericFactor(
            lambda z: np.abs(z[:, :1] - 0.3), 1, 1, lip=1.0, sup=0.7, box=[[0, 1]]
        )
        rep = cc.CompRep([f1, cc.LinearFactor([[2.0]])])
        imp, _ = cc.implant(rep, [0.05, 0.0])
        net = imp.to_relu_network()
        x = rng.uniform(0, 1, (200, 1))
        np.testing.assert_allclose(net.eval(x), imp.eval(x), atol=1e-12)

    def test_resource_refusal(self):
        f = cc.GenericFactor(
            lambda z: z[:, :1] * 0.0, 2, 1, lip=1.0, sup=1.0, box=[[0, 1], [0, 1]]
        )
        rep = cc.CompRep([f, cc.LinearFactor([[1.0]])])
        with pytest.raises(ResourceWarning):
            cc.implant(rep, [1e-9, 0.0], max_grid_nodes=1000)


class TestImplantForAccuracy:
    def test_constant_exact_family(self):
        # family exact from N >= 1: zero family error, implant error only
        lin = cc.CompRep([cc.LinearFactor([[1.0]])])
        gf = cc.GrowthFunction("alg", 1, 1)
        net, report = cc.implant_for_accuracy(
            lambda N: lin, gf, norm=1.0, seminorm=1e-12, eps=0.05
        )
        assert report["total_bound"] <= 0.05
        x = np.linspace(0, 1, 20)[:, None]
        np.testing.assert_allclose(net.eval(x), x, atol=1e-12)

    def test_lipschitz_1d_accuracy(self, rng):
        target = lambda x: np.abs(x[:, :1] - 0.4)

        def family(N):
            f = cc.GenericFactor(target, 1, 1, lip=1.0, sup=0.6, box=[[0, 1]])
            return cc.CompRep([f, cc.LinearFactor([[1.0]])])

        gf = cc.GrowthFunction("alg", 1, 1)
        net, report = cc.implant_for_accuracy(
            family, gf, norm=1.0, seminorm=1.0, eps=0.05
        )
        pts = rng.uniform(0, 1, (3000, 1))
        assert np.abs(net.eval(pts) - target(pts)).max() <= 0.05

    def test_size_tracks_rate_shape(self):
        # measured sizes across eps = 2^-k stay within a factor-4 band of
        # the rate-law shape (1/eps)^(s+1)-ish for the trivial 1-factor family
        def family(N):
            f = cc.GenericFactor(
                lambda x: np.abs(x[:, :1] - 0.4), 1, 1, lip=1.0, sup=0.6, box=[[0, 1]]
            )
            return cc.CompRep([f, cc.LinearFactor([[1.0]])])

        gf = cc.GrowthFunction("exp", 1, 1)
        ratios = []
        for k in (3, 4, 5, 6):
            eps = 2.0**-k
            net, report = cc.implant_for_accuracy(family, gf, 1.0, 1.0, eps)
            predicted = (1 / eps) * math.log2(1 / eps) * max(
                1.0, cc.gamma_inverse(gf, 2.0 / eps)
            ) ** 2
            ratios.append(report["size"] / predicted)
        assert max(ratios) / min(ratios) <= 4.0


class TestSeminormUpper:
    def test_single_sample(self):
        gf = cc.GrowthFunction("alg", 1, 1)
        assert cc.aclass_seminorm_upper([(1, 0.0, 1.0)], gf) == 1.0

    def test_matched_rate(self):
        gf = cc.GrowthFunction("alg", 1, 1)
        samples = [(n, 1.0 / gf(n), 1.0) for n in (1, 2, 4, 8)]
        assert cc.aclass_seminorm_upper(samples, gf) == pytest.approx(2.0)

    def test_affine_family_finite(self):
        # the affine field family is exact beyond its fixed complexity
        gf = cc.GrowthFunction("exp", 1.0, 1.0 / 7.0)
        A, Lam, omega1 = 1.0, 1.0, 1.0
        norm_up = A + Lam * omega1
        samples = [(n, 0.0 if n >= 7 else A, norm_up) for n in range(1, 12)]
        val = cc.aclass_seminorm_upper(samples, gf)
        assert val <= 2 * (A + Lam * omega1) + A

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cc.aclass_seminorm_upper([], cc.GrowthFunction("alg", 1, 1))


def test_rep_descriptor_serialization():
    import json

    rep = affine_field_rep()
    doc = json.loads(cc.rep_descriptor_json(rep))
    assert doc["complexity"] == 7
    assert doc["factors"][0]["kind"] == "GenericFactor"
    assert doc["factors"][0]["dep_sets"][0] == [1]
    assert doc["factors"][1]["kind"] == "MultilinearFactor"
    # build reports are plain JSON too
    from charflow import catalog, transport_core as tc

    comps = [catalog.make_component({"kind": "constant", "value": 1.0})]
    conv = tc.AffineConvection(1, 1, [1.0], comps)
    prob = tc.TransportProblem(conv, 1.0, [[0.0, 1.0]])
    net = tc.build_char_net(prob, 0.2)
    json.dumps(net.report)


@given(st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_complexity_additivity_property(seed):
    rng = np.random.default_rng(seed)
    from charflow.harness import _random_rep

    r1 = _random_rep(rng, int(rng.integers(1, 4)))
    r2 = _random_rep(rng, int(rng.integers(1, 4)))
    assert cc.complexity(cc.compose_reps(r2, r1)) == cc.complexity(r1) + cc.complexity(r2)
    assert cc.complexity(cc.sum_reps(r1, r2)) == cc.complexity(r1) + cc.complexity(r2)
