import math

import numpy as np
import pytest

from charflow import catalog, oracle
from charflow import comp_calculus as cc
from charflow import transport_core as tc


def cosine_problem(d_y=4, freq=0.2, T_hat=1.0, u0_spec=None, f_spec=None):
    comps = [
        catalog.make_component(
            {"kind": "cosine", "amp": 1.0, "freq": freq, "phase": 0.7 * j}
        )
        for j in range(d_y)
    ]
    conv = tc.AffineConvection(1, d_y, [1.0 / d_y] * d_y, comps)
    u0 = catalog.make_u0(u0_spec) if u0_spec else None
    f = catalog.make_f(f_spec) if f_spec else None
    return tc.TransportProblem(conv, T_hat, [[0.0, 1.0]], u0=u0, f=f)


def zero_field_problem():
    comps = [catalog.make_component({"kind": "constant", "value": 0.0})]
    conv = tc.AffineConvection(1, 1, [1.0], comps, validate=False)
    return tc.TransportProblem(conv, 1.0, [[0.0, 1.0]])


class TestMacroGrid:
    def test_unit_case(self):
        g = tc.macro_grid(1.0, 1.0)
        assert g.interval_length == 0.5 and g.K == 2

    def test_fractional(self):
        g = tc.macro_grid(2.0, 3.0)
        assert g.interval_length == pytest.approx(1 / 6) and g.K == 12

    def test_single_slab(self):
        assert tc.macro_grid(0.5, 1.0).K == 1

    def test_slabs_cover_horizon(self):
        g = tc.macro_grid(1.3, 2.0)
        assert g.K * g.slab_length == pytest.approx(1.3)
        assert g.slab_length <= g.interval_length + 1e-15


class TestSchedule:
    def test_eta_example(self):
        assert tc.eta_tolerance(0.1, 2) == pytest.approx(
            (math.exp(0.5) - 1) * 0.1 * math.exp(-1)
        )

    def test_mu_example(self):
        assert tc.mu_iterations(1 / 8) == 2

    def test_tau_and_q_example(self):
        eta = tc.eta_tolerance(0.1, 2)
        tau = tc.tau_from_eta(eta)
        assert tau == pytest.approx(math.exp(-0.5) * eta)
        assert math.ceil(2 * 1.0 * 0.5 / tau) == 70

    def test_schedule_certifies_internal_half(self):
        prob = cosine_problem()
        grid = tc.macro_grid(1.0, prob.convection.norm)
        sched = tc.schedule(0.1, grid, prob)
        assert sched.eps_internal == 0.05
        assert sched.q >= 1 and sched.mu >= 1
        assert sched.delta < 1

    def test_resource_refusal(self):
        prob = cosine_problem()
        grid = tc.macro_grid(1.0, prob.convection.norm)
        with pytest.raises(tc.ResourceCeiling) as exc:
            tc.schedule(1e-7, grid, prob)
        assert exc.value.predicted_cost > 0


class TestPicardNumeric:
    def test_constant_field_one_sweep_exact(self):
        field = lambda t, x, y: np.full_like(x, 0.7)
        at = tc.picard_numeric(field, (0.0, 0.4), np.array([[0.2]]), None, 1)
        assert at(0.3)[0, 0] == pytest.approx(0.2 + 0.3 * 0.7, abs=1e-12)

    def test_zero_sweeps_identity(self):
        field = lambda t, x, y: np.ones_like(x)
        at = tc.picard_numeric(field, (0.0, 0.5), np.array([[0.3]]), None, 0)
        assert at(0.5)[0, 0] == 0.3

    def test_error_halves_per_sweep(self, rng):
        comp = catalog.make_component({"kind": "cosine", "amp": 1.0, "freq": 1.0})
        conv = tc.AffineConvection(1, 1, [1.0], [comp])
        grid = tc.macro_grid(1.0, conv.norm)
        interval = grid.slab(0)
        field = lambda t, x, y: conv.eval(t, x, y)
        n = 200
        x = rng.uniform(0, 1, (n, 1))
        y = rng.uniform(-1, 1, (n, 1))
        t = rng.uniform(interval[0], interval[1], n)
        zr, _ = oracle.rk4_char(
            field, np.full(n, interval[0]), t, x, y, oracle.OdeConfig(steps=32, tol=1e-9)
        )
        for k in range(1, 7):
            at = tc.picard_numeric(field, interval, x, y, k, time_grid=2048)
            assert np.abs(at(t) - zr).max() <= 2.0 ** (-k - 1)


class TestSlabNet:
    def test_zero_field_identity(self, rng):
        prob = zero_field_problem()
        slab = tc.build_slab_net(prob, (0.0, 0.5), tau=0.01)
        t = rng.uniform(0, 0.5, 20)
        w = rng.uniform(0, 1, (20, 1))
        y = rng.uniform(-1, 1, (20, 1))
        np.testing.assert_allclose(slab.at_times(t, w, y), w, atol=1e-14)

    def test_constant_in_x_field_quadrature_exact(self, rng):
        # constant components: only the implantation term remains, and the
        # interpolant of a constant is exact
        comps = [catalog.make_component({"kind": "constant", "value": 1.0})]
        conv = tc.AffineConvection(1, 1, [1.0], [comp for comp in comps])
        prob = tc.TransportProblem(conv, 1.0, [[0.0, 1.0]])
        slab = tc.build_slab_net(prob, (0.0, 0.5), tau=0.01)
        t = rng.uniform(0, 0.5, 50)
        w = rng.uniform(0, 1, (50, 1))
        y = rng.uniform(-1, 1, (50, 1))
        expect = w + t[:, None] * y
        bound = conv.omega1 * 0.5 * slab.delta
        assert np.abs(slab.at_times(t, w, y) - expect).max() <= max(bound, 1e-12)

    def test_one_step_error_vs_fine_reference(self, rng):
        comp = catalog.make_component({"kind": "cosine", "amp": 1.0, "freq": 1.0})
        conv = tc.AffineConvection(1, 1, [1.0], [comp])
        prob = tc.TransportProblem(conv, 1.0, [[0.0, 1.0]])
        grid = tc.macro_grid(1.0, conv.norm)
        interval = grid.slab(0)
        tau = 0.01
        slab = tc.build_slab_net(prob, interval, tau)
        field = lambda t, x, y: conv.eval(t, x, y)
        n = 1000
        w = rng.uniform(0, 1, (n, 1))
        y = rng.uniform(-1, 1, (n, 1))
        t = rng.uniform(interval[0], interval[1], n)
        phi = tc.picard_numeric(field, interval, w, y, 1, time_grid=4096)
        assert np.abs(slab.at_times(t, w, y) - phi(t)).max() <= tau

    def test_one_step_bound_formula(self):
        prob = cosine_problem(d_y=2)
        grid = tc.macro_grid(1.0, prob.convection.norm)
        slab = tc.build_slab_net(prob, grid.slab(0), tau=0.02)
        # case with slab averages: (L|I| + 1) A |I| / (2q) dominates the
        # quadrature part; the full budget must stay below tau
        assert slab.one_step_error_bound() <= 0.02 + 1e-12

    def test_naive_reference_agreement(self, rng):
        prob = cosine_problem(d_y=2)
        grid = tc.macro_grid(1.0, prob.convection.norm)
        slab = tc.build_slab_net(prob, grid.slab(0), tau=0.05, mu=3)
        t = rng.uniform(*grid.slab(0), 4)
        w = rng.uniform(0, 1, (4, 1))
        y = rng.uniform(-1, 1, (4, 2))
        np.testing.assert_allclose(
            slab.at_times(t, w, y), slab.naive_eval(t, w, y), atol=1e-12
        )

    def test_contraction_of_sweeps(self, rng):
        # two sweeps from distinct quadrature-state seeds contract by >= 2
        prob = cosine_problem(d_y=1)
        grid = tc.macro_grid(1.0, prob.convection.norm)
        slab = tc.build_slab_net(prob, grid.slab(0), tau=0.01)
        w = rng.uniform(0, 1, (30, 1))
        y = rng.uniform(-1, 1, (30, 1))
        za = rng.uniform(-0.5, 1.5, (30, slab.q, 1))
        zb = rng.uniform(-0.5, 1.5, (30, slab.q, 1))

        def sweep(Z):
            vals = slab._component_values(Z)
            V = np.einsum("nqmj,nj->nqm", vals, slab.conv.omega * y)
            return w[:, None, :] + slab.cell * (np.cumsum(V, axis=1) - 0.5 * V)

        num = np.abs(sweep(za) - sweep(zb)).max(axis=(1, 2))
        den = np.abs(za - zb).max(axis=(1, 2))
        assert (num / den).max() <= 0.5 + 1e-9


class TestRhoGateSize:
    @pytest.mark.parametrize("interval,q", [((0.0, 0.5), 7), ((0.3, 1.1), 12), ((0.0, 1.0), 1)])
    def test_analytic_count_matches_built_net(self, interval, q):
        from charflow.relu_net import rho_gate

        assert tc._rho_gate_size(interval, q) == rho_gate(interval, q).size()


class TestCharNetwork:
    def test_constant_parameter_field(self, rng):
        comps = [catalog.make_component({"kind": "constant", "value": 1.0})]
        conv = tc.AffineConvection(1, 1, [1.0], comps)
        prob = tc.TransportProblem(conv, 1.0, [[0.0, 1.0]])
        net = tc.build_char_net(prob, 0.05)
        t, x, y = prob.sample_inputs(2000, seed=3)
        assert np.abs(net.eval(t, x, y) - (x + t[:, None] * y)).max() <= 0.05

    def test_affine_field_certified(self, rng):
        prob = cosine_problem(d_y=4)
        net = tc.build_char_net(prob, 0.1)
        t, x, y = prob.sample_inputs(2000, seed=4)
        ref, _ = oracle.rk4_char(
            net.oracle_field(), np.zeros(2000), t, x, y,
            oracle.OdeConfig(steps=32, tol=1e-4),
        )
        assert np.abs(net.eval(t, x, y) - ref).max() <= 0.1

    def test_junction_telescoping(self, rng):
        prob = cosine_problem(d_y=2, freq=1.0)
        net = tc.build_char_net(prob, 0.1)
        sched, grid = net.sched, net.grid
        field = net.oracle_field()
        for k in range(grid.K):
            lo, hi = grid.slab(k)
            t = rng.uniform(lo, hi, 300)
            x = rng.uniform(0, 1, (300, 1))
            y = rng.uniform(-1, 1, (300, prob.d_y))
            ref, _ = oracle.rk4_char(
                field, np.zeros(300), t, x, y, oracle.OdeConfig(steps=32, tol=1e-5)
            )
            err = np.abs(net.eval(t, x, y) - ref).max()
            budget = 2 * (
                sched.eta
                + sum(sched.eta * math.exp((k - j) / 2) for j in range(k))
            )
            assert err <= budget

    def test_junction_exact_consistency(self, rng):
        # adjacent slabs agree exactly at junctions: the next slab's value
        # at its left edge is the frozen seed from the previous slab
        prob = cosine_problem(d_y=2)
        net = tc.build_char_net(prob, 0.1)
        x = rng.uniform(0, 1, (50, 1))
        y = rng.uniform(-1, 1, (50, 2))
        seeds = net.junction_values(x, y)
        for k in range(1, net.grid.K):
            lo = net.grid.slab(k)[0]
            vals = net.slabs[k].at_times(np.full(50, lo), seeds[k], y)
            np.testing.assert_array_equal(vals, seeds[k])

    def test_certificate_threshold_eps_uniform(self):
        # the stability threshold does not grow when eps shrinks
        prob = cosine_problem(d_y=2)
        certs = [
            tc.lipschitz_certificate(tc.build_char_net(prob, eps), n_samples=200, seed=1)
            for eps in (0.1, 0.025)
        ]
        assert certs[1]["xy_threshold"] == certs[0]["xy_threshold"]
        assert certs[1]["t_threshold"] <= certs[0]["t_threshold"]

    def test_backward_direction(self, rng):
        prob = cosine_problem(d_y=2)
        net = tc.build_char_net(prob, 0.1, direction="backward")
        t, x, y = prob.sample_inputs(500, seed=8)
        ref, _ = oracle.rk4_char(
            net.oracle_field(), np.zeros(500), t, x, y,
            oracle.OdeConfig(steps=32, tol=1e-4),
        )
        assert np.abs(net.eval(t, x, y) - ref).max() <= 0.1

    def test_time_lipschitz_of_built_net(self, rng):
        prob = cosine_problem(d_y=4)
        net = tc.build_char_net(prob, 0.1)
        cert = tc.lipschitz_certificate(net, n_samples=3000, seed=5)
        conv = prob.convection
        assert cert["lip_t"] <= conv.A + conv.omega1 * net.sched.delta + 1e-9
        assert cert["pass_t"] and cert["pass_xy"]

    def test_zero_field_certificate(self, rng):
        prob = zero_field_problem()
        net = tc.build_char_net(prob, 0.1)
        t, x, y = prob.sample_inputs(200, seed=2)
        np.testing.assert_allclose(net.eval(t, x, y), x, atol=1e-13)
        cert = tc.lipschitz_certificate(net, n_samples=1000, seed=2)
        assert cert["lip_t"] <= 1e-10
        assert cert["lip_xy"] <= 1.0 + 1e-9


class TestGeneralConvection:
    @staticmethod
    def make_general():
        m, d_y = 1, 2

        def evaluator(t, x, y):
            return 0.5 * (y[:, :1] * np.cos(x) + y[:, 1:2] * np.sin(x))

        gf = cc.GrowthFunction("exp", 1.0, 0.2)

        def rep_builder(interval, N):
            gen = cc.GenericFactor(
                lambda z: np.hstack([0.5 * np.cos(z[:, :1]), 0.5 * np.sin(z[:, :1])]),
                in_dim=1, out_dim=2, lip=0.5, sup=0.5,
                dep_sets=[(0,), (0,)], box=[[-1.6, 2.6]],
            )
            par = cc.ParallelFactor([gen, cc.IdentityFactor(d_y)], split_input=True)
            bil = cc.MultilinearFactor(
                lambda v: v[:, :1] * v[:, 2:3] + v[:, 1:2] * v[:, 3:4],
                in_dim=4, out_dim=1, lip=1.5, sup=1.0,
            )
            return cc.CompRep([par, bil])

        return tc.GeneralConvection(
            m, d_y, evaluator, A=1.0, L=1.5, a_norm=1.5, gf=gf,
            rep_builder=rep_builder, L_t=0.0,
        )

    def test_builder_contract(self):
        conv = self.make_general()
        out = conv.check_builder(
            (0.0, 0.3), 20, np.array([[-1.6, 2.6], [-1, 1], [-1, 1]])
        )
        assert out["ok"]

    def test_general_char_build(self, rng):
        conv = self.make_general()
        prob = tc.TransportProblem(conv, 1.0, [[0.0, 1.0]])
        net = tc.build_char_net(prob, 0.2)
        t, x, y = prob.sample_inputs(300, seed=9)
        ref, _ = oracle.rk4_char(
            net.oracle_field(), np.zeros(300), t, x, y,
            oracle.OdeConfig(steps=32, tol=1e-4),
        )
        assert np.abs(net.eval(t, x, y) - ref).max() <= 0.2
        cert = tc.lipschitz_certificate(net, n_samples=500, seed=1)
        assert cert["pessimistic"]

    def test_normalization_rejected(self):
        with pytest.raises(ValueError):
            tc.GeneralConvection(
                1, 1, lambda t, x, y: x, A=0.5, L=0.4, a_norm=0.3,
                gf=cc.GrowthFunction("alg", 1, 1), rep_builder=None,
            )


class TestPredictedComplexity:
    def test_affine_arithmetic(self):
        prob = cosine_problem(d_y=4)
        prob.convection.L = 1.0  # match the stated example: L = 1
        val = tc.predicted_complexity(prob, 0.1, "char")
        ratio = math.exp(1.0) / 0.1
        expect = 4 * 1 * 1 * 1 * ratio**2 * math.log2(ratio) ** 2
        assert val == pytest.approx(expect, rel=1e-12)
        assert expect == pytest.approx(6.70e4, rel=2e-2)

    def test_dy_doubling_exact(self):
        p2 = cosine_problem(d_y=2)
        p4 = cosine_problem(d_y=4)
        # identical A, L by the omega = 1/d_y normalization
        assert tc.predicted_complexity(p4, 0.05, "char") == pytest.approx(
            2 * tc.predicted_complexity(p2, 0.05, "char")
        )

    def test_solution_beta(self):
        assert tc.solution_beta(1, 2.0) == 1.0
        assert tc.solution_beta(1, 0.5) == 4.0


class TestSolutionNetwork:
    def test_zero_source_constant_field(self, rng):
        comps = [
            catalog.make_component({"kind": "constant", "value": 1.0}),
            catalog.make_component({"kind": "constant", "value": -1.0}),
        ]
        conv = tc.AffineConvection(1, 2, [0.5, 0.5], comps)
        u0 = catalog.make_u0({"kind": "hat", "center": 0.5, "width": 1.0})
        prob = tc.TransportProblem(conv, 1.0, [[0.0, 1.0]], u0=u0)
        net = tc.build_solution_net(prob, 0.1)
        t, x, y = prob.sample_inputs(400, seed=11)
        _, u_fn = oracle.exact_const(prob)
        assert np.abs(net.eval(t, x, y) - u_fn(t, x, y)).max() <= 0.1

    def test_pure_source(self, rng):
        comps = [catalog.make_component({"kind": "constant", "value": 1.0})]
        conv = tc.AffineConvection(1, 1, [1.0], comps)
        prob = tc.TransportProblem(
            conv, 1.0, [[0.0, 1.0]], f=catalog.make_f({"kind": "constant", "value": 1.0})
        )
        net = tc.build_solution_net(prob, 0.1)
        t, x, y = prob.sample_inputs(300, seed=12)
        assert np.abs(net.eval(t, x, y) - t).max() <= 0.1

    def test_source_sign_flag(self, rng):
        comps = [catalog.make_component({"kind": "constant", "value": 1.0})]
        conv = tc.AffineConvection(1, 1, [1.0], comps)
        prob = tc.TransportProblem(
            conv, 1.0, [[0.0, 1.0]], f=catalog.make_f({"kind": "constant", "value": 1.0})
        )
        plus = tc.build_solution_net(prob, 0.1, source_sign=1.0)
        minus = tc.build_solution_net(prob, 0.1, source_sign=-1.0)
        t, x, y = prob.sample_inputs(100, seed=13)
        u0p, fp = plus.eval_parts(t, x, y)
        np.testing.assert_allclose(plus.eval(t, x, y), u0p + fp, atol=1e-14)
        np.testing.assert_allclose(minus.eval(t, x, y), u0p - fp, atol=1e-14)

    def test_report_carries_budget(self):
        comps = [catalog.make_component({"kind": "constant", "value": 1.0})]
        conv = tc.AffineConvection(1, 1, [1.0], comps)
        u0 = catalog.make_u0({"kind": "hat", "center": 0.5, "width": 1.0})
        prob = tc.TransportProblem(conv, 1.0, [[0.0, 1.0]], u0=u0)
        net = tc.build_solution_net(prob, 0.2)
        assert net.report["certified_bound"] <= 0.2
        assert net.report["size"] > 0 and net.report["depth"] > 0


class TestProblemFiles:
    def test_roundtrip(self, tmp_path):
        doc = {
            "field": {
                "type": "affine",
                "m": 1,
                "d_y": 2,
                "omega": [0.5, 0.5],
                "components": [
                    {"kind": "constant", "value": 1.0},
                    {"kind": "constant", "value": -1.0},
                ],
            },
            "u0": {"kind": "hat", "center": 0.5, "width": 1.0},
            "f": None,
            "T_hat": 1.0,
            "domain": [[0.0, 1.0]],
        }
        path = tmp_path / "prob.json"
        import json

        path.write_text(json.dumps(doc))
        prob = tc.load_problem(str(path))
        assert prob.d_y == 2 and prob.convection.A == 1.0
