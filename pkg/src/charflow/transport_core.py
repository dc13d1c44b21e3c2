"""Certified network surrogates for parametric transport problems.

The pipeline follows the constructive route: a macro time grid on which
the characteristic fixed-point map contracts with factor 1/2, per-slab
one-step maps combining clamped-ramp quadrature gates with interpolant
networks of the (slab-averaged) convection components, self-composed
for a logarithmic number of sweeps, and concatenated across slabs by
freezing junction values.  Solution surrogates compose the backward
characteristic network with data networks and a source quadrature.

Built networks are composite evaluators in the generous sense: exact
multilinear gates (counted 1 each in the dependency-count complexity)
coupling ReLU subnetworks.  Evaluation is arithmetically identical to
the literal layered assembly, which tests cross-check against a naive
per-sample reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import catalog, lip_interp
from .comp_calculus import gamma_inverse, implant
from .relu_net import rho_values

E_HALF = math.exp(0.5)


class ResourceCeiling(RuntimeError):
    """Requested accuracy exceeds the configured build budget."""

    def __init__(self, message, predicted_cost):
        super().__init__(f"{message} (predicted cost {predicted_cost:.3g})")
        self.predicted_cost = predicted_cost


# ---------------------------------------------------------------------------
# convection fields


class AffineConvection:
    """a(t, x; y) = sum_j y_j * omega_j * comp_j(t, x) on y in [-1,1]^d_y.

    Components carry sup bound A_circ and spatial Lipschitz bound Lam;
    the induced bounds are A = |omega|_1 * A_circ and L = A + Lam*|omega|_1.
    Normalization 1 <= A <= L is required; rescale time otherwise.
    """

    def __init__(self, m, d_y, omega, components, validate=True):
        self.m = m
        self.d_y = d_y
        self.omega = np.asarray(omega, dtype=float).reshape(d_y)
        if np.any(self.omega < 0):
            raise ValueError("omega weights must be nonnegative")
        if len(components) != d_y:
            raise ValueError("need one component per parameter direction")
        self.components = list(components)
        self.A_circ = max(c.sup for c in components)
        self.Lam = max(c.lip_x for c in components)
        self.omega1 = float(np.sum(self.omega))
        self.A = self.omega1 * self.A_circ
        self.L = self.A + self.Lam * self.omega1
        if validate and not (1.0 <= self.A <= self.L):
            raise ValueError(
                f"normalization 1 <= A <= L violated (A={self.A}, L={self.L}); "
                "rescale time so the field bound is at least one"
            )

    @property
    def norm(self):
        # the composition-norm bound playing the role of the field norm
        return self.L

    def eval(self, t, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.zeros((x.shape[0], self.m))
        for j, comp in enumerate(self.components):
            out += (self.omega[j] * y[:, j])[:, None] * comp(t, x)
        return out

    def constant_in_tx(self):
        return self.Lam == 0.0 and all(c.time_independent for c in self.components)

    def time_independent(self):
        return all(c.time_independent for c in self.components)

    def reversed_negated(self, t_ref):
        comps = [c.reversed_negated(t_ref) for c in self.components]
        return AffineConvection(self.m, self.d_y, self.omega, comps, validate=False)


class GeneralConvection:
    """Convection field given by an evaluator plus a representation builder.

    ``rep_builder(interval, N)`` must return a CompRep on (z, y) that
    approximates the slab average (case with averaging) or a midpoint
    sample (case with a declared time-Lipschitz constant) of the field
    over the interval, with error at most gamma(N)^-1 * a_norm and
    composition norm at most a_norm.  The declared a_norm is the
    user's bound for the time-uniform field norm; a sampled check is
    available but no proof.
    """

    def __init__(self, m, d_y, evaluator, A, L, a_norm, gf, rep_builder, L_t=None):
        self.m = m
        self.d_y = d_y
        self.evaluator = evaluator
        self.A = float(A)
        self.L = float(L)
        self.a_norm = float(a_norm)
        self.gf = gf
        self.rep_builder = rep_builder
        self.L_t = L_t
        if not (1.0 <= self.A <= self.L <= self.a_norm):
            raise ValueError("need 1 <= A <= L <= a_norm; rescale time")

    @property
    def norm(self):
        return self.a_norm

    def eval(self, t, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        return np.asarray(self.evaluator(t, x, y), dtype=float).reshape(
            x.shape[0], self.m
        )

    def constant_in_tx(self):
        return False

    def time_independent(self):
        return self.L_t == 0.0

    def check_builder(self, interval, N, box, n_samples=500, seed=0):
        """Sampled consistency check of the builder contract."""
        rep = self.rep_builder(interval, N)
        rng = np.random.default_rng(seed)
        box = np.asarray(box, dtype=float)
        pts = rng.uniform(box[:, 0], box[:, 1], size=(n_samples, box.shape[0]))
        z, y = pts[:, : self.m], pts[:, self.m :]
        mid = 0.5 * (interval[0] + interval[1])
        ref = self.eval(np.full(n_samples, mid), z, y)
        err = float(np.max(np.abs(rep.eval(pts) - ref)))
        budget = self.a_norm / float(self.gf(N)) + self.a_norm * (
            interval[1] - interval[0]
        ) * (self.L_t or 0.0)
        return {"sampled_error": err, "contract_budget": budget, "ok": err <= budget}


# ---------------------------------------------------------------------------
# problem container


class TransportProblem:
    """Cauchy data for the linear parametric transport equation.

    ``domain`` is the spatial box D carrying the initial datum; the
    characteristic evaluation box inflates D by A*T_hat per axis (plus
    a small guard for the network's own speed excess) so trajectories
    and all interpolation grids stay inside.
    """

    def __init__(self, convection, T_hat, domain, u0=None, f=None, margin=0.1):
        self.convection = convection
        self.T_hat = float(T_hat)
        self.domain = np.asarray(domain, dtype=float).reshape(convection.m, 2)
        self.u0 = u0
        self.f = f
        infl = convection.A * self.T_hat + margin
        self.eval_box = np.column_stack(
            [self.domain[:, 0] - infl, self.domain[:, 1] + infl]
        )

    @property
    def m(self):
        return self.convection.m

    @property
    def d_y(self):
        return self.convection.d_y

    @property
    def M(self):
        vals = [1.0]
        if self.u0 is not None:
            vals.append(self.u0.norm)
        if self.f is not None:
            vals.append(self.f.norm)
        return max(vals)

    def field_evaluator(self):
        return lambda t, x, y: self.convection.eval(t, x, y)

    def u0_values(self, x, y=None):
        if self.u0 is None:
            return np.zeros(np.atleast_2d(x).shape[0])
        return self.u0.u0(x, y)

    def f_values(self, t, x, y=None):
        if self.f is None:
            return np.zeros(np.atleast_2d(x).shape[0])
        return self.f.f(t, x, y)

    def inside_eval_box(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all(
            (x >= self.eval_box[:, 0]) & (x <= self.eval_box[:, 1]), axis=1
        )

    def sample_inputs(self, n, seed, t_range=None):
        """Random (t, x, y) samples over [0, T_hat] x D x [-1,1]^d_y."""
        rng = np.random.default_rng(seed)
        t_hi = self.T_hat if t_range is None else t_range
        t = rng.uniform(0.0, t_hi, size=n)
        x = rng.uniform(self.domain[:, 0], self.domain[:, 1], size=(n, self.m))
        y = rng.uniform(-1.0, 1.0, size=(n, self.d_y))
        return t, x, y


# ---------------------------------------------------------------------------
# macro grid and schedule


@dataclass(frozen=True)
class MacroGrid:
    """Macro time slabs making the fixed-point map a 1/2-contraction."""

    T_hat: float
    a_norm: float

    def __post_init__(self):
        if self.T_hat <= 0 or self.a_norm < 1.0:
            raise ValueError("need T_hat > 0 and a_norm >= 1")

    @property
    def interval_length(self):
        return 1.0 / (2.0 * self.a_norm)

    @property
    def K(self):
        return int(math.ceil(self.T_hat / self.interval_length))

    @property
    def slab_length(self):
        return self.T_hat / self.K

    def junctions(self):
        return np.linspace(0.0, self.T_hat, self.K + 1)

    def slab(self, k):
        return (k * self.slab_length, (k + 1) * self.slab_length)


def macro_grid(T_hat, a_norm):
    return MacroGrid(T_hat, a_norm)


def eta_tolerance(eps, K):
    """Per-slab budget such that the junction telescoping sums to eps."""
    return (E_HALF - 1.0) * eps * math.exp(-K / 2.0)


def mu_iterations(eta):
    """Sweeps halving the error to eta: ceil(|log2(1/(2 eta))|), >= 1."""
    return max(1, int(math.ceil(abs(math.log2(1.0 / (2.0 * eta))))))


def tau_from_eta(eta):
    """One-step tolerance absorbing the in-slab error accumulation."""
    return eta / E_HALF


@dataclass
class Schedule:
    """All build parameters derived from a target accuracy."""

    eps: float
    eps_internal: float
    K: int
    slab_length: float
    eta: float
    mu: int
    tau: float
    q: int
    delta: float
    N: int = None  # general fields only


def schedule(
    eps,
    grid,
    problem,
    q_ceiling=200_000,
    knot_ceiling=2_000_000,
):
    """Derive (eta, mu, tau, q, delta[, N]) for a public accuracy target.

    The assembly certifies twice the per-stage target, so everything is
    computed for eps/2.  Refuses with the predicted cost when the
    quadrature count or the interpolation grids exceed the ceilings.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    conv = problem.convection
    eps_int = eps / 2.0
    eta = eta_tolerance(eps_int, grid.K)
    mu = mu_iterations(eta)
    tau = tau_from_eta(eta)
    sl = grid.slab_length
    if isinstance(conv, AffineConvection):
        q = max(1, int(math.ceil(2.0 * conv.A * sl / tau)))
        delta = tau / (2.0 * sl * conv.omega1) if conv.omega1 > 0 else math.inf
        n_budget = None
        lam = conv.Lam
    else:
        q = max(1, int(math.ceil(2.0 * conv.A * sl / (tau / 2.0))))
        n_budget = int(math.ceil(gamma_inverse(conv.gf, 2.0 * sl * conv.a_norm / (tau / 2.0))))
        delta = tau / (2.0 * conv.a_norm)
        lam = conv.L
    width = float(np.max(problem.eval_box[:, 1] - problem.eval_box[:, 0]))
    knots = 1 if (lam == 0 or not np.isfinite(delta)) else math.ceil(
        2.0 * lam * width / delta
    )
    cost = q * problem.d_y * knots * mu * grid.K
    if q > q_ceiling or knots > knot_ceiling:
        raise ResourceCeiling(
            f"schedule for eps={eps} needs q={q}, grid knots={knots}", cost
        )
    return Schedule(eps, eps_int, grid.K, sl, eta, mu, tau, q, delta, n_budget)


# ---------------------------------------------------------------------------
# numeric fixed-point reference (mid fidelity, not the certified pipeline)


def picard_numeric(field, interval, x, y, k, time_grid=4096):
    """k midpoint-quadrature sweeps of the fixed-point map on one slab.

    Returns a callable t -> values (vectorized over the sample batch);
    the initial sweep starts from the constant-in-time seed x.  Requires
    the contraction precondition |I| * L <= 1/2 via the caller.
    """
    lo, hi = float(interval[0]), float(interval[1])
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, m = x.shape
    q = int(time_grid)
    cell = (hi - lo) / q
    xs = lo + (np.arange(q) + 0.5) * cell
    Z = np.repeat(x[:, None, :], q, axis=1)
    for sweep in range(max(0, k - 1)):
        V = _field_on_grid(field, xs, Z, y)
        Z = x[:, None, :] + cell * (np.cumsum(V, axis=1) - 0.5 * V)
    V_last = _field_on_grid(field, xs, Z, y) if k >= 1 else None

    def at(t):
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        if k == 0:
            return x.copy()
        rho = rho_values((lo, hi), q, t)
        return x + np.einsum("nq,nqm->nm", rho, V_last)

    return at


def _field_on_grid(field, xs, Z, y):
    n, q, m = Z.shape
    flat = Z.reshape(n * q, m)
    ts = np.tile(xs, n)
    yy = np.repeat(np.atleast_2d(y), q, axis=0) if np.ndim(y) > 1 else y
    return field(ts, flat, yy).reshape(n, q, m)


# ---------------------------------------------------------------------------
# slab networks


class AffineSlabNet:
    """One-slab characteristic network for an affine field.

    Structure: quadrature gates in t, interpolant networks of the
    slab-averaged components in space, and the exact trilinear gate
    x + sum_i rho_i(t) sum_j y_j omega_j N_{j,i}(z_i); self-composed
    ``mu`` times with the quadrature-node values carried between sweeps.
    """

    def __init__(self, conv, interval, sched, eval_box):
        self.conv = conv
        self.interval = interval
        self.q = sched.q
        self.mu = sched.mu
        self.delta = sched.delta
        self.tau = sched.tau
        self.eval_box = np.asarray(eval_box, dtype=float)
        lo, hi = interval
        self.cell = (hi - lo) / self.q
        self.midpoints = lo + (np.arange(self.q) + 0.5) * self.cell
        self._shared = conv.time_independent()
        self._nets = self._build_interpolants()

    def _build_interpolants(self):
        conv = self.conv
        nets = []
        width = float(np.max(self.eval_box[:, 1] - self.eval_box[:, 0]))
        lip_unit = conv.Lam * width
        if np.isfinite(self.delta) and lip_unit > 0:
            q_grid = int(math.ceil(2.0 * lip_unit / self.delta))
        else:
            q_grid = 1
        grid = lip_interp.GridSpec(conv.m, q_grid, box=self.eval_box)
        intervals = [self.interval] if self._shared else [
            (self.midpoints[i] - 0.5 * self.cell, self.midpoints[i] + 0.5 * self.cell)
            for i in range(self.q)
        ]
        for j, comp in enumerate(conv.components):
            per_j = []
            for sub in intervals:
                avg = comp.slab_average(sub)
                comp_nets = []
                for c in range(conv.m):
                    sf = lip_interp.SampledFunction.from_function(
                        lambda pts, cc=c, a=avg: a(pts)[:, cc],
                        grid,
                        lip_bound=comp.lip_x,
                        sup_bound=comp.sup,
                    )
                    delta_eff = min(self.delta, 0.5) if np.isfinite(self.delta) else 0.5
                    net, _ = lip_interp.lip_stable_net(sf, delta_eff)
                    comp_nets.append(net)
                per_j.append(comp_nets)
            nets.append(per_j)
        return nets

    def _component_values(self, Z, i_idx=None):
        """Interpolant values of all components at quadrature states.

        Z has shape (n, q, m); returns (n, q, m, d_y) with entry
        [., i, ., j] = N_{j,i}(Z[., i, .]).
        """
        n, q, m = Z.shape
        flat = Z.reshape(n * q, m)
        out = np.empty((n, q, m, self.conv.d_y))
        for j in range(self.conv.d_y):
            if self._shared:
                cols = [self._nets[j][0][c].eval(flat)[:, 0] for c in range(m)]
                out[:, :, :, j] = np.stack(cols, axis=1).reshape(n, q, m)
            else:
                for i in range(q):
                    cols = [
                        self._nets[j][i][c].eval(Z[:, i, :])[:, 0] for c in range(m)
                    ]
                    out[:, i, :, j] = np.stack(cols, axis=1)
        return out

    def _forward(self, w, y):
        """Run mu sweeps; returns the final gated field values (n, q, m)."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        wy = self.conv.omega * y  # (n, d_y)
        Z = np.repeat(w[:, None, :], self.q, axis=1)
        V = None
        for sweep in range(self.mu):
            comp_vals = self._component_values(Z)
            V = np.einsum("nqmj,nj->nqm", comp_vals, wy)
            if sweep < self.mu - 1:
                Z = w[:, None, :] + self.cell * (np.cumsum(V, axis=1) - 0.5 * V)
        return V

    def at_times(self, t, w, y, V=None):
        if V is None:
            V = self._forward(w, y)
        rho = rho_values(self.interval, self.q, t)
        return np.atleast_2d(np.asarray(w, dtype=float)) + np.einsum(
            "nq,nqm->nm", rho, V
        )

    def junction(self, w, y, V=None):
        if V is None:
            V = self._forward(w, y)
        return np.atleast_2d(np.asarray(w, dtype=float)) + self.cell * V.sum(axis=1)

    def eval_with_junction(self, t, w, y, mask=None):
        """(values at t for masked samples, junction values for all)."""
        V = self._forward(w, y)
        junction = self.junction(w, y, V)
        if mask is None or not np.any(mask):
            return None, junction
        vals = self.at_times(
            np.asarray(t)[mask],
            np.atleast_2d(w)[mask],
            np.atleast_2d(y)[mask],
            V=V[mask],
        )
        return vals, junction

    def naive_eval(self, t, w, y):
        """Per-sample reference implementation of the same arithmetic."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        w = np.atleast_2d(np.asarray(w, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.empty_like(w)
        for r in range(w.shape[0]):
            Z = [w[r].copy() for _ in range(self.q)]
            for sweep in range(self.mu):
                vals = []
                for i in range(self.q):
                    acc = np.zeros(self.conv.m)
                    for j in range(self.conv.d_y):
                        nets = self._nets[j][0 if self._shared else i]
                        acc += (
                            self.conv.omega[j]
                            * y[r, j]
                            * np.array(
                                [nets[c].eval(Z[i])[0] for c in range(self.conv.m)]
                            ).reshape(self.conv.m)
                        )
                    vals.append(acc)
                if sweep < self.mu - 1:
                    newZ = []
                    for i in range(self.q):
                        s = sum(
                            (rho_values(self.interval, self.q, self.midpoints[i])[k])
                            * vals[k]
                            for k in range(self.q)
                        )
                        newZ.append(w[r] + s)
                    Z = newZ
            rho = rho_values(self.interval, self.q, t[r])
            out[r] = w[r] + sum(rho[k] * vals[k] for k in range(self.q))
        return out

    def interpolant_size(self):
        total = 0
        for j in range(self.conv.d_y):
            for per_i in self._nets[j]:
                block = sum(net.size() for net in per_i)
                total += block * (self.q if self._shared else 1)
        return total

    def size(self):
        # mu sweeps of (q*d_y interpolants + one multilinear gate),
        # plus the t-quadrature gate network of the final sweep
        return self.mu * (self.interpolant_size() + 1) + _rho_gate_size(
            self.interval, self.q
        )

    def depth(self):
        per_sweep = max(net.depth() for j in self._nets for per_i in j for net in per_i) + 1
        return self.mu * per_sweep + 2

    def one_step_error_bound(self):
        """Certified |Phi - net| bound for one application (tau by design)."""
        quad = self.conv.A * (self.interval[1] - self.interval[0]) / self.q
        impl = (
            self.conv.omega1
            * (self.interval[1] - self.interval[0])
            * (self.delta if np.isfinite(self.delta) else 0.0)
        )
        return quad + impl


class GeneralSlabNet:
    """One-slab network for a general field via implanted representations."""

    def __init__(self, conv, interval, sched, eval_box):
        self.conv = conv
        self.interval = interval
        self.q = sched.q
        self.mu = sched.mu
        self.delta = sched.delta
        self.tau = sched.tau
        lo, hi = interval
        self.cell = (hi - lo) / self.q
        self.midpoints = lo + (np.arange(self.q) + 0.5) * self.cell
        self._shared = conv.time_independent()
        self._nets = []
        subs = [interval] if self._shared else [
            (m - 0.5 * self.cell, m + 0.5 * self.cell) for m in self.midpoints
        ]
        for sub in subs:
            rep = conv.rep_builder(sub, sched.N)
            depth = len(rep.factors)
            per_comp = self.delta / max(1, depth)
            implanted, _ = implant(rep, [per_comp] * depth)
            self._nets.append(implanted)

    def _forward(self, w, y):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = w.shape[0]
        Z = np.repeat(w[:, None, :], self.q, axis=1)
        V = None
        for sweep in range(self.mu):
            V = np.empty((n, self.q, self.conv.m))
            if self._shared:
                flat = np.hstack(
                    [Z.reshape(n * self.q, self.conv.m), np.repeat(y, self.q, axis=0)]
                )
                V[:] = self._nets[0].eval(flat).reshape(n, self.q, self.conv.m)
            else:
                for i in range(self.q):
                    V[:, i, :] = self._nets[i].eval(np.hstack([Z[:, i, :], y]))
            if sweep < self.mu - 1:
                Z = w[:, None, :] + self.cell * (np.cumsum(V, axis=1) - 0.5 * V)
        return V

    at_times = AffineSlabNet.at_times
    junction = AffineSlabNet.junction
    eval_with_junction = AffineSlabNet.eval_with_junction

    def interpolant_size(self):
        if self._shared:
            return self.q * self._nets[0].size()
        return sum(net.size() for net in self._nets)

    def size(self):
        return self.mu * (self.interpolant_size() + 1) + _rho_gate_size(
            self.interval, self.q
        )

    def depth(self):
        return self.mu * 4 + 2

    def one_step_error_bound(self):
        quad = 2.0 * self.conv.A * (self.interval[1] - self.interval[0]) / self.q
        return quad + self.conv.a_norm * self.delta


def _rho_gate_size(interval, q):
    """Exact nonzero count of rho_gate(interval, q) without building it."""
    lo, hi = interval
    taus = lo + (hi - lo) * np.arange(q + 1) / q
    nnz_b = int(np.count_nonzero(taus[:-1])) + int(np.count_nonzero(taus[1:]))
    return 2 * q + nnz_b + 2 * q


def build_slab_net(problem, interval, tau, mu=1):
    """One-step map with certified |Phi - net| <= tau on the slab.

    Convenience wrapper used for single-application studies; the full
    pipeline goes through :func:`build_char_net`.
    """
    conv = problem.convection
    sl = interval[1] - interval[0]
    if isinstance(conv, AffineConvection):
        q = max(1, int(math.ceil(2.0 * conv.A * sl / tau)))
        delta = tau / (2.0 * sl * conv.omega1) if conv.omega1 > 0 else math.inf
        sched = Schedule(tau, tau, 1, sl, tau, mu, tau, q, delta)
        return AffineSlabNet(conv, interval, sched, problem.eval_box)
    q = max(1, int(math.ceil(2.0 * conv.A * sl / (tau / 2.0))))
    n_budget = int(math.ceil(gamma_inverse(conv.gf, 2.0 * sl * conv.a_norm / (tau / 2.0))))
    delta = tau / (2.0 * conv.a_norm)
    sched = Schedule(tau, tau, 1, sl, tau, mu, tau, q, delta, n_budget)
    return GeneralSlabNet(conv, interval, sched, problem.eval_box)


# ---------------------------------------------------------------------------
# characteristic networks


class CharNetwork:
    """Per-slab networks concatenated by frozen junction values.

    Evaluation dispatches each query time to its owning slab; junction
    seeds are the previous slab evaluated at the junction, exactly as
    the construction prescribes.  ``direction='backward'`` means the
    network was built for the time-reversed negated field and returns
    positions after flowing backward for the queried duration.
    """

    def __init__(self, problem, grid, sched, slabs, direction):
        self.problem = problem
        self.grid = grid
        self.sched = sched
        self.slabs = slabs
        self.direction = direction
        self.report = {}

    @property
    def certified_error(self):
        return self.sched.eps

    def eval(self, t, x, y):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        w = np.atleast_2d(np.asarray(x, dtype=float)).copy()
        y = np.atleast_2d(np.asarray(y, dtype=float))
        sl = self.grid.slab_length
        k_idx = np.minimum(np.floor(t / sl).astype(int), self.grid.K - 1)
        k_idx = np.maximum(k_idx, 0)
        out = np.empty_like(w)
        k_last = int(k_idx.max())
        for k in range(k_last + 1):
            mask = k_idx == k
            vals, junction = self.slabs[k].eval_with_junction(t, w, y, mask)
            if vals is not None:
                out[mask] = vals
            w = junction
        return out

    def __call__(self, t, x, y):
        return self.eval(t, x, y)

    def size(self):
        return sum(s.size() for s in self.slabs)

    def depth(self):
        return sum(s.depth() for s in self.slabs)

    def junction_values(self, x, y):
        """Seeds entering each slab, shape (K+1, n, m)."""
        w = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        ws = [w]
        for slab in self.slabs:
            w = slab.junction(w, y)
            ws.append(w)
        return np.stack(ws)

    def oracle_field(self):
        """Field whose exact characteristics this network approximates.

        For backward builds the stored problem already carries the
        time-reversed, negated field.
        """
        conv = self.problem.convection
        return lambda t, x, y: conv.eval(t, x, y)


def build_char_net(problem, eps, direction="forward", q_ceiling=200_000):
    """Certified characteristic surrogate: sup error <= eps on the box.

    The backward variant runs the identical pipeline on the
    time-reversed, negated field (same bounds, same affine structure)
    and approximates backward flow durations.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    conv = problem.convection
    if direction == "backward":
        if isinstance(conv, GeneralConvection):
            raise NotImplementedError("backward builds require affine fields")
        conv = conv.reversed_negated(problem.T_hat)
        problem = TransportProblem(
            conv, problem.T_hat, problem.domain, problem.u0, problem.f
        )
    grid = macro_grid(problem.T_hat, max(1.0, conv.norm))
    sched = schedule(eps, grid, problem, q_ceiling=q_ceiling)
    slab_cls = AffineSlabNet if isinstance(conv, AffineConvection) else GeneralSlabNet
    slabs = [
        slab_cls(conv, grid.slab(k), sched, problem.eval_box)
        for k in range(grid.K)
    ]
    net = CharNetwork(problem, grid, sched, slabs, direction)
    net.report = {
        "eps": eps,
        "direction": direction,
        "K": grid.K,
        "mu": sched.mu,
        "q": sched.q,
        "delta": sched.delta,
        "tau": sched.tau,
        "size": net.size(),
        "depth": net.depth(),
        "predicted": predicted_complexity(problem, eps, "char"),
    }
    return net


def predicted_complexity(problem, eps, kind, const=1.0, alpha=None):
    """Closed-form complexity predictions for plotting against measurements.

    kind='char': affine fields use the d_y-linear bound
    d_y m^2 A T (e^(LT)/eps)^(m+1) log2(e^(LT)/eps)^2; general fields
    the growth-law branches.  kind='solution' uses the m+1+beta power
    with beta = max(1, (m+1)/alpha).
    """
    conv = problem.convection
    m, d_y, T = problem.m, problem.d_y, problem.T_hat
    if kind == "char":
        if isinstance(conv, AffineConvection):
            ratio = math.exp(conv.L * T) / eps
            return const * d_y * m**2 * conv.A * T * ratio ** (m + 1) * math.log2(
                ratio
            ) ** 2
        ratio = math.exp(conv.a_norm * T) / eps
        gf = conv.gf
        s = m  # dimension-sparsity of the builder reps
        base = conv.A * T * 2**s * conv.a_norm ** (2 * s)
        if gf.kind == "alg":
            return (
                const
                * base
                * gf.C ** (-1.0 / gf.alpha)
                * ratio ** ((1 + s) * (1 + gf.alpha) / gf.alpha)
                * math.log2(ratio) ** 2
            )
        return (
            const
            * base
            * gf.alpha ** (-(1 + s))
            * ratio ** (1 + s)
            * math.log2(ratio) ** (3 + s)
        )
    if kind == "solution":
        if alpha is None:
            alpha = float(m + 1)
        beta = max(1.0, (m + 1) / alpha)
        L = conv.L if isinstance(conv, AffineConvection) else conv.a_norm
        ratio = math.exp(L * T) / eps
        return const * d_y * ratio ** (m + 1 + beta) * math.log2(ratio) ** 2
    raise ValueError("kind must be 'char' or 'solution'")


def solution_beta(m, alpha):
    return max(1.0, (m + 1) / alpha)


# ---------------------------------------------------------------------------
# Lipschitz certificates


def lipschitz_certificate(net, n_samples=4000, seed=0, c3=None):
    """Sampled Lipschitz lower bounds vs the theory thresholds.

    Samples difference quotients separately in t (frozen x, y) and in
    (x, y) jointly (frozen t).  PASS requires the (x,y) bound below
    e^(L_hat * T) with L_hat = A + 1/T + c3 (1 + A_circ) Lam |omega|_1,
    and the t bound below A + |omega|_1 * delta.
    """
    problem = net.problem
    conv = problem.convection
    if c3 is None:
        c3 = lip_interp.CALIBRATED["c3"]
    rng = np.random.default_rng(seed)
    n = n_samples
    t, x, y = problem.sample_inputs(n, seed)

    # (x, y) direction
    dx = rng.uniform(-1, 1, size=(n, problem.m + problem.d_y))
    scale = 1e-4
    dx *= scale / np.maximum(np.abs(dx).max(axis=1, keepdims=True), 1e-300)
    x2 = np.clip(x + dx[:, : problem.m], problem.domain[:, 0], problem.domain[:, 1])
    y2 = np.clip(y + dx[:, problem.m :], -1.0, 1.0)
    num = np.abs(net.eval(t, x2, y2) - net.eval(t, x, y)).max(axis=1)
    den = np.maximum(
        np.abs(x2 - x).max(axis=1), np.abs(y2 - y).max(axis=1)
    )
    ok = den > 0
    lip_xy = float((num[ok] / den[ok]).max()) if np.any(ok) else 0.0

    # t direction
    t2 = np.clip(t + rng.uniform(-scale, scale, size=n), 0.0, problem.T_hat)
    num = np.abs(net.eval(t2, x, y) - net.eval(t, x, y)).max(axis=1)
    den = np.abs(t2 - t)
    ok = den > 0
    lip_t = float((num[ok] / den[ok]).max()) if np.any(ok) else 0.0

    T = problem.T_hat
    if isinstance(conv, AffineConvection):
        delta = net.sched.delta if np.isfinite(net.sched.delta) else 0.0
        l_hat = conv.A + 1.0 / T + c3 * (1.0 + conv.A_circ) * conv.Lam * conv.omega1
        xy_threshold = math.exp(l_hat * T)
        t_threshold = conv.A + conv.omega1 * delta
        pessimistic = False
    else:
        n_budget = net.sched.N or 1
        l_hat = (c3 * (1.0 + conv.A) * conv.a_norm) ** n_budget
        xy_threshold = math.exp(min(l_hat, 700.0 / max(T, 1e-9)) * T)
        t_threshold = conv.a_norm * (1.0 + net.sched.delta)
        pessimistic = True
    return {
        "lip_xy": lip_xy,
        "lip_t": lip_t,
        "xy_threshold": xy_threshold,
        "t_threshold": t_threshold,
        "pass_xy": lip_xy <= xy_threshold,
        "pass_t": lip_t <= t_threshold * (1 + 1e-9),
        "pessimistic": pessimistic,
        "c3": c3,
    }


# ---------------------------------------------------------------------------
# solution networks


class SolutionNetwork:
    """u surrogate: data network on backward feet plus source quadrature.

    u(t,x,y) ~ N_u0(B(t,x,y)) + sign * sum_i rho_i(t) N_f,i(B(t-xi_i,x,y))
    where B is the backward characteristic network.  ``source_sign``
    defaults to +1; the acceptance suite pins the sign against the
    solution oracle.
    """

    def __init__(self, problem, back_net, u0_net, f_nets, q_src, source_sign, report):
        self.problem = problem
        self.back_net = back_net
        self.u0_net = u0_net
        self.f_nets = f_nets
        self.q_src = q_src
        self.source_sign = source_sign
        self.report = report
        T = problem.T_hat
        self.xi = (np.arange(q_src) + 0.5) * T / q_src if q_src else np.array([])

    def eval_parts(self, t, x, y):
        """(initial-datum part, signed-source part before sign)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = x.shape[0]
        foot = self.back_net.eval(t, x, y)
        u0_part = (
            self.u0_net.eval(foot)[:, 0] if self.u0_net is not None else np.zeros(n)
        )
        if not self.f_nets:
            return u0_part, np.zeros(n)
        rho = rho_values((0.0, self.problem.T_hat), self.q_src, t)
        f_part = np.zeros(n)
        for i, f_net in enumerate(self.f_nets):
            active = rho[:, i] > 0
            if not np.any(active):
                continue
            sigma = np.maximum(t[active] - self.xi[i], 0.0)
            feet_i = self.back_net.eval(sigma, x[active], y[active])
            f_part[active] += rho[active, i] * f_net.eval(feet_i)[:, 0]
        return u0_part, f_part

    def eval(self, t, x, y):
        u0_part, f_part = self.eval_parts(t, x, y)
        return u0_part + self.source_sign * f_part

    def __call__(self, t, x, y):
        return self.eval(t, x, y)

    def size(self):
        # data net + backward net, plus one backward-net copy per source
        # node, plus the source quadrature gate and trilinear coupling
        total = self.back_net.size()
        if self.u0_net is not None:
            total += self.u0_net.size()
        for f_net in self.f_nets:
            total += f_net.size() + self.back_net.size()
        if self.f_nets:
            total += _rho_gate_size((0.0, self.problem.T_hat), self.q_src) + 1
        return total

    def depth(self):
        d = self.back_net.depth()
        if self.u0_net is not None:
            d += self.u0_net.depth()
        if self.f_nets:
            d += max(f.depth() for f in self.f_nets)
        return d


def _datum_net(problem, datum, tol, is_source=False, at_time=None):
    """Interpolant network of a datum on the evaluation box."""
    width = float(np.max(problem.eval_box[:, 1] - problem.eval_box[:, 0]))
    lip_unit = datum.lip_x * width
    q_grid = int(math.ceil(2.0 * lip_unit / tol)) if lip_unit > 0 else 1
    grid = lip_interp.GridSpec(problem.m, q_grid, box=problem.eval_box)
    if is_source:
        fn = lambda pts: datum.f(np.full(pts.shape[0], at_time), pts)
    else:
        fn = lambda pts: datum.u0(pts)
    sf = lip_interp.SampledFunction.from_function(
        fn, grid, lip_bound=datum.lip_x, sup_bound=datum.sup
    )
    net, _ = lip_interp.lip_stable_net(sf, tol)
    return net


def build_solution_net(problem, eps, source_sign=1.0, q_ceiling=200_000):
    """Certified solution surrogate with sup error <= eps.

    Follows the composed-representation assembly: eps_tilde =
    eps / (7 T M), backward characteristics and data networks at
    accuracy eps_tilde, source quadrature with q = ceil(T / (2 eps_tilde))
    nodes.  The certified bound recomputes the full error budget from
    the actual tolerances and refuses if it exceeds eps.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    T, M = problem.T_hat, problem.M
    eps_t = eps / (7.0 * T * M)
    if not problem.convection.time_independent():
        raise NotImplementedError(
            "solution assembly anchors backward flows at the query time; "
            "time-dependent convection needs per-anchor builds"
        )
    back = build_char_net(problem, eps_t, direction="backward", q_ceiling=q_ceiling)
    u0_net = (
        _datum_net(problem, problem.u0, eps_t) if problem.u0 is not None else None
    )
    f_nets = []
    q_src = 0
    if problem.f is not None:
        q_src = int(math.ceil(T / (2.0 * eps_t)))
        if q_src > q_ceiling:
            raise ResourceCeiling("source quadrature too fine", q_src)
        xi = (np.arange(q_src) + 0.5) * T / q_src
        f_nets = [
            _datum_net(problem, problem.f, eps_t, is_source=True, at_time=node)
            for node in xi
        ]

    # executable error budget
    lip_u0 = problem.u0.lip_x if problem.u0 is not None else 0.0
    bound = lip_u0 * eps_t + (eps_t if problem.u0 is not None else 0.0)
    if problem.f is not None:
        speed = problem.convection.A + 1.0
        l_g = problem.f.lip_t + problem.f.lip_x * speed
        quad = T**2 * l_g / (2.0 * q_src) + problem.f.lip_x * problem.convection.A * (
            T / q_src
        ) ** 2 / 2.0
        bound += T * (eps_t + problem.f.lip_x * eps_t) + quad
    if bound > eps:
        raise ResourceCeiling(
            f"solution bound {bound:.3g} exceeds target {eps}", bound
        )
    report = {
        "eps": eps,
        "eps_tilde": eps_t,
        "q_src": q_src,
        "certified_bound": bound,
        "char_report": back.report,
        "source_sign": source_sign,
    }
    net = SolutionNetwork(problem, back, u0_net, f_nets, q_src, source_sign, report)
    report["size"] = net.size()
    report["depth"] = net.depth()
    report["predicted"] = predicted_complexity(problem, eps, "solution")
    return net


# ---------------------------------------------------------------------------
# problem files


def problem_from_dict(doc):
    """Build a TransportProblem from a parsed problem-definition document."""
    fspec = doc["field"]
    m = int(fspec.get("m", 1))
    d_y = int(fspec["d_y"])
    comps = [catalog.make_component(c, m=m) for c in fspec["components"]]
    omega = fspec.get("omega", [1.0 / d_y] * d_y)
    if fspec.get("type", "affine") != "affine":
        raise ValueError("problem files support affine fields")
    conv = AffineConvection(m, d_y, omega, comps)
    u0 = catalog.make_u0(doc["u0"]) if "u0" in doc and doc["u0"] else None
    f = catalog.make_f(doc["f"]) if "f" in doc and doc["f"] else None
    return TransportProblem(
        conv, float(doc.get("T_hat", 1.0)), doc.get("domain", [[0.0, 1.0]] * m), u0, f
    )


def load_problem(path):
    import json

    with open(path) as fh:
        return problem_from_dict(json.load(fh))
