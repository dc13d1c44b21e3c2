"""Compositional representations, complexity accounting, and implantation.

A composition is an ordered chain of factors (generic Lipschitz maps,
linear / multilinear maps, identities, or ReLU networks).  The module
tracks dimension-sparsity and the dependency-count complexity of such
chains, certifies composition-norm intervals, inverts growth-rate laws,
and turns a chain into a finitely parametrized network by replacing each
generic component with a Lipschitz-stable interpolant network.

Complexity convention (dependency counting): generic components count
the size of their dependency set, linear factors count their nonzero
matrix entries, multilinear factors of degree >= 2 count one per factor,
identities count zero, and embedded ReLU networks count their nonzero
weights.  This makes complexity exactly additive under composition and
(after fusing output layers) under sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import lip_interp
from .relu_net import ReluNetwork


# ---------------------------------------------------------------------------
# growth functions


@dataclass(frozen=True)
class GrowthFunction:
    """Rate law gamma(r) = C * r^alpha (kind='alg') or C * e^(alpha r)."""

    kind: str
    C: float
    alpha: float

    def __post_init__(self):
        if self.kind not in ("alg", "exp"):
            raise ValueError("kind must be 'alg' or 'exp'")
        if self.C <= 0 or self.alpha <= 0:
            raise ValueError("C and alpha must be positive")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "alg":
            return self.C * r**self.alpha
        return self.C * np.exp(self.alpha * r)


def gamma_inverse(gf, s):
    """Exact inverse of the growth law at value s."""
    if s <= 0:
        raise ValueError("argument must be positive")
    if gf.kind == "alg":
        return (s / gf.C) ** (1.0 / gf.alpha)
    if s <= gf.C:
        raise ValueError("exponential growth inverse needs s > C")
    return math.log(s / gf.C) / gf.alpha


def n_epsilon(gf, seminorm, eps):
    """Budget N needed for accuracy eps: ceil(gamma^-1(seminorm/eps))."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return int(math.ceil(gamma_inverse(gf, seminorm / eps)))


@dataclass(frozen=True)
class NearInverse:
    """Near-inverse of phi(s) = b1 * s^zeta * |log2(b2 s)|^beta.

    Calling with r returns
    b1^(-1/zeta) * zeta^(beta/zeta) * r^(1/zeta) * |log2(b2^zeta r / b1)|^(-beta/zeta);
    the round trip phi(inverse(r)) stays within a bounded factor of r.
    """

    b1: float
    b2: float
    zeta: float
    beta: float

    def __post_init__(self):
        if self.b1 <= 0 or self.b2 <= 0 or self.zeta <= 0:
            raise ValueError("b1, b2, zeta must be positive")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise ValueError("argument must be positive")
        out = self.b1 ** (-1.0 / self.zeta) * r ** (1.0 / self.zeta)
        if self.beta != 0.0:
            logterm = np.abs(np.log2(self.b2**self.zeta * r / self.b1))
            if np.any(logterm == 0):
                raise ValueError("argument on the log singularity of the near-inverse")
            out = (
                out
                * self.zeta ** (self.beta / self.zeta)
                * logterm ** (-self.beta / self.zeta)
            )
        return float(out) if out.ndim == 0 else out

    def forward(self, s):
        s = np.asarray(s, dtype=float)
        out = self.b1 * s**self.zeta
        if self.beta != 0.0:
            out = out * np.abs(np.log2(self.b2 * s)) ** self.beta
        return float(out) if out.ndim == 0 else out


def near_inverse(b1, b2, zeta, beta):
    return NearInverse(b1, b2, zeta, beta)


# ---------------------------------------------------------------------------
# factors


class Factor:
    def eval(self, z):
        raise NotImplementedError

    def s_inf(self):
        raise NotImplementedError

    def complexity(self):
        raise NotImplementedError

    def lip_upper(self):
        """Max-norm Lipschitz bound of the factor."""
        raise NotImplementedError

    def sup_upper(self):
        raise NotImplementedError

    def is_exact(self):
        """True when the factor is already finitely parametrized."""
        return True


@dataclass
class IdentityFactor(Factor):
    dim: int

    def __post_init__(self):
        self.in_dim = self.out_dim = self.dim

    def eval(self, z):
        return np.atleast_2d(np.asarray(z, dtype=float))

    def s_inf(self):
        return 0

    def complexity(self):
        return 0

    def lip_upper(self):
        return 1.0

    def sup_upper(self):
        return math.inf


@dataclass
class LinearFactor(Factor):
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        self.out_dim, self.in_dim = self.matrix.shape

    def eval(self, z):
        return np.atleast_2d(np.asarray(z, dtype=float)) @ self.matrix.T

    def s_inf(self):
        return 1

    def complexity(self):
        return int(np.count_nonzero(self.matrix))

    def lip_upper(self):
        # exact max-norm operator norm: maximal absolute row sum
        return float(np.max(np.sum(np.abs(self.matrix), axis=1)))

    def sup_upper(self):
        return math.inf


@dataclass
class MultilinearFactor(Factor):
    """Exact multilinear map of degree >= 2; never implanted."""

    evaluator: callable
    in_dim: int
    out_dim: int
    lip: float
    sup: float

    def eval(self, z):
        return np.atleast_2d(
            np.asarray(self.evaluator(np.atleast_2d(np.asarray(z, dtype=float))))
        ).reshape(-1, self.out_dim)

    def s_inf(self):
        return 1

    def complexity(self):
        return 1

    def lip_upper(self):
        return self.lip

    def sup_upper(self):
        return self.sup


@dataclass
class GenericFactor(Factor):
    """Lipschitz factor given by an evaluator plus dependency metadata.

    ``dep_sets`` lists, per output component, the input coordinates the
    component actually depends on (None means all of them).  ``box``
    is the factor's input domain, required for implantation.
    """

    evaluator: callable
    in_dim: int
    out_dim: int
    lip: float
    sup: float
    dep_sets: list = None
    box: np.ndarray = None

    def __post_init__(self):
        if self.dep_sets is None:
            self.dep_sets = [tuple(range(self.in_dim))] * self.out_dim
        self.dep_sets = [tuple(d) for d in self.dep_sets]
        if len(self.dep_sets) != self.out_dim:
            raise ValueError("need one dependency set per output component")
        if self.box is not None:
            self.box = np.asarray(self.box, dtype=float).reshape(self.in_dim, 2)

    def eval(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.asarray(self.evaluator(z), dtype=float).reshape(-1, self.out_dim)

    def s_inf(self):
        return max(len(d) for d in self.dep_sets)

    def complexity(self):
        return sum(len(d) for d in self.dep_sets)

    def lip_upper(self):
        return self.lip

    def sup_upper(self):
        return self.sup

    def is_exact(self):
        return False

    def component_function(self, i):
        """Component i as a function of its dependency-set coordinates."""
        deps = self.dep_sets[i]
        if self.box is None:
            raise ValueError("generic factor has no box; cannot restrict")
        center = self.box.mean(axis=1)

        def fn(u):
            u = np.atleast_2d(np.asarray(u, dtype=float))
            z = np.tile(center, (u.shape[0], 1))
            z[:, list(deps)] = u
            return self.eval(z)[:, i]

        return fn, self.box[list(deps)]


@dataclass
class NetFactor(Factor):
    net: ReluNetwork
    lip: float = None
    sup: float = None

    def __post_init__(self):
        self.in_dim = self.net.in_dim
        self.out_dim = self.net.out_dim

    def eval(self, z):
        return self.net.eval(np.atleast_2d(np.asarray(z, dtype=float)))

    def s_inf(self):
        return int(max(_net_dependency_counts(self.net)))

    def complexity(self):
        return self.net.size()

    def lip_upper(self):
        if self.lip is not None:
            return self.lip
        # product of exact layer max-norm operator norms
        bound = 1.0
        for layer in self.net.layers:
            bound *= float(np.max(np.sum(np.abs(layer.weights), axis=1)))
        return bound

    def sup_upper(self):
        return self.sup if self.sup is not None else math.inf


def _net_dependency_counts(net):
    reach = net.layers[0].weights != 0
    for layer in net.layers[1:]:
        reach = (layer.weights != 0) @ reach
    return reach.astype(bool).sum(axis=1)


@dataclass
class ParallelFactor(Factor):
    """Factors applied side by side; used by sum_reps depth alignment.

    With ``split_input`` the children read disjoint slices of the input
    vector, otherwise they all read the same input.
    """

    children: list
    split_input: bool = True

    def __post_init__(self):
        self.out_dim = sum(c.out_dim for c in self.children)
        if self.split_input:
            self.in_dim = sum(c.in_dim for c in self.children)
        else:
            dims = {c.in_dim for c in self.children}
            if len(dims) != 1:
                raise ValueError("shared-input children must agree on in_dim")
            self.in_dim = dims.pop()

    def eval(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        outs = []
        ofs = 0
        for c in self.children:
            if self.split_input:
                outs.append(c.eval(z[:, ofs : ofs + c.in_dim]))
                ofs += c.in_dim
            else:
                outs.append(c.eval(z))
        return np.hstack(outs)

    def s_inf(self):
        return max(c.s_inf() for c in self.children)

    def complexity(self):
        return sum(c.complexity() for c in self.children)

    def lip_upper(self):
        return max(c.lip_upper() for c in self.children)

    def sup_upper(self):
        return max(c.sup_upper() for c in self.children)

    def is_exact(self):
        return all(c.is_exact() for c in self.children)


# ---------------------------------------------------------------------------
# compositional representations


class CompRep:
    """Ordered factor chain; the final factor is linear or multilinear."""

    def __init__(self, factors):
        factors = list(factors)
        if not factors:
            raise ValueError("empty factor list")
        for a, b in zip(factors, factors[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"factor dims incompatible: {a.out_dim} -> {b.in_dim}"
                )
        if not isinstance(factors[-1], (LinearFactor, MultilinearFactor)):
            raise ValueError("final factor must be linear or multilinear")
        self.factors = factors

    @property
    def in_dim(self):
        return self.factors[0].in_dim

    @property
    def out_dim(self):
        return self.factors[-1].out_dim

    def depth(self):
        return len(self.factors)

    def eval(self, x):
        z = np.atleast_2d(np.asarray(x, dtype=float))
        for f in self.factors:
            z = f.eval(z)
        return z

    def __call__(self, x):
        return self.eval(x)


def s_infinity(rep):
    """Dimension-sparsity: max component dependency over non-final factors.

    A single-factor representation is scored by its one (final) factor.
    """
    factors = rep.factors[:-1] if len(rep.factors) > 1 else rep.factors
    return max(f.s_inf() for f in factors)


def complexity(rep):
    """Dependency-count complexity of the chain (exactly additive)."""
    return sum(f.complexity() for f in rep.factors)


def compose_reps(outer, inner):
    """Representation of outer(inner(.)); complexity adds exactly."""
    if inner.out_dim != outer.in_dim:
        raise ValueError("compose_reps dim mismatch")
    return CompRep(inner.factors + outer.factors)


def sum_reps(rep_a, rep_b):
    """Representation of the pointwise sum; complexity adds exactly.

    Shorter chains are padded with zero-cost identity factors before
    the final layer; the two final linear factors fuse into one whose
    nonzero count is the sum of theirs.
    """
    if rep_a.in_dim != rep_b.in_dim or rep_a.out_dim != rep_b.out_dim:
        raise ValueError("sum_reps needs equal in- and output dims")
    fa = list(rep_a.factors)
    fb = list(rep_b.factors)
    if not isinstance(fa[-1], LinearFactor) or not isinstance(fb[-1], LinearFactor):
        raise ValueError("sum_reps requires linear final factors")
    n = max(len(fa), len(fb))
    fa = _pad_before_final(fa, n)
    fb = _pad_before_final(fb, n)
    parallel = [ParallelFactor([a, b], split_input=False) for a, b in [(fa[0], fb[0])]]
    parallel += [
        ParallelFactor([a, b], split_input=True) for a, b in zip(fa[1:-1], fb[1:-1])
    ]
    fused = LinearFactor(np.hstack([fa[-1].matrix, fb[-1].matrix]))
    return CompRep(parallel + [fused])


def _pad_before_final(factors, n):
    pads = [IdentityFactor(factors[-1].in_dim)] * (n - len(factors))
    return factors[:-1] + pads + [factors[-1]]


# ---------------------------------------------------------------------------
# regularizers and composition norms


@dataclass(frozen=True)
class Regularizer:
    """'lip_full' scores factors and tail compositions; 'lip_factors'
    scores factor norms only."""

    kind: str = "lip_full"

    def __post_init__(self):
        if self.kind not in ("lip_full", "lip_factors"):
            raise ValueError("unknown regularizer kind")


def reg_parallel_upper(r1, r2):
    return max(r1, r2)


def reg_compose_upper(r1, r2):
    return max(r1, r2, r1 * r2)


def comp_norm_interval(rep, reg, box, n_samples=2000, seed=0):
    """[lower, upper] bracket of the regularizer value of a chain.

    The upper bound uses declared factor Lipschitz data with the
    product bound for tail compositions; the lower bound samples
    difference quotients of factors and tail compositions along inputs
    drawn from the box.
    """
    lips = [f.lip_upper() for f in rep.factors]
    rng = np.random.default_rng(seed)
    box = np.asarray(box, dtype=float).reshape(rep.in_dim, 2)
    a = rng.uniform(box[:, 0], box[:, 1], size=(n_samples, rep.in_dim))
    d = rng.uniform(-1, 1, size=a.shape)
    scale = 1e-4 * np.min(box[:, 1] - box[:, 0])
    d *= scale / np.maximum(np.abs(d).max(axis=1, keepdims=True), 1e-300)
    b = np.clip(a + d, box[:, 0], box[:, 1])

    # propagate both point clouds through the chain
    za, zb = a, b
    stages_a, stages_b = [a], [b]
    for f in rep.factors:
        za, zb = f.eval(za), f.eval(zb)
        stages_a.append(za)
        stages_b.append(zb)

    n = len(rep.factors)
    lower = 0.0
    upper = 0.0
    for ell in range(n):
        fac_lip1 = max(
            lips[ell],
            rep.factors[ell].sup_upper() if np.isfinite(rep.factors[ell].sup_upper()) else 0.0,
        )
        sampled_fac = max(
            _quotient(stages_a[ell], stages_b[ell], stages_a[ell + 1], stages_b[ell + 1]),
            float(np.abs(stages_a[ell + 1]).max()),
        )
        if reg.kind == "lip_full":
            tail_upper = float(np.prod(lips[ell + 1 :])) if ell + 1 < n else 1.0
            sampled_tail = (
                _quotient(stages_a[ell + 1], stages_b[ell + 1], stages_a[-1], stages_b[-1])
                if ell + 1 < n
                else 0.0
            )
            upper = max(upper, fac_lip1, tail_upper)
            lower = max(lower, min(sampled_fac, fac_lip1), min(sampled_tail, tail_upper))
        else:
            upper = max(upper, fac_lip1)
            lower = max(lower, min(sampled_fac, fac_lip1))
    return [lower, upper]


def partial_composition_upper(rep, k):
    """Product Lipschitz bound of the tail composition from factor k on."""
    return float(np.prod([f.lip_upper() for f in rep.factors[k:]])) if k < len(
        rep.factors
    ) else 1.0


def sampled_partial_lip(rep, k, box, n_samples=2000, seed=0):
    """Sampled lower bound for the tail composition from factor k on."""
    rng = np.random.default_rng(seed)
    box = np.asarray(box, dtype=float).reshape(rep.in_dim, 2)
    a = rng.uniform(box[:, 0], box[:, 1], size=(n_samples, rep.in_dim))
    b = rng.uniform(box[:, 0], box[:, 1], size=(n_samples, rep.in_dim))
    for f in rep.factors[:k]:
        a, b = f.eval(a), f.eval(b)
    a_in, b_in = a, b
    for f in rep.factors[k:]:
        a, b = f.eval(a), f.eval(b)
    return _quotient(a_in, b_in, a, b)


def _quotient(a_in, b_in, a_out, b_out):
    num = np.abs(a_out - b_out).max(axis=1)
    den = np.abs(a_in - b_in).max(axis=1)
    ok = den > 0
    if not np.any(ok):
        return 0.0
    return float((num[ok] / den[ok]).max())


# ---------------------------------------------------------------------------
# implantation


class ImplantedFactor(Factor):
    """Generic factor with each component replaced by an interpolant net."""

    def __init__(self, source, nets, delta):
        self.source = source
        self.nets = nets  # one InterpolantNet per output component
        self.delta = delta
        self.in_dim = source.in_dim
        self.out_dim = source.out_dim

    def eval(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        cols = []
        for i, net in enumerate(self.nets):
            deps = list(self.source.dep_sets[i])
            cols.append(net.eval(z[:, deps])[:, 0])
        return np.stack(cols, axis=1)

    def s_inf(self):
        return self.source.s_inf()

    def complexity(self):
        return sum(net.size() for net in self.nets)

    def lip_upper(self):
        c3 = lip_interp.CALIBRATED["c3"]
        return c3 * (1.0 + self.source.sup) * self.source.lip

    def sup_upper(self):
        return self.source.sup + self.delta

    def is_exact(self):
        return True


class ImplantedComposition:
    """Finitely parametrized chain produced by implant().

    Evaluates exactly like the stage list it stores; ``size`` sums the
    stage complexities; ``to_relu_network`` assembles one monolithic
    network when no multilinear factor is present.
    """

    def __init__(self, factors, error_bound, deltas):
        self.factors = factors
        self.error_bound = error_bound
        self.deltas = deltas
        self.in_dim = factors[0].in_dim
        self.out_dim = factors[-1].out_dim

    def eval(self, x):
        z = np.atleast_2d(np.asarray(x, dtype=float))
        for f in self.factors:
            z = f.eval(z)
        return z

    def __call__(self, x):
        return self.eval(x)

    def size(self):
        return sum(f.complexity() for f in self.factors)

    def s_inf(self):
        return max(f.s_inf() for f in self.factors)

    def to_relu_network(self):
        from .relu_net import compose as net_compose

        net = None
        for f in self.factors:
            stage = _factor_as_net(f)
            net = stage if net is None else net_compose(stage, net)
        return net


def _factor_as_net(f):
    from .relu_net import affine_net, compose as net_compose, parallelize as net_par

    if isinstance(f, IdentityFactor):
        from .relu_net import identity_net

        return identity_net(f.dim)
    if isinstance(f, LinearFactor):
        return affine_net(f.matrix)
    if isinstance(f, NetFactor):
        return f.net
    if isinstance(f, ImplantedFactor):
        nets = []
        for i, interp in enumerate(f.nets):
            deps = list(f.source.dep_sets[i])
            sel = np.zeros((len(deps), f.in_dim))
            for r, dcol in enumerate(deps):
                sel[r, dcol] = 1.0
            nets.append(net_compose(interp.materialize(), affine_net(sel)))
        return net_par(nets)
    raise ValueError(f"factor {type(f).__name__} has no exact ReLU realization")


def implant(rep, deltas, max_grid_nodes=4_000_000):
    """Replace generic factors by Lipschitz-stable interpolant networks.

    ``deltas`` gives one tolerance per factor (entries for exact factors
    are ignored).  Returns (ImplantedComposition, error_bound) with the
    bound delta_n + sum_j delta_j * L_tail(j) computed from the declared
    Lipschitz chain; exact factors contribute zero.
    """
    deltas = list(deltas)
    if len(deltas) != len(rep.factors):
        raise ValueError("need one delta per factor")
    lips = [f.lip_upper() for f in rep.factors]
    new_factors = []
    error = 0.0
    for j, f in enumerate(rep.factors):
        tail = float(np.prod(lips[j + 1 :])) if j + 1 < len(rep.factors) else 1.0
        new_f, err_j = _implant_factor(f, deltas[j], max_grid_nodes)
        new_factors.append(new_f)
        error += err_j * tail
    return ImplantedComposition(new_factors, error, deltas), error


def _implant_factor(f, delta, max_grid_nodes):
    if isinstance(f, ParallelFactor):
        outs = [_implant_factor(c, delta, max_grid_nodes) for c in f.children]
        return (
            ParallelFactor([o[0] for o in outs], split_input=f.split_input),
            max(o[1] for o in outs),
        )
    if f.is_exact():
        return f, 0.0
    nets = []
    for i in range(f.out_dim):
        fn, sub_box = f.component_function(i)
        width = float(np.max(sub_box[:, 1] - sub_box[:, 0]))
        s = sub_box.shape[0]
        lip_unit = f.lip * width
        if lip_unit > 0:
            q = math.ceil(2.0 * lip_unit / delta)
        else:
            q = 1
        if (q + 1) ** s > max_grid_nodes:
            raise ResourceWarning(
                f"implant grid would need {(q + 1) ** s} nodes (> {max_grid_nodes})"
            )
        grid = lip_interp.GridSpec(s, q, box=sub_box)
        sf = lip_interp.SampledFunction.from_function(
            fn, grid, lip_bound=f.lip, sup_bound=f.sup
        )
        net, _ = lip_interp.lip_stable_net(sf, delta)
        nets.append(net)
    return ImplantedFactor(f, nets, delta), delta


def implant_for_accuracy(rep_family, gf, norm, seminorm, eps):
    """Pick the budget from the rate law and implant uniformly.

    ``rep_family(N)`` must return a representation with error at most
    gamma(N)^-1 * seminorm and composition norm at most ``norm``.  The
    total certified bound (family error + implant error) is <= eps.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n_budget = n_epsilon(gf, 2.0 * seminorm, eps)
    rep = rep_family(n_budget)
    delta = eps / (2.0 * max(norm, 1.0) * max(gamma_inverse(gf, 2.0 * seminorm / eps), 1.0))
    implanted, implant_err = implant(rep, [delta] * len(rep.factors))
    family_err = seminorm / gf(n_budget)
    report = {
        "N": n_budget,
        "delta": delta,
        "family_error": family_err,
        "implant_error": implant_err,
        "total_bound": family_err + implant_err,
        "size": implanted.size(),
    }
    if report["total_bound"] > eps * (1 + 1e-9):
        raise ValueError(
            f"accuracy target not certifiable: bound {report['total_bound']} > {eps}"
        )
    return implanted, report


def describe_rep(rep):
    """Serializable descriptor of a representation (metadata only).

    Factor kinds, dimensions, Lipschitz data, dependency sets, and grid
    boxes; evaluators themselves are not serialized.
    """
    return {
        "in_dim": rep.in_dim,
        "out_dim": rep.out_dim,
        "complexity": complexity(rep),
        "s_infinity": s_infinity(rep),
        "factors": [_describe_factor(f) for f in rep.factors],
    }


def _describe_factor(f):
    doc = {
        "kind": type(f).__name__,
        "in_dim": f.in_dim,
        "out_dim": f.out_dim,
        "lip": None if not np.isfinite(f.lip_upper()) else f.lip_upper(),
        "sup": None if not np.isfinite(f.sup_upper()) else f.sup_upper(),
        "complexity": f.complexity(),
    }
    if isinstance(f, GenericFactor):
        doc["dep_sets"] = [list(d) for d in f.dep_sets]
        if f.box is not None:
            doc["box"] = f.box.tolist()
    if isinstance(f, LinearFactor):
        doc["matrix"] = f.matrix.tolist()
    if isinstance(f, ParallelFactor):
        doc["split_input"] = f.split_input
        doc["children"] = [_describe_factor(c) for c in f.children]
    return doc


def rep_descriptor_json(rep):
    import json

    return json.dumps(describe_rep(rep), sort_keys=True)


def aclass_seminorm_upper(samples, gf):
    """Upper estimate of the approximation-class seminorm.

    ``samples`` holds (N, error, norm_upper) triples from an approximant
    family; the estimate is max over samples of gamma(N)*error + norm.
    """
    if not samples:
        raise ValueError("empty sample list")
    return max(float(gf(n)) * err + norm for n, err, norm in samples)
