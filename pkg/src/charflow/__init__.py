"""Certified ReLU-network surrogates for parametric transport problems."""

from .relu_net import (
    AffineLayer,
    ReluNetwork,
    affine_net,
    compose,
    identity_net,
    lip_lower_bound,
    parallelize,
    rho_gate,
    sum_nets,
)
from .lip_interp import (
    GridSpec,
    InterpolantNet,
    SampledFunction,
    hat1d,
    lip_stable_net,
    product_net,
    tensor_hat,
)
from .comp_calculus import (
    CompRep,
    GenericFactor,
    GrowthFunction,
    IdentityFactor,
    LinearFactor,
    MultilinearFactor,
    NetFactor,
    Regularizer,
    complexity,
    compose_reps,
    gamma_inverse,
    implant,
    implant_for_accuracy,
    n_epsilon,
    near_inverse,
    s_infinity,
    sum_reps,
)
from .transport_core import (
    AffineConvection,
    CharNetwork,
    GeneralConvection,
    MacroGrid,
    SolutionNetwork,
    TransportProblem,
    build_char_net,
    build_slab_net,
    build_solution_net,
    lipschitz_certificate,
    macro_grid,
    picard_numeric,
    predicted_complexity,
    schedule,
)
from .oracle import OdeConfig, exact_const, rk4_char, solution_oracle

__version__ = "0.1.0"
