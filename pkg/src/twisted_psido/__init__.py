"""
Symbol calculus, parametrices and resolvent-trace asymptotics for
pseudodifferential multipliers over twisted C*-dynamical systems, with
scalar, diagonal-generator matrix and noncommutative-torus algebra backends.
"""
from .algebra import (AlgebraBackend, AlgebraElement, BackendMismatchError, SingularElementError,
                      alg_adjoint, alg_alpha, alg_delta, alg_inverse, alg_norm, alg_ring,
                      alg_trace_psi, matrix_backend, nctorus_backend, scalar_backend)
from .bounded import (KernelGrid, SchurResult, discretized_opnorm, kernel_from_symbol, kernel_grid,
                      schur_bound)
from .calculus import (UPPER_HALF, DegreeLadderError, EllipticityError, HomComponent, ParamSymbol,
                       PolyhomSymbol, Sector, adjoint_expand, ellipticity_check, make_symbol,
                       parametrix, resolvent_power_symbol, sharp_compose, symbol_eval)
from .config import ConfigError, ScenarioConfig, parse_config
from .parser import ExprSyntaxError, parse_expr
from .quadrature import QuadratureError, QuadratureSpec
from .symexpr import (Expr, TwistMatrix, UnexpandableError, eval_batch, expr_adjoint, expr_degree,
                      expr_delta, expr_dxi, expr_eval, expr_mu_expand, expr_simplify, expr_twisted,
                      mu_series, print_expr)
from .trace_asym import (DivergenceError, TraceExpansion, coeff_log_const, coeff_power, expansion_fit,
                         trace_expansion_full, trace_quadrature_oracle)

__version__ = "0.1.0"
