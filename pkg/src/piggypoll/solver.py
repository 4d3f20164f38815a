"""Damped fixed-point solution of the three coupled performance equations.

The unknowns are the collision probability p, the per-frame grant
probability q, and the mean service delay es; one sweep re-evaluates each
of them from the closed forms and the iteration damps toward the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import analytic
from .core import ModelSolution, NetworkConfig

Q_MIN = 1e-9            # q = 0 is outside the admissible region (1/q weight)
P_MAX = 1.0 - 1e-12

# Starting points used by the multiple-root cross check.
STANDARD_INITS = ((0.1, 0.9, 2.0), (0.5, 0.5, 10.0))


@dataclass(frozen=True)
class SolverOptions:
    damping: float = 0.5
    tol: float = 1e-9
    max_iters: int = 10000
    init_p: float | None = None
    init_q: float | None = None
    init_es: float | None = None

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


class SolverError(RuntimeError):
    """Non-convergence diagnostic carrying the last iterate and residuals."""

    def __init__(self, message, last=None, residuals=None):
        super().__init__(message)
        self.last = last
        self.residuals = residuals


def _clamp_triple(config, profile, p, q, es):
    es_top = analytic.drop_delay(config, profile) + 1.0
    return (min(max(p, 0.0), P_MAX),
            min(max(q, Q_MIN), 1.0),
            min(max(es, 1.0), es_top))


# Scan grid for bracketing the grant-probability subequation: dense near 0
# where the refusal sum is steepest.
_Q_SCAN = tuple(np.geomspace(Q_MIN, 0.1, 10)) + tuple(np.linspace(0.15, 1.0, 18))


def _solve_q(config, p_s, pi0_, hint):
    """Self-consistent root of q = 1 - r(q) at fixed (p_s, pi0).

    The grant probability appears on both sides of the allocation relation
    (the pending-BR count shrinks as q grows), and the plain re-evaluation
    map is nearly a step function around the balance point, so the root is
    located here instead of being iterated on.  Deterministically returns
    the largest root; a clamped endpoint if the residual never changes sign.
    """
    def gap(q):
        return analytic.allocation_probability(config, p_s, q, pi0_)[0] - q

    g_hint = gap(hint)
    if abs(g_hint) <= 1e-13:
        return hint
    lo = max(hint - 0.05, Q_MIN)
    hi = min(hint + 0.05, 1.0)
    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    if g_lo > 0.0 > g_hi:
        return brentq(gap, lo, hi, xtol=1e-13)
    # local bracket failed: scan the admissible interval and take the
    # sign change with the largest lower endpoint
    values = [gap(qq) for qq in _Q_SCAN]
    for k in range(len(_Q_SCAN) - 1, 0, -1):
        if values[k] == 0.0:
            return _Q_SCAN[k]
        if values[k - 1] > 0.0 > values[k]:
            return brentq(gap, _Q_SCAN[k - 1], _Q_SCAN[k], xtol=1e-13)
    if values[0] == 0.0:
        return _Q_SCAN[0]
    # no crossing: the map sits entirely on one side, pin to the endpoint
    return 1.0 if values[-1] > 0.0 else Q_MIN


def _sweep(config, profile, p, q, es):
    """One full pass through the closed forms: (p, q, es) -> re-evaluated triple."""
    pi0_ = analytic.pi0(config, es)
    chain = analytic.chain_stationary(config, p, q, pi0_, profile)
    p_new = analytic.collision_probability(config, chain.b00, chain.tau)
    p_s = analytic.success_probability(config, chain.b00, chain.tau)
    q_new = _solve_q(config, p_s, pi0_, q)
    _, es_new, _ = analytic.service_delay(config, p, q, profile, chain.z)
    return _clamp_triple(config, profile, p_new, q_new, es_new)


def residuals(config: NetworkConfig, p: float, q: float, es: float):
    """Signed differences between the plainly re-evaluated and input triple."""
    profile = analytic.backoff_profile(config)
    pi0_ = analytic.pi0(config, es)
    chain = analytic.chain_stationary(config, p, q, pi0_, profile)
    p_new = analytic.collision_probability(config, chain.b00, chain.tau)
    p_s = analytic.success_probability(config, chain.b00, chain.tau)
    q_new, _, _ = analytic.allocation_probability(config, p_s, q, pi0_)
    _, es_new, _ = analytic.service_delay(config, p, q, profile, chain.z)
    return p_new - p, q_new - q, es_new - es


def solve(config: NetworkConfig, options: SolverOptions | None = None) -> ModelSolution:
    """Iterate the damped sweep to a self-consistent operating point."""
    opts = options or SolverOptions()
    profile = analytic.backoff_profile(config)
    p = opts.init_p if opts.init_p is not None else 0.1
    q = opts.init_q if opts.init_q is not None else 0.9
    es = opts.init_es if opts.init_es is not None else 1.0 + profile.k_bar[0]
    p, q, es = _clamp_triple(config, profile, p, q, es)

    alpha = opts.damping
    res = (math.inf,) * 3
    for _ in range(opts.max_iters):
        p_new, q_new, es_new = _sweep(config, profile, p, q, es)
        res = (p_new - p, q_new - q, es_new - es)
        if max(abs(r) for r in res) <= opts.tol:
            p, q, es = p_new, q_new, es_new
            break
        p += alpha * res[0]
        q += alpha * res[1]
        es += alpha * res[2]
        p, q, es = _clamp_triple(config, profile, p, q, es)
    else:
        raise SolverError(
            f"no convergence after {opts.max_iters} iterations "
            f"(last residuals {res})", last=(p, q, es), residuals=res)
    return _assemble(config, profile, p, q, es)


def _assemble(config, profile, p, q, es) -> ModelSolution:
    """Populate every derived quantity from a converged triple."""
    pi0_ = analytic.pi0(config, es)
    chain = analytic.chain_stationary(config, p, q, pi0_, profile)
    p_s = analytic.success_probability(config, chain.b00, chain.tau)
    p_d = analytic.drop_probability(config, chain.p_f)
    _, e_r, e_p = analytic.allocation_probability(config, p_s, q, pi0_)
    es_c, _, es2 = analytic.service_delay(config, p, q, profile, chain.z)
    th_c, th_pg, th = analytic.throughput(config, p_s, q, chain.z, p_d, chain.b00)
    es_q, ew = analytic.waiting_delay(config, es, es_c, es2, pi0_)
    return ModelSolution(
        p=p, q=q, es=es, pi0=pi0_,
        rho=min(config.lam * es, 1.0),
        p_f=chain.p_f, tau=chain.tau, omega=chain.omega, z=chain.z,
        phi=chain.phi, b00=chain.b00,
        p_b=chain.tau * chain.b00, p_s=p_s, p_d=p_d,
        q_m=1.0 - (1.0 - q) ** config.t16_frames,
        e_r=e_r, e_p=e_p,
        es_c=es_c, es2=es2, es_q=es_q, ew=ew,
        th_c=th_c, th_pg=th_pg, th=th,
    )


def initializer_spread(config: NetworkConfig, options: SolverOptions | None = None):
    """Solve from both standard starting points; flag any root disagreement.

    Returns (solution_from_first_init, max componentwise |difference| over
    the (p, q, es) triple).  A large spread means the fixed point is not
    unique for this configuration and the reported root is initializer-bound.
    """
    opts = options or SolverOptions()
    solutions = []
    for init in STANDARD_INITS:
        local = SolverOptions(damping=opts.damping, tol=opts.tol,
                              max_iters=opts.max_iters,
                              init_p=init[0], init_q=init[1], init_es=init[2])
        solutions.append(solve(config, local))
    a, b = solutions
    spread = max(abs(a.p - b.p), abs(a.q - b.q), abs(a.es - b.es))
    return a, spread
