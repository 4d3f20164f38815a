"""Closed-form performance relations for broadcast polling with piggyback.

Every function here is a pure evaluation at a candidate operating point
(collision probability p, grant probability q, mean service delay es);
the fixed-point iteration that makes the point self-consistent lives in
the solver module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .core import NetworkConfig


def _unit(x: float) -> float:
    """Clamp a probability intermediate into [0, 1]."""
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def window_size(config: NetworkConfig, round_index: int) -> int:
    """Contention window of the given retry round, capped at 2^m_exp * w0."""
    return (1 << min(round_index, config.m_exp)) * config.w0


@dataclass(frozen=True)
class BackoffProfile:
    """Per-round backoff geometry: mean waiting frames and frame-span bounds."""

    k_bar: tuple      # mean whole frames spent counting down, per round
    wc: tuple         # ceil(window / n_tos), max frames a countdown can span
    wf: tuple         # floor(window / n_tos)


def backoff_profile(config: NetworkConfig) -> BackoffProfile:
    """Mean number of waiting frames before the countdown expires, per round.

    The countdown is uniform on [0, W_i - 1] transmission opportunities and
    is consumed n_tos per frame, so the frame in which it expires spans
    ceil(W_i / n_tos) possibilities with the last one only partially covered.
    """
    k_bar, wc, wf = [], [], []
    for i in range(config.max_retx + 1):
        w = window_size(config, i)
        c = -(-w // config.n_tos)
        f = w // config.n_tos
        mean = (0.5 * f * (f + 1) * config.n_tos / w
                + c * (1.0 - f * config.n_tos / w) - 1.0)
        k_bar.append(mean)
        wc.append(c)
        wf.append(f)
    return BackoffProfile(tuple(k_bar), tuple(wc), tuple(wf))


def drop_delay(config: NetworkConfig, profile: BackoffProfile) -> float:
    """Frames burned by a request that exhausts all rounds without a grant."""
    return (config.max_retx + 1) * config.t16_frames + sum(profile.k_bar)


def pi0(config: NetworkConfig, es: float) -> float:
    """Probability that a departure leaves the station queue empty.

    M/G/1 with deterministic one-frame vacations: (1 - rho) scaled by the
    mean number of arrivals in the vacation that ends an idle period.
    """
    x = config.lam * config.t_frame
    rho = config.lam * es
    return _unit((1.0 - rho) * (1.0 - math.exp(-x)) / x)


@dataclass(frozen=True)
class ChainStationary:
    """Aggregate stationary weights of the per-station activity chain."""

    p_f: float      # probability a contention round yields no grant
    tau: float      # sum over rounds of p_f^i
    omega: float    # backoff-wait weight of the retry rounds
    z: float        # piggyback-state weight (mean piggybacks per served BR)
    phi: float      # idle-state weight
    b00: float      # stationary probability of the first BR transmission


def chain_stationary(config: NetworkConfig, p: float, q: float, pi0_: float,
                     profile: BackoffProfile | None = None) -> ChainStationary:
    """Solve the activity chain in closed form for given (p, q, pi0)."""
    if q <= 0.0:
        raise ValueError("q must be positive: the idle-grant wait weight contains 1/q")
    if profile is None:
        profile = backoff_profile(config)
    m = config.t16_frames
    d = config.max_retx
    g = config.max_piggy

    p_f = p + (1.0 - p) * (1.0 - q) ** m
    if p_f >= 1.0:
        tau = float(d + 1)
    else:
        tau = (1.0 - p_f ** (d + 1)) / (1.0 - p_f)
    omega = sum(p_f ** i * profile.k_bar[i] for i in range(1, d + 1))
    if pi0_ > 0.0:
        z = (1.0 - pi0_) * (1.0 - p_f) * tau * (1.0 - (1.0 - pi0_) ** g) / pi0_
    else:
        # 0/0 limit of the geometric sum at saturation
        z = g * (1.0 - p_f) * tau
    p_a = math.exp(-config.lam * config.t_frame)
    phi = (pi0_ + (1.0 - (1.0 - pi0_) ** g) * (1.0 - pi0_)
           * (1.0 - p_f ** (d + 1))) / (1.0 - p_a)
    denom = tau * (1.0 + p * m + (1.0 - p_f) / q) + omega + z + phi
    return ChainStationary(p_f, tau, omega, z, phi, 1.0 / denom)


def collision_probability(config: NetworkConfig, b00: float, tau: float) -> float:
    """Probability that a transmitted BR shares its TO with another station."""
    x = _unit(tau * b00 / config.n_tos)
    return 1.0 - (1.0 - x) ** (config.n_ss - 1)


def success_probability(config: NetworkConfig, b00: float, tau: float) -> float:
    """Probability that a TO carries exactly one BR."""
    x = _unit(tau * b00 / config.n_tos)
    return config.n_ss * x * (1.0 - x) ** (config.n_ss - 1)


def drop_probability(config: NetworkConfig, p_f: float) -> float:
    """Probability that a BR fails all of its rounds and the packet is dropped."""
    return p_f ** (config.max_retx + 1)


def service_delay(config: NetworkConfig, p: float, q: float,
                  profile: BackoffProfile, z: float):
    """Mean and second moment of the service delay.

    Returns (es_c, es, es2): the contention-only mean, the overall mean after
    mixing in the one-frame piggyback services, and the approximate second
    moment used by the waiting-delay formula.
    """
    m = config.t16_frames
    d = config.max_retx
    p_f = p + (1.0 - p) * (1.0 - q) ** m
    p_d = p_f ** (d + 1)

    s_drop = drop_delay(config, profile)
    mean = p_d * s_drop
    mean_sq = p_d * s_drop * s_drop
    k_cum = 0.0
    for i in range(d + 1):
        k_cum += profile.k_bar[i]
        base = (1.0 - p) * q * p_f ** i
        for j in range(1, m + 1):
            w = base * (1.0 - q) ** (j - 1)
            s = j + i * m + k_cum
            mean += w * s
            mean_sq += w * s * s
    es_c = mean
    es = (es_c + z) / (1.0 + z)
    es2 = (mean_sq + z) / (1.0 + z)
    return es_c, es, es2


@dataclass(frozen=True)
class AllocationModel:
    """Inputs of the grant-refusal sum for one evaluation point."""

    p_a: tuple      # per-i probability that a non-piggybacking SS has a pending BR
    p_g: float      # probability that a data slot is consumed by piggyback
    e_r: float      # mean pending BRs per frame
    e_p: float      # mean piggybacked slots per frame


class _RefusalGrid:
    """Static index/mask arrays of the refusal double sum for one (N, L)."""

    def __init__(self, n_ss: int, n_slots: int):
        # lf[k] = log(k!)
        lf = gammaln(np.arange(max(n_ss, n_slots) + 2) + 1.0)
        i = np.arange(n_slots + 1)
        self.log_comb_slots = lf[n_slots] - lf[i] - lf[n_slots - i]
        if n_slots >= n_ss:
            self.empty = True
            return
        self.empty = False
        j = np.arange(n_ss)                               # Q ranges over 0..N-1
        n_pending = n_ss - i - 1                          # Q trials per row
        self.i = i
        self.j = j
        self.n_pending = n_pending
        jj = j[None, :]
        nn = n_pending[:, None]
        jlo = (n_slots - i)[:, None]
        valid = (jj >= jlo) & (jj <= nn)
        with np.errstate(invalid="ignore"):
            log_comb_q = lf[np.clip(nn, 0, None)] - lf[jj] - lf[np.clip(nn - jj, 0, None)]
        self.log_comb_q = np.where(valid, log_comb_q, -np.inf)
        self.unserved_frac = np.where(valid, (jj + 1 - jlo) / (jj + 1), 0.0)


@lru_cache(maxsize=64)
def _refusal_grid(n_ss: int, n_slots: int) -> _RefusalGrid:
    return _RefusalGrid(n_ss, n_slots)


def allocation_model(config: NetworkConfig, p_s: float, q: float,
                     pi0_: float) -> AllocationModel:
    """Mean pending-BR and piggyback-slot counts plus the per-term probabilities."""
    m = config.t16_frames
    g = config.max_piggy
    e_r = config.n_tos * p_s * sum((1.0 - q) ** i for i in range(m))
    e_p = e_r * q * sum((1.0 - pi0_) ** (i + 1) for i in range(g))
    p_g = _unit(e_p / config.n_slots)
    p_a = tuple(_unit(e_r / (config.n_ss - i)) if config.n_ss > i else 1.0
                for i in range(config.n_slots + 1))
    return AllocationModel(p_a, p_g, e_r, e_p)


def allocation_probability(config: NetworkConfig, p_s: float, q: float,
                           pi0_: float):
    """Per-frame grant probability for a pending BR under random service.

    The refusal probability r sums, over the number of piggybacked slots and
    the number of competing pending BRs, the fraction of pending BRs that do
    not fit into the slots left over by piggyback.  Returns (1 - r, e_r, e_p).
    """
    model = allocation_model(config, p_s, q, pi0_)
    grid = _refusal_grid(config.n_ss, config.n_slots)
    if grid.empty:
        return 1.0, model.e_r, model.e_p
    # binomial pmfs in log space; clipping keeps 0 and 1 exactly representable
    # in the result while avoiding log(0) partials
    p_g = min(max(model.p_g, 1e-300), 1.0 - 1e-16)
    pmf_slots = np.exp(grid.log_comb_slots
                       + grid.i * math.log(p_g)
                       + (config.n_slots - grid.i) * math.log1p(-p_g))
    p_a = np.clip(np.asarray(model.p_a), 1e-300, 1.0 - 1e-16)[:, None]
    jj = grid.j[None, :]
    log_pmf_q = grid.log_comb_q + jj * np.log(p_a) + (grid.n_pending[:, None] - jj) * np.log1p(-p_a)
    inner = np.sum(np.exp(log_pmf_q) * grid.unserved_frac, axis=1)
    r = float(np.dot(pmf_slots, inner))
    return _unit(1.0 - r), model.e_r, model.e_p


def throughput(config: NetworkConfig, p_s: float, q: float, z: float,
               p_d: float, b00: float):
    """Contention, piggyback, and total throughput in packets per frame."""
    q_m = 1.0 - (1.0 - q) ** config.t16_frames
    th_c = q_m * p_s * config.n_tos
    th_pg = z * config.n_ss * (1.0 - p_d) * b00
    return th_c, th_pg, th_c + th_pg


def waiting_delay(config: NetworkConfig, es: float, es_c: float, es2: float,
                  pi0_: float):
    """Mean waiting delay of an arriving packet, or inf past the stable region.

    A modified Pollaczek-Khinchine form: the in-queue service delay es_q
    replaces es in the denominator because only queued packets can ride the
    one-frame piggyback service, and the deterministic one-frame vacation
    contributes its residual t_frame/2.
    """
    rho = min(config.lam * es, 1.0)
    es_i = 1.0 if config.max_piggy > 0 else es_c
    if rho > 0.0:
        es_b = (es - pi0_ * es_c - max(1.0 - pi0_ - rho, 0.0) * es_i) / rho
    else:
        es_b = es
    es_b = max(es_b, 1.0)   # a queued packet cannot complete in under a frame
    if pi0_ >= 1.0:
        es_q = es
    else:
        w_busy = _unit(rho / (1.0 - pi0_))
        es_q = w_busy * es_b + (1.0 - w_busy) * es_i
    occupancy = config.lam * es_q
    if occupancy >= 1.0:
        return es_q, math.inf
    ew = config.lam * es2 / (2.0 * (1.0 - occupancy)) + config.t_frame / 2.0
    return es_q, ew


def capacity_heuristics(config: NetworkConfig, l_sweep=None):
    """Rough sizing rules for the slot count under saturation.

    Solves the saturated fixed point over a range of slot counts to find the
    peak success probability for this piggyback limit, then returns
    (l_prime, th_max): the slot count that stops being the bottleneck and the
    throughput ceiling min(L, (G+1) * p_s_max * n_tos) for the configured L.
    """
    from .solver import solve  # local import: solver builds on this module

    g = config.max_piggy
    if l_sweep is None:
        l_sweep = range(1, max((g + 1) * config.n_tos, config.n_slots) + 1)
    saturated = config.with_updates(lam=1.0 / config.t_frame)
    p_s_max = 0.0
    stale = 0
    for l in l_sweep:
        solution = solve(saturated.with_updates(n_slots=int(l)))
        if solution.p_s > p_s_max + 1e-6:
            p_s_max = max(p_s_max, solution.p_s)
            stale = 0
        else:
            # success probability plateaus once bandwidth stops binding
            stale += 1
            if stale >= 6 and l >= 8:
                break
    per_frame = (g + 1) * p_s_max * config.n_tos
    l_prime = math.ceil(per_frame)
    th_max = min(float(config.n_slots), per_frame)
    return l_prime, th_max
