"""Frame-synchronous simulator of broadcast polling with piggybacking.

The base station grants one data slot per request, piggybacked requests are
served with priority, pending contending requests are served in random
order, and a request silently times out after the grant window elapses.
This simulator shares no formulas with the analytic model; it is the
independent oracle the model is validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np
from scipy import stats

from .core import ConfigError, NetworkConfig


class Phase(Enum):
    IDLE = "idle"
    BACKOFF = "backoff"
    AWAIT_GRANT = "await_grant"
    PIGGYBACK = "piggyback"


@dataclass(frozen=True)
class BasePending:
    """One successfully received bandwidth request awaiting a grant."""
    ss_id: int
    frame_received: int


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    warmup_frames: int = 2000
    measure_frames: int = 20000
    replications: int = 10


def validate_sim(sim: SimConfig) -> SimConfig:
    if sim.measure_frames < 1:
        raise ConfigError(f"measure_frames must be >= 1, got {sim.measure_frames}")
    if sim.replications < 1:
        raise ConfigError(f"replications must be >= 1, got {sim.replications}")
    if sim.warmup_frames < 0:
        raise ConfigError(f"warmup_frames must be >= 0, got {sim.warmup_frames}")
    return sim


class SubscriberState:
    """Per-station MAC state.

    The queue is a sliding window [head, tail) over the station's
    pregenerated arrival-time series; popping advances head, the arrival
    step advances tail.
    """

    __slots__ = ("phase", "round", "backoff_tos", "backoff_start",
                 "t16_remaining", "piggy_count", "head_service_start",
                 "arrivals", "head", "tail", "br_count")

    def __init__(self, arrivals):
        self.phase = Phase.IDLE
        self.round = 0
        self.backoff_tos = 0
        self.backoff_start = 0
        self.t16_remaining = 0
        self.piggy_count = 0
        self.head_service_start = 0.0
        self.arrivals = arrivals      # full arrival-time series, sorted
        self.head = 0                 # index of the head-of-queue packet
        self.tail = 0                 # arrivals visible to the MAC so far
        self.br_count = 0             # BR transmissions for the current head

    @property
    def queue(self):
        """Timestamps currently queued (oldest first)."""
        return tuple(self.arrivals[self.head:self.tail])

    def queue_len(self) -> int:
        return self.tail - self.head


class _Uniforms:
    """Blocked uniform draws from one generator stream."""

    __slots__ = ("rng", "block", "idx")

    def __init__(self, rng, block=2048):
        self.rng = rng
        self.block = rng.random(block).tolist()
        self.idx = 0

    def next(self) -> float:
        i = self.idx
        if i == len(self.block):
            self.block = self.rng.random(len(self.block)).tolist()
            i = 0
        self.idx = i + 1
        return self.block[i]


class _Tally:
    """Raw event counts of one replication, measurement window only."""

    __slots__ = ("measure_frames", "served", "ctx", "pgx", "delay_sum",
                 "cdelay_sum", "wait_sum", "wait_n", "br_tx", "br_coll",
                 "succ_to", "exposures", "grants", "pool_size_sum", "drops",
                 "arrived_total", "served_total", "dropped_total", "queued_final")

    def __init__(self, measure_frames):
        self.measure_frames = measure_frames
        self.served = 0
        self.ctx = 0
        self.pgx = 0
        self.delay_sum = 0.0
        self.cdelay_sum = 0.0
        self.wait_sum = 0.0
        self.wait_n = 0
        self.br_tx = 0
        self.br_coll = 0
        self.succ_to = 0
        self.exposures = 0
        self.grants = 0
        self.pool_size_sum = 0
        self.drops = 0
        self.arrived_total = 0
        self.served_total = 0
        self.dropped_total = 0
        self.queued_final = 0


def _run_replication(config: NetworkConfig, warmup: int, measure: int,
                     seed_seq, trace_sink=None, checks=False) -> _Tally:
    n = config.n_ss
    n_tos = config.n_tos
    n_slots = config.n_slots
    m = config.t16_frames
    d = config.max_retx
    g = config.max_piggy
    total_frames = warmup + measure

    children = seed_seq.spawn(n + 1)
    ss_rngs = [np.random.default_rng(s) for s in children[:n]]
    bs_uniform = _Uniforms(np.random.default_rng(children[n]))

    # Arrival counts and instants are pregenerated per station; the MAC sees
    # an arrival only from the frame boundary after it occurred.
    counts = []
    stations = []
    for rng in ss_rngs:
        c = rng.poisson(config.lam, total_frames)
        total = int(c.sum())
        times = np.repeat(np.arange(total_frames, dtype=np.float64), c)
        times += rng.random(total)
        times.sort()
        counts.append(c.tolist())
        stations.append(SubscriberState(times.tolist()))
    backoff_u = [_Uniforms(rng, 512) for rng in ss_rngs]

    tally = _Tally(measure)
    pool = {}                 # ss_id -> frame of successful BR reception
    piggy = []                # stations holding a reserved slot this frame
    backoff_ids = []          # stations counting down TOs (lazy membership)
    await_ids = []            # stations inside the grant window (lazy)
    tr = trace_sink
    idle, backoff, await_grant, piggyback = (Phase.IDLE, Phase.BACKOFF,
                                             Phase.AWAIT_GRANT, Phase.PIGGYBACK)

    def start_round(sid, ss, rnd, frame):
        ss.phase = backoff
        ss.round = rnd
        width = (1 << min(rnd, config.m_exp)) * config.w0
        ss.backoff_tos = int(backoff_u[sid].next() * width)
        ss.backoff_start = frame
        backoff_ids.append(sid)

    for k in range(total_frames):
        measuring = k >= warmup

        # 1. grant allocation: piggybacked requests first, then a uniformly
        # random subset of the pending pool fills the remaining slots
        if checks:
            assert len(piggy) <= n_slots, "piggyback demand exceeded slot count"
            for sid, frame_rx in pool.items():
                assert 1 <= k - frame_rx <= m, "pending BR outside its grant window"
        navail = n_slots - len(piggy)
        if pool:
            npool = len(pool)
            if measuring:
                tally.exposures += npool
                tally.pool_size_sum += npool
            if npool <= navail:
                granted = list(pool)
            else:
                keys = list(pool)
                for t in range(navail):
                    j = t + int(bs_uniform.next() * (npool - t))
                    keys[t], keys[j] = keys[j], keys[t]
                granted = keys[:navail]
            for sid in granted:
                del pool[sid]
            if measuring:
                tally.grants += len(granted)
        else:
            granted = ()
        if checks:
            assert len(piggy) + len(granted) <= n_slots, "slot conservation violated"
        if tr is not None:
            for sid in piggy:
                tr(k, sid, "pggrant", "")
            for sid in granted:
                tr(k, sid, "grant", "")

        # 2+3. data transmission and the follow-up decision of each sender
        new_piggy = []
        for sid, via_pg in [(s, True) for s in piggy] + [(s, False) for s in granted]:
            ss = stations[sid]
            delay = k - ss.head_service_start
            ss.head += 1
            ss.br_count = 0
            tally.served_total += 1
            if measuring:
                tally.served += 1
                tally.delay_sum += delay
                if via_pg:
                    tally.pgx += 1
                else:
                    tally.ctx += 1
                    tally.cdelay_sum += delay
            if tr is not None:
                tr(k, sid, "tx", f"via={'pg' if via_pg else 'c'} delay={delay:g}")
            if ss.head < ss.tail and ss.piggy_count < g:
                ss.piggy_count += 1
                ss.phase = piggyback
                ss.head_service_start = k
                new_piggy.append(sid)
                if measuring:
                    tally.wait_sum += k - ss.arrivals[ss.head]
                    tally.wait_n += 1
                if tr is not None:
                    tr(k, sid, "pg", f"count={ss.piggy_count}")
            else:
                ss.piggy_count = 0
                if ss.head < ss.tail:
                    ss.head_service_start = k + 1
                    if measuring:
                        tally.wait_sum += k + 1 - ss.arrivals[ss.head]
                        tally.wait_n += 1
                    start_round(sid, ss, 0, k + 1)
                    if tr is not None:
                        tr(k, sid, "cstart", "round=0")
                else:
                    ss.phase = idle
                    if tr is not None:
                        tr(k, sid, "idle", "")
        piggy = new_piggy

        # 4. contention: countdowns consume this frame's TOs; a countdown
        # expiring inside the frame transmits in the corresponding TO
        to_hits = {}
        still = []
        for sid in backoff_ids:
            ss = stations[sid]
            if ss.phase is not backoff:
                continue
            if ss.backoff_start > k:
                still.append(sid)
                continue
            c = ss.backoff_tos
            if c < n_tos:
                lst = to_hits.get(c)
                if lst is None:
                    to_hits[c] = [sid]
                else:
                    lst.append(sid)
            else:
                ss.backoff_tos = c - n_tos
                still.append(sid)
        backoff_ids = still
        for to, sids in to_hits.items():
            success = len(sids) == 1
            if measuring:
                tally.br_tx += len(sids)
                if success:
                    tally.succ_to += 1
                else:
                    tally.br_coll += len(sids)
            for sid in sids:
                ss = stations[sid]
                ss.phase = await_grant
                ss.t16_remaining = m
                ss.br_count += 1
                if checks:
                    assert ss.br_count <= d + 1, "BR transmitted beyond the retry bound"
                await_ids.append(sid)
                if tr is not None:
                    tr(k, sid, "brtx", f"round={ss.round} to={to}")
                    tr(k, sid, "brok" if success else "collide", "")
            if success:
                pool[sids[0]] = k

        # 5. grant-window expiry: the owner retries with a doubled window or
        # drops the head packet after the final round
        still = []
        for sid in await_ids:
            ss = stations[sid]
            if ss.phase is not await_grant:
                continue
            if ss.t16_remaining == 0:
                pool.pop(sid, None)
                if tr is not None:
                    tr(k, sid, "expire", f"round={ss.round}")
                if ss.round == d:
                    ss.head += 1
                    ss.br_count = 0
                    ss.piggy_count = 0
                    tally.dropped_total += 1
                    if measuring:
                        tally.drops += 1
                    if tr is not None:
                        tr(k, sid, "drop", "")
                    if ss.head < ss.tail:
                        ss.head_service_start = k + 1
                        if measuring:
                            tally.wait_sum += k + 1 - ss.arrivals[ss.head]
                            tally.wait_n += 1
                        start_round(sid, ss, 0, k + 1)
                        if tr is not None:
                            tr(k, sid, "cstart", "round=0")
                    else:
                        ss.phase = idle
                        if tr is not None:
                            tr(k, sid, "idle", "")
                else:
                    start_round(sid, ss, ss.round + 1, k + 1)
                    if tr is not None:
                        tr(k, sid, "retry", f"round={ss.round}")
            else:
                ss.t16_remaining -= 1
                still.append(sid)
        await_ids = still

        # 6. arrivals drawn for this frame become visible at the next
        # boundary; a waking idle station schedules its first countdown then
        for sid in range(n):
            c = counts[sid][k]
            if c:
                ss = stations[sid]
                was_empty = ss.head == ss.tail
                ss.tail += c
                tally.arrived_total += c
                if tr is not None:
                    tr(k, sid, "arrive", f"n={c} t={ss.arrivals[ss.tail - c]:.6f}")
                if ss.phase is idle and was_empty:
                    ss.head_service_start = k + 1
                    if measuring:
                        tally.wait_sum += k + 1 - ss.arrivals[ss.head]
                        tally.wait_n += 1
                    start_round(sid, ss, 0, k + 1)
                    if tr is not None:
                        tr(k, sid, "cstart", "round=0")

    tally.queued_final = sum(ss.queue_len() for ss in stations)
    if checks:
        assert tally.arrived_total == (tally.served_total + tally.dropped_total
                                       + tally.queued_final), "packet count identity broken"
    return tally


METRIC_FIELDS = ("th", "th_c", "th_pg", "es", "es_c", "ew", "p", "q",
                 "p_s", "p_d", "e_r", "e_p", "g_bar")


@dataclass(frozen=True)
class Estimate:
    mean: float
    half_width: float


@dataclass(frozen=True)
class SimMetrics:
    """Replication means and confidence half-widths of the measured metrics."""

    th: Estimate
    th_c: Estimate
    th_pg: Estimate
    es: Estimate
    es_c: Estimate
    ew: Estimate
    p: Estimate
    q: Estimate
    p_s: Estimate
    p_d: Estimate
    e_r: Estimate
    e_p: Estimate
    g_bar: Estimate

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            est = getattr(self, f.name)
            out[f.name] = est.mean
            out[f.name + "_hw"] = est.half_width
        out["source"] = "sim"
        return out


def metrics_from_dict(data: dict) -> SimMetrics:
    return SimMetrics(**{name: Estimate(data[name], data[name + "_hw"])
                         for name in METRIC_FIELDS})


def _ratio(a, b):
    return a / b if b else math.nan


def _per_rep_metrics(t: _Tally, config: NetworkConfig) -> dict:
    frames = t.measure_frames
    th_c = t.ctx / frames
    th_pg = t.pgx / frames
    return {
        "th": th_c + th_pg,
        "th_c": th_c,
        "th_pg": th_pg,
        "es": _ratio(t.delay_sum, t.served),
        "es_c": _ratio(t.cdelay_sum, t.ctx),
        "ew": _ratio(t.wait_sum, t.wait_n),
        "p": _ratio(t.br_coll, t.br_tx),
        "q": _ratio(t.grants, t.exposures),
        "p_s": t.succ_to / (frames * config.n_tos),
        "p_d": _ratio(t.drops, t.drops + t.ctx),
        "e_r": t.pool_size_sum / frames,
        "e_p": t.pgx / frames,
        "g_bar": _ratio(t.pgx, t.ctx),
    }


def _aggregate(per_rep: list, config: NetworkConfig) -> SimMetrics:
    rows = [_per_rep_metrics(t, config) for t in per_rep]
    nrep = len(rows)
    t_crit = stats.t.ppf(0.975, nrep - 1) if nrep > 1 else 0.0
    out = {}
    for name in METRIC_FIELDS:
        values = np.array([row[name] for row in rows])
        mean = float(values.mean())
        hw = float(t_crit * values.std(ddof=1) / math.sqrt(nrep)) if nrep > 1 else 0.0
        out[name] = Estimate(mean, hw)
    # the slot-count identity holds per replication; keep it exact in the means
    out["th"] = Estimate(out["th_c"].mean + out["th_pg"].mean, out["th"].half_width)
    return SimMetrics(**out)


def run(config: NetworkConfig, sim: SimConfig, checks: bool = False) -> SimMetrics:
    """Simulate all replications and aggregate the measured metrics."""
    root = np.random.SeedSequence(sim.seed)
    tallies = [_run_replication(config, sim.warmup_frames, sim.measure_frames,
                                seq, checks=checks)
               for seq in root.spawn(sim.replications)]
    return _aggregate(tallies, config)


def run_tallies(config: NetworkConfig, sim: SimConfig, checks: bool = False) -> list:
    """Raw per-replication tallies, for invariant tests and diagnostics."""
    root = np.random.SeedSequence(sim.seed)
    return [_run_replication(config, sim.warmup_frames, sim.measure_frames,
                             seq, checks=checks)
            for seq in root.spawn(sim.replications)]


def trace(config: NetworkConfig, sim: SimConfig, frames: int) -> list:
    """Event log of a single seeded replication, one tab-separated line each."""
    lines = []

    def sink(frame, sid, event, detail):
        lines.append(f"{frame}\t{sid}\t{event}\t{detail}")

    root = np.random.SeedSequence(sim.seed)
    _run_replication(config, 0, frames, root.spawn(1)[0],
                     trace_sink=sink, checks=True)
    return lines
