"""Slot-level Monte Carlo of save-then-transmit periods and the two
benchmark supplies.

The engine runs many battery streams in lockstep, one vectorized draw block
per slot, so a fixed (configuration, seed) pair always reproduces the same
metrics bit for bit.  Replications carry seeds derived from the base seed
and are combined in replication order.

Per-slot draw order is phi, private gain, common gain, harvest -- the
scalar ``run_period`` path consumes the stream identically, so a
single-stream vectorized run matches it draw for draw.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PeriodOverflow
from .models import GainDistribution, SystemModel, SystemState, \
    stationary_distribution
from .power import conventional_power, stop_rate
from .tables import emit_csv

__all__ = [
    "Policy",
    "PeriodOutcome",
    "Metrics",
    "advance_battery",
    "SimCarry",
    "fresh_carry",
    "run_period",
    "run_simulation",
    "run_best_effort",
    "run_conventional",
]

TRACE_SCHEMA = ("period", "saving_slots", "b_stop", "phi", "h", "h_common",
                "rate")


@dataclass(frozen=True)
class Policy:
    """Transmission policy tag plus whatever artifact backs it."""

    kind: str
    table: object = None          # solved value table for kind="dp"
    gamma: float = float("nan")   # threshold for kind="threshold"
    water_level: object = None    # WaterLevel for kind="conventional"
    p_bar: float = float("nan")

    @classmethod
    def dp(cls, table) -> "Policy":
        return cls(kind="dp", table=table)

    @classmethod
    def threshold(cls, gamma) -> "Policy":
        gamma = getattr(gamma, "gamma", gamma)
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        return cls(kind="threshold", gamma=float(gamma))

    @classmethod
    def best_effort(cls) -> "Policy":
        return cls(kind="best_effort")

    @classmethod
    def conventional(cls, water_level, p_bar) -> "Policy":
        return cls(kind="conventional", water_level=water_level,
                   p_bar=float(p_bar))


@dataclass(frozen=True)
class PeriodOutcome:
    """One completed save-then-transmit period."""

    saving_slots: int
    stop_state: SystemState
    rate_at_stop: float
    energy_spent: float
    harvested: float = 0.0
    clipped: float = 0.0

    def __post_init__(self):
        if self.saving_slots < 1:
            raise ValueError("saving_slots must be >= 1")


@dataclass(frozen=True)
class Metrics:
    """Renewal-reward statistics of a simulation run."""

    throughput: float
    mean_saving_time: float
    se_throughput: float
    se_saving_time: float
    periods: int
    cap_hit_fraction: float
    realized_avg_power: float | None = None

    def __post_init__(self):
        if self.throughput < 0 or self.periods <= 0:
            raise ValueError("throughput must be >= 0 and periods > 0")
        if self.se_throughput < 0 or self.se_saving_time < 0:
            raise ValueError("standard errors must be >= 0")


def advance_battery(b: float, e: float, b_max_units: int,
                    delta: float) -> float:
    """Next battery level min(b + e, cap)."""
    if b < 0 or e < 0:
        raise ValueError("energies must be >= 0")
    return min(b + e, b_max_units * delta)


# ---------------------------------------------------------------------------
# sampling helpers shared by the scalar and vectorized paths


def _cum_rows(P: np.ndarray) -> np.ndarray:
    return np.cumsum(P, axis=1)


def _step_chain(cum: np.ndarray, idx, rng, size=None):
    """Advance chain indices by inverse-CDF sampling, one uniform per draw."""
    if size is None:
        return int(np.searchsorted(cum[idx], rng.random(), side="right"))
    u = rng.random(size)
    return (u[:, None] >= cum[idx]).sum(axis=1)


class _GainSampler:
    """Per-slot i.i.d. gain draws; returns values and grid indices."""

    def __init__(self, dist: GainDistribution, grid: np.ndarray | None = None):
        self.dist = dist
        self.grid = grid
        if dist.kind == "discrete":
            self.values = np.asarray(dist.values)
            self.cum = np.cumsum(dist.probabilities)
        if grid is not None and len(grid) > 1:
            g = np.sort(np.asarray(grid, dtype=float))
            self.mids = 0.5 * (g[1:] + g[:-1])
        else:
            self.mids = None

    def draw(self, rng, size=None):
        kind = self.dist.kind
        if kind == "constant":
            v = self.dist.value
            vals = v if size is None else np.full(size, v)
            idx = 0 if size is None else np.zeros(size, dtype=np.int64)
            return vals, idx
        if kind == "exponential":
            vals = rng.exponential(self.dist.mean, size=size)
            if self.mids is None:
                idx = 0 if size is None else np.zeros(size, dtype=np.int64)
            else:
                idx = np.searchsorted(self.mids, vals)
                if size is None:
                    idx = int(idx)
            return vals, idx
        # discrete
        if size is None:
            idx = int(np.searchsorted(self.cum, rng.random(), side="right"))
            return float(self.values[idx]), idx
        u = rng.random(size)
        idx = (u[:, None] >= self.cum[None, :]).sum(axis=1)
        return self.values[idx], idx


class _PrivateSampler:
    """Private gain: Markov chain steps or fresh i.i.d. draws."""

    def __init__(self, model: SystemModel, grid: np.ndarray | None = None):
        self.is_markov = model.private.kind == "markov"
        if self.is_markov:
            self.values = np.asarray(model.private.chain.states)
            self.cum = _cum_rows(model.private.chain.transition)
            self.pi = stationary_distribution(model.private.chain)
        else:
            self.iid = _GainSampler(model.private, grid)

    def init(self, rng, size=None):
        if self.is_markov:
            cum0 = np.cumsum(self.pi)[None, :]
            if size is None:
                return int(np.searchsorted(cum0[0], rng.random(),
                                           side="right"))
            u = rng.random(size)
            return (u[:, None] >= cum0).sum(axis=1)
        return None

    def step(self, idx, rng, size=None):
        """Returns (values, indices); consumes one uniform block."""
        if self.is_markov:
            nxt = _step_chain(self.cum, idx, rng, size)
            return self.values[nxt], nxt
        return self.iid.draw(rng, size)


# ---------------------------------------------------------------------------
# scalar single-period path


@dataclass
class SimCarry:
    """State surviving a transmission slot into the next period."""

    b: float
    e_idx: int
    h_idx: int | None


def fresh_carry(model: SystemModel, rng) -> SimCarry:
    """Initial carry: harvest chain at stationarity, one harvest draw as
    the first battery, gain chain at stationarity."""
    private = _PrivateSampler(model)
    eh_cum = _cum_rows(model.eh.transition)
    eh_pi = np.cumsum(stationary_distribution(model.eh))
    e_idx = int(np.searchsorted(eh_pi, rng.random(), side="right"))
    e_idx = _step_chain(eh_cum, e_idx, rng)
    b = min(model.eh.states[e_idx], model.b_cap)
    h_idx = private.init(rng)
    return SimCarry(b=b, e_idx=e_idx, h_idx=h_idx)


def _decide_stop(policy: Policy, model: SystemModel, state: SystemState,
                 rate: float) -> bool:
    if policy.kind == "threshold":
        return rate >= policy.gamma
    if policy.kind == "dp":
        t = policy.table
        idx = t.state_indices(state)
        return bool(t.rates[idx] >= t.continuation[idx])
    raise ValueError(f"policy kind {policy.kind!r} has no stopping rule")


def run_period(policy: Policy, model: SystemModel, rng,
               carry: SimCarry | None = None,
               slot_cap: int = 1_000_000) -> PeriodOutcome:
    """Simulate one save-then-transmit period.

    ``carry`` holds the battery seed, harvest-chain state, and gain-chain
    state left by the previous period; it is updated in place so repeated
    calls chain periods together.  A fresh carry is drawn when omitted.
    """
    private = _PrivateSampler(model)
    common = _GainSampler(model.common)
    eh_cum = _cum_rows(model.eh.transition)
    if carry is None:
        carry = fresh_carry(model, rng)
    b = carry.b
    e_idx = carry.e_idx
    h_idx = carry.h_idx
    harvested = 0.0
    clipped = 0.0
    cap = model.b_cap
    t = 0
    while True:
        t += 1
        if t > slot_cap:
            raise PeriodOverflow(f"period exceeded {slot_cap} slots")
        phi = int(rng.random() < model.access.p_s)
        h, h_idx = private.step(h_idx, rng)
        hc, _ = common.draw(rng)
        state = SystemState(phi=phi, b=b, e_prev=model.eh.states[e_idx],
                            h=float(h), h_common=float(hc))
        rate = float(stop_rate(b, h, hc, phi, model.log_base))
        stop = _decide_stop(policy, model, state, rate)
        e_idx = _step_chain(eh_cum, e_idx, rng)
        e_val = model.eh.states[e_idx]
        if stop:
            # the stop slot's harvest seeds the next period's battery
            carry.b = min(e_val, cap)
            carry.e_idx = e_idx
            carry.h_idx = h_idx
            return PeriodOutcome(
                saving_slots=t, stop_state=state, rate_at_stop=rate,
                energy_spent=b, harvested=harvested, clipped=clipped)
        harvested += e_val
        clipped += max(b + e_val - cap, 0.0)
        b = advance_battery(b, e_val, model.b_max_units, model.delta)


# ---------------------------------------------------------------------------
# vectorized engine


def _dp_lookup(policy: Policy):
    t = policy.table
    stop_tab = np.asarray(t.rates >= t.continuation)
    return stop_tab


def _run_block(policy: Policy, model: SystemModel, warm_per_stream: int,
               keep_per_stream: int, rng, streams: int, slot_cap: int):
    """Collect a fixed number of periods from every lockstep stream.

    Each stream contributes exactly its periods number ``warm_per_stream``
    through ``warm_per_stream + keep_per_stream - 1``; selecting periods by
    index keeps the sample free of length bias (cutting a run mid-flight
    would over-represent short periods).  Records are ordered by (stream,
    period index).
    """
    private_grid = None
    hc_grid = None
    if policy.kind == "dp":
        stop_tab = _dp_lookup(policy)
        private_grid = policy.table.h_values
        hc_grid = policy.table.hc_values
    private = _PrivateSampler(model, private_grid)
    common = _GainSampler(model.common, hc_grid)
    eh_cum = _cum_rows(model.eh.transition)
    eh_vals = np.asarray(model.eh.states)
    cap = model.b_cap
    base = model.log_base

    # initial carry: harvest-chain state from its stationary law, one
    # harvest draw as the first battery, gain chain from its stationary law
    eh_pi = np.cumsum(stationary_distribution(model.eh))[None, :]
    u = rng.random(streams)
    e_idx = (u[:, None] >= eh_pi).sum(axis=1)
    e_idx = _step_chain(eh_cum, e_idx, rng, streams)
    b = np.minimum(eh_vals[e_idx], cap)
    h_idx = private.init(rng, streams)
    if h_idx is None:
        h_idx = np.zeros(streams, dtype=np.int64)

    T_cur = np.zeros(streams, dtype=np.int64)
    rec: dict[str, list] = {k: [] for k in
                            ("T", "rate", "b", "phi", "h", "hc",
                             "harvested", "clipped")}
    rec_stream: list = []
    harv_acc = np.zeros(streams)
    clip_acc = np.zeros(streams)
    done = np.zeros(streams, dtype=np.int64)  # periods completed per stream
    target = warm_per_stream + keep_per_stream
    clip_events = 0
    slot_draws = 0
    stream_ids = np.arange(streams)

    while done.min() < target:
        T_cur += 1
        if T_cur.max() > slot_cap:
            raise PeriodOverflow(f"period exceeded {slot_cap} slots")
        phi = (rng.random(streams) < model.access.p_s).astype(np.int8)
        h, h_idx = private.step(h_idx, rng, streams)
        hc, hc_idx = common.draw(rng, streams)
        rate = stop_rate(b, h, hc, phi, base)
        if policy.kind == "threshold":
            stop = rate >= policy.gamma
        else:
            b_units = np.round(b / policy.table.delta).astype(np.int64)
            stop = stop_tab[phi, b_units, e_idx, h_idx, hc_idx]
        e_idx = _step_chain(eh_cum, e_idx, rng, streams)
        e_val = eh_vals[e_idx]

        if stop.any():
            rec_stream.append(stream_ids[stop])
            rec["T"].append(T_cur[stop].copy())
            rec["rate"].append(rate[stop])
            rec["b"].append(b[stop].copy())
            rec["phi"].append(phi[stop])
            rec["h"].append(np.broadcast_to(h, (streams,))[stop])
            rec["hc"].append(np.broadcast_to(hc, (streams,))[stop])
            rec["harvested"].append(harv_acc[stop].copy())
            rec["clipped"].append(clip_acc[stop].copy())
            done[stop] += 1

        b_next_cont = b + e_val
        b_next_stop = e_val
        over_cont = np.maximum(b_next_cont - cap, 0.0)
        over_stop = np.maximum(b_next_stop - cap, 0.0)
        over = np.where(stop, over_stop, over_cont)
        clip_events += int((over > 0).sum())
        slot_draws += streams
        clip_acc = np.where(stop, 0.0, clip_acc + over_cont)
        harv_acc = np.where(stop, 0.0, harv_acc + e_val)
        b = np.minimum(np.where(stop, b_next_stop, b_next_cont), cap)
        T_cur = np.where(stop, 0, T_cur)

    # reorder chronological records to (stream, period index) and keep each
    # stream's periods [warm, warm + keep)
    sid = np.concatenate(rec_stream)
    order = np.lexsort((np.arange(len(sid)), sid))
    rank = np.arange(len(sid)) - np.repeat(
        np.searchsorted(sid[order], np.arange(streams)),
        np.bincount(sid, minlength=streams))
    keep_mask = (rank >= warm_per_stream) & (rank < target)
    sel = order[keep_mask]
    out = {k: np.concatenate(v)[sel] for k, v in rec.items()}
    return out, clip_events, slot_draws


def _batch_ratio_se(num: np.ndarray, den: np.ndarray, n_batches: int):
    """Batch-means standard error of sum(num)/sum(den)."""
    n = len(num)
    if n < n_batches * 2:
        return 0.0
    edges = np.linspace(0, n, n_batches + 1, dtype=int)
    ratios = np.array([
        num[a:b].sum() / max(den[a:b].sum(), 1e-300)
        for a, b in zip(edges[:-1], edges[1:])
    ])
    return float(ratios.std(ddof=1) / np.sqrt(n_batches))


def run_simulation(policy: Policy, model: SystemModel, n_periods: int,
                   seed: int, *, warmup_periods: int = 1000,
                   replications: int = 16, streams: int = 512,
                   slot_cap: int = 1_000_000, n_batches: int = 20,
                   trace_path=None) -> Metrics:
    """Renewal metrics of a stopping policy over ``n_periods`` periods.

    Deterministic for fixed arguments: replication seeds derive from
    ``seed`` and partial results combine in replication order.
    """
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    if policy.kind not in ("dp", "threshold"):
        raise ValueError("run_simulation needs a dp or threshold policy")
    reps = max(1, replications)
    quota = -(-n_periods // reps)
    keep_per_stream = -(-quota // streams)
    warm_per_stream = 1 if warmup_periods else 0
    if warmup_periods:
        warm_per_stream = max(1, -(-warmup_periods // (reps * streams)))
    seeds = np.random.SeedSequence(seed).spawn(reps)
    chunks = []
    clip_events = 0
    slot_draws = 0
    for rep_seed in seeds:
        rng = np.random.Generator(np.random.PCG64(rep_seed))
        out, clips, draws = _run_block(policy, model, warm_per_stream,
                                       keep_per_stream, rng, streams,
                                       slot_cap)
        chunks.append(out)
        clip_events += clips
        slot_draws += draws
    # trimming the tail drops whole per-stream index blocks, never a
    # completion-ordered subset, so it cannot skew the length distribution
    data = {k: np.concatenate([c[k] for c in chunks])[:n_periods]
            for k in chunks[0]}

    T = data["T"].astype(float)
    R = data["rate"]
    thr = R.sum() / T.sum()
    metrics = Metrics(
        throughput=float(thr),
        mean_saving_time=float(T.mean()),
        se_throughput=_batch_ratio_se(R, T, n_batches),
        se_saving_time=_batch_ratio_se(T, np.ones_like(T), n_batches),
        periods=len(T),
        cap_hit_fraction=clip_events / max(slot_draws, 1),
    )
    if trace_path is not None:
        rows = zip(range(len(T)), data["T"], data["b"], data["phi"],
                   data["h"], data["hc"], data["rate"])
        emit_csv(([int(p), int(t), float(bb), int(ph), float(hh), float(cc),
                   float(rr)] for p, t, bb, ph, hh, cc, rr in rows),
                 TRACE_SCHEMA, trace_path)
    return metrics


def _slot_mean_se(per_slot: np.ndarray, n_batches: int):
    n = len(per_slot)
    if n < n_batches * 2:
        return 0.0
    edges = np.linspace(0, n, n_batches + 1, dtype=int)
    means = np.array([per_slot[a:b].mean() for a, b in zip(edges[:-1],
                                                           edges[1:])])
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def run_best_effort(model: SystemModel, n_slots: int, seed: int, *,
                    warmup_slots: int = 10_000, replications: int = 16,
                    streams: int = 512, n_batches: int = 20) -> Metrics:
    """Per-slot transmission using only the previous slot's harvest.

    No battery: each slot's budget is the harvest of the slot before it
    (the very first budget is one fresh harvest draw).
    """
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    reps = max(1, replications)
    warm_slots = -(-warmup_slots // max(streams, 1))
    slots_per_rep = -(-n_slots // (reps * streams)) + warm_slots
    seeds = np.random.SeedSequence(seed).spawn(reps)
    private = _PrivateSampler(model)
    common = _GainSampler(model.common)
    eh_cum = _cum_rows(model.eh.transition)
    eh_vals = np.asarray(model.eh.states)
    eh_pi = np.cumsum(stationary_distribution(model.eh))[None, :]

    slot_means = []
    for rep_seed in seeds:
        rng = np.random.Generator(np.random.PCG64(rep_seed))
        u = rng.random(streams)
        e_idx = (u[:, None] >= eh_pi).sum(axis=1)
        e_idx = _step_chain(eh_cum, e_idx, rng, streams)
        budget = eh_vals[e_idx].astype(float)
        h_idx = private.init(rng, streams)
        means = np.empty(slots_per_rep)
        for s in range(slots_per_rep):
            phi = (rng.random(streams) < model.access.p_s).astype(np.int8)
            h, h_idx = private.step(h_idx, rng, streams)
            hc, _ = common.draw(rng, streams)
            rate = stop_rate(budget, h, hc, phi, model.log_base)
            means[s] = np.asarray(rate).mean()
            e_idx = _step_chain(eh_cum, e_idx, rng, streams)
            budget = eh_vals[e_idx].astype(float)
        slot_means.append(means[warm_slots:])
    per_slot = np.concatenate(slot_means)
    n_used = len(per_slot) * streams
    return Metrics(
        throughput=float(per_slot.mean()),
        mean_saving_time=1.0,
        se_throughput=_slot_mean_se(per_slot, n_batches),
        se_saving_time=0.0,
        periods=n_used,
        cap_hit_fraction=0.0,
    )


def run_conventional(model: SystemModel, p_bar: float, n_slots: int,
                     seed: int, *, water_level=None,
                     warmup_slots: int = 0, replications: int = 16,
                     streams: int = 512, n_batches: int = 20) -> Metrics:
    """Water-filling transmission under an average power constraint."""
    from .power import solve_water_level

    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    if p_bar <= 0:
        raise ValueError("p_bar must be > 0")
    level = water_level or solve_water_level(model.private, model.common,
                                             model.access, p_bar)
    reps = max(1, replications)
    warm_slots = -(-warmup_slots // max(streams, 1))
    slots_per_rep = -(-n_slots // (reps * streams)) + warm_slots
    seeds = np.random.SeedSequence(seed).spawn(reps)
    private = _PrivateSampler(model)
    common = _GainSampler(model.common)
    base = model.log_base

    slot_means = []
    power_means = []
    for rep_seed in seeds:
        rng = np.random.Generator(np.random.PCG64(rep_seed))
        h_idx = private.init(rng, streams)
        means = np.empty(slots_per_rep)
        powers = np.empty(slots_per_rep)
        for s in range(slots_per_rep):
            phi = (rng.random(streams) < model.access.p_s).astype(np.int8)
            h, h_idx = private.step(h_idx, rng, streams)
            hc, _ = common.draw(rng, streams)
            p = conventional_power(h, level)
            pc = np.where(phi == 1, conventional_power(hc, level), 0.0)
            logf = np.log2 if base == 2.0 else np.log
            rate = logf(1.0 + h * p) + np.where(
                phi == 1, logf(1.0 + hc * pc), 0.0)
            means[s] = rate.mean()
            powers[s] = (p + pc).mean()
        slot_means.append(means[warm_slots:])
        power_means.append(powers[warm_slots:])
    per_slot = np.concatenate(slot_means)
    per_power = np.concatenate(power_means)
    return Metrics(
        throughput=float(per_slot.mean()),
        mean_saving_time=1.0,
        se_throughput=_slot_mean_se(per_slot, n_batches),
        se_saving_time=0.0,
        periods=len(per_slot) * streams,
        cap_hit_fraction=0.0,
        realized_avg_power=float(per_power.mean()),
    )
