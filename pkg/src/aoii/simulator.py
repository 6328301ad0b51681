"""Slot-level Monte Carlo of the full network.

Per slot and device: the process moves, the device decides to transmit with
the probability for its realized transition and current battery (spending all
energy), then harvests.  The gateway decodes a packet only when it is the
single transmission of the slot and the single-user decoder succeeds, which
updates that device's estimate.  Metrics are accumulated after the update, so
a slot in which an error is corrected contributes zero AoII.

Random numbers come in chunks from a seeded :class:`numpy.random.Generator`
and the slot loop runs under numba.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numba
import numpy as np
from scipy.stats import norm

from .channel import DEFAULT_MODEL, DecodingModel, epsilon_vector
from .model import AOII, PenaltySpec, Scenario, Strategy, check

DEFAULT_WARMUP = 10_000
_CHUNK_ELEMENTS = 1 << 20
_MAX_CHUNK_SLOTS = 1 << 15
TRACE_COLUMNS = ("slot", "device", "x", "x_hat", "b", "transmitted", "decoded", "aoii")
MAX_TRACE_ROWS = 2_000_000


@dataclass(frozen=True)
class SimConfig:
    num_slots: int
    warmup_slots: int = DEFAULT_WARMUP
    seed: int = 0
    tracked_devices: tuple[int, ...] | None = None
    trace: bool = False

    def __post_init__(self):
        if self.num_slots < 1:
            raise ValueError("num_slots must be positive")
        if not 0 <= self.warmup_slots < self.num_slots:
            raise ValueError("need 0 <= warmup_slots < num_slots")


@numba.njit(cache=True, nogil=True)
def _simulate_chunk(
    x, xh, b, lam, wrong_len, correct_len, w_valid, y_valid, w_state, w_pen,
    crit_active, crit_noticed,
    u_proc, u_tx, u_harv, u_dec,
    flip, pi, gamma, eps, alpha, E, tracked, slot0, warmup,
    acc_f, acc_i, dev_aoii, dev_pen, occupancy, entry_we, entry_ce,
    trace, trace_on,
):
    """Advance every device through ``u_proc.shape[0]`` slots in place.

    acc_f: [aoii_sum, penalty_sum, w_sum0, w_sum1, w2_sum0, w2_sum1, y_sum, y2_sum,
            pen_period_sum0, pen_period_sum1, w3_sum0, w3_sum1]
    acc_i: [slots_accumulated, w_count0, w_count1, y_count, crit_total, crit_missed,
            transmissions, collisions, decoded, trace_rows]
    """
    n_slots, U = u_proc.shape
    prev_b = np.empty(U, dtype=np.int64)
    sent = np.zeros(U, dtype=np.bool_)
    x_prev = np.empty(U, dtype=np.int64)
    for s in range(n_slots):
        slot = slot0 + s
        on = slot >= warmup
        n_tx = 0
        who = -1
        for u in range(U):
            xp = x[u]
            x_prev[u] = xp
            xn = xp
            if u_proc[s, u] < flip[xp]:
                xn = 1 - xp
            x[u] = xn
            bp = b[u]
            prev_b[u] = bp
            tx = u_tx[s, u] < pi[2 * xp + xn, bp]
            sent[u] = tx
            g = gamma[xn]
            if tx:
                n_tx += 1
                who = u
                b[u] = 1 if u_harv[s, u] < g else 0
            elif bp < E and u_harv[s, u] < g:
                b[u] = bp + 1
        decoded = -1
        if n_tx == 1 and u_dec[s] >= eps[prev_b[who]]:
            decoded = who
            xh[who] = x[who]
        if on:
            acc_i[0] += 1
            acc_i[6] += n_tx
            if n_tx > 1:
                acc_i[7] += 1
            if decoded >= 0:
                acc_i[8] += 1
        for u in range(U):
            xu = x[u]
            wrong = xu != xh[u]
            was_wrong = lam[u] > 0
            if wrong:
                lam[u] += 1
            else:
                lam[u] = 0
            if trace_on and on and acc_i[9] < trace.shape[0]:
                r = acc_i[9]
                trace[r, 0] = slot
                trace[r, 1] = u
                trace[r, 2] = xu
                trace[r, 3] = xh[u]
                trace[r, 4] = b[u]
                trace[r, 5] = 1 if sent[u] else 0
                trace[r, 6] = 1 if decoded == u else 0
                trace[r, 7] = lam[u]
                acc_i[9] += 1
            if not tracked[u]:
                continue
            # Period bookkeeping; only periods that start after warmup are recorded.
            if wrong and not was_wrong:
                if y_valid[u] and on:
                    yl = float(correct_len[u])
                    acc_f[6] += yl
                    acc_f[7] += yl * yl
                    acc_i[3] += 1
                w_valid[u] = on
                w_state[u] = xu
                w_pen[u] = 0.0
                wrong_len[u] = 0
                if on:
                    entry_we[(2 * xu + xh[u]) * (E + 1) + b[u]] += 1
            elif was_wrong and not wrong:
                if w_valid[u] and on:
                    wl = float(wrong_len[u])
                    st = w_state[u]
                    acc_f[2 + st] += wl
                    acc_f[4 + st] += wl * wl
                    acc_f[10 + st] += wl * wl * wl
                    acc_f[8 + st] += w_pen[u]
                    acc_i[1 + st] += 1
                y_valid[u] = on
                correct_len[u] = 0
                if on:
                    entry_ce[(2 * xu + xh[u]) * (E + 1) + b[u]] += 1
            if wrong:
                wrong_len[u] += 1
                pen = float(lam[u]) ** alpha[xu]
                w_pen[u] += pen
            else:
                correct_len[u] += 1
                pen = 0.0
            # Critical periods entered from a correctly estimated state 0.
            xp = x_prev[u]
            if xp == 0 and xu == 1:
                crit_active[u] = on and not was_wrong
                crit_noticed[u] = xh[u] == 1
            elif xp == 1 and xu == 1:
                if xh[u] == 1:
                    crit_noticed[u] = True
            elif xp == 1 and xu == 0:
                if crit_active[u] and on:
                    acc_i[4] += 1
                    if not crit_noticed[u]:
                        acc_i[5] += 1
                crit_active[u] = False
            if on:
                acc_f[0] += lam[u]
                acc_f[1] += pen
                dev_aoii[u] += lam[u]
                dev_pen[u] += pen
                occupancy[(2 * xu + xh[u]) * (E + 1) + b[u]] += 1


@dataclass
class SimStats:
    """Pooled sufficient statistics of one or more replications."""

    num_devices: int
    battery_capacity: int
    slots: int
    device_slots: int
    seeds: list[int]
    penalty: PenaltySpec
    aoii_sum: float
    penalty_sum: float
    wed_count: np.ndarray
    wed_sum: np.ndarray
    wed_sq_sum: np.ndarray
    wed_cube_sum: np.ndarray
    wed_penalty_sum: np.ndarray
    ced_count: int
    ced_sum: float
    ced_sq_sum: float
    critical_periods: int
    critical_missed: int
    transmissions: int
    collision_slots: int
    decoded: int
    occupancy: np.ndarray
    entry_we: np.ndarray
    entry_ce: np.ndarray
    device_aoii: np.ndarray
    device_penalty: np.ndarray
    device_slots_each: int
    batch_aoii: list[float] = field(default_factory=list)
    batch_penalty: list[float] = field(default_factory=list)
    batch_device_slots: list[int] = field(default_factory=list)

    @property
    def average_aoii(self) -> float:
        return self.aoii_sum / self.device_slots

    @property
    def average_penalty(self) -> float:
        return self.penalty_sum / self.device_slots

    def _se(self, dev: np.ndarray, batches: list[float]) -> float:
        # Per-device means are close to independent when many devices are tracked;
        # with few devices fall back to batch means over time.
        if dev.size >= 20 and self.device_slots_each > 0:
            means = dev / self.device_slots_each
            return float(means.std(ddof=1) / math.sqrt(means.size))
        w = np.asarray(self.batch_device_slots, dtype=float)
        if w.size < 2:
            return math.nan
        m = np.asarray(batches) / w
        return float(m.std(ddof=1) / math.sqrt(m.size))

    @property
    def aoii_se(self) -> float:
        return self._se(self.device_aoii, self.batch_aoii)

    @property
    def penalty_se(self) -> float:
        return self._se(self.device_penalty, self.batch_penalty)

    @property
    def wed_samples(self) -> int:
        return int(self.wed_count.sum())

    @property
    def mean_wed(self) -> float:
        return float(self.wed_sum.sum() / self.wed_count.sum())

    @property
    def mean_wed_se(self) -> float:
        n = self.wed_count.sum()
        var = self.wed_sq_sum.sum() / n - self.mean_wed**2
        return float(math.sqrt(max(var, 0.0) / n))

    @property
    def second_moment_wed(self) -> float:
        return float(self.wed_sq_sum.sum() / self.wed_count.sum())

    @property
    def mean_ced(self) -> float:
        return self.ced_sum / self.ced_count

    @property
    def mean_ced_se(self) -> float:
        var = self.ced_sq_sum / self.ced_count - self.mean_ced**2
        return math.sqrt(max(var, 0.0) / self.ced_count)

    @property
    def prob_wrong_state(self) -> np.ndarray:
        return self.wed_count / self.wed_count.sum()

    def occupancy_distribution(self) -> np.ndarray:
        """Empirical law of ``(x, x_hat, b)`` reshaped to ``[x, x_hat, b]``."""
        return (self.occupancy / self.occupancy.sum()).reshape(2, 2, self.battery_capacity + 1)

    def to_dict(self) -> dict[str, Any]:
        mep = empirical_mep(self) if self.critical_periods else None
        return {
            "num_devices": self.num_devices,
            "battery_capacity": self.battery_capacity,
            "slots": self.slots,
            "device_slots": self.device_slots,
            "seeds": list(self.seeds),
            "alpha0": self.penalty.alpha0,
            "alpha1": self.penalty.alpha1,
            "average_aoii": self.average_aoii,
            "average_aoii_se": self.aoii_se,
            "average_penalty": self.average_penalty,
            "average_penalty_se": self.penalty_se,
            "mean_wed": self.mean_wed if self.wed_samples else None,
            "mean_ced": self.mean_ced if self.ced_count else None,
            "wed_count": self.wed_count.tolist(),
            "wed_sum": self.wed_sum.tolist(),
            "wed_sq_sum": self.wed_sq_sum.tolist(),
            "wed_cube_sum": self.wed_cube_sum.tolist(),
            "wed_penalty_sum": self.wed_penalty_sum.tolist(),
            "ced_count": self.ced_count,
            "ced_sum": self.ced_sum,
            "ced_sq_sum": self.ced_sq_sum,
            "critical_periods": self.critical_periods,
            "critical_missed": self.critical_missed,
            "mep": mep[0] if mep else None,
            "mep_ci": list(mep[1:]) if mep else None,
            "transmissions": self.transmissions,
            "collision_slots": self.collision_slots,
            "decoded": self.decoded,
            "occupancy": self.occupancy.tolist(),
            "entry_we": self.entry_we.tolist(),
            "entry_ce": self.entry_ce.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def merge(stats: Sequence[SimStats]) -> SimStats:
    """Pool replications by summing their sufficient statistics."""
    if not stats:
        raise ValueError("nothing to merge")
    first = stats[0]
    for s in stats[1:]:
        if (s.num_devices, s.battery_capacity, s.penalty) != (first.num_devices, first.battery_capacity, first.penalty):
            raise ValueError("cannot merge replications of different configurations")

    def total(name):
        return sum(getattr(s, name) for s in stats)

    def concat(name):
        return [v for s in stats for v in getattr(s, name)]

    return SimStats(
        num_devices=first.num_devices,
        battery_capacity=first.battery_capacity,
        slots=total("slots"),
        device_slots=total("device_slots"),
        seeds=concat("seeds"),
        penalty=first.penalty,
        aoii_sum=total("aoii_sum"),
        penalty_sum=total("penalty_sum"),
        wed_count=total("wed_count"),
        wed_sum=total("wed_sum"),
        wed_sq_sum=total("wed_sq_sum"),
        wed_cube_sum=total("wed_cube_sum"),
        wed_penalty_sum=total("wed_penalty_sum"),
        ced_count=total("ced_count"),
        ced_sum=total("ced_sum"),
        ced_sq_sum=total("ced_sq_sum"),
        critical_periods=total("critical_periods"),
        critical_missed=total("critical_missed"),
        transmissions=total("transmissions"),
        collision_slots=total("collision_slots"),
        decoded=total("decoded"),
        occupancy=total("occupancy"),
        entry_we=total("entry_we"),
        entry_ce=total("entry_ce"),
        # Device sums from different replications are independent samples.
        device_aoii=np.concatenate([s.device_aoii for s in stats]),
        device_penalty=np.concatenate([s.device_penalty for s in stats]),
        device_slots_each=first.device_slots_each if len({s.device_slots_each for s in stats}) == 1 else -1,
        batch_aoii=concat("batch_aoii"),
        batch_penalty=concat("batch_penalty"),
        batch_device_slots=concat("batch_device_slots"),
    )


def run(
    scenario: Scenario,
    strategy: Strategy,
    config: SimConfig,
    model: DecodingModel = DEFAULT_MODEL,
    penalty: PenaltySpec = AOII,
    trace_path: str | Path | None = None,
) -> SimStats:
    """Simulate ``config.num_slots`` slots; statistics cover the slots after warmup."""
    check(scenario, strategy)
    U, E = scenario.num_devices, scenario.battery_capacity
    rng = np.random.default_rng(config.seed)

    tracked = np.zeros(U, dtype=np.bool_)
    if config.tracked_devices is None:
        tracked[:] = True
    else:
        tracked[list(config.tracked_devices)] = True

    x = (rng.random(U) < scenario.process_stationary[1]).astype(np.int64)
    xh = x.copy()
    b = np.full(U, E, dtype=np.int64)
    lam = np.zeros(U, dtype=np.int64)
    wrong_len = np.zeros(U, dtype=np.int64)
    correct_len = np.zeros(U, dtype=np.int64)
    w_valid = np.zeros(U, dtype=np.bool_)
    y_valid = np.zeros(U, dtype=np.bool_)
    w_state = np.zeros(U, dtype=np.int64)
    w_pen = np.zeros(U)
    crit_active = np.zeros(U, dtype=np.bool_)
    crit_noticed = np.zeros(U, dtype=np.bool_)

    flip = np.array([scenario.q01, scenario.q10])
    gamma = np.array([scenario.gamma0, scenario.gamma1])
    eps = epsilon_vector(scenario, model)
    alpha = np.array([penalty.alpha0, penalty.alpha1], dtype=np.float64)
    pi = np.ascontiguousarray(strategy.pi)

    acc_f = np.zeros(12)
    acc_i = np.zeros(10, dtype=np.int64)
    dev_aoii = np.zeros(U)
    dev_pen = np.zeros(U)
    occupancy = np.zeros(4 * (E + 1), dtype=np.int64)
    entry_we = np.zeros(4 * (E + 1), dtype=np.int64)
    entry_ce = np.zeros(4 * (E + 1), dtype=np.int64)

    trace_on = config.trace or trace_path is not None
    if trace_on:
        rows = (config.num_slots - config.warmup_slots) * U
        if rows > MAX_TRACE_ROWS:
            raise ValueError(f"trace limited to {MAX_TRACE_ROWS} rows (requested {rows})")
        trace = np.zeros((rows, len(TRACE_COLUMNS)), dtype=np.int64)
    else:
        trace = np.zeros((0, len(TRACE_COLUMNS)), dtype=np.int64)

    chunk = max(1, min(_MAX_CHUNK_SLOTS, _CHUNK_ELEMENTS // U))
    batch_aoii, batch_pen, batch_slots = [], [], []
    slot = 0
    while slot < config.num_slots:
        n = min(chunk, config.num_slots - slot)
        u_proc = rng.random((n, U))
        u_tx = rng.random((n, U))
        u_harv = rng.random((n, U))
        u_dec = rng.random(n)
        before_a, before_p, before_s = acc_f[0], acc_f[1], acc_i[0]
        _simulate_chunk(
            x, xh, b, lam, wrong_len, correct_len, w_valid, y_valid, w_state, w_pen,
            crit_active, crit_noticed,
            u_proc, u_tx, u_harv, u_dec,
            flip, pi, gamma, eps, alpha, E, tracked, slot, config.warmup_slots,
            acc_f, acc_i, dev_aoii, dev_pen, occupancy, entry_we, entry_ce,
            trace, trace_on,
        )
        if acc_i[0] > before_s:
            batch_aoii.append(float(acc_f[0] - before_a))
            batch_pen.append(float(acc_f[1] - before_p))
            batch_slots.append(int(acc_i[0] - before_s) * int(tracked.sum()))
        slot += n

    if trace_path is not None:
        write_trace(trace[: acc_i[9]], trace_path)

    n_tracked = int(tracked.sum())
    slots = int(acc_i[0])
    return SimStats(
        num_devices=U,
        battery_capacity=E,
        slots=slots,
        device_slots=slots * n_tracked,
        seeds=[int(config.seed)],
        penalty=penalty,
        aoii_sum=float(acc_f[0]),
        penalty_sum=float(acc_f[1]),
        wed_count=acc_i[1:3].copy(),
        wed_sum=acc_f[2:4].copy(),
        wed_sq_sum=acc_f[4:6].copy(),
        wed_cube_sum=acc_f[10:12].copy(),
        wed_penalty_sum=acc_f[8:10].copy(),
        ced_count=int(acc_i[3]),
        ced_sum=float(acc_f[6]),
        ced_sq_sum=float(acc_f[7]),
        critical_periods=int(acc_i[4]),
        critical_missed=int(acc_i[5]),
        transmissions=int(acc_i[6]),
        collision_slots=int(acc_i[7]),
        decoded=int(acc_i[8]),
        occupancy=occupancy,
        entry_we=entry_we,
        entry_ce=entry_ce,
        device_aoii=dev_aoii[tracked],
        device_penalty=dev_pen[tracked],
        device_slots_each=slots,
        batch_aoii=batch_aoii,
        batch_penalty=batch_pen,
        batch_device_slots=batch_slots,
    )


def write_trace(rows: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        w.writerows(rows.tolist())


def empirical_mep(stats: SimStats, confidence: float = 0.95) -> tuple[float, float, float]:
    """Missed / observed critical periods with a Wilson score interval ``(p, low, high)``."""
    n = stats.critical_periods
    if n == 0:
        raise ValueError("no critical period observed")
    k = stats.critical_missed
    p = k / n
    z = float(norm.ppf(0.5 + confidence / 2))
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return p, max(0.0, centre - half), min(1.0, centre + half)


def derive_seeds(master_seed: int, reps: int) -> list[int]:
    """Per-replication seeds from a master seed via :class:`numpy.random.SeedSequence` spawning."""
    children = np.random.SeedSequence(master_seed).spawn(reps)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def run_replications(
    scenario: Scenario,
    strategy: Strategy,
    config: SimConfig,
    reps: int,
    model: DecodingModel = DEFAULT_MODEL,
    penalty: PenaltySpec = AOII,
    threads: int = 1,
) -> SimStats:
    """Independent replications with seeds derived from ``config.seed``, pooled."""
    seeds = derive_seeds(config.seed, reps)
    configs = [SimConfig(config.num_slots, config.warmup_slots, s, config.tracked_devices) for s in seeds]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda c: run(scenario, strategy, c, model, penalty), configs))
    else:
        results = [run(scenario, strategy, c, model, penalty) for c in configs]
    return merge(results)
