"""Discrete-event simulation of primary frames and saturated secondary DCF nodes.

The primary buffer evolves frame by frame (Poisson packet arrivals,
blocking at the buffer capacity, FIFO drain of up to M slots per DL
subframe). The secondary nodes contend on a separate control channel in
virtual slots: nodes whose counter is zero send an RTS at the slot start,
a lone sender wins, and everybody else counts the slot down once it ends.
The winner then sends its packet through the empty DL slots of as many
frames as needed, and the receiver's ACK closes the exchange.

Random streams come from one ``SeedSequence``: a stream for the primary
arrivals and one per secondary node, all PCG64.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import EPS, ScenarioConfig, Striping, derive_geometry
from .striping import column_profile

_FRAME, _SLOT, _DONE = 0, 1, 2
_BUFFER = 4096


class _Draws:
    """Buffered draws from one generator."""

    def __init__(self, rng: np.random.Generator, sampler):
        self.rng = rng
        self.sampler = sampler
        self.buf: list = []
        self.pos = 0

    def next(self):
        if self.pos == len(self.buf):
            self.buf = self.sampler(self.rng, _BUFFER).tolist()
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return v


class PrimaryProcess:
    """Buffer state (slots to drain) at the start of every frame, generated on demand."""

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator):
        g = derive_geometry(cfg)
        self.m, self.n, self.s_p = g.m, g.n, g.s_p
        lam = cfg.lambda_p
        self.arrivals = _Draws(rng, lambda r, k: r.poisson(lam, k))
        self.states = [0]

    def state(self, frame: int) -> int:
        states = self.states
        while len(states) <= frame:
            u = states[-1]
            states.append(min(max(u - self.m, 0) + self.arrivals.next() * self.s_p, self.n))
        return states[frame]

    def histogram(self, frames: int, start: int = 0) -> np.ndarray:
        self.state(start + frames - 1)
        return np.bincount(self.states[start:start + frames], minlength=self.n + 1)


def occupancy_mask(u: int, policy: Striping, rows: int, cols: int, m: int) -> np.ndarray:
    """Boolean rows x cols grid of slots scheduled to the primary."""
    used = min(u, m)
    flat = np.zeros(rows * cols, dtype=bool)
    flat[:used] = True
    if policy is Striping.HORIZONTAL:
        return flat.reshape(rows, cols)
    return flat.reshape(cols, rows).T


@dataclass
class SimResult:
    per_su_throughput: float
    network_throughput: float
    ci95_halfwidth: float
    frames_simulated: int
    seed: int
    packets: int = 0
    per_node_packets: list[int] = field(default_factory=list)
    batch_throughputs: list[float] = field(default_factory=list)
    start_symbol_counts: np.ndarray | None = None
    primary_histogram: np.ndarray | None = None
    audit: dict[str, int] = field(default_factory=dict)
    attempts: int = 0
    collisions: int = 0
    slot_counts: dict[str, int] = field(default_factory=dict)

    def csv_row(self, cfg: ScenarioConfig) -> dict:
        return {"seed": self.seed, "lambda_p": cfg.lambda_p, "n_s": cfg.n_s,
                "ratio_r": str(cfg.ratio_r), "policy": cfg.striping.value,
                "per_su_throughput": self.per_su_throughput, "ci95": self.ci95_halfwidth}


class Simulation:
    def __init__(self, cfg: ScenarioConfig, seed: int, audit: bool = True):
        self.cfg = cfg
        self.g = g = derive_geometry(cfg)
        self.policy = cfg.striping
        seq = np.random.SeedSequence(seed)
        streams = seq.spawn(cfg.n_s + 1)
        self.primary = PrimaryProcess(cfg, np.random.Generator(np.random.PCG64(streams[0])))
        self.uniform = [_Draws(np.random.Generator(np.random.PCG64(s)), lambda r, k: r.random(k))
                        for s in streams[1:]]
        self.windows = [cfg.w0 * 2 ** n for n in range(cfg.m_stages)]
        self.stage = [0] * cfg.n_s
        self.counter = [self._draw(i) for i in range(cfg.n_s)]
        self.audit_on = audit
        self.audit = {"frames_checked": 0, "slot_overlaps": 0, "overlapping_data": 0,
                      "ul_completions": 0}
        self._free_cache: dict[int, np.ndarray] = {}
        if self.policy is not Striping.RECTANGULAR:
            self._profiles = np.array([column_profile(u, self.policy, g) for u in range(g.m + 1)])
        self.last_busy_end = 0.0

    def _draw(self, node: int) -> int:
        w = self.windows[self.stage[node]]
        return min(int(self.uniform[node].next() * w), w - 1)

    def _free_from_mask(self, u: int) -> np.ndarray:
        free = self._free_cache.get(u)
        if free is None:
            g = self.g
            mask = occupancy_mask(u, self.policy, g.rows, g.cols_dl, g.m)
            free = (~mask).sum(axis=0)
            self._free_cache[u] = free
        return free

    def transmit(self, t_start: float, s: int) -> float:
        """Completion instant of ``s`` slots sent from ``t_start`` on."""
        g = self.g
        T = g.t_frame
        frame = int(t_start // T)
        x = t_start - frame * T
        rect = self.policy is Striping.RECTANGULAR
        while True:
            u = self.primary.state(frame)
            if rect:
                e_total = max(g.m - u, 0)
                if x < g.t_dl and e_total > 0:
                    avail = e_total * (g.t_dl - x) / g.t_dl
                    if avail >= s - EPS:
                        end = x + s / e_total * g.t_dl
                        return self._finish(frame, end)
                    s = math.ceil(s - avail - EPS)
            elif x < g.t_dl:
                c0 = max(0, math.ceil(x / g.t_col - EPS))
                prof = self._profiles[min(u, g.m)]
                used = [0] * g.cols_dl
                for c in range(c0, g.cols_dl):
                    f = int(prof[c])
                    if f == 0:
                        continue
                    if f >= s:
                        used[c] = s
                        self._check_columns(u, used)
                        return self._finish(frame, (c + s / f) * g.t_col)
                    used[c] = f
                    s -= f
                self._check_columns(u, used)
            frame += 1
            x = 0.0

    def _check_columns(self, u: int, used: list[int]) -> None:
        if not self.audit_on:
            return
        free = self._free_from_mask(u)
        self.audit["frames_checked"] += 1
        over = sum(1 for a, b in zip(used, free) if a > b)
        self.audit["slot_overlaps"] += over

    def _finish(self, frame: int, offset: float) -> float:
        if offset > self.g.t_dl * (1 + EPS):
            self.audit["ul_completions"] += 1
        return frame * self.g.t_frame + offset

    def run(self, horizon_frames: int, warmup_frames: int | None = None, batches: int = 20) -> SimResult:
        cfg, g = self.cfg, self.g
        if warmup_frames is None:
            warmup_frames = horizon_frames // 10
        if not horizon_frames > warmup_frames >= 0:
            raise ValueError("need horizon_frames > warmup_frames >= 0")
        if batches < 2:
            raise ValueError("need at least two batches")
        t_end = horizon_frames * g.t_frame
        t_warm = warmup_frames * g.t_frame
        span = (t_end - t_warm) / batches
        batch_counts = [0] * batches
        per_node = [0] * cfg.n_s
        starts = np.zeros(g.k_sym, dtype=np.int64)
        hist = np.zeros(g.n + 1, dtype=np.int64)
        attempts = collisions = 0
        slots = {"idle": 0, "collision": 0, "success": 0}
        t_idle, t_coll = cfg.t_idle, cfg.collision_time
        pre_data = cfg.t_rts + cfg.t_cts
        n_s = cfg.n_s
        counter, stage = self.counter, self.stage
        queue: list = []
        seq = 0

        def push(t, kind, data=None):
            nonlocal seq
            heapq.heappush(queue, (t, seq, kind, data))
            seq += 1

        push(0.0, _FRAME, 0)
        push(0.0, _SLOT)
        while queue:
            t, _, kind, data = heapq.heappop(queue)
            if t > t_end:
                break
            if kind == _FRAME:
                hist[self.primary.state(data)] += 1
                push((data + 1) * g.t_frame, _FRAME, data + 1)
            elif kind == _DONE:
                node = data
                if t >= t_warm:
                    b = min(int((t - t_warm) / span), batches - 1)
                    batch_counts[b] += 1
                    per_node[node] += 1
            else:
                k = min(counter)
                if k:
                    slots["idle"] += k
                    t += k * t_idle
                    counter = [c - k for c in counter]
                senders = [i for i in range(n_s) if counter[i] == 0]
                attempts += len(senders)
                if len(senders) == 1:
                    node = senders[0]
                    slots["success"] += 1
                    t_data = t + pre_data
                    if self.audit_on and t < self.last_busy_end - EPS * g.t_frame:
                        self.audit["overlapping_data"] += 1
                    end = self.transmit(t_data, cfg.s_s)
                    if t_data >= t_warm:
                        frame = int(t_data // g.t_frame)
                        sym = math.ceil((t_data - frame * g.t_frame) / g.t_sym - EPS)
                        starts[min(max(sym, 1), g.k_sym) - 1] += 1
                    t_next = end + cfg.t_ack
                    self.last_busy_end = t_next
                    push(t_next, _DONE, node)
                    stage[node] = 0
                else:
                    collisions += len(senders)
                    slots["collision"] += 1
                    t_next = t + t_coll
                    for i in senders:
                        stage[i] = min(stage[i] + 1, cfg.m_stages - 1)
                for i in range(n_s):
                    if counter[i]:
                        counter[i] -= 1
                    else:
                        counter[i] = self._draw(i)
                push(t_next, _SLOT)
        self.counter = counter
        total = sum(batch_counts)
        duration = t_end - t_warm
        per_su = total / (n_s * duration)
        rates = [c / (n_s * span) for c in batch_counts]
        half = float(stats.t.ppf(0.975, batches - 1) * np.std(rates, ddof=1) / math.sqrt(batches))
        return SimResult(per_su_throughput=per_su, network_throughput=n_s * per_su,
                         ci95_halfwidth=half, frames_simulated=horizon_frames, seed=-1,
                         packets=total, per_node_packets=per_node, batch_throughputs=rates,
                         start_symbol_counts=starts, primary_histogram=hist,
                         audit=dict(self.audit), attempts=attempts, collisions=collisions,
                         slot_counts=slots)


def simulate(cfg: ScenarioConfig, seed: int = 1, horizon_frames: int = 20000,
             warmup_frames: int | None = None, batches: int = 20, audit: bool = True) -> SimResult:
    """Run the scenario for ``horizon_frames`` frames and measure per-node throughput."""
    result = Simulation(cfg, seed, audit=audit).run(horizon_frames, warmup_frames, batches)
    result.seed = seed
    return result
