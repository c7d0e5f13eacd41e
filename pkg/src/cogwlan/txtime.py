"""Transmission-time network over primary buffer states.

A secondary packet that starts at symbol offset ``x`` is a customer of
class ``(x, S_S)``. At node ``u`` (a frame whose buffer needs ``u``
slots) it either finishes inside the DL subframe and leaves, or uses
what is left and moves to the next frame's node ``u'`` with probability
``P[u, u']`` as class ``(0, s')`` with fewer slots to go. With one
customer injected per start class the flow sums give the mean duration
(Little's law) and the distribution of the completion instant.

The node a packet starts at is not the stationary one: a start follows the
previous completion by a short contention gap, so it sees a buffer state
correlated with that completion. Three entry models are offered:
``handover`` (the start inherits the frame of the network's previous
completion, moved on by the primary chain for every frame boundary the gap
crosses), ``completion`` (start node distributed like the completion node
of the same start class) and ``stationary``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu

from .config import FrameGeometry, Striping
from .primary_chain import PrimaryChain, reachable_states
from .striping import VisitTable, first_column, tick_of, visit_table


class ConvergenceError(RuntimeError):
    """A fixed-point iteration hit its iteration cap."""


@dataclass(frozen=True)
class TxTimeTable:
    geometry: FrameGeometry
    policy: Striping
    starts: np.ndarray        # start offsets in symbols (1..K_sym)
    gamma: np.ndarray         # mean duration per start, seconds
    beta: np.ndarray          # (start, end symbol 1..K_sym) completion pmf
    beta_fine: np.ndarray     # (start, end tick 1..K_sym*q) completion pmf
    entry_dist: np.ndarray    # (start, node) start-node distribution
    iterations: int = 0       # distinct column groups solved

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("start_symbol,start_time_s,gamma_s\n")
            for x, g in zip(self.starts, self.gamma):
                fh.write(f"{x},{x * self.geometry.t_sym:.9g},{g:.9g}\n")

    def phase_view(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean duration and completion-tick pmf for every phase tick 1..K_sym*q.

        A start at tick ``z`` (time ``z * t_tick``) behaves like a start at
        the next column boundary, plus the wait until then; a start with no
        column left in the DL subframe behaves like a start at the frame end.
        Rectangular allocation has no columns, so ticks borrow the symbol
        they end in.
        """
        g = self.geometry
        q = g.phase_ticks
        if not np.array_equal(self.starts, np.arange(1, g.k_sym + 1)):
            raise ValueError("phase view needs a table over every start symbol")
        z = np.arange(1, g.n_phases + 1)
        if self.policy is Striping.RECTANGULAR:
            x = -(-z // q)
        else:
            x = g.nu * -(-z // (q * g.nu))
            x = np.where(x >= g.k_sym_dl, g.k_sym, x)
        gamma = self.gamma[x - 1] + x * g.t_sym - z * g.t_tick
        return gamma, self.beta_fine[x - 1]


@dataclass
class Qn2Flow:
    """Per-node arrival rates for one start class at unit injection."""
    start: int
    alpha_initial: np.ndarray          # class (x, S_S) at each node
    alpha_resume: np.ndarray           # (s, node): class (0, s), s = 0..S_S (row 0 unused)
    exit_by_node: np.ndarray
    exit_by_tick: np.ndarray
    gamma: float
    entry_dist: np.ndarray
    iterations: int = 0       # distinct column groups solved
    extra: dict = field(default_factory=dict)


class _Qn2Solver:
    """Flows on the buffer states reachable from an empty buffer."""

    def __init__(self, chain: PrimaryChain, policy: Striping, s_s: int):
        g = chain.geometry
        self.g, self.policy, self.s_s = g, policy, s_s
        self.table: VisitTable = visit_table(policy, g)
        self.n_full = g.n + 1
        st = reachable_states(chain.transition)
        self.states = st
        self.P = chain.transition[np.ix_(st, st)]
        self.pi = chain.steady_state[st]
        self.n = n = len(st)
        self.n_ticks = g.n_phases
        e = self.table.e_total[st]
        self.zero = np.flatnonzero(e == 0)
        self.live = np.flatnonzero(e > 0)
        # frames with no empty slot pass customers on at the same level
        Pzz = self.P[np.ix_(self.zero, self.zero)]
        self.zero_lu = scipy.linalg.lu_factor(np.eye(len(self.zero)) - Pzz) if len(self.zero) else None
        self.P_zl = self.P[np.ix_(self.zero, self.live)]
        # resumed visits (x = 0) for every level s, grouped by carry target
        self.res_done, self.res_time, self.res_tick, self.res_moves = [None], [None], [None], [None]
        for s in range(1, s_s + 1):
            done, service, end, remaining = (a[st] for a in self.table.outcomes(0.0, s))
            self.res_done.append(done)
            self.res_time.append(service)
            self.res_tick.append(np.where(done, tick_of(np.nan_to_num(end), g), 0))
            carried = self.live[~done[self.live]]
            moves = [(int(t), carried[remaining[carried] == t]) for t in np.unique(remaining[carried])]
            self.res_moves.append([(t, u, self.P[u]) for t, u in moves])

    def _initial(self, starts: np.ndarray):
        out = [tuple(a[self.states] for a in self.table.outcomes(float(x), self.s_s)) for x in starts]
        done = np.array([o[0] for o in out])
        service = np.array([o[1] for o in out])
        tick = np.array([np.where(o[0], tick_of(np.nan_to_num(o[2]), self.g), 0) for o in out])
        remaining = np.array([o[3] for o in out])
        return done, service, tick, remaining

    def propagate(self, init, r, record=False, joint=False):
        """One pass of unit flow per row of ``r`` (start-node distributions).

        With ``joint`` the exits are also returned by (tick, node).
        """
        s_s, n = self.s_s, self.n
        done0, time0, tick0, rem0 = init
        S0 = len(r)
        gamma = (r * time0).sum(axis=1)
        by_tick = np.zeros((S0, self.n_ticks))
        by_node = np.where(done0, r, 0.0)
        rows_idx = np.broadcast_to(np.arange(S0)[:, None], tick0.shape)
        np.add.at(by_tick, (rows_idx[done0], tick0[done0] - 1), r[done0])
        exits = None
        if joint:
            exits = np.zeros((S0, self.n_ticks, n))
            nodes = np.broadcast_to(np.arange(n)[None, :], tick0.shape)
            np.add.at(exits, (rows_idx[done0], tick0[done0] - 1, nodes[done0]), r[done0])
        inj = np.zeros((s_s + 1, S0, n))
        carry0 = ~done0
        for s in np.unique(rem0[carry0]):
            inj[s] += np.where(carry0 & (rem0 == s), r, 0.0) @ self.P
        levels = np.zeros((s_s + 1, S0, n)) if record else None
        for s in range(s_s, 0, -1):
            a = inj[s]
            if len(self.zero):
                a_z = scipy.linalg.lu_solve(self.zero_lu, a[:, self.zero].T, trans=1).T
                a[:, self.zero] = a_z
                a[:, self.live] += a_z @ self.P_zl
            if record:
                levels[s] = a
            gamma += a @ self.res_time[s]
            done = self.res_done[s]
            by_node[:, done] += a[:, done]
            np.add.at(by_tick.T, self.res_tick[s][done] - 1, a[:, done].T)
            if joint:
                cols = np.flatnonzero(done)
                exits[:, self.res_tick[s][cols] - 1, cols] += a[:, cols]
            for t, u, rows in self.res_moves[s]:
                inj[t] += a[:, u] @ rows
        if joint:
            return gamma, by_node, by_tick, levels, exits
        return gamma, by_node, by_tick, levels

    def entry_distribution(self, x: float, tol: float = 1e-12) -> np.ndarray:
        """Limit of start node -> completion node iteration seeded with the stationary vector.

        The kernel is averaged with the identity so periodic kernels converge
        to their Cesaro limit; the fixed points are unchanged.
        """
        init = tuple(np.repeat(a, self.n, axis=0) for a in self._initial(np.array([x])))
        _, G, _, _ = self.propagate(init, np.eye(self.n))
        return _settle(G, self.pi, tol)

    def group_key(self, x: float):
        """Starts with the same key see the same frames from the same point on."""
        g = self.g
        if x >= g.k_sym_dl:
            return -1
        if self.policy is Striping.RECTANGULAR:
            return float(x)
        c0 = first_column(float(x), g)
        return c0 if c0 <= g.cols_dl else -1

    def solve(self, starts, tol=1e-12, entry="completion", gap=None):
        """Entry distributions for every start, one per group of equivalent starts."""
        starts = np.asarray(starts)
        keys = [self.group_key(float(x)) for x in starts]
        if entry == "stationary":
            r = np.tile(self.pi, (len(starts), 1))
        elif entry == "completion":
            cache: dict = {}
            r = np.empty((len(starts), self.n))
            for k, (x, key) in enumerate(zip(starts, keys)):
                if key not in cache:
                    cache[key] = self.entry_distribution(float(x), tol)
                r[k] = cache[key]
        elif entry == "handover":
            if gap is None:
                raise ValueError("handover entry needs the gap kernels")
            by_key = self.handover_entry(gap, tol)
            r = np.array([by_key[key] for key in keys])
        else:
            raise ValueError(f"unknown entry model {entry!r}")
        return r, self._initial(starts), len(set(keys))

    def handover_entry(self, gap: "HandoverGap", tol: float = 1e-12) -> dict:
        """Start-node distribution per start group when each data start inherits
        the frame of the network's previous completion.

        The state is (start group, node). Data moves it to a completion
        (tick, node); the gap to the next data start moves the tick and, for
        every frame boundary it crosses, the node by one primary step.
        """
        g = self.g
        q = g.phase_ticks
        starts = np.arange(1, g.k_sym + 1)
        keys = [self.group_key(float(x)) for x in starts]
        order = list(dict.fromkeys(keys))
        reps = [float(starts[keys.index(k)]) for k in order]
        G, n = len(order), self.n
        sym_group = np.array([order.index(k) for k in keys])
        tick_group = sym_group[(np.arange(self.n_ticks) // q)]
        onehot = np.zeros((self.n_ticks, G))
        onehot[np.arange(self.n_ticks), tick_group] = 1.0
        to_group = [D @ onehot for D in gap.kernels]          # completion tick -> next start group
        steps = [np.eye(n)]
        for _ in range(1, len(gap.kernels)):
            steps.append(steps[-1] @ self.P)
        eye = np.eye(n)
        T = np.zeros((G, n, G, n))
        for gi, x in enumerate(reps):
            init = tuple(np.repeat(a, n, axis=0) for a in self._initial(np.array([x])))
            *_, J = self.propagate(init, eye, joint=True)     # (start node, tick, end node)
            Jt = J.transpose(0, 2, 1).reshape(n * n, self.n_ticks)
            for D, step in zip(to_group, steps):
                R = (Jt @ D).reshape(n, n, G)                  # (start node, end node, next group)
                T[gi] += R.transpose(0, 2, 1) @ step
        w = _settle(T.reshape(G * n, G * n), np.kron(np.full(G, 1.0 / G), self.pi), tol)
        w = w.reshape(G, n)
        out = {}
        for gi, key in enumerate(order):
            mass = w[gi].sum()
            out[key] = w[gi] / mass if mass > 1e-300 else self.pi
        return out

    def expand(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(v.shape[:-1] + (self.n_full,))
        out[..., self.states] = v
        return out


def _settle(kernel: np.ndarray, start: np.ndarray, tol: float, max_squarings: int = 200) -> np.ndarray:
    """``start`` pushed through the lazy kernel until it stops moving."""
    H = 0.5 * (np.eye(len(kernel)) + kernel)
    for _ in range(max_squarings):
        H2 = H @ H
        if np.abs(H2 - H).max() < tol:
            H = H2
            break
        H = H2
    else:
        raise ConvergenceError("start-state chain did not settle")
    v = np.clip(start @ H, 0.0, None)
    return v / v.sum()


@dataclass(frozen=True)
class HandoverGap:
    """Tick kernels from a data completion to the next data start in the network.

    ``kernels[c][z, z']`` covers the paths that cross ``c`` frame
    boundaries; the last entry lumps every longer path.
    """
    kernels: tuple


def _wrapping_shift(shift, n_phases: int, max_cross: int) -> sparse.csr_matrix:
    """Shift on (tick, boundaries crossed) states; tick index ``Z-1`` is the frame end."""
    Z, C = n_phases, max_cross + 1
    z = np.arange(Z)
    rows, cols, vals = [], [], []
    for d, w in shift:
        nz, wraps = (z + d) % Z, (z + d) // Z
        for c in range(C):
            rows.append(c * Z + z)
            cols.append(np.minimum(c + wraps, max_cross) * Z + nz)
            vals.append(np.full(Z, w))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(Z * C, Z * C))


def handover_gap(p_idle: float, p_coll: float, p_succ: float, shifts: dict, n_phases: int,
                 max_cross: int = 2) -> HandoverGap:
    """ACK, then network virtual slots until one succeeds, then RTS and CTS.

    Slot probabilities are network-wide: ``p_succ`` is the chance that
    exactly one node transmits.
    """
    if p_succ <= 0:
        raise ValueError("no slot ever succeeds")
    Z = n_phases
    S = {k: _wrapping_shift(v, Z, max_cross) for k, v in shifts.items()}
    Q = p_idle * S["idle"] + p_coll * S["coll"]
    lu = splu(sparse.csc_matrix(sparse.identity(Q.shape[0]) - Q).T.tocsc())
    # rows of ACK-shift times (I - Q)^-1, for gaps that start uncrossed
    head = lu.solve(np.asarray(S["ack"][:Z].todense()).T).T
    D = p_succ * np.asarray((sparse.csr_matrix(head) @ S["rts"] @ S["cts"]).todense())
    return HandoverGap(tuple(D[:, c * Z:(c + 1) * Z] for c in range(max_cross + 1)))


def _check_solution(gamma: np.ndarray, by_node: np.ndarray) -> None:
    """Every injected packet must finish, in a finite positive mean time."""
    mass = by_node.sum(axis=-1)
    if not (np.all(np.isfinite(gamma)) and np.all(gamma >= 0) and np.abs(mass - 1).max() < 1e-6):
        raise ConvergenceError("transmission time is unbounded (frames with empty slots are "
                               "practically never reached)")


def solve_qn2_for_start(i: int, chain: PrimaryChain, policy: Striping, s_s: int,
                        tol: float = 1e-12, entry: str = "completion",
                        gap: HandoverGap | None = None) -> Qn2Flow:
    """Flow solution of the transmission-time network for one start symbol."""
    solver = _Qn2Solver(chain, policy, s_s)
    r, init, groups = solver.solve(np.array([i]), tol=tol, entry=entry, gap=gap)
    gamma, by_node, by_tick, levels = solver.propagate(init, r, record=True)
    _check_solution(gamma, by_node)
    ex = solver.expand
    return Qn2Flow(start=i, alpha_initial=ex(r[0]), alpha_resume=ex(levels[:, 0, :]),
                   exit_by_node=ex(by_node[0]), exit_by_tick=by_tick[0], gamma=float(gamma[0]),
                   entry_dist=ex(r[0]), iterations=groups,
                   extra={"initial_done": ex(init[0][0].astype(float)) > 0,
                          "initial_time": ex(init[1][0]),
                          "initial_remaining": ex(init[3][0].astype(float)).astype(np.int64)})


def build_table(chain: PrimaryChain, policy: Striping, s_s: int, tol: float = 1e-12,
                entry: str = "completion", gap: HandoverGap | None = None) -> TxTimeTable:
    """Solve the network for every start symbol 1..K_sym.

    ``entry`` picks the start-node distribution: ``completion`` (the node
    where transmissions of the same start symbol complete), ``handover``
    (inherited from the previous completion in the network, needs ``gap``)
    or ``stationary``.
    """
    g = chain.geometry
    solver = _Qn2Solver(chain, policy, s_s)
    starts = np.arange(1, g.k_sym + 1)
    r, init, groups = solver.solve(starts, tol=tol, entry=entry, gap=gap)
    gamma, by_node, by_tick, _ = solver.propagate(init, r)
    _check_solution(gamma, by_node)
    q = g.phase_ticks
    beta = by_tick.reshape(len(starts), g.k_sym, q).sum(axis=2)
    return TxTimeTable(geometry=g, policy=policy, starts=starts, gamma=gamma, beta=beta,
                       beta_fine=by_tick, entry_dist=solver.expand(r), iterations=groups)
