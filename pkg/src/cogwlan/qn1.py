"""Packet-cycle network of one saturated secondary node.

A packet passes through backoff stages VS_1..VS_m (one virtual slot per
backoff count), an RTS node per stage, CTS, the data transmission TR and
the ACK. Every customer class carries the frame phase at which it arrives,
so the network is driven by phase kernels:

* a virtual slot advances the phase by an idle slot, a collision slot, or
  a foreign RTS/CTS/data/ACK exchange, with probabilities P_I, P_C, P_S;
* the node's own RTS collides with probability ``p_col``;
* data that starts at phase ``z`` ends at phase ``z'`` with probability
  ``beta[z, z']`` and lasts ``gamma[z]`` on average.

Because the node is saturated, departures re-enter VS_1 at once. With the
departure rate fixed to one packet per unit time every arrival rate is a
flow sum, and the total occupancy ``rho`` is the mean cycle length, so the
saturation rate is ``1 / rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu

from .config import FrameGeometry, ScenarioConfig, tick_shift
from .mac import MacSlotModel, windows
from .txtime import ConvergenceError, TxTimeTable

SLOT_TYPES = ("I", "C", "S")


def shift_matrix(shift: tuple[tuple[int, float], ...], n_phases: int) -> np.ndarray:
    eye = np.eye(n_phases)
    return sum(w * np.roll(eye, d, axis=1) for d, w in shift)


@dataclass
class Qn1Routing:
    """Routing and service-time rules of the packet-cycle network.

    Phases are 0-based here: index ``z`` stands for phase ``z + 1``.
    """
    geometry: FrameGeometry
    mac: MacSlotModel
    n_s: int
    m_stages: int
    windows: list[int]
    t_rts: float
    t_cts: float
    t_ack: float
    shifts: dict[str, tuple[tuple[int, float], ...]]
    gamma: np.ndarray        # mean data duration per start phase
    beta: np.ndarray         # (start phase, end phase) pmf
    _kernels: object = field(default=None, repr=False, compare=False)

    def kernels(self) -> "_Kernels":
        if self._kernels is None:
            self._kernels = _Kernels(self)
        return self._kernels

    @property
    def n_phases(self) -> int:
        return len(self.gamma)

    @property
    def slot_probabilities(self) -> dict[str, float]:
        return dict(zip(SLOT_TYPES, self.mac.slot_probabilities))

    def shifted(self, z: int, name: str) -> list[tuple[int, float]]:
        return [((z + d) % self.n_phases, w) for d, w in self.shifts[name]]

    # -- explicit class-level rules ------------------------------------

    def nodes(self) -> list[tuple]:
        out = []
        for n in range(1, self.m_stages + 1):
            out += [("VS", n), ("RTS", n), ("CTS", n)]
        return out + [("TR",), ("ACK",)]

    def classes(self, node: tuple) -> list:
        Z = range(self.n_phases)
        if node[0] == "VS":
            w = self.windows[node[1] - 1]
            return [(z, j, k) for z in Z for j in SLOT_TYPES for k in range(w)]
        return list(Z)

    def _enter_vs(self, n: int, z: int, scale: float, out: dict) -> None:
        w = self.windows[n - 1]
        for j, pj in self.slot_probabilities.items():
            if pj == 0:
                continue
            for k in range(w):
                key = (("VS", n), (z, j, k))
                out[key] = out.get(key, 0.0) + scale * pj / w

    def row(self, node: tuple, cls) -> dict:
        """Routing probabilities out of ``(node, cls)``; exits are keyed ``("out", phase)``."""
        out: dict = {}

        def add(key, p):
            if p:
                out[key] = out.get(key, 0.0) + p

        kind = node[0]
        if kind == "VS":
            n = node[1]
            z, j, k = cls
            if k == 0:
                add((("RTS", n), z), 1.0)
                return out
            probs = self.slot_probabilities
            if j == "S":
                for z1, w1 in self.shifted(z, "rts"):
                    for z2, w2 in self.shifted(z1, "cts"):
                        for z3 in np.flatnonzero(self.beta[z2]):
                            for z4, w4 in self.shifted(int(z3), "ack"):
                                for jj, pj in probs.items():
                                    add((node, (z4, jj, k - 1)), w1 * w2 * self.beta[z2, z3] * w4 * pj)
            else:
                for z1, w1 in self.shifted(z, "idle" if j == "I" else "coll"):
                    for jj, pj in probs.items():
                        add((node, (z1, jj, k - 1)), w1 * pj)
            return out
        if kind == "RTS":
            n = node[1]
            p = self.mac.p_col
            for z1, w1 in self.shifted(cls, "rts"):
                add((("CTS", n), z1), (1 - p) * w1)
                if p > 0:
                    self._enter_vs(min(n + 1, self.m_stages), z1, p * w1, out)
            return out
        if kind == "CTS":
            for z1, w1 in self.shifted(cls, "cts"):
                add((("TR",), z1), w1)
            return out
        if kind == "TR":
            for z1 in np.flatnonzero(self.beta[cls]):
                add((("ACK",), int(z1)), float(self.beta[cls, z1]))
            return out
        if kind == "ACK":
            for z1, w1 in self.shifted(cls, "ack"):
                add(("out", z1), w1)
            return out
        raise KeyError(node)

    def service_time(self, node: tuple, cls) -> float:
        kind = node[0]
        if kind == "VS":
            z, j, k = cls
            if k == 0:
                return 0.0
            if j == "I":
                return self.mac.t_idle
            if j == "C":
                return self.mac.t_coll
            mid = sum(w1 * w2 * self.gamma[z2] for z1, w1 in self.shifted(z, "rts")
                      for z2, w2 in self.shifted(z1, "cts"))
            return self.t_rts + self.t_cts + mid + self.t_ack
        if kind == "TR":
            return float(self.gamma[cls])
        return {"RTS": self.t_rts, "CTS": self.t_cts, "ACK": self.t_ack}[kind]

    def injection(self, exit_rates: np.ndarray) -> dict:
        """Exogenous VS_1 arrivals generated by departures at each phase."""
        out: dict = {}
        for z in np.flatnonzero(exit_rates):
            self._enter_vs(1, int(z), float(exit_rates[z]), out)
        return out

    def sparse_system(self):
        """(index, R, E, tau): class index, internal routing, exit routing and service times."""
        keys = [(node, c) for node in self.nodes() for c in self.classes(node)]
        index = {key: i for i, key in enumerate(keys)}
        rows, cols, vals, erows, ecols, evals = [], [], [], [], [], []
        tau = np.empty(len(keys))
        for i, (node, c) in enumerate(keys):
            tau[i] = self.service_time(node, c)
            for key, p in self.row(node, c).items():
                if key[0] == "out":
                    erows.append(i)
                    ecols.append(key[1])
                    evals.append(p)
                else:
                    rows.append(i)
                    cols.append(index[key])
                    vals.append(p)
        R = sparse.csr_matrix((vals, (rows, cols)), shape=(len(keys), len(keys)))
        E = sparse.csr_matrix((evals, (erows, ecols)), shape=(len(keys), self.n_phases))
        return index, R, E, tau


def build_routing(mac: MacSlotModel, tx: TxTimeTable, geometry: FrameGeometry,
                  cfg: ScenarioConfig) -> Qn1Routing:
    gamma, beta = tx.phase_view()
    if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(beta))):
        raise ValueError("transmission-time table has missing entries")
    rounding = cfg.rounding
    shifts = {name: tick_shift(t, geometry, rounding) for name, t in
              (("idle", mac.t_idle), ("coll", mac.t_coll), ("rts", cfg.t_rts),
               ("cts", cfg.t_cts), ("ack", cfg.t_ack))}
    return Qn1Routing(geometry=geometry, mac=mac, n_s=cfg.n_s, m_stages=cfg.m_stages,
                      windows=windows(cfg.w0, cfg.m_stages), t_rts=cfg.t_rts,
                      t_cts=cfg.t_cts, t_ack=cfg.t_ack, shifts=shifts, gamma=gamma, beta=beta)


@dataclass
class Qn1Traffic:
    """Arrival rates at unit departure rate.

    ``vs[n-1][k]`` is the rate of VS_n customers arriving with ``k`` slots
    to go, per phase; the slot type splits it by P_I, P_C, P_S.
    """
    vs: list[np.ndarray]
    rts: list[np.ndarray]
    cts: list[np.ndarray]
    tr: np.ndarray
    ack: np.ndarray
    exit: np.ndarray
    entry: np.ndarray
    iterations: int = 0
    class_alpha: tuple | None = None    # (index, rates, service times) from the explicit solve

    def class_rate(self, routing: Qn1Routing, node: tuple, cls) -> float:
        kind = node[0]
        if kind == "VS":
            z, j, k = cls
            return float(self.vs[node[1] - 1][k, z] * routing.slot_probabilities[j])
        if kind in ("RTS", "CTS"):
            return float((self.rts if kind == "RTS" else self.cts)[node[1] - 1][cls])
        return float((self.tr if kind == "TR" else self.ack)[cls])


class _Kernels:
    def __init__(self, routing: Qn1Routing):
        Z = routing.n_phases
        mac = routing.mac
        S = {name: shift_matrix(s, Z) for name, s in routing.shifts.items()}
        self.S = S
        B = routing.beta
        self.data = S["rts"] @ S["cts"] @ B @ S["ack"]     # foreign exchange, slot start to ACK end
        self.slot = mac.p_idle * S["idle"] + mac.p_coll * S["coll"] + mac.p_succ * self.data
        mid = S["rts"] @ S["cts"] @ routing.gamma
        self.slot_time = (mac.p_idle * mac.t_idle + mac.p_coll * mac.t_coll
                          + mac.p_succ * (routing.t_rts + routing.t_cts + mid + routing.t_ack))
        p = mac.p_col
        self.succ = (1 - p) * S["rts"] @ S["cts"] @ B @ S["ack"]
        self.coll = p * S["rts"]
        self.stage = [self._backoff(w) for w in routing.windows]

    def _backoff(self, w: int) -> np.ndarray:
        """Mean of slot^k over k uniform on 0..w-1, by binary doubling."""
        Z = self.slot.shape[0]
        total, power = np.zeros((Z, Z)), np.eye(Z)   # sum of slot^k for k < s, and slot^s
        for bit in bin(w)[2:]:
            total = total + total @ power
            power = power @ power
            if bit == "1":
                total = total + power
                power = power @ self.slot
        return total / w


def _stationary(kernel: np.ndarray, start: int, tol: float = 1e-13, max_squarings: int = 200) -> np.ndarray:
    """Limit of a point mass at ``start`` pushed through the lazy version of ``kernel``."""
    H = 0.5 * (np.eye(len(kernel)) + kernel)
    for _ in range(max_squarings):
        H2 = H @ H
        if np.abs(H2 - H).max() < tol:
            H = H2
            break
        H = H2
    else:
        raise ConvergenceError("entry-phase iteration did not settle")
    v = np.clip(H[start], 0.0, None)
    return v / v.sum()


def solve_traffic(routing: Qn1Routing, tol: float = 1e-10, method: str = "kernel",
                  max_iter: int = 100000) -> Qn1Traffic:
    """Arrival rates with departures fed straight back into VS_1, at unit departure rate.

    ``kernel`` solves for the entry-phase distribution through the
    phase-to-phase cycle kernel. ``iterate`` sets up every class
    explicitly and alternates a linear solve of the open network with
    the exit-to-entry closure until the rates settle.
    """
    if method == "iterate":
        return _solve_by_iteration(routing, tol, max_iter)
    if method != "kernel":
        raise ValueError(f"unknown method {method!r}")
    K = routing.kernels()
    Z = routing.n_phases
    m = routing.m_stages
    A = K.stage
    # phase at departure given the phase at entry to each stage
    X = scipy.linalg.solve(np.eye(Z) - A[-1] @ K.coll, A[-1] @ K.succ)
    for n in range(m - 2, -1, -1):
        X = A[n] @ (K.succ + K.coll @ X)
    entry = _stationary(X, Z - 1)   # start from the frame boundary
    return _flows(routing, K, entry)


def _flows(routing: Qn1Routing, K: _Kernels, entry: np.ndarray) -> Qn1Traffic:
    m = routing.m_stages
    p = routing.mac.p_col
    vs, rts, cts = [], [], []
    base = entry
    for n in range(m):
        w = routing.windows[n]
        if n == m - 1 and p > 0:
            # repeated collisions at the last stage stay there
            inflow = scipy.linalg.solve((np.eye(len(entry)) - K.stage[n] @ K.coll).T, base)
        else:
            inflow = base
        h = np.empty((w, len(entry)))
        h[w - 1] = inflow / w
        for k in range(w - 2, -1, -1):
            h[k] = inflow / w + h[k + 1] @ K.slot
        vs.append(h)
        rts.append(h[0])
        cts.append((1 - p) * h[0] @ K.S["rts"])
        base = p * h[0] @ K.S["rts"]
    tr = sum(c @ K.S["cts"] for c in cts)
    ack = tr @ routing.beta
    out = ack @ K.S["ack"]
    return Qn1Traffic(vs=vs, rts=rts, cts=cts, tr=tr, ack=ack, exit=out, entry=entry)


def _solve_by_iteration(routing: Qn1Routing, tol: float, max_iter: int) -> Qn1Traffic:
    index, R, E, tau = routing.sparse_system()
    lu = splu(sparse.csc_matrix(sparse.identity(R.shape[0]) - R.T))
    Z = routing.n_phases

    def inject(exit_rates):
        lam = np.zeros(R.shape[0])
        for key, rate in routing.injection(exit_rates).items():
            lam[index[key]] += rate
        return lam

    exit_rates = np.zeros(Z)
    exit_rates[Z - 1] = 1.0
    for it in range(1, max_iter + 1):
        alpha = lu.solve(inject(exit_rates))
        new_exit = E.T @ alpha
        new_exit /= new_exit.sum()
        new_exit = 0.5 * (exit_rates + new_exit)   # lazy step, damps periodic cycles
        change = np.abs(new_exit - exit_rates).max()
        exit_rates = new_exit
        if change < tol:
            break
    else:
        raise ConvergenceError(f"traffic iteration not converged after {max_iter} passes")
    alpha = lu.solve(inject(exit_rates))
    alpha /= (E.T @ alpha).sum()

    def grab(node):
        return np.array([alpha[index[(node, z)]] for z in range(Z)])

    vs = []
    for n in range(1, routing.m_stages + 1):
        w = routing.windows[n - 1]
        h = np.zeros((w, Z))
        for z in range(Z):
            for k in range(w):
                h[k, z] = sum(alpha[index[(("VS", n), (z, j, k))]] for j in SLOT_TYPES)
        vs.append(h)
    traffic = Qn1Traffic(vs=vs, rts=[grab(("RTS", n)) for n in range(1, routing.m_stages + 1)],
                         cts=[grab(("CTS", n)) for n in range(1, routing.m_stages + 1)],
                         tr=grab(("TR",)), ack=grab(("ACK",)), exit=E.T @ alpha,
                         entry=exit_rates, iterations=it)
    traffic.class_alpha = (index, alpha, tau)
    return traffic


@dataclass
class Qn1Solution:
    traffic: Qn1Traffic
    rho_per_node: dict[str, float]
    rho_total: float
    lambda_sat: float            # packets per second per node
    Lambda_sat: float            # packets per second, whole network
    start_pmf: np.ndarray        # data start instants per symbol 1..K_sym
    start_pmf_fine: np.ndarray   # the same per phase tick
    n_s: int
    extra: dict = field(default_factory=dict)

    @property
    def alpha(self) -> Qn1Traffic:
        return self.traffic


def node_occupancy(routing: Qn1Routing, traffic: Qn1Traffic) -> dict[str, float]:
    """rho of every node: arrival rate times mean service time, summed over classes."""
    K = routing.kernels()
    rho: dict[str, float] = {}
    for n in range(routing.m_stages):
        h = traffic.vs[n]
        rho[f"VS{n + 1}"] = float(h[1:].sum(axis=0) @ K.slot_time)
        rho[f"RTS{n + 1}"] = routing.t_rts * float(traffic.rts[n].sum())
        rho[f"CTS{n + 1}"] = routing.t_cts * float(traffic.cts[n].sum())
    rho["TR"] = float(traffic.tr @ routing.gamma)
    rho["ACK"] = routing.t_ack * float(traffic.ack.sum())
    return rho


def saturation(traffic: Qn1Traffic, routing: Qn1Routing) -> Qn1Solution:
    rho = node_occupancy(routing, traffic)
    departures = float(traffic.exit.sum())
    total = math.fsum(rho.values())
    if not total > 0:
        raise ValueError("zero occupancy: degenerate configuration")
    lam = departures / total
    g = routing.geometry
    fine = traffic.tr / traffic.tr.sum()
    coarse = fine.reshape(g.k_sym, g.phase_ticks).sum(axis=1)
    return Qn1Solution(traffic=traffic, rho_per_node=rho, rho_total=total, lambda_sat=lam,
                       Lambda_sat=routing.n_s * lam, start_pmf=coarse, start_pmf_fine=fine,
                       n_s=routing.n_s)
