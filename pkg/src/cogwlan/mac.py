"""Saturated 802.11 DCF contention quantities.

Each node doubles its window after a collision, ``W_n = 2**n * W_0`` for
backoff stages ``n = 0..m-1``, and keeps ``W_{m-1}`` for later retries.
The attempt probability follows from a renewal argument over one packet's
backoff; coupling it with ``p = 1 - (1 - tau)**(N_s - 1)`` gives the usual
decoupled fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import ScenarioConfig


@dataclass(frozen=True)
class MacSlotModel:
    tau_mac: float
    p_col: float
    p_idle: float
    p_coll: float
    p_succ: float
    t_idle: float
    t_coll: float

    @property
    def slot_probabilities(self) -> tuple[float, float, float]:
        return self.p_idle, self.p_coll, self.p_succ


def windows(w0: int, m_stages: int) -> list[int]:
    """Contention windows of backoff stages 0..m-1."""
    return [w0 * 2 ** n for n in range(m_stages)]


def attempt_probability(p: float, w0: int, m_stages: int) -> float:
    """Per-virtual-slot attempt probability of a node whose attempts collide w.p. ``p``.

    Attempts per packet over slots per packet; a backoff of ``k`` draws from
    ``[0, W-1]`` spends ``k`` counting slots plus the attempt slot.
    """
    ws = windows(w0, m_stages)
    slots = sum(p ** n * (w + 1) / 2 for n, w in enumerate(ws[:-1]))
    slots += p ** (m_stages - 1) * (ws[-1] + 1) / 2 / (1 - p)
    return (1 / (1 - p)) / slots


def solve_bianchi(w0: int, m_stages: int, n_s: int, tol: float = 1e-12) -> tuple[float, float]:
    """(tau, p_col) of the saturated fixed point, by bisection on p in [0, 1)."""
    if w0 < 2 or m_stages < 1 or n_s < 1:
        raise ValueError("need w0 >= 2, m_stages >= 1, n_s >= 1")
    if n_s == 1:
        return attempt_probability(0.0, w0, m_stages), 0.0

    def residual(p: float) -> float:
        tau = attempt_probability(p, w0, m_stages)
        return p - (1 - (1 - tau) ** (n_s - 1))

    lo, hi = 0.0, 1.0 - 1e-15
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0:
            hi = mid
        else:
            lo = mid
    tau = attempt_probability(0.5 * (lo + hi), w0, m_stages)
    return tau, 1 - (1 - tau) ** (n_s - 1)


def slot_probabilities(tau_mac: float, n_s: int) -> tuple[float, float, float]:
    """Idle/collision/success probabilities of a slot seen by one backing-off node."""
    others = n_s - 1
    p_idle = (1 - tau_mac) ** others
    p_succ = others * tau_mac * (1 - tau_mac) ** (others - 1) if others else 0.0
    return p_idle, max(0.0, 1.0 - p_idle - p_succ), p_succ


def mac_model(cfg: ScenarioConfig) -> MacSlotModel:
    tau, p_col = solve_bianchi(cfg.w0, cfg.m_stages, cfg.n_s)
    p_i, p_c, p_s = slot_probabilities(tau, cfg.n_s)
    return MacSlotModel(tau_mac=tau, p_col=p_col, p_idle=p_i, p_coll=p_c, p_succ=p_s,
                        t_idle=cfg.t_idle, t_coll=cfg.collision_time)


def network_slot_probabilities(tau_mac: float, n_s: int) -> tuple[float, float, float]:
    """Idle/collision/success probabilities of a slot over all ``n_s`` nodes."""
    p_idle = (1 - tau_mac) ** n_s
    p_succ = n_s * tau_mac * (1 - tau_mac) ** (n_s - 1)
    return p_idle, max(0.0, 1.0 - p_idle - p_succ), p_succ
