"""Discrete-time Markov chain of the primary base-station buffer.

The state is the number of slots needed to empty the buffer at the start
of a frame (0..N). Each frame drains up to M slots and Poisson packet
arrivals add S_P slots each; arrivals beyond the buffer capacity are
blocked, which lumps the overflow tail into state N.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.stats import poisson

from .config import FrameGeometry, ScenarioConfig, derive_geometry

TAIL_CUTOFF = 1e-15


def poisson_pmf(lambda_p: float, k: int) -> float:
    """P[K = k] for K ~ Poisson(lambda_p), evaluated in log space."""
    if lambda_p < 0 or k < 0:
        raise ValueError("poisson_pmf needs lambda_p >= 0 and k >= 0")
    if lambda_p == 0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(lambda_p) - lambda_p - math.lgamma(k + 1))


def arrival_pmf(lambda_p: float, kmax: int | None = None) -> np.ndarray:
    """Per-frame arrival pmf truncated where the upper tail drops below 1e-15.

    The last entry absorbs the remaining tail so the vector sums to one.
    """
    if lambda_p == 0:
        return np.array([1.0])
    if kmax is None:
        kmax = int(poisson.isf(TAIL_CUTOFF, lambda_p)) + 1
    pmf = np.array([poisson_pmf(lambda_p, k) for k in range(kmax + 1)])
    pmf[-1] += max(0.0, 1.0 - math.fsum(pmf))
    return pmf


def build_transition_matrix(geometry: FrameGeometry, lambda_p: float) -> np.ndarray:
    """Row-stochastic transition matrix over buffer states 0..N."""
    n, m, s_p = geometry.n, geometry.m, geometry.s_p
    pmf = arrival_pmf(lambda_p)
    P = np.zeros((n + 1, n + 1))
    for i in range(n + 1):
        carry = max(i - m, 0)
        n_fit = max(0, -(-(n - carry) // s_p))  # arrivals that keep the state below N
        k = np.arange(min(n_fit, len(pmf)))
        P[i, carry + k * s_p] = pmf[k]
        # blocking: every arrival count that reaches N lands exactly on N
        P[i, n] = max(0.0, 1.0 - math.fsum(P[i, :n]))
    return P


def reachable_states(transition: np.ndarray, start: int = 0) -> np.ndarray:
    """Sorted indices of the states reachable from ``start``."""
    adj = sparse.csr_matrix(transition > 0)
    seen = np.zeros(transition.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in adj.indices[adj.indptr[i]:adj.indptr[i + 1]]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return np.flatnonzero(seen)


def steady_state(transition: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Stationary vector on the class reachable from state 0, zero elsewhere."""
    P = np.asarray(transition, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("transition matrix must be square")
    if (P < -tol).any() or np.abs(P.sum(axis=1) - 1.0).max() > tol:
        raise ValueError("transition matrix is not row-stochastic")
    states = reachable_states(P)
    sub = P[np.ix_(states, states)]
    # global balance pi (I - P) = 0 with one equation swapped for sum(pi) = 1
    A = sub.T - np.eye(len(states))
    A[-1, :] = 1.0
    b = np.zeros(len(states))
    b[-1] = 1.0
    pi_sub = np.linalg.solve(A, b)
    pi_sub = np.clip(pi_sub, 0.0, None)
    pi_sub /= pi_sub.sum()
    pi = np.zeros(P.shape[0])
    pi[states] = pi_sub
    return pi


@dataclass(frozen=True)
class PrimaryChain:
    geometry: FrameGeometry
    lambda_p: float
    transition: np.ndarray
    steady_state: np.ndarray
    arrival_pmf: np.ndarray

    @property
    def empty_slots(self) -> np.ndarray:
        """e^u = max(M - u, 0) for every state u."""
        return np.maximum(self.geometry.m - np.arange(self.geometry.n + 1), 0)

    def mean_empty_slots(self) -> float:
        return float(self.steady_state @ self.empty_slots)

    def mean_drained_slots(self) -> float:
        drained = np.minimum(np.arange(self.geometry.n + 1), self.geometry.m)
        return float(self.steady_state @ drained)

    def balance_residual(self) -> float:
        return float(np.abs(self.steady_state @ self.transition - self.steady_state).max())

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("state,probability\n")
            for u, p in enumerate(self.steady_state):
                fh.write(f"{u},{p:.17g}\n")


def solve_primary(cfg: ScenarioConfig, geometry: FrameGeometry | None = None) -> PrimaryChain:
    geometry = geometry or derive_geometry(cfg)
    P = build_transition_matrix(geometry, cfg.lambda_p)
    return PrimaryChain(geometry=geometry, lambda_p=cfg.lambda_p, transition=P,
                        steady_state=steady_state(P), arrival_pmf=arrival_pmf(cfg.lambda_p))
