"""End-to-end analytic pipeline for one scenario."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .config import FrameGeometry, ScenarioConfig, derive_geometry, tick_shift
from .mac import MacSlotModel, mac_model, network_slot_probabilities
from .primary_chain import PrimaryChain, solve_primary
from .qn1 import Qn1Routing, Qn1Solution, build_routing, saturation, solve_traffic
from .txtime import HandoverGap, TxTimeTable, build_table, handover_gap


@dataclass(frozen=True)
class Analysis:
    config: ScenarioConfig
    geometry: FrameGeometry
    chain: PrimaryChain
    table: TxTimeTable
    mac: MacSlotModel
    routing: Qn1Routing
    solution: Qn1Solution

    @property
    def lambda_sat(self) -> float:
        return self.solution.lambda_sat

    @property
    def big_lambda_sat(self) -> float:
        return self.solution.Lambda_sat


@lru_cache(maxsize=16)
def _chain(geometry: FrameGeometry, lambda_p: float) -> PrimaryChain:
    return solve_primary(ScenarioConfig(lambda_p=lambda_p), geometry)


def control_shifts(cfg: ScenarioConfig, geometry: FrameGeometry) -> dict:
    """Phase-tick advances of the control-channel durations."""
    return {name: tick_shift(t, geometry, cfg.rounding) for name, t in
            (("idle", cfg.t_idle), ("coll", cfg.collision_time), ("rts", cfg.t_rts),
             ("cts", cfg.t_cts), ("ack", cfg.t_ack))}


def gap_model(cfg: ScenarioConfig, mac: MacSlotModel, geometry: FrameGeometry) -> HandoverGap:
    p_i, p_c, p_s = network_slot_probabilities(mac.tau_mac, cfg.n_s)
    return handover_gap(p_i, p_c, p_s, control_shifts(cfg, geometry), geometry.n_phases)


def transmission_table(cfg: ScenarioConfig, mac: MacSlotModel | None = None) -> TxTimeTable:
    g = derive_geometry(cfg)
    gap = None
    if cfg.start_state == "handover":
        gap = gap_model(cfg, mac or mac_model(cfg), g)
    return build_table(_chain(g, float(cfg.lambda_p)), cfg.striping, cfg.s_s,
                       entry=cfg.start_state, gap=gap)


def analyze(cfg: ScenarioConfig) -> Analysis:
    """Primary chain, transmission-time table, MAC fixed point and cycle network."""
    g = derive_geometry(cfg)
    chain = _chain(g, float(cfg.lambda_p))
    mac = mac_model(cfg)
    table = transmission_table(cfg, mac)
    routing = build_routing(mac, table, g, cfg)
    solution = saturation(solve_traffic(routing), routing)
    return Analysis(cfg, g, chain, table, mac, routing, solution)
