import numpy as np
import pytest

from oracles import free_grid

from cogwlan import ScenarioConfig, Striping, analyze, simulate
from cogwlan.config import derive_geometry
from cogwlan.primary_chain import solve_primary
from cogwlan.simulator import PrimaryProcess, Simulation, occupancy_mask

G = derive_geometry(ScenarioConfig())


def test_same_seed_same_run():
    cfg = ScenarioConfig(lambda_p=25.0, n_s=5)
    a = simulate(cfg, seed=7, horizon_frames=1500)
    b = simulate(cfg, seed=7, horizon_frames=1500)
    c = simulate(cfg, seed=8, horizon_frames=1500)
    assert a.per_node_packets == b.per_node_packets
    assert a.batch_throughputs == b.batch_throughputs
    assert a.per_node_packets != c.per_node_packets


@pytest.mark.parametrize("policy", list(Striping))
def test_audits_stay_clean(policy):
    r = simulate(ScenarioConfig(lambda_p=30.0, n_s=10, striping=policy), seed=2, horizon_frames=4000)
    assert r.audit["slot_overlaps"] == 0
    assert r.audit["overlapping_data"] == 0
    assert r.audit["ul_completions"] == 0
    if policy is not Striping.RECTANGULAR:
        assert r.audit["frames_checked"] > 0
    assert r.packets > 0 and r.ci95_halfwidth > 0


@pytest.mark.parametrize("policy", [Striping.HORIZONTAL, Striping.VERTICAL])
def test_occupancy_mask_matches_grid(policy):
    for u in (0, 1, 13, 29, 30, 31, 200, 389, 390, 550):
        free = (~occupancy_mask(u, policy, G.rows, G.cols_dl, G.m)).sum(axis=0)
        assert np.array_equal(free, free_grid(u, policy.value, G.rows, G.cols_dl, G.m))


def test_primary_process_matches_chain():
    cfg = ScenarioConfig(lambda_p=25.0)
    pp = PrimaryProcess(cfg, np.random.default_rng(3))
    emp = pp.histogram(10**6) / 10**6
    assert 0.5 * np.abs(emp - solve_primary(cfg).steady_state).sum() <= 0.01


def test_transmit_on_idle_band():
    sim = Simulation(ScenarioConfig(lambda_p=0.0, n_s=1), seed=1)
    assert sim.transmit(0.1e-3, 60) == pytest.approx(0.6e-3)
    assert sim.transmit(2.4e-3, 60) == pytest.approx(5.2e-3)      # last column, then column 1 of the next frame
    assert sim.transmit(3.0e-3, 60) == pytest.approx(5.4e-3)      # uplink start waits for the next frame


def test_single_node_has_no_collisions():
    r = simulate(ScenarioConfig(lambda_p=0.0, n_s=1), seed=4, horizon_frames=2000)
    assert r.collisions == 0 and r.slot_counts["collision"] == 0


def test_start_instants_follow_analytic_pmf():
    cfg = ScenarioConfig(lambda_p=25.0, n_s=10)
    r = simulate(cfg, seed=4, horizon_frames=40000)
    emp = r.start_symbol_counts / r.start_symbol_counts.sum()
    assert 0.5 * np.abs(emp - analyze(cfg).solution.start_pmf).sum() <= 0.05


def test_short_run_close_to_analytic():
    cfg = ScenarioConfig(lambda_p=15.0, n_s=5)
    r = simulate(cfg, seed=9, horizon_frames=10000)
    lam = analyze(cfg).lambda_sat
    assert abs(r.per_su_throughput - lam) / lam <= 0.03
    assert r.network_throughput == pytest.approx(5 * r.per_su_throughput)
    assert sum(r.per_node_packets) == r.packets


def test_run_arguments_checked():
    sim = Simulation(ScenarioConfig(), seed=1)
    with pytest.raises(ValueError):
        sim.run(100, warmup_frames=100)
    with pytest.raises(ValueError):
        sim.run(100, batches=1)


def test_csv_row():
    cfg = ScenarioConfig(lambda_p=10.0, n_s=3)
    row = simulate(cfg, seed=5, horizon_frames=500).csv_row(cfg)
    assert row["seed"] == 5 and row["n_s"] == 3 and row["policy"] == "horizontal"
