from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from oracles import single_node_cycle

from cogwlan import ScenarioConfig, Striping, analyze
from cogwlan.analysis import transmission_table
from cogwlan.config import derive_geometry
from cogwlan.mac import mac_model
from cogwlan.qn1 import build_routing, node_occupancy, saturation, solve_traffic


@lru_cache(maxsize=None)
def routing_for(lam=25.0, n_s=5, q=1, rounding="ceil", policy=Striping.HORIZONTAL):
    cfg = ScenarioConfig(lambda_p=lam, n_s=n_s, phase_ticks=q, rounding=rounding, striping=policy)
    mac = mac_model(cfg)
    return build_routing(mac, transmission_table(cfg, mac), derive_geometry(cfg), cfg)


ALLOWED = {
    "VS": lambda n, m: {("VS", n), ("RTS", n)},
    "RTS": lambda n, m: {("CTS", n), ("VS", min(n + 1, m))},
    "CTS": lambda n, m: {("TR",)},
    "TR": lambda n, m: {("ACK",)},
    "ACK": lambda n, m: set(),
}


def test_routing_rows_are_stochastic_and_sparse():
    r = routing_for()
    for node in r.nodes():
        allowed = ALLOWED[node[0]](node[1] if len(node) > 1 else 0, r.m_stages)
        for cls in r.classes(node):
            row = r.row(node, cls)
            assert sum(row.values()) == pytest.approx(1.0, abs=1e-12)
            targets = {key[0] for key in row if key[0] != "out"}
            assert targets <= allowed, (node, cls, targets)
            if node[0] != "ACK":
                assert not any(key[0] == "out" for key in row)


def test_sparse_system_matches_rows():
    r = routing_for()
    index, R, E, tau = r.sparse_system()
    sums = np.asarray(R.sum(axis=1)).ravel() + np.asarray(E.sum(axis=1)).ravel()
    assert np.allclose(sums, 1.0, atol=1e-12)
    assert (tau >= 0).all()
    assert tau[index[(("TR",), 7)]] == pytest.approx(r.gamma[7])


def test_single_node_never_collides():
    cfg = ScenarioConfig(lambda_p=25.0, n_s=1, phase_ticks=1)
    mac = mac_model(cfg)
    r = build_routing(mac, transmission_table(cfg, mac), derive_geometry(cfg), cfg)
    row = r.row(("RTS", 1), 3)
    assert set(k[0] for k in row) == {("CTS", 1)}
    traffic = solve_traffic(r)
    for n in range(1, cfg.m_stages):
        assert np.abs(traffic.vs[n]).max() == 0.0
        assert np.abs(traffic.rts[n]).max() == 0.0


@pytest.mark.parametrize("kwargs", [dict(), dict(q=2, rounding="dither"), dict(lam=35.0, n_s=10)])
def test_kernel_solution_matches_explicit_iteration(kwargs):
    r = routing_for(**kwargs)
    fast = solve_traffic(r, method="kernel")
    slow = solve_traffic(r, method="iterate", tol=1e-13)
    for a, b in zip(fast.vs + fast.rts + fast.cts, slow.vs + slow.rts + slow.cts):
        assert np.abs(a - b).max() <= 1e-9
    assert np.abs(fast.tr - slow.tr).max() <= 1e-9
    lam_fast = saturation(fast, r).lambda_sat
    lam_slow = saturation(slow, r).lambda_sat
    assert lam_fast == pytest.approx(lam_slow, rel=1e-9)


def test_explicit_class_rates_conserve_flow():
    r = routing_for()
    traffic = solve_traffic(r, method="iterate", tol=1e-13)
    index, alpha, _ = traffic.class_alpha
    _, R, E, _ = r.sparse_system()
    lam = np.zeros(len(alpha))
    for key, rate in r.injection(traffic.exit).items():
        lam[index[key]] += rate
    residual = alpha - lam - R.T @ alpha
    assert np.abs(residual).max() <= 1e-10
    assert traffic.exit.sum() == pytest.approx(lam.sum(), rel=1e-10)
    for node, cls in [(("VS", 2), (4, "S", 3)), (("RTS", 1), 9), (("TR",), 20)]:
        assert traffic.class_rate(r, node, cls) == pytest.approx(alpha[index[(node, cls)]], abs=1e-12)


def test_stage_flows():
    r = routing_for(n_s=10, q=10)
    t = solve_traffic(r)
    p = r.mac.p_col
    assert t.exit.sum() == pytest.approx(1.0, abs=1e-10)
    assert t.entry.sum() == pytest.approx(1.0, abs=1e-12)
    # entries into stage n+1 are the collided share of RTS_n (stages 2..m-1)
    for n in range(r.m_stages - 2):
        entering = t.vs[n + 1][-1].sum() * r.windows[n + 1]
        assert entering == pytest.approx(p * t.rts[n].sum(), rel=1e-10)
    # CTS total equals the success share of every RTS
    assert sum(c.sum() for c in t.cts) == pytest.approx((1 - p) * sum(x.sum() for x in t.rts), rel=1e-10)
    assert t.tr.sum() == pytest.approx(1.0, rel=1e-10)


def test_scale_invariance():
    r = routing_for()
    t = solve_traffic(r)
    twice = replace(t, vs=[2 * v for v in t.vs], rts=[2 * v for v in t.rts], cts=[2 * v for v in t.cts],
                    tr=2 * t.tr, ack=2 * t.ack, exit=2 * t.exit)
    a, b = saturation(t, r), saturation(twice, r)
    for key in a.rho_per_node:
        assert b.rho_per_node[key] == pytest.approx(2 * a.rho_per_node[key], rel=1e-12)
    assert b.lambda_sat == pytest.approx(a.lambda_sat, rel=1e-12)


def test_occupancy_is_one_at_saturation():
    r = routing_for(n_s=10, q=10)
    t = solve_traffic(r)
    sol = saturation(t, r)
    scaled = replace(t, vs=[v * sol.lambda_sat for v in t.vs], rts=[v * sol.lambda_sat for v in t.rts],
                     cts=[v * sol.lambda_sat for v in t.cts], tr=t.tr * sol.lambda_sat,
                     ack=t.ack * sol.lambda_sat)
    assert sum(node_occupancy(r, scaled).values()) == pytest.approx(1.0, abs=1e-9)
    assert sol.rho_total == pytest.approx(sum(sol.rho_per_node.values()), rel=1e-14)
    assert sol.Lambda_sat == pytest.approx(10 * sol.lambda_sat)
    assert sol.start_pmf.sum() == pytest.approx(1.0, abs=1e-12)
    assert sol.start_pmf_fine.sum() == pytest.approx(1.0, abs=1e-12)
    assert (sol.start_pmf >= 0).all()


def test_tagged_node_sees_other_nodes_only():
    r = routing_for(n_s=5)
    tau = r.mac.tau_mac
    assert r.slot_probabilities["I"] == pytest.approx((1 - tau) ** 4)


@pytest.mark.parametrize("w0,t_idle", [(4, 20e-6), (8, 20e-6), (4, 30e-6), (16, 10e-6)])
def test_single_node_idle_band_matches_hand_cycle(w0, t_idle):
    cfg = ScenarioConfig(lambda_p=0.0, n_s=1, w0=w0, t_idle=t_idle)
    rate, _ = single_node_cycle(w0=w0, t_idle_us=round(t_idle * 1e6))
    assert analyze(cfg).lambda_sat == pytest.approx(rate, rel=1e-9)


def test_throughput_trends():
    base = [analyze(ScenarioConfig(lambda_p=lam, n_s=10)).lambda_sat for lam in (5.0, 20.0, 35.0)]
    assert base[0] > base[1] > base[2] > 0
    nodes = [analyze(ScenarioConfig(lambda_p=20.0, n_s=n)).lambda_sat for n in (2, 5, 10)]
    assert nodes[0] > nodes[1] > nodes[2]
    h = analyze(ScenarioConfig(lambda_p=25.0, n_s=10)).lambda_sat
    v = analyze(ScenarioConfig(lambda_p=25.0, n_s=10, striping=Striping.VERTICAL)).lambda_sat
    assert h >= v


def test_unknown_method():
    with pytest.raises(ValueError):
        solve_traffic(routing_for(), method="guess")
