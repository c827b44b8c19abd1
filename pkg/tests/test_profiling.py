import math
import random

import numpy as np
import pytest

from helpers import all_inputs, oracle_eval, random_netlist

from htpg.errors import ConfigError
from htpg.netlist import parse_bench
from htpg.profiling import (
    Profile,
    UNOBSERVABLE,
    compute_scoap,
    estimate_transition_probabilities,
    identify_rare_nodes,
    profile_netlist,
)

AND2 = "INPUT(a)\nINPUT(b)\nOUTPUT(c)\nc = AND(a, b)\n"


def scoap_fixed_point(net):
    """Independent SCOAP oracle: iterate the rules in arbitrary node order
    until nothing changes (no levelization involved)."""
    INF = math.inf
    cc0 = {n: INF for n in net.names}
    cc1 = {n: INF for n in net.names}
    for p in net.pis:
        cc0[p] = cc1[p] = 1
    changed = True
    while changed:
        changed = False
        for g in net.gates:
            ins = list(g.ins)
            if any(cc0[i] is INF or cc1[i] is INF for i in ins):
                if g.kind not in ("AND", "NAND", "OR", "NOR"):
                    continue
            if g.kind in ("AND", "NAND"):
                a = sum(cc1[i] for i in ins) + 1
                b = min(cc0[i] for i in ins) + 1
                n1, n0 = (a, b) if g.kind == "AND" else (b, a)
            elif g.kind in ("OR", "NOR"):
                a = sum(cc0[i] for i in ins) + 1
                b = min(cc1[i] for i in ins) + 1
                n0, n1 = (a, b) if g.kind == "OR" else (b, a)
            elif g.kind in ("XOR", "XNOR"):
                even, odd = cc0[ins[0]], cc1[ins[0]]
                for i in ins[1:]:
                    even, odd = (
                        min(even + cc0[i], odd + cc1[i]),
                        min(even + cc1[i], odd + cc0[i]),
                    )
                if g.kind == "XOR":
                    n0, n1 = even + 1, odd + 1
                else:
                    n0, n1 = odd + 1, even + 1
            elif g.kind == "NOT":
                n0, n1 = cc1[ins[0]] + 1, cc0[ins[0]] + 1
            else:  # BUF
                n0, n1 = cc0[ins[0]] + 1, cc1[ins[0]] + 1
            if n0 < cc0[g.out] or n1 < cc1[g.out]:
                cc0[g.out] = min(cc0[g.out], n0)
                cc1[g.out] = min(cc1[g.out], n1)
                changed = True

    co = {n: INF for n in net.names}
    for p in net.pos:
        co[p] = 0
    changed = True
    while changed:
        changed = False
        for g in net.gates:
            if co[g.out] is INF or co[g.out] == INF:
                continue
            for pin, a in enumerate(g.ins):
                others = [i for p, i in enumerate(g.ins) if p != pin]
                if g.kind in ("AND", "NAND"):
                    side = sum(cc1[i] for i in others)
                elif g.kind in ("OR", "NOR"):
                    side = sum(cc0[i] for i in others)
                elif g.kind in ("XOR", "XNOR"):
                    side = sum(min(cc0[i], cc1[i]) for i in others)
                else:
                    side = 0
                cand = co[g.out] + side + 1
                if cand < co[a]:
                    co[a] = cand
                    changed = True
    return cc0, cc1, co


def test_probabilities_on_and_gate():
    net = parse_bench(AND2)
    p_one, p_trans = estimate_transition_probabilities(net, trials=100_000, seed=1)
    c = net.id_of("c")
    assert abs(p_one[c] - 0.25) < 0.01
    assert abs(p_trans[c] - 3 / 16) < 0.01
    for pid in net.pi_ids:
        assert abs(p_one[pid] - 0.5) < 0.01
        assert abs(p_trans[pid] - 0.25) < 0.005


def test_probabilities_match_exhaustive_enumeration():
    rng = random.Random(77)
    for _ in range(5):
        net = random_netlist(rng, n_pi=rng.randint(2, 6), n_gates=rng.randint(4, 25))
        n_pi = len(net.pis)
        exact_ones = {n: 0 for n in net.names}
        for bits in all_inputs(n_pi):
            vals = oracle_eval(net, dict(zip(net.pis, bits)))
            for n, v in vals.items():
                exact_ones[n] += v
        trials = 40_000
        p_one, _ = estimate_transition_probabilities(net, trials=trials, seed=3)
        for nid in range(net.n_nodes):
            p_exact = exact_ones[net.name_of(nid)] / (1 << n_pi)
            sigma = math.sqrt(max(p_exact * (1 - p_exact), 1e-12) / trials)
            assert abs(p_one[nid] - p_exact) <= max(3 * sigma, 1e-9), net.name_of(nid)


def test_trials_validation():
    net = parse_bench(AND2)
    with pytest.raises(ConfigError):
        estimate_transition_probabilities(net, trials=0)


def test_jobs_do_not_change_results():
    rng = random.Random(4)
    net = random_netlist(rng, n_pi=8, n_gates=40)
    a = estimate_transition_probabilities(net, trials=10_000, seed=9, jobs=1)
    b = estimate_transition_probabilities(net, trials=10_000, seed=9, jobs=4)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_rare_identification_four_input_and():
    text = "INPUT(a)\nINPUT(b)\nINPUT(c)\nINPUT(d)\nOUTPUT(y)\ny = AND(a, b, c, d)\n"
    net = parse_bench(text)
    p_one, p_trans = estimate_transition_probabilities(net, trials=100_000, seed=2)
    rare = identify_rare_nodes(net, p_one, p_trans, theta=0.1)
    assert [r.name for r in rare] == ["y"]
    assert rare[0].rare_value == 1
    assert abs(rare[0].p_trans - 15 / 256) < 0.01


def test_rare_value_is_minority_value():
    # NAND output is 1 most of the time: rare value must be 0
    text = "INPUT(a)\nINPUT(b)\nINPUT(c)\nINPUT(d)\nOUTPUT(y)\ny = NAND(a, b, c, d)\n"
    net = parse_bench(text)
    p_one, p_trans = estimate_transition_probabilities(net, trials=50_000, seed=2)
    rare = identify_rare_nodes(net, p_one, p_trans, theta=0.1)
    assert [r.name for r in rare] == ["y"]
    assert rare[0].rare_value == 0


def test_theta_monotonicity_and_boundary():
    rng = random.Random(10)
    net = random_netlist(rng, n_pi=6, n_gates=30)
    p_one, p_trans = estimate_transition_probabilities(net, trials=20_000, seed=5)
    small = {r.node_id for r in identify_rare_nodes(net, p_one, p_trans, 0.03)}
    big = {r.node_id for r in identify_rare_nodes(net, p_one, p_trans, 0.2)}
    assert small <= big
    everything = identify_rare_nodes(net, p_one, p_trans, 0.2500001)
    assert len(everything) == net.n_nodes
    with pytest.raises(ConfigError):
        identify_rare_nodes(net, p_one, p_trans, 0.0)


def test_scoap_and_gate_example():
    net = parse_bench(AND2)
    cc0, cc1, co = compute_scoap(net)
    c, a, b = net.id_of("c"), net.id_of("a"), net.id_of("b")
    assert cc1[c] == 3 and cc0[c] == 2
    assert co[c] == 0
    assert co[a] == 2 and co[b] == 2


def test_scoap_inverter_example():
    net = parse_bench("INPUT(a)\nOUTPUT(y)\ny = NOT(a)\n")
    cc0, cc1, co = compute_scoap(net)
    a, y = net.id_of("a"), net.id_of("y")
    assert cc0[y] == 2 and cc1[y] == 2
    assert co[a] == 1 and co[y] == 0


def test_scoap_fanout_stem_takes_min_branch():
    text = (
        "INPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(u)\nOUTPUT(v)\n"
        "u = BUF(a)\n"
        "v = AND(a, b, c)\n"
    )
    net = parse_bench(text)
    _, _, co = compute_scoap(net)
    # branch via BUF costs 1, via AND costs cc1(b)+cc1(c)+1 = 3; stem takes 1
    assert co[net.id_of("a")] == 1


def test_scoap_matches_fixed_point_oracle():
    rng = random.Random(123)
    for _ in range(12):
        net = random_netlist(rng, n_pi=rng.randint(3, 8), n_gates=rng.randint(10, 50))
        cc0, cc1, co = compute_scoap(net)
        o0, o1, oco = scoap_fixed_point(net)
        for nid in range(net.n_nodes):
            n = net.name_of(nid)
            assert cc0[nid] == o0[n], n
            assert cc1[nid] == o1[n], n
            want = UNOBSERVABLE if oco[n] == math.inf else oco[n]
            assert co[nid] == want, n


def test_scoap_cc_at_least_one_everywhere():
    rng = random.Random(17)
    net = random_netlist(rng, n_pi=5, n_gates=40)
    cc0, cc1, _ = compute_scoap(net)
    assert (cc0 >= 1).all() and (cc1 >= 1).all()


def test_profile_json_roundtrip_and_determinism():
    net = parse_bench(AND2)
    p1 = profile_netlist(net, theta=0.1, trials=5_000, seed=42)
    p2 = profile_netlist(net, theta=0.1, trials=5_000, seed=42)
    assert p1.to_json() == p2.to_json()
    back = Profile.from_json(p1.to_json())
    assert back.to_json() == p1.to_json()
    assert back.circuit == net.name
    back.validate_against(net)


def test_profile_validate_against_rejects_other_netlist():
    net = parse_bench(AND2)
    other = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(c)\nc = OR(a, b)\n")
    prof = profile_netlist(net, trials=1000, seed=0)
    with pytest.raises(Exception):
        prof.validate_against(other)
