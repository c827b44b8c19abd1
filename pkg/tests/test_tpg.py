import numpy as np
import pytest

from htpg.errors import ConfigError, DataError
from htpg.netlist import parse_bench
from htpg.profiling import profile_netlist
from htpg.sim import DagState, simulate, simulator_for
from htpg.tpg import (
    AdaTestConfig,
    RewardBreakdown,
    check_termination,
    coverage_pct,
    format_patterns,
    generate_candidates,
    make_test_set,
    parse_patterns,
    reward,
    run_adatest,
    select_top,
    trace_to_csv,
    update_weights,
    v_dag,
    v_rare,
    v_scoap,
)

from helpers import all_inputs

SMALL = (
    "INPUT(a)\nINPUT(b)\nINPUT(c)\nINPUT(d)\n"
    "OUTPUT(z)\nOUTPUT(w)\n"
    "t1 = AND(a, b)\n"
    "t2 = AND(c, d)\n"
    "z = AND(t1, t2)\n"
    "w = NOR(a, c)\n"
)


def small_setup(theta=0.3):
    net = parse_bench(SMALL, "small")
    prof = profile_netlist(net, theta=theta, trials=30_000, seed=3)
    return net, prof


def tiny_config(**kw):
    base = dict(candidate_count=20, select_count=8, max_iterations=10,
                target_activations=3, coverage_percent=95.0, seed=1)
    base.update(kw)
    return AdaTestConfig(**base)


# --- reward terms ---------------------------------------------------------


def test_v_rare_values():
    assert v_rare([20, 20], 20) == 0.0
    assert v_rare([0, 0], 20) == -40.0
    assert v_rare([5, 30], 20) == -25.0


def test_v_rare_never_positive():
    rng = np.random.default_rng(0)
    for _ in range(50):
        counts = rng.integers(0, 60, size=rng.integers(1, 9))
        target = int(rng.integers(1, 30))
        val = v_rare(counts, target)
        assert val <= 0
        assert (val == 0) == bool(np.all(counts == target))


def test_v_scoap_values():
    net, prof = small_setup()
    assert v_scoap([], prof) == 0.0
    by_name = {r.name: r for r in prof.rare}
    z = by_name["z"]
    expect = (prof.cc1[z.node_id] if z.rare_value else prof.cc0[z.node_id]) + \
        prof.co[z.node_id]
    assert v_scoap([z], prof) == expect
    two = [r for r in prof.rare[:2]]
    assert v_scoap(two, prof) == sum(prof.scoap_weight(r) for r in two)


def test_v_dag_endpoints():
    net = parse_bench(SMALL, "small")
    a = simulate(net, [1, 1, 1, 1])
    same = simulate(net, [1, 1, 1, 1])
    assert v_dag(a, [same]) == 0.0
    flipped = DagState(1 - a.bits, net)
    assert v_dag(flipped, [a]) == 1.0
    assert v_dag(a, []) == 0.0


def test_v_dag_symmetry_and_half():
    net = parse_bench(SMALL, "small")
    a = simulate(net, [0, 1, 0, 1])
    b = simulate(net, [1, 0, 1, 0])
    assert v_dag(a, [b]) == v_dag(b, [a])
    n = len(a.bits)
    base = np.zeros(n, dtype=np.uint8)
    half = base.copy()
    half[: n // 2] = 1
    if n % 2 == 0:
        assert v_dag(DagState(half, net),
                     [DagState(base, net)]) == pytest.approx(0.5)


def test_v_dag_mismatched_length():
    net = parse_bench(SMALL, "small")
    a = simulate(net, [0, 0, 0, 0])
    with pytest.raises(DataError):
        v_dag(a, [DagState(np.zeros(3, dtype=np.uint8), net)])


def test_reward_weighted_total_exact():
    # fixed breakdown, reference weights: exact linear combination
    cfg = AdaTestConfig()
    total = cfg.lambda1 * -25 + cfg.lambda2 * 5 + cfg.lambda3 * 0.5
    assert total == pytest.approx(-1.249375, abs=1e-12)


def test_reward_against_naive_reimplementation():
    net, prof = small_setup()
    cfg = tiny_config()
    init = np.asarray([[0, 0, 0, 0], [1, 1, 0, 1], [0, 1, 1, 1]],
                      dtype=np.uint8)
    state = make_test_set(net, prof, init)
    pos = net.flatten_pos()

    for bits in all_inputs(4):
        got = reward(np.asarray(bits, dtype=np.uint8), state, prof, net, cfg)

        # naive recomputation from scratch
        cand_state = simulate(net, list(bits))
        activated = [r for r in prof.rare
                     if int(cand_state.bits[pos[r.node_id]]) == r.rare_value]
        counts = {r.name: 0 for r in prof.rare}
        for vec in state.vectors:
            st = simulate(net, vec.tolist())
            for r in prof.rare:
                if int(st.bits[pos[r.node_id]]) == r.rare_value:
                    counts[r.name] += 1
        for r in activated:
            counts[r.name] += 1
        exp_vr = -sum(abs(cfg.target_activations - counts[r.name])
                      for r in prof.rare)
        exp_vs = sum(prof.scoap_weight(r) for r in activated)
        dists = []
        for vec in state.vectors:
            st = simulate(net, vec.tolist())
            dists.append(np.count_nonzero(st.bits != cand_state.bits)
                         / len(st.bits))
        exp_vd = sum(dists) / len(dists)

        assert got.v_rare == pytest.approx(exp_vr)
        assert got.v_scoap == pytest.approx(exp_vs)
        assert got.v_dag == pytest.approx(exp_vd)
        exp_total = (cfg.lambda1 * exp_vr + cfg.lambda2 * exp_vs
                     + cfg.lambda3 * exp_vd)
        assert got.total == pytest.approx(exp_total, abs=1e-12)


def test_reward_linear_in_lambdas():
    net, prof = small_setup()
    state = make_test_set(net, prof,
                          np.asarray([[1, 0, 1, 0]], dtype=np.uint8))
    cand = np.asarray([1, 1, 1, 1], dtype=np.uint8)
    base = reward(cand, state, prof, net, tiny_config())
    for l1, l2, l3 in [(0, 0, 0), (1, 0, 0), (0.3, 2.0, 5.0)]:
        r = reward(cand, state, prof, net,
                   tiny_config(lambda1=l1, lambda2=l2, lambda3=l3))
        assert (r.v_rare, r.v_scoap, r.v_dag) == \
            (base.v_rare, base.v_scoap, base.v_dag)
        expect = l1 * r.v_rare + l2 * r.v_scoap + l3 * r.v_dag
        assert abs(r.total - expect) < 1e-12


def test_reward_width_mismatch():
    net, prof = small_setup()
    state = make_test_set(net, prof,
                          np.asarray([[0, 0, 0, 0]], dtype=np.uint8))
    with pytest.raises(DataError):
        reward(np.asarray([0, 1], dtype=np.uint8), state, prof, net,
               tiny_config())


# --- candidate generation and selection -----------------------------------


def test_generate_candidates_degenerate_mutation():
    net, prof = small_setup()
    vecs = np.asarray(list(all_inputs(4))[:5], dtype=np.uint8)
    state = make_test_set(net, prof, vecs)
    cfg = tiny_config(mutation_rate=0.0, explore_fraction=0.0)
    cands = generate_candidates(state, 40, cfg, seed=0)
    rows = {tuple(v) for v in vecs.tolist()}
    assert all(tuple(c) in rows for c in cands.tolist())


def test_generate_candidates_forced_flip():
    net, prof = small_setup()
    vecs = np.asarray([[0, 0, 0, 0], [1, 1, 1, 1]], dtype=np.uint8)
    state = make_test_set(net, prof, vecs)
    cfg = tiny_config(mutation_rate=1.0, explore_fraction=0.0)
    cands = generate_candidates(state, 30, cfg, seed=2)
    rows = {tuple(v) for v in (1 - vecs).tolist()}
    assert all(tuple(c) in rows for c in cands.tolist())


def test_generate_candidates_concentrated_weights():
    net, prof = small_setup()
    vecs = np.asarray([[0, 1, 0, 1], [1, 0, 1, 0]], dtype=np.uint8)
    state = make_test_set(net, prof, vecs)
    state.masses = np.asarray([0.0 + 1e-300, 1.0])
    cfg = tiny_config(mutation_rate=0.0, explore_fraction=0.0)
    cands = generate_candidates(state, 200, cfg, seed=5)
    assert np.array_equal(cands, np.tile(vecs[1], (200, 1)))


def test_generate_candidates_deterministic():
    net, prof = small_setup()
    state = make_test_set(net, prof,
                          np.asarray([[0, 1, 1, 0]], dtype=np.uint8))
    cfg = tiny_config()
    a = generate_candidates(state, 50, cfg, seed=9)
    b = generate_candidates(state, 50, cfg, seed=9)
    c = generate_candidates(state, 50, cfg, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_select_top_ordering_and_ties():
    cands = np.asarray([[0, 0], [0, 1], [1, 0]], dtype=np.uint8)
    got = select_top(cands, [3.0, 1.0, 2.0], 2)
    assert got.tolist() == [[0, 0], [1, 0]]
    tied = select_top(cands, [1.0, 1.0, 1.0], 2)
    assert tied.tolist() == [[0, 0], [0, 1]]
    everything = select_top(cands, [1.0, 3.0, 2.0], 3)
    assert everything.tolist() == [[0, 1], [1, 0], [0, 0]]


def test_select_top_accepts_breakdowns():
    r = [RewardBreakdown(0, 0, 0, t) for t in (0.5, 2.5, 1.5)]
    got = select_top(["a", "b", "c"], r, 1)
    assert got == ["b"]


def test_select_top_errors():
    with pytest.raises(ConfigError):
        select_top([1, 2], [0.1, 0.2], 3)
    with pytest.raises(ConfigError):
        select_top([1, 2], [0.1], 1)


def test_update_weights_symmetry_and_monotonicity():
    net, prof = small_setup()
    state = make_test_set(net, prof,
                          np.asarray([[0, 0, 0, 0], [1, 1, 1, 1]],
                                     dtype=np.uint8))
    update_weights(state, [2.0, 2.0])
    assert state.sampling_weights.tolist() == [0.5, 0.5]
    update_weights(state, [1.0, 1.5])
    w = state.sampling_weights
    assert w[1] > w[0]
    assert w.sum() == pytest.approx(1.0)


def test_update_weights_random_streams_stay_normalized():
    net, prof = small_setup()
    rng = np.random.default_rng(4)
    vecs = rng.integers(0, 2, size=(6, 4), dtype=np.uint8)
    state = make_test_set(net, prof, vecs)
    for _ in range(30):
        k = int(rng.integers(1, 7))
        rewards = rng.normal(size=k) * rng.choice([0.01, 1, 100])
        update_weights(state, rewards.tolist())
        w = state.sampling_weights
        assert np.all(w >= 0)
        assert w.sum() == pytest.approx(1.0)


def test_update_weights_rejects_bad_input():
    net, prof = small_setup()
    state = make_test_set(net, prof,
                          np.asarray([[0, 0, 0, 0]], dtype=np.uint8))
    with pytest.raises(ConfigError):
        update_weights(state, [1.0, 2.0])
    with pytest.raises(DataError):
        update_weights(state, [float("nan")])


# --- termination ----------------------------------------------------------


def _state_with_counters(counters):
    net, prof = small_setup()
    state = make_test_set(net, prof,
                          np.asarray([[0, 0, 0, 0]], dtype=np.uint8))
    state.counters = np.asarray(counters, dtype=np.int64)
    return state


def test_check_termination_coverage():
    cfg = AdaTestConfig(coverage_percent=95.0, target_activations=20)
    counters = [20] * 96 + [1] * 4
    assert check_termination(_state_with_counters(counters), 3, None,
                             cfg) == "coverage"


def test_check_termination_zero_counter_blocks():
    cfg = AdaTestConfig(coverage_percent=95.0, target_activations=20)
    counters = [20] * 96 + [1] * 3 + [0]
    assert check_termination(_state_with_counters(counters), 3, None,
                             cfg) is None


def test_check_termination_budget():
    cfg = AdaTestConfig(max_iterations=7)
    state = _state_with_counters([0, 0])
    assert check_termination(state, 6, None, cfg) is None
    assert check_termination(state, 7, None, cfg) == "budget"


def test_check_termination_oracle_first():
    cfg = AdaTestConfig(max_iterations=1, coverage_percent=1.0,
                        target_activations=1)
    state = _state_with_counters([5, 5])
    assert check_termination(state, 1, lambda v: True, cfg) == "oracle"
    assert check_termination(state, 1, lambda v: False, cfg) == "coverage"


# --- config ---------------------------------------------------------------


def test_config_defaults():
    cfg = AdaTestConfig()
    assert (cfg.candidate_count, cfg.select_count) == (200, 80)
    assert (cfg.coverage_percent, cfg.target_activations) == (95.0, 20)
    assert cfg.max_iterations == 500
    assert (cfg.lambda1, cfg.lambda2, cfg.lambda3) == (0.05, 0.0001, 0.00025)
    assert cfg.theta == 0.1 and cfg.trials == 100_000


def test_config_validation():
    with pytest.raises(ConfigError):
        AdaTestConfig(select_count=300)
    with pytest.raises(ConfigError):
        AdaTestConfig(coverage_percent=0)
    with pytest.raises(ConfigError):
        AdaTestConfig(target_activations=0)
    with pytest.raises(ConfigError):
        AdaTestConfig(mutation_rate=1.5)
    with pytest.raises(ConfigError):
        AdaTestConfig(lambda2=-0.1)


def test_config_json_round_trip():
    cfg = AdaTestConfig(candidate_count=50, select_count=10, seed=7)
    again = AdaTestConfig.from_json(cfg.to_json())
    assert again == cfg
    partial = AdaTestConfig.from_json('{"seed": 3}')
    assert partial.seed == 3 and partial.candidate_count == 200
    with pytest.raises(DataError):
        AdaTestConfig.from_json('{"bogus_knob": 1}')
    with pytest.raises(DataError):
        AdaTestConfig.from_json("not json")


# --- full loop ------------------------------------------------------------


def test_run_adatest_growth_and_monotone_coverage():
    net, prof = small_setup()
    cfg = tiny_config(max_iterations=6, coverage_percent=100.0,
                      target_activations=50)  # force budget stop
    res = run_adatest(net, prof, cfg)
    assert res.termination == "budget"
    assert res.iterations == 6
    assert res.test_set.n_vectors == cfg.select_count * (6 + 1)
    covs = [row.coverage_pct for row in res.trace]
    assert covs == sorted(covs)
    mins = [row.min_counter for row in res.trace]
    assert mins == sorted(mins)


def test_run_adatest_counters_match_recount():
    net, prof = small_setup()
    cfg = tiny_config(max_iterations=4, coverage_percent=100.0,
                      target_activations=100)
    res = run_adatest(net, prof, cfg)
    sim = simulator_for(net)
    states = sim.eval_bool(res.test_set.vectors)
    pos = net.flatten_pos()
    for j, r in enumerate(prof.rare):
        manual = int(np.count_nonzero(states[:, pos[r.node_id]]
                                      == r.rare_value))
        assert manual == int(res.test_set.counters[j])


def test_run_adatest_deterministic():
    net, prof = small_setup()
    cfg = tiny_config(max_iterations=3, coverage_percent=100.0,
                      target_activations=40, seed=11)
    a = run_adatest(net, prof, cfg)
    b = run_adatest(net, prof, cfg)
    assert np.array_equal(a.test_set.vectors, b.test_set.vectors)
    assert a.trace == b.trace
    c = run_adatest(net, prof, tiny_config(max_iterations=3,
                                           coverage_percent=100.0,
                                           target_activations=40, seed=12))
    assert not np.array_equal(a.test_set.vectors, c.test_set.vectors)


def test_run_adatest_coverage_stop():
    net, prof = small_setup()
    cfg = tiny_config(max_iterations=200, coverage_percent=95.0,
                      target_activations=2)
    res = run_adatest(net, prof, cfg)
    assert res.termination == "coverage"
    counters = res.test_set.counters
    assert int(counters.min()) >= 1
    assert coverage_pct(counters, 2) >= 95.0


def test_run_adatest_trigger_oracle():
    # known 2-node trigger on a 4-PI circuit: z goes high only on a=b=c=d=1;
    # exhaustive check first that an activating input exists, then the loop
    # must find it and stop with the oracle reason.
    net, prof = small_setup()
    pos = net.flatten_pos()
    zid = pos[net.id_of("z")]

    def trigger(vectors):
        sim = simulator_for(net)
        states = sim.eval_bool(np.asarray(vectors, dtype=np.uint8))
        return bool(np.any(states[:, zid] == 1))

    assert any(trigger(np.asarray([bits], dtype=np.uint8))
               for bits in all_inputs(4))
    cfg = tiny_config(max_iterations=300, coverage_percent=100.0,
                      target_activations=60)
    res = run_adatest(net, prof, cfg, trojan_oracle=trigger)
    assert res.termination == "oracle"
    assert trigger(res.test_set.vectors)


def test_run_adatest_oracle_sees_each_vector_once():
    net, prof = small_setup()
    seen = []

    def oracle(vectors):
        seen.append(np.asarray(vectors))
        return False

    cfg = tiny_config(max_iterations=3, coverage_percent=100.0,
                      target_activations=50)
    res = run_adatest(net, prof, cfg, trojan_oracle=oracle)
    total = sum(len(v) for v in seen)
    assert total == res.test_set.n_vectors


def test_run_adatest_random_init_baseline():
    net, prof = small_setup()
    cfg = tiny_config(max_iterations=2, coverage_percent=100.0,
                      target_activations=50)
    res = run_adatest(net, prof, cfg, smart_init=False)
    assert res.test_set.n_vectors == cfg.select_count * 3
    assert not res.init_fallback


def test_run_adatest_rejects_foreign_profile():
    net, prof = small_setup()
    other = parse_bench("INPUT(a)\nOUTPUT(b)\nb = NOT(a)\n", "other")
    with pytest.raises(DataError):
        run_adatest(other, prof, tiny_config())


def test_batch_reward_matches_public_reward():
    # the vectorized scoring inside the loop must agree with reward()
    net, prof = small_setup()
    cfg = tiny_config(max_iterations=1, coverage_percent=100.0,
                      target_activations=30)
    res = run_adatest(net, prof, cfg)
    state = res.test_set
    # rebuild the state as of iteration start (the first L vectors)
    L = cfg.select_count
    start = make_test_set(net, prof, state.vectors[:L])
    new_vectors = state.vectors[L:]
    masses = state.masses[L:]
    rewards = [reward(v, start, prof, net, cfg) for v in new_vectors]
    totals = np.asarray([r.total for r in rewards])
    expect_masses = totals - totals.min() + 1e-6
    assert np.allclose(masses, expect_masses, atol=1e-12)


# --- trace and pattern files ----------------------------------------------


def test_trace_csv_shape():
    net, prof = small_setup()
    cfg = tiny_config(max_iterations=2, coverage_percent=100.0,
                      target_activations=50)
    res = run_adatest(net, prof, cfg)
    text = trace_to_csv(res.trace)
    lines = text.strip().splitlines()
    assert lines[0] == "iteration,coverage_pct,min_counter,median_counter"
    assert len(lines) == len(res.trace) + 1
    first = lines[1].split(",")
    assert first[0] == "0"


def test_pattern_round_trip():
    rng = np.random.default_rng(8)
    vecs = rng.integers(0, 2, size=(17, 9), dtype=np.uint8)
    again = parse_patterns(format_patterns(vecs))
    assert np.array_equal(vecs, again)


def test_pattern_parse_errors():
    with pytest.raises(DataError):
        parse_patterns("01x0\n")
    with pytest.raises(DataError):
        parse_patterns("010\n01\n")
    with pytest.raises(DataError):
        parse_patterns("\n  \n")


def test_pattern_parse_skips_blank_lines():
    arr = parse_patterns("0101\n\n1010\n")
    assert arr.tolist() == [[0, 1, 0, 1], [1, 0, 1, 0]]


def test_coverage_pct_empty_and_partial():
    assert coverage_pct(np.asarray([], dtype=np.int64), 5) == 100.0
    assert coverage_pct([5, 5, 0, 4], 5) == 50.0
