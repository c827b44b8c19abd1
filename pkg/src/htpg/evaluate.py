"""Detection campaigns: coverage metrics and baseline generators.

Two baselines are reconstructed from their published descriptions. The
greedy one draws a random pool, sorts it by rare-node activations, and walks
each vector bit by bit, keeping a flip only when it strictly increases the
number of under-target rare nodes the vector activates; vectors that still
help an under-target counter are kept. For speed the pool is processed in
blocks of 64 bit-parallel lanes: within a block every lane flips the same
bit position at the same step against an under-target set frozen at block
start, then accepted vectors update the global counters sequentially. The
genetic one evolves a fixed-size population with elitist selection,
single-point crossover, and per-bit mutation; fitness is the activated
rare-node count plus the normalized testability cost of those nodes.

A campaign samples Trojans once, runs every requested method over the same
instances with seeds derived from one master seed, and aggregates trigger
coverage (trigger nodes individually hit), Trojan coverage (primary-output
mismatch against the golden circuit), set sizes, and generation wall-clock.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .netlist import Netlist
from .profiling import Profile
from .sim import simulator_for
from .tpg import AdaTestConfig, TestSet, activation_matrix, make_test_set, run_adatest
from .trojan import TrojanSpec, insert_trojan, sample_trojans

KNOWN_METHODS = ("mero", "triage", "adatest")


# -- coverage metrics ---------------------------------------------------------


def _vector_matrix(test_set) -> np.ndarray:
    if isinstance(test_set, TestSet):
        return test_set.vectors
    return np.atleast_2d(np.asarray(test_set, dtype=np.uint8))


def _golden_states(test_set, netlist: Netlist) -> np.ndarray:
    if isinstance(test_set, TestSet) and test_set.netlist is netlist:
        return test_set.states
    vectors = _vector_matrix(test_set)
    return simulator_for(netlist).eval_bool(vectors)


def trigger_coverage(test_set, netlist: Netlist, trojans) -> float:
    """Mean per-Trojan fraction of trigger nodes that at least one vector
    drives to its rare value, as a percentage."""
    if not trojans:
        raise DataError("trigger coverage needs at least one trojan")
    vectors = _vector_matrix(test_set)
    if vectors.shape[0] == 0:
        return 0.0
    states = _golden_states(test_set, netlist)
    pos = netlist.flatten_pos()
    total = 0.0
    for spec in trojans:
        hit = 0
        for r in spec.trigger_nodes:
            if np.any(states[:, pos[r.node_id]] == r.rare_value):
                hit += 1
        total += hit / len(spec.trigger_nodes)
    return 100.0 * total / len(trojans)


def detects(vectors, golden: Netlist, trojaned: Netlist) -> bool:
    """True if any vector exposes the Trojan at the primary outputs."""
    vectors = _vector_matrix(vectors)
    if vectors.shape[0] == 0:
        return False
    sim_g = simulator_for(golden)
    sim_t = simulator_for(trojaned)
    po_g = sim_g.po_matrix(sim_g.eval_bool(vectors))
    po_t = sim_t.po_matrix(sim_t.eval_bool(vectors))
    return not np.array_equal(po_g, po_t)


def trojan_coverage(test_set, golden: Netlist, trojans) -> float:
    """Percentage of Trojans whose inserted circuit disagrees with the
    golden one at the primary outputs for some vector in the set."""
    if not trojans:
        raise DataError("trojan coverage needs at least one trojan")
    vectors = _vector_matrix(test_set)
    if vectors.shape[0] == 0:
        return 0.0
    detected = sum(
        detects(vectors, golden, insert_trojan(golden, spec)) for spec in trojans
    )
    return 100.0 * detected / len(trojans)


# -- greedy baseline ----------------------------------------------------------


def _empty_test_set(netlist: Netlist, profile: Profile) -> TestSet:
    return TestSet(
        netlist=netlist,
        vectors=np.zeros((0, len(netlist.pis)), dtype=np.uint8),
        states=np.zeros((0, netlist.n_nodes), dtype=np.uint8),
        counters=np.zeros(len(profile.rare), dtype=np.int64),
        masses=np.zeros(0, dtype=np.float64),
    )


def run_mero(netlist: Netlist, profile: Profile, target: int = 1000,
             pool_size: int = 2500, seed=0) -> TestSet:
    """Greedy pool-mutation baseline. Stops when every rare counter reaches
    `target` or the pool is exhausted; `target` 0 returns an empty set."""
    if target < 0:
        raise ConfigError(f"target must be >= 0, got {target}")
    if pool_size < 1:
        raise ConfigError(f"pool_size must be >= 1, got {pool_size}")
    profile.validate_against(netlist)
    n_rare = len(profile.rare)
    rng = np.random.default_rng(seed)
    sim = simulator_for(netlist)
    n_pi = len(netlist.pis)

    pool = rng.integers(0, 2, size=(pool_size, n_pi), dtype=np.uint8)
    act_pool = activation_matrix(netlist, profile, sim.eval_bool(pool))
    order = np.argsort(-act_pool.sum(axis=1), kind="stable")

    counters = np.zeros(n_rare, dtype=np.int64)
    accepted = []
    for start in range(0, pool_size, 64):
        if n_rare == 0 or bool(np.all(counters >= target)):
            break
        lanes = order[start : start + 64]
        vecs = pool[lanes].copy()
        under = counters < target
        act = act_pool[lanes].copy()
        contrib = (act & under).sum(axis=1)
        for j in range(n_pi):
            flipped = vecs.copy()
            flipped[:, j] ^= 1
            act_f = activation_matrix(netlist, profile, sim.eval_bool(flipped))
            contrib_f = (act_f & under).sum(axis=1)
            better = contrib_f > contrib
            if np.any(better):
                vecs[better] = flipped[better]
                act[better] = act_f[better]
                contrib[better] = contrib_f[better]
        for k in range(len(lanes)):
            if bool(np.all(counters >= target)):
                break
            if np.any(act[k] & (counters < target)):
                accepted.append(vecs[k])
                counters += act[k]

    if not accepted:
        return _empty_test_set(netlist, profile)
    return make_test_set(netlist, profile, np.asarray(accepted, dtype=np.uint8))


# -- genetic baseline ---------------------------------------------------------


@dataclass
class TriageResult:
    test_set: TestSet  # deduplicated union of every generation's population
    evaluated_count: int  # population size x generations evaluated
    generations: int
    best_fitness: float


def run_triage(netlist: Netlist, profile: Profile, population: int = 100,
               select: int = 20, p_cross: float = 0.9, p_mut: float = 0.05,
               seed=0, stagnation_window: int = 20,
               generation_cap: int = 1000) -> TriageResult:
    """Elitist GA baseline. Terminates when the best fitness has not
    improved for `stagnation_window` generations or at `generation_cap`."""
    if not 0 < select <= population:
        raise ConfigError(
            f"need 0 < select <= population, got {select}/{population}"
        )
    for name, v in (("p_cross", p_cross), ("p_mut", p_mut)):
        if not 0 <= v <= 1:
            raise ConfigError(f"{name} must be in [0, 1], got {v}")
    if stagnation_window < 1 or generation_cap < 1:
        raise ConfigError("stagnation_window and generation_cap must be >= 1")
    profile.validate_against(netlist)

    rng = np.random.default_rng(seed)
    sim = simulator_for(netlist)
    n_pi = len(netlist.pis)
    scoap_w = np.asarray([profile.scoap_weight(r) for r in profile.rare])
    total_w = float(scoap_w.sum())

    def fitness(vectors: np.ndarray) -> np.ndarray:
        act = activation_matrix(netlist, profile, sim.eval_bool(vectors))
        raw = act.sum(axis=1).astype(np.float64)
        if total_w > 0:
            raw += (act @ scoap_w) / total_w
        return raw

    pop = rng.integers(0, 2, size=(population, n_pi), dtype=np.uint8)
    seen = set()
    union = []

    def remember(rows):
        fresh = [v.copy() for v in rows if v.tobytes() not in seen]
        seen.update(v.tobytes() for v in fresh)
        if fresh:
            union.append(np.asarray(fresh, dtype=np.uint8))

    remember(pop)
    best = -np.inf
    stale = 0
    generations = 0
    while generations < generation_cap:
        fit = fitness(pop)
        generations += 1
        gen_best = float(fit.max())
        if gen_best > best:
            best = gen_best
            stale = 0
        else:
            stale += 1
            if stale >= stagnation_window:
                break

        elite_idx = np.argsort(-fit, kind="stable")[:select]
        elites = pop[elite_idx]
        n_children = population - select
        pa = rng.integers(0, select, size=n_children)
        pb = rng.integers(0, select, size=n_children)
        do_cross = rng.random(n_children) < p_cross
        points = rng.integers(1, n_pi, size=n_children) if n_pi > 1 else \
            np.ones(n_children, dtype=np.int64)
        children = elites[pa].copy()
        for i in range(n_children):
            if do_cross[i]:
                children[i, points[i]:] = elites[pb[i], points[i]:]
        flips = (rng.random((n_children, n_pi)) < p_mut).astype(np.uint8)
        children ^= flips
        pop = np.concatenate([elites, children])
        remember(children)

    vectors = np.concatenate(union)
    return TriageResult(
        test_set=make_test_set(netlist, profile, vectors),
        evaluated_count=population * generations,
        generations=generations,
        best_fitness=best,
    )


# -- campaign -----------------------------------------------------------------


@dataclass
class CampaignConfig:
    methods: tuple = KNOWN_METHODS
    trojan_count: int = 10
    runs_per_trojan: int = 3
    trigger_width: int = 3
    mero_pool: int = 2500
    mero_target: int = 1000
    triage_population: int = 100
    triage_select: int = 20
    triage_p_cross: float = 0.9
    triage_p_mut: float = 0.05
    triage_stagnation: int = 20
    triage_generation_cap: int = 1000
    adatest: AdaTestConfig = field(default_factory=AdaTestConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.methods, list):
            self.methods = tuple(self.methods)
        unknown = set(self.methods) - set(KNOWN_METHODS)
        if unknown:
            raise ConfigError(f"unknown methods: {sorted(unknown)}")
        if not self.methods:
            raise ConfigError("at least one method required")
        if self.trojan_count < 1 or self.runs_per_trojan < 1:
            raise ConfigError("trojan_count and runs_per_trojan must be >= 1")
        if self.trigger_width < 1:
            raise ConfigError("trigger_width must be >= 1")
        if isinstance(self.adatest, dict):
            self.adatest = AdaTestConfig(**self.adatest)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CampaignConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"campaign config is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise DataError("campaign config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise DataError(f"unknown campaign config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class DetectionReport:
    circuit: str
    method: str
    test_vector_count: float  # mean set size over cells
    generation_time_seconds: float  # mean per generated set
    trigger_coverage_pct: float
    trojan_coverage_pct: float
    per_trojan: list
    config: dict
    seed: int
    extra: dict = field(default_factory=dict)


def report_to_dict(report: DetectionReport, with_timing: bool = True) -> dict:
    doc = asdict(report)
    if not with_timing:
        doc.pop("generation_time_seconds")
    return doc


def reports_to_json(reports, with_timing: bool = True) -> str:
    return json.dumps([report_to_dict(r, with_timing) for r in reports],
                      indent=1)


def reports_to_csv(reports, with_timing: bool = True) -> str:
    cols = ["circuit", "method", "test_vector_count",
            "trigger_coverage_pct", "trojan_coverage_pct"]
    if with_timing:
        cols.append("generation_time_seconds")
    lines = [",".join(cols)]
    for r in reports:
        row = [r.circuit, r.method, f"{r.test_vector_count:.6g}",
               f"{r.trigger_coverage_pct:.6g}", f"{r.trojan_coverage_pct:.6g}"]
        if with_timing:
            row.append(f"{r.generation_time_seconds:.6g}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _seed_int(seed_seq: np.random.SeedSequence) -> int:
    return int(seed_seq.generate_state(1, np.uint64)[0])


def run_campaign(netlist: Netlist, profile: Profile,
                 campaign: CampaignConfig, trojans=None) -> list:
    """Evaluate every configured method against one shared Trojan sample.

    Per-cell seeds derive from the campaign seed, so results are
    reproducible and independent of method order. `trojans` overrides the
    sampled instances (used to share a sample across circuits or reruns).
    """
    profile.validate_against(netlist)
    root = np.random.SeedSequence(campaign.seed)
    ss_trojan, ss_mero, ss_triage, ss_ada = root.spawn(4)

    if trojans is None:
        trojans = sample_trojans(netlist, profile, campaign.trojan_count,
                                 q=campaign.trigger_width, seed=ss_trojan)
    trojaned = [insert_trojan(netlist, spec) for spec in trojans]
    n_troj = len(trojans)
    runs = campaign.runs_per_trojan

    reports = []
    for method in campaign.methods:
        per_cell_trigger = np.zeros((n_troj, runs))
        per_cell_detected = np.zeros((n_troj, runs), dtype=bool)
        sizes = []
        times = []
        extra = {}

        if method in ("mero", "triage"):
            # both are oracle-free: one set per run index, shared by trojans
            seeds = (ss_mero if method == "mero" else ss_triage).spawn(runs)
            sets = []
            for sd in seeds:
                t0 = time.perf_counter()
                if method == "mero":
                    ts = run_mero(netlist, profile, target=campaign.mero_target,
                                  pool_size=campaign.mero_pool, seed=sd)
                else:
                    tri = run_triage(
                        netlist, profile,
                        population=campaign.triage_population,
                        select=campaign.triage_select,
                        p_cross=campaign.triage_p_cross,
                        p_mut=campaign.triage_p_mut,
                        seed=sd,
                        stagnation_window=campaign.triage_stagnation,
                        generation_cap=campaign.triage_generation_cap,
                    )
                    ts = tri.test_set
                    extra.setdefault("evaluated_counts", []).append(
                        tri.evaluated_count
                    )
                    extra.setdefault("generations", []).append(tri.generations)
                times.append(time.perf_counter() - t0)
                sets.append(ts)
                sizes.append(ts.n_vectors)
            for t_idx in range(n_troj):
                for r_idx in range(runs):
                    per_cell_trigger[t_idx, r_idx] = trigger_coverage(
                        sets[r_idx], netlist, [trojans[t_idx]]
                    )
                    per_cell_detected[t_idx, r_idx] = detects(
                        sets[r_idx].vectors, netlist, trojaned[t_idx]
                    )
        else:  # adatest
            cells = ss_ada.spawn(n_troj * runs)
            for t_idx in range(n_troj):
                bad = trojaned[t_idx]

                def oracle(batch, bad=bad):
                    return detects(batch, netlist, bad)

                for r_idx in range(runs):
                    cell_seed = _seed_int(cells[t_idx * runs + r_idx])
                    cfg = replace(campaign.adatest, seed=cell_seed)
                    t0 = time.perf_counter()
                    res = run_adatest(netlist, profile, cfg,
                                      trojan_oracle=oracle)
                    times.append(time.perf_counter() - t0)
                    sizes.append(res.test_set.n_vectors)
                    per_cell_trigger[t_idx, r_idx] = trigger_coverage(
                        res.test_set, netlist, [trojans[t_idx]]
                    )
                    per_cell_detected[t_idx, r_idx] = detects(
                        res.test_set.vectors, netlist, bad
                    )

        per_trojan = []
        for t_idx, spec in enumerate(trojans):
            per_trojan.append({
                "id": spec.id,
                "trigger_coverage_pct": float(per_cell_trigger[t_idx].mean()),
                "detection_rate_pct":
                    100.0 * float(per_cell_detected[t_idx].mean()),
                "detected": bool(per_cell_detected[t_idx].any()),
            })
        reports.append(DetectionReport(
            circuit=netlist.name,
            method=method,
            test_vector_count=float(np.mean(sizes)),
            generation_time_seconds=float(np.mean(times)),
            trigger_coverage_pct=float(per_cell_trigger.mean()),
            trojan_coverage_pct=100.0 * float(per_cell_detected.mean()),
            per_trojan=per_trojan,
            config=json.loads(campaign.to_json()),
            seed=campaign.seed,
            extra=extra,
        ))
    return reports
