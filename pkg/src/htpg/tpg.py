"""Adaptive reward-guided test pattern generation.

The generator keeps a growing test set. Each round it breeds a batch of
candidate vectors from the current set (reward-weighted parent choice plus
per-bit mutation, with a slice of pure exploration), scores every candidate
with a composite reward, keeps the best ones, and feeds their rewards back
into the sampling weights. The reward combines three signals:

* rare-node balance: how close per-node activation counts are to a target,
* testability: summed controllability/observability cost of the rare nodes
  the candidate activates (activating hard nodes pays more),
* diversity: mean normalized Hamming distance between the candidate's
  flattened circuit state and the states already in the set.

Termination: an optional activation oracle, then the coverage goal (a
percentage of rare nodes hit at least N times and none left at zero), then
the iteration budget.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .netlist import Netlist
from .profiling import Profile
from .satinit import smart_initialize
from .sim import DagState, simulator_for

WEIGHT_EPSILON = 1e-6


@dataclass
class AdaTestConfig:
    """Generation parameters. Defaults are the reference operating point."""

    theta: float = 0.1
    trials: int = 100_000
    candidate_count: int = 200
    select_count: int = 80
    max_iterations: int = 500
    coverage_percent: float = 95.0
    target_activations: int = 20
    lambda1: float = 0.05
    lambda2: float = 0.0001
    lambda3: float = 0.00025
    mutation_rate: float = 0.05
    explore_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.select_count <= self.candidate_count:
            raise ConfigError(
                f"need 0 < select_count <= candidate_count, got "
                f"{self.select_count}/{self.candidate_count}"
            )
        if not 0 < self.coverage_percent <= 100:
            raise ConfigError(
                f"coverage_percent must be in (0, 100], got {self.coverage_percent}"
            )
        if self.target_activations < 1:
            raise ConfigError(
                f"target_activations must be >= 1, got {self.target_activations}"
            )
        if self.max_iterations < 1:
            raise ConfigError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("mutation_rate", "explore_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.theta <= 0:
            raise ConfigError(f"theta must be > 0, got {self.theta}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "AdaTestConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"config is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise DataError("config JSON must be an object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "AdaTestConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise DataError(f"cannot read config {path}: {e}") from e
        return cls.from_json(text)


@dataclass(frozen=True)
class RewardBreakdown:
    v_rare: float
    v_scoap: float
    v_dag: float
    total: float


class TraceRow(NamedTuple):
    iteration: int
    coverage_pct: float
    min_counter: int
    median_counter: float


@dataclass
class TestSet:
    """Append-only vector set with cached circuit states, per-rare-node
    activation counters, and sampling masses (normalized on demand)."""

    netlist: Netlist
    vectors: np.ndarray  # (n, #PI) uint8
    states: np.ndarray  # (n, #nodes) uint8, flattened node order
    counters: np.ndarray  # (#rare,) int64
    masses: np.ndarray  # (n,) float64, positive

    @property
    def n_vectors(self) -> int:
        return self.vectors.shape[0]

    @property
    def sampling_weights(self) -> np.ndarray:
        return self.masses / self.masses.sum()

    @property
    def dag_cache(self) -> list:
        return [DagState(self.states[k], self.netlist) for k in range(self.n_vectors)]

    def append(self, vectors: np.ndarray, states: np.ndarray,
               activations: np.ndarray, masses: np.ndarray) -> None:
        self.vectors = np.concatenate([self.vectors, vectors])
        self.states = np.concatenate([self.states, states])
        self.counters = self.counters + activations
        self.masses = np.concatenate([self.masses, masses])


def _rare_columns(netlist: Netlist, profile: Profile):
    pos = netlist.flatten_pos()
    cols = np.asarray([pos[r.node_id] for r in profile.rare], dtype=np.intp)
    values = np.asarray([r.rare_value for r in profile.rare], dtype=np.uint8)
    return cols, values


def activation_matrix(netlist: Netlist, profile: Profile,
                      states: np.ndarray) -> np.ndarray:
    """(n_vectors, n_rare) bool: does vector k drive rare node r to its
    rare value?"""
    cols, values = _rare_columns(netlist, profile)
    if len(cols) == 0:
        return np.zeros((states.shape[0], 0), dtype=bool)
    return states[:, cols] == values[None, :]


def make_test_set(netlist: Netlist, profile: Profile,
                  vectors: np.ndarray) -> TestSet:
    """Build the state for an initial vector set; every vector gets unit
    sampling mass."""
    vectors = np.ascontiguousarray(np.asarray(vectors, dtype=np.uint8))
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise DataError("initial test set must contain at least one vector")
    sim = simulator_for(netlist)
    states = sim.eval_bool(vectors)
    counters = activation_matrix(netlist, profile, states).sum(
        axis=0, dtype=np.int64
    )
    return TestSet(
        netlist=netlist,
        vectors=vectors,
        states=states,
        counters=counters,
        masses=np.ones(vectors.shape[0], dtype=np.float64),
    )


def v_rare(counters, target: int) -> float:
    """Never positive; zero only when every counter sits at the target."""
    c = np.asarray(counters, dtype=np.int64)
    return -float(np.abs(target - c).sum())


def v_scoap(activated_rare, profile: Profile) -> float:
    """Summed controllability-to-rare-value plus observability over the
    activated rare nodes. Unobservable nodes contribute controllability
    only."""
    return float(sum(profile.scoap_weight(r) for r in activated_rare))


def v_dag(candidate_state: DagState, history: Sequence[DagState]) -> float:
    """Mean normalized Hamming distance to the history states; 0 for an
    empty history."""
    if len(history) == 0:
        return 0.0
    cand = candidate_state.bits
    n = len(cand)
    if n == 0:
        raise DataError("empty circuit state")
    total = 0
    for s in history:
        if len(s.bits) != n:
            raise DataError("history state length mismatch")
        total += int(np.count_nonzero(cand != s.bits))
    return total / (len(history) * n)


def reward(candidate, state: TestSet, profile: Profile, netlist: Netlist,
           config: AdaTestConfig) -> RewardBreakdown:
    """Score one candidate against the current set. The candidate is
    simulated once; its own activations count toward the rare-node balance
    term."""
    vec = np.asarray(candidate, dtype=np.uint8).reshape(1, -1)
    sim = simulator_for(netlist)
    cand_state = sim.eval_bool(vec)[0]
    act = activation_matrix(netlist, profile, cand_state[None, :])[0]
    vr = v_rare(state.counters + act, config.target_activations)
    vs = v_scoap([r for r, a in zip(profile.rare, act) if a], profile)
    vd = v_dag(DagState(cand_state, netlist), state.dag_cache)
    total = config.lambda1 * vr + config.lambda2 * vs + config.lambda3 * vd
    return RewardBreakdown(v_rare=vr, v_scoap=vs, v_dag=vd, total=total)


def generate_candidates(state: TestSet, count: int, config: AdaTestConfig,
                        seed) -> np.ndarray:
    """Breed `count` candidates: an explore_fraction slice of uniform random
    vectors, the rest weighted-parent picks with independent per-bit
    mutation. Deterministic for a fixed seed."""
    if count < 1:
        raise ConfigError(f"candidate count must be >= 1, got {count}")
    if state.n_vectors == 0:
        raise DataError("cannot generate candidates from an empty test set")
    rng = np.random.default_rng(seed)
    n_pi = state.vectors.shape[1]
    explore = rng.random(count) < config.explore_fraction
    parent_idx = rng.choice(state.n_vectors, size=count,
                            p=state.sampling_weights)
    flips = (rng.random((count, n_pi)) < config.mutation_rate).astype(np.uint8)
    candidates = state.vectors[parent_idx] ^ flips
    n_explore = int(explore.sum())
    if n_explore:
        candidates[explore] = rng.integers(
            0, 2, size=(n_explore, n_pi), dtype=np.uint8
        )
    return candidates


def _totals(rewards) -> np.ndarray:
    return np.asarray(
        [r.total if isinstance(r, RewardBreakdown) else float(r) for r in rewards],
        dtype=np.float64,
    )


def select_top(candidates, rewards, count: int):
    """The `count` highest-reward candidates, best first; ties keep the
    lower candidate index."""
    totals = _totals(rewards)
    if len(totals) != len(candidates):
        raise ConfigError("candidates and rewards differ in length")
    if not 0 < count <= len(candidates):
        raise ConfigError(
            f"cannot select {count} from {len(candidates)} candidates"
        )
    order = np.argsort(-totals, kind="stable")[:count]
    if isinstance(candidates, np.ndarray):
        return candidates[order]
    return [candidates[i] for i in order]


def update_weights(state: TestSet, rewards) -> TestSet:
    """Refresh sampling masses for the newest len(rewards) vectors: each
    gets its reward shifted to be positive (reward - batch min + epsilon).
    Older vectors keep their existing mass."""
    totals = _totals(rewards)
    if len(totals) == 0:
        return state
    if len(totals) > state.n_vectors:
        raise ConfigError("more rewards than vectors in the set")
    if not np.all(np.isfinite(totals)):
        raise DataError("rewards must be finite")
    state.masses[-len(totals):] = totals - totals.min() + WEIGHT_EPSILON
    return state


def coverage_pct(counters, target: int) -> float:
    """Percentage of rare nodes at or above the activation target; 100 when
    there are no rare nodes."""
    c = np.asarray(counters)
    if c.size == 0:
        return 100.0
    return 100.0 * float(np.count_nonzero(c >= target)) / c.size


def check_termination(state: TestSet, iteration: int,
                      trojan_oracle: Callable | None,
                      config: AdaTestConfig):
    """None to continue, else the stop reason. Oracle wins over coverage,
    coverage over budget."""
    if trojan_oracle is not None and trojan_oracle(state.vectors):
        return "oracle"
    covered = coverage_pct(state.counters, config.target_activations)
    all_hit = state.counters.size == 0 or int(state.counters.min()) >= 1
    if covered >= config.coverage_percent and all_hit:
        return "coverage"
    if iteration >= config.max_iterations:
        return "budget"
    return None


class _MemoOracle:
    """Feeds only not-yet-seen vectors to the wrapped oracle; the test set
    is append-only, so one pass per vector suffices."""

    def __init__(self, oracle):
        self._oracle = oracle
        self._seen = 0
        self.fired = False

    def __call__(self, vectors) -> bool:
        if not self.fired and len(vectors) > self._seen:
            self.fired = bool(self._oracle(vectors[self._seen:]))
            self._seen = len(vectors)
        return self.fired


@dataclass
class AdatestResult:
    test_set: TestSet
    trace: list  # TraceRow per checkpoint (iteration 0 = after init)
    termination: str
    iterations: int
    init_fallback: bool


def _trace_row(iteration: int, counters: np.ndarray,
               config: AdaTestConfig) -> TraceRow:
    if counters.size == 0:
        return TraceRow(iteration, 100.0, 0, 0.0)
    return TraceRow(
        iteration,
        coverage_pct(counters, config.target_activations),
        int(counters.min()),
        float(np.median(counters)),
    )


def run_adatest(netlist: Netlist, profile: Profile, config: AdaTestConfig,
                trojan_oracle: Callable | None = None,
                smart_init: bool = True) -> AdatestResult:
    """Full generation loop. `trojan_oracle` (optional) is a callable taking
    a uint8 vector batch and returning True if any vector in it triggers the
    condition being hunted; it sees each vector exactly once. `smart_init`
    False replaces the SAT seeding with uniform random vectors (the
    baseline used in convergence comparisons)."""
    profile.validate_against(netlist)
    root = np.random.SeedSequence(config.seed)
    init_seed, gen_seed = root.spawn(2)

    n_pi = len(netlist.pis)
    fallback = False
    if smart_init:
        init = smart_initialize(netlist, profile.rare, config.select_count,
                                seed=init_seed)
        vectors0 = init.vectors
        fallback = init.fallback_used
    else:
        rng = np.random.default_rng(init_seed)
        vectors0 = rng.integers(0, 2, size=(config.select_count, n_pi),
                                dtype=np.uint8)

    state = make_test_set(netlist, profile, vectors0)
    sim = simulator_for(netlist)
    cols, values = _rare_columns(netlist, profile)
    scoap_w = np.asarray([profile.scoap_weight(r) for r in profile.rare],
                         dtype=np.float64)
    n_nodes = state.states.shape[1]
    ones_hist = state.states.sum(axis=0, dtype=np.int64)

    oracle = _MemoOracle(trojan_oracle) if trojan_oracle is not None else None
    trace = [_trace_row(0, state.counters, config)]
    reason = check_termination(state, 0, oracle, config)
    iteration = 0

    gen_children = iter(gen_seed.spawn(config.max_iterations))
    while reason is None:
        iteration += 1
        candidates = generate_candidates(state, config.candidate_count,
                                         config, next(gen_children))
        cand_states = sim.eval_bool(candidates)
        if len(cols):
            act = cand_states[:, cols] == values[None, :]
        else:
            act = np.zeros((len(candidates), 0), dtype=bool)

        # batch reward, identical to reward() but vectorized over candidates
        with_cand = state.counters[None, :] + act
        vr = -np.abs(config.target_activations - with_cand).sum(axis=1)
        vs = act @ scoap_w
        n_hist = state.n_vectors
        diff = ones_hist.sum() + cand_states.astype(np.int64) @ (
            n_hist - 2 * ones_hist
        )
        vd = diff / (n_hist * n_nodes)
        totals = config.lambda1 * vr + config.lambda2 * vs + config.lambda3 * vd

        top = np.argsort(-totals, kind="stable")[: config.select_count]
        new_states = cand_states[top]
        state.append(
            candidates[top],
            new_states,
            act[top].sum(axis=0, dtype=np.int64),
            np.zeros(len(top)),
        )
        update_weights(state, totals[top])
        ones_hist += new_states.sum(axis=0, dtype=np.int64)

        trace.append(_trace_row(iteration, state.counters, config))
        reason = check_termination(state, iteration, oracle, config)

    return AdatestResult(
        test_set=state,
        trace=trace,
        termination=reason,
        iterations=iteration,
        init_fallback=fallback,
    )


def trace_to_csv(trace) -> str:
    lines = ["iteration,coverage_pct,min_counter,median_counter"]
    for row in trace:
        lines.append(
            f"{row.iteration},{row.coverage_pct:.6g},{row.min_counter},"
            f"{row.median_counter:.6g}"
        )
    return "\n".join(lines) + "\n"


def format_patterns(vectors: np.ndarray) -> str:
    """One 0/1 row per vector, PI declaration order."""
    return "\n".join("".join(str(int(b)) for b in row) for row in vectors) + "\n"


def parse_patterns(text: str) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if set(line) - {"0", "1"}:
            raise DataError(f"pattern line {lineno}: only 0/1 allowed")
        if width is None:
            width = len(line)
        elif len(line) != width:
            raise DataError(
                f"pattern line {lineno}: width {len(line)} != {width}"
            )
        rows.append([int(c) for c in line])
    if not rows:
        raise DataError("pattern file contains no vectors")
    return np.asarray(rows, dtype=np.uint8)


def save_patterns(path, vectors: np.ndarray) -> None:
    Path(path).write_text(format_patterns(vectors))


def load_patterns(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DataError(f"cannot read patterns {path}: {e}") from e
    return parse_patterns(text)
