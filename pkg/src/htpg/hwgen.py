"""Hardware mapping of a finished test set onto a cyclic shift register
feeding an OR tap network.

One D flip-flop ring holds a single circulating 1. Each output bit is the OR
of the ring stages it taps, so with a one-hot state the network emits the tap
column of the stage currently holding the 1: one stored test vector per
stage, replayed in ring order. `derive_tap_matrix` inverts that relation,
`simulate_tpg` replays it, and the two are exact inverses for every initial
position.

Long test sets can be split along the vector axis (`plan_chunked`: several
shorter rings, a counter walks them through an output multiplexer) and wide
circuits along the input axis (`plan_clustered`: independent primary-input
groups get independent rings). `emit_structural` renders a plan in the same
bench dialect the parser reads, extended with DFF, so the result can be
re-parsed, unrolled, and simulated like any other netlist.

Convention fixed here: the vector for a clock tick is read from the current
state, then the ring shifts right (last stage feeds the first). A chunked
generator hands off between segments on wraparound with no dead cycles; it
repeats forever when the segment count is a power of two and otherwise halts
with all-zero outputs after one full pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError
from .netlist import Netlist

MODES = ("centralized", "distributed")


def _as_matrix(test_set) -> np.ndarray:
    vectors = getattr(test_set, "vectors", test_set)
    m = np.atleast_2d(np.asarray(vectors, dtype=np.uint8))
    if m.size and not np.isin(m, (0, 1)).all():
        raise DataError("test vectors must be binary")
    return m


# -- tap matrix ---------------------------------------------------------------


@dataclass(frozen=True)
class TapMatrix:
    """OR-network tap coefficients plus the ring's starting stage.

    `coefficients[i, j]` is 1 when output bit i taps stage j (both
    0-indexed here; `init_position` stays 1-based to match the stage
    numbering used in the emitted hardware names).
    """

    coefficients: np.ndarray
    init_position: int = 1

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.uint8)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise DataError(f"coefficients must be a 2-D matrix, got shape {c.shape}")
        if c.size and not np.isin(c, (0, 1)).all():
            raise DataError("tap coefficients must be binary")
        object.__setattr__(self, "coefficients", c)
        if not 1 <= self.init_position <= c.shape[1]:
            raise ConfigError(
                f"init_position must be in [1, {c.shape[1]}], got {self.init_position}"
            )

    @property
    def width(self) -> int:
        return self.coefficients.shape[0]

    @property
    def sr_length(self) -> int:
        return self.coefficients.shape[1]

    @property
    def init_state(self) -> np.ndarray:
        d = np.zeros(self.sr_length, dtype=np.uint8)
        d[self.init_position - 1] = 1
        return d

    @property
    def tap_count(self) -> int:
        return int(self.coefficients.sum())

    def to_json(self) -> str:
        return json.dumps({
            "width": self.width,
            "sr_length": self.sr_length,
            "init_position": self.init_position,
            "bits": "".join(str(b) for b in self.coefficients.ravel()),
        })

    @classmethod
    def from_json(cls, text: str) -> "TapMatrix":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"tap matrix is not valid JSON: {e}") from e
        try:
            w, i, bits = raw["width"], raw["sr_length"], raw["bits"]
            k0 = raw["init_position"]
        except (TypeError, KeyError) as e:
            raise DataError(f"tap matrix JSON missing field: {e}") from e
        if not all(isinstance(v, int) for v in (w, i, k0)):
            raise DataError("tap matrix dimensions must be integers")
        if not isinstance(bits, str) or len(bits) != w * i or set(bits) - {"0", "1"}:
            raise DataError("tap matrix bit string does not match dimensions")
        coeff = np.frombuffer(bits.encode(), dtype=np.uint8).reshape(w, i) - ord("0")
        return cls(coefficients=coeff, init_position=k0)


def derive_tap_matrix(test_set, init_position: int = 1) -> TapMatrix:
    """Place each vector on the stage that will hold the 1 at its clock tick.

    The 1 starts at `init_position` and moves right one stage per tick, so
    vector t lands on column (init_position - 1 + t) mod length.
    """
    vectors = _as_matrix(test_set)
    n, width = vectors.shape
    if n == 0 or width == 0:
        raise DataError("cannot derive a tap matrix from an empty test set")
    if not 1 <= init_position <= n:
        raise ConfigError(f"init_position must be in [1, {n}], got {init_position}")
    coeff = np.zeros((width, n), dtype=np.uint8)
    for t in range(n):
        coeff[:, (init_position - 1 + t) % n] = vectors[t]
    return TapMatrix(coefficients=coeff, init_position=init_position)


def simulate_tpg(tap: TapMatrix, cycles: int) -> np.ndarray:
    """Replay the generator: emit the OR of tapped stages, then rotate right.

    Returns a (cycles, width) matrix. With a one-hot state each row is one
    tap column; after sr_length cycles the state is back where it started.
    """
    if cycles < 1:
        raise ConfigError(f"cycles must be >= 1, got {cycles}")
    d = tap.init_state.astype(bool)
    coeff = tap.coefficients.astype(bool)
    out = np.zeros((cycles, tap.width), dtype=np.uint8)
    for t in range(cycles):
        out[t] = (coeff & d).any(axis=1)
        d = np.roll(d, 1)
    return out


# -- partitioning plans -------------------------------------------------------


class CostEstimate(NamedTuple):
    ff_count: int
    or_tap_count: int
    mux_2to1_count: int
    cycles_total: int

    @property
    def hardware_units(self) -> int:
        """Scalar used to compare plans: FFs, taps and muxes in unit cost."""
        return self.ff_count + self.or_tap_count + self.mux_2to1_count


@dataclass
class TpgPlan:
    """Either a chunked plan (segments over vector ranges, one active at a
    time behind a counter-driven multiplexer) or a clustered plan (one ring
    per independent primary-input group). Exactly one side is populated."""

    segments: tuple = ()  # ((TapMatrix, (start, stop)), ...) half-open ranges
    clusters: tuple = ()  # ((pi column indices, TapMatrix), ...)
    mode: str = "centralized"
    cost_estimate: CostEstimate | None = None
    latency_estimate: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if bool(self.segments) == bool(self.clusters):
            raise DataError("a plan holds either segments or clusters, not both")
        if self.segments:
            expect = 0
            for tap, (start, stop) in self.segments:
                if start != expect or stop - start != tap.sr_length:
                    raise DataError("segment ranges must tile the test set in order")
                expect = stop
        else:
            seen = set()
            for cols, tap in self.clusters:
                if len(cols) != tap.width:
                    raise DataError("cluster tap width must match its column count")
                if seen & set(cols):
                    raise DataError("cluster column sets must be disjoint")
                seen.update(cols)

    @property
    def matrices(self) -> tuple:
        if self.segments:
            return tuple(tap for tap, _ in self.segments)
        return tuple(tap for _, tap in self.clusters)


def estimate_cost(plan: TpgPlan) -> CostEstimate:
    """Abstract unit-cost model: every flip-flop, OR tap and 2-to-1 mux
    counts 1. Chunked plans pay a segment counter (ceil(log2 n) bits) and a
    mux per output bit and fan-in step; clusters own disjoint outputs, so
    they need no mux, and a distributed schedule needs no counter either."""
    mats = plan.matrices
    or_taps = sum(m.tap_count for m in mats)
    sr_total = sum(m.sr_length for m in mats)
    if plan.segments:
        n_seg = len(mats)
        width = mats[0].width
        counter = math.ceil(math.log2(n_seg)) if n_seg > 1 else 0
        mux = (n_seg - 1) * width
        cycles = sr_total  # seamless hand-off on wraparound
    else:
        n_cl = len(mats)
        mux = 0
        if plan.mode == "distributed":
            counter = 0
            cycles = max(m.sr_length for m in mats)
        else:
            counter = math.ceil(math.log2(n_cl)) if n_cl > 1 else 0
            cycles = sr_total
    return CostEstimate(sr_total + counter, or_taps, mux, cycles)


def plan_chunked(test_set, chunk_size: int) -> TpgPlan:
    """Split the vector sequence into rings of at most `chunk_size` stages."""
    vectors = _as_matrix(test_set)
    n = vectors.shape[0]
    if n == 0:
        raise DataError("cannot plan an empty test set")
    if not 1 <= chunk_size <= n:
        raise ConfigError(f"chunk_size must be in [1, {n}], got {chunk_size}")
    segments = []
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        segments.append((derive_tap_matrix(vectors[start:stop]), (start, stop)))
    plan = TpgPlan(segments=tuple(segments), mode="centralized")
    plan.cost_estimate = estimate_cost(plan)
    plan.latency_estimate = plan.cost_estimate.cycles_total
    return plan


def plan_clustered(netlist: Netlist, test_set, mode: str = "distributed") -> TpgPlan:
    """One ring per connected group of primary inputs.

    Two inputs belong together when some gate's transitive fanin contains
    both; the grouping is a fixed property of the circuit, not a knob. Each
    cluster's matrix covers the full vector sequence restricted to its
    columns, so concatenating cluster outputs by column reproduces the set.
    """
    vectors = _as_matrix(test_set)
    n_pi = len(netlist.pis)
    if vectors.shape[0] == 0:
        raise DataError("cannot plan an empty test set")
    if vectors.shape[1] != n_pi:
        raise DataError(
            f"test vectors are {vectors.shape[1]} wide but {netlist.name} "
            f"has {n_pi} primary inputs"
        )

    parent = list(range(n_pi))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    pi_col = {pid: col for col, pid in enumerate(netlist.pi_ids)}
    rep: dict[int, int | None] = {pid: pi_col[pid] for pid in netlist.pi_ids}
    for nid in netlist.flatten_order():
        gate = netlist.gate_of(netlist.name_of(nid))
        if gate is None:
            continue
        ins = [rep[netlist.id_of(i)] for i in gate.ins]
        ins = [r for r in ins if r is not None]
        for other in ins[1:]:
            parent[find(ins[0])] = find(other)
        rep[nid] = ins[0] if ins else None

    groups: dict[int, list[int]] = {}
    for col in range(n_pi):
        groups.setdefault(find(col), []).append(col)
    clusters = []
    for cols in sorted(groups.values()):
        tap = derive_tap_matrix(vectors[:, cols])
        clusters.append((tuple(cols), tap))
    plan = TpgPlan(clusters=tuple(clusters), mode=mode)
    plan.cost_estimate = estimate_cost(plan)
    plan.latency_estimate = plan.cost_estimate.cycles_total
    return plan


def sweep_chunk_sizes(test_set) -> list:
    """Cost of every legal chunk size, ascending, in closed form.

    Matches estimate_cost(plan_chunked(vectors, size)) entry for entry:
    ring stages always total n and taps always total the set's popcount,
    so only the counter and mux terms depend on the chunk size. Building
    each plan just to price it would be quadratic in n; the closed form
    keeps the sweep usable on full-length pattern sets.
    """
    vectors = _as_matrix(test_set)
    n, width = vectors.shape
    if n == 0:
        raise DataError("cannot plan an empty test set")
    if width == 0:
        raise DataError("cannot derive a tap matrix from an empty test set")
    ones = int(vectors.sum())
    sweep = []
    for size in range(1, n + 1):
        n_seg = -(-n // size)
        counter = math.ceil(math.log2(n_seg)) if n_seg > 1 else 0
        cost = CostEstimate(n + counter, ones, (n_seg - 1) * width, n)
        sweep.append((size, cost))
    return sweep


def best_chunk_size(test_set) -> int:
    sweep = sweep_chunk_sizes(test_set)
    best = min(cost.hardware_units for _, cost in sweep)
    return next(size for size, cost in sweep if cost.hardware_units == best)


# -- response analyzer sizing -------------------------------------------------


class BufferPlan(NamedTuple):
    cycles_per_comparison: int
    buffer_needed: bool


def size_response_buffer(po_count: int, rom_word_bits: int) -> BufferPlan:
    """Cycles needed to stream one response through a rom_word_bits-wide
    comparator; no buffering at all when the outputs fit in one word."""
    if po_count < 1 or rom_word_bits < 1:
        raise ConfigError("po_count and rom_word_bits must both be >= 1")
    cycles = -(-po_count // rom_word_bits)
    return BufferPlan(cycles, po_count > rom_word_bits)


def rom_image(po_matrix, word_bits: int) -> list:
    """Golden responses as hex lines, one word per line.

    Each response row is split into ceil(width / word_bits) words; bit k of
    a word is output bit word_start + k, so the first output of each slice
    is the least significant bit.
    """
    if word_bits < 1:
        raise ConfigError(f"word_bits must be >= 1, got {word_bits}")
    rows = _as_matrix(po_matrix)
    digits = -(-word_bits // 4)
    lines = []
    for row in rows:
        for start in range(0, rows.shape[1], word_bits):
            value = 0
            for k, bit in enumerate(row[start : start + word_bits]):
                value |= int(bit) << k
            lines.append(f"{value:0{digits}x}")
    return lines


# -- structural emission ------------------------------------------------------


def _or_tree(out: str, taps: list, zero_src: str) -> list:
    if not taps:
        return [f"{out} = XOR({zero_src}, {zero_src})"]  # constant 0
    if len(taps) == 1:
        return [f"{out} = BUF({taps[0]})"]
    return [f"{out} = OR({', '.join(taps)})"]


def emit_structural(plan: TpgPlan) -> str:
    """Render a plan as sequential bench text.

    The text has no primary inputs: all state lives in the DFF ring (plus
    the segment counter for multi-segment plans), declared in the same order
    as `initial_state_vector`, so unrolling exposes the initial state as the
    pseudo-input vector. Output bit i appears as x{i+1}.
    """
    lines = []
    if plan.segments:
        lines += _emit_chunked(plan)
    else:
        lines += _emit_clustered(plan)
    return "\n".join(lines) + "\n"


def initial_state_vector(plan: TpgPlan) -> np.ndarray:
    """Flip-flop power-up values in the emitted declaration order: every
    ring one-hot at its matrix's init position, counter bits zero."""
    bits = [m.init_state for m in plan.matrices]
    if plan.segments and len(plan.segments) > 1:
        bits.append(np.zeros(_counter_bits(len(plan.segments)), dtype=np.uint8))
    return np.concatenate(bits)


def _counter_bits(n_seg: int) -> int:
    return math.ceil(math.log2(n_seg))


def _ring(prefix: str, length: int, gated_by: str | None) -> list:
    lines = []
    for j in range(1, length + 1):
        prev = f"{prefix}_st{j - 1 if j > 1 else length}"
        if gated_by is None:
            lines.append(f"{prefix}_st{j} = DFF({prev})")
        else:
            lines.append(f"{prefix}_st{j}_sh = AND({gated_by}, {prev})")
            lines.append(f"{prefix}_st{j}_hd = AND(n{gated_by}, {prefix}_st{j})")
            lines.append(f"{prefix}_st{j}_in = OR({prefix}_st{j}_sh, {prefix}_st{j}_hd)")
            lines.append(f"{prefix}_st{j} = DFF({prefix}_st{j}_in)")
    return lines


def _taps_of(tap: TapMatrix, bit: int, prefix: str) -> list:
    return [f"{prefix}_st{j + 1}" for j in np.flatnonzero(tap.coefficients[bit])]


def _emit_chunked(plan: TpgPlan) -> list:
    mats = plan.matrices
    width = mats[0].width
    lines = [f"# cyclic-SR test generator: {len(mats)} segment(s), {width} output bit(s)"]
    lines += [f"OUTPUT(x{i + 1})" for i in range(width)]

    if len(mats) == 1:
        tap = mats[0]
        lines += _ring("seg1", tap.sr_length, gated_by=None)
        for i in range(width):
            lines += _or_tree(f"x{i + 1}", _taps_of(tap, i, "seg1"), "seg1_st1")
        return lines

    for tap in mats:
        if tap.init_position != 1:
            raise ConfigError("multi-segment emission requires init position 1")

    n_seg = len(mats)
    n_bits = _counter_bits(n_seg)
    # enable decode: en{s} is high while the counter holds s-1
    for b in range(n_bits):
        lines.append(f"cnt{b}_n = NOT(cnt{b})")
    for s in range(1, n_seg + 1):
        lits = [
            f"cnt{b}" if (s - 1) >> b & 1 else f"cnt{b}_n" for b in range(n_bits)
        ]
        lines.append(
            f"en{s} = BUF({lits[0]})" if n_bits == 1
            else f"en{s} = AND({', '.join(lits)})"
        )
        lines.append(f"nen{s} = NOT(en{s})")

    for s, tap in enumerate(mats, start=1):
        lines += _ring(f"seg{s}", tap.sr_length, gated_by=f"en{s}")

    # the active segment requests hand-off when its 1 reaches the last stage
    for s, tap in enumerate(mats, start=1):
        lines.append(f"seg{s}_wrap = AND(en{s}, seg{s}_st{tap.sr_length})")
    lines.append(f"wrap = OR({', '.join(f'seg{s}_wrap' for s in range(1, n_seg + 1))})")

    # ripple-increment counter: wrap is the carry into bit 0
    carry = "wrap"
    for b in range(n_bits):
        lines.append(f"cnt{b}_in = XOR(cnt{b}, {carry})")
        if b + 1 < n_bits:
            lines.append(f"carry{b + 1} = AND(cnt{b}, {carry})")
            carry = f"carry{b + 1}"
    for b in range(n_bits):
        lines.append(f"cnt{b} = DFF(cnt{b}_in)")

    for i in range(width):
        gated = []
        for s, tap in enumerate(mats, start=1):
            taps = _taps_of(tap, i, f"seg{s}")
            if not taps:
                continue
            lines += _or_tree(f"seg{s}_y{i + 1}", taps, f"seg{s}_st1")
            lines.append(f"x{i + 1}_m{s} = AND(en{s}, seg{s}_y{i + 1})")
            gated.append(f"x{i + 1}_m{s}")
        lines += _or_tree(f"x{i + 1}", gated, "seg1_st1")
    return lines


def _emit_clustered(plan: TpgPlan) -> list:
    total_width = sum(len(cols) for cols, _ in plan.clusters)
    lines = [
        f"# cyclic-SR test generator: {len(plan.clusters)} cluster(s), "
        f"{total_width} output bit(s)"
    ]
    lines += [f"OUTPUT(x{i + 1})" for i in range(total_width)]
    for c, (cols, tap) in enumerate(plan.clusters, start=1):
        lines += _ring(f"cl{c}", tap.sr_length, gated_by=None)
        for bit, col in enumerate(cols):
            lines += _or_tree(f"x{col + 1}", _taps_of(tap, bit, f"cl{c}"), f"cl{c}_st1")
    return lines
