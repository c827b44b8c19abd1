"""Gate-level netlist model: bench-format parsing, levelization, canonical
serialization, and time-frame unrolling of sequential circuits.

The accepted dialect is the classic benchmark format: `INPUT(a)`, `OUTPUT(y)`,
`y = NAND(a, b)`, `#` comments, blank lines. A DFF gate marks the netlist as
sequential; sequential netlists are rejected by simulation, profiling and
every other downstream stage until unrolled into a combinational time-frame
expansion with `unroll_sequential`.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .errors import ConfigError, DataError

GATE_KINDS = frozenset({"AND", "NAND", "OR", "NOR", "XOR", "XNOR", "NOT", "BUF", "DFF"})
UNARY_KINDS = frozenset({"NOT", "BUF", "DFF"})

_INPUT_RE = re.compile(r"^INPUT\(\s*([^\s=(),#]+)\s*\)$")
_OUTPUT_RE = re.compile(r"^OUTPUT\(\s*([^\s=(),#]+)\s*\)$")
_GATE_RE = re.compile(r"^([^\s=(),#]+)\s*=\s*([A-Za-z]+)\s*\((.*)\)$")


class BenchParseError(DataError):
    """Malformed bench text; the message carries the offending line number."""


@dataclass(frozen=True)
class Gate:
    """One gate: `out = kind(ins...)`. Signal references are by name."""

    out: str
    kind: str
    ins: tuple[str, ...]


class Netlist:
    """Immutable, validated, levelized gate-level netlist.

    Node ids are dense integers assigned to primary inputs first (declaration
    order) and then to gate outputs (definition order), so the id order is a
    deterministic function of the source text. Levels are 0 for primary
    inputs and DFF outputs, and 1 + max(input levels) for combinational gate
    outputs. Construction validates arity, references, duplicate definitions
    and combinational acyclicity.
    """

    def __init__(self, name: str, pis, pos, gates):
        self.name = str(name)
        self.pis = tuple(pis)
        self.pos = tuple(pos)
        self.gates = tuple(gates)
        self._index()
        self._levelize()
        self._flatten = None
        self._consumers = None
        self._digest = None

    # -- construction / validation ------------------------------------------

    def _index(self):
        names: list[str] = []
        id_of: dict[str, int] = {}

        def define(n):
            if n in id_of:
                raise DataError(f"duplicate definition of signal '{n}'")
            id_of[n] = len(names)
            names.append(n)

        for pi in self.pis:
            define(pi)
        for g in self.gates:
            if g.kind not in GATE_KINDS:
                raise DataError(f"unknown gate kind '{g.kind}' for signal '{g.out}'")
            if g.kind in UNARY_KINDS:
                if len(g.ins) != 1:
                    raise DataError(f"{g.kind} gate '{g.out}' must have exactly 1 input")
            elif len(g.ins) < 2:
                raise DataError(f"{g.kind} gate '{g.out}' must have at least 2 inputs")
            define(g.out)
        for g in self.gates:
            for i in g.ins:
                if i not in id_of:
                    raise DataError(f"gate '{g.out}' references undefined signal '{i}'")
        po_seen = set()
        for po in self.pos:
            if po not in id_of:
                raise DataError(f"OUTPUT references undefined signal '{po}'")
            if po in po_seen:
                raise DataError(f"duplicate OUTPUT declaration '{po}'")
            po_seen.add(po)

        self._names = tuple(names)
        self._id_of = id_of
        self.is_sequential = any(g.kind == "DFF" for g in self.gates)

    def _levelize(self):
        n = len(self._names)
        levels = [0] * n
        gate_at = {self._id_of[g.out]: g for g in self.gates}
        # combinational in-degree: edges only from combinational gate outputs
        comb_out = {
            self._id_of[g.out] for g in self.gates if g.kind != "DFF"
        }
        indeg = {}
        for g in self.gates:
            if g.kind == "DFF":
                continue
            oid = self._id_of[g.out]
            indeg[oid] = sum(1 for i in g.ins if self._id_of[i] in comb_out)
        ready = [oid for oid, d in indeg.items() if d == 0]
        consumers: dict[int, list[int]] = {}
        for g in self.gates:
            if g.kind == "DFF":
                continue
            oid = self._id_of[g.out]
            for i in g.ins:
                iid = self._id_of[i]
                if iid in comb_out:
                    consumers.setdefault(iid, []).append(oid)
        done = 0
        while ready:
            oid = ready.pop()
            g = gate_at[oid]
            levels[oid] = 1 + max(levels[self._id_of[i]] for i in g.ins)
            done += 1
            for cid in consumers.get(oid, ()):
                indeg[cid] -= 1
                if indeg[cid] == 0:
                    ready.append(cid)
        if done != len(indeg):
            stuck = sorted(self._names[oid] for oid, d in indeg.items() if d > 0)
            raise DataError(
                "combinational cycle involving: " + ", ".join(stuck[:8])
            )
        self.levels = tuple(levels)

    # -- lookups --------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self._names)

    def id_of(self, name: str) -> int:
        try:
            return self._id_of[name]
        except KeyError:
            raise DataError(f"unknown signal '{name}'") from None

    def name_of(self, node_id: int) -> str:
        return self._names[node_id]

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def pi_ids(self) -> tuple[int, ...]:
        return tuple(self._id_of[p] for p in self.pis)

    @property
    def po_ids(self) -> tuple[int, ...]:
        return tuple(self._id_of[p] for p in self.pos)

    def gate_of(self, name: str):
        """Gate driving `name`, or None if `name` is a primary input."""
        if not hasattr(self, "_gate_of"):
            self._gate_of = {g.out: g for g in self.gates}
        return self._gate_of.get(name)

    def flatten_order(self) -> tuple[int, ...]:
        """Canonical level-major node ordering: ascending level, ties by
        ascending node id. Combinational netlists only."""
        if self.is_sequential:
            raise DataError("flatten_order requires a combinational netlist; unroll first")
        if self._flatten is None:
            order = sorted(range(self.n_nodes), key=lambda i: (self.levels[i], i))
            self._flatten = tuple(order)
            pos = [0] * self.n_nodes
            for rank, nid in enumerate(order):
                pos[nid] = rank
            self._flatten_pos = tuple(pos)
        return self._flatten

    def flatten_pos(self) -> tuple[int, ...]:
        """Inverse of flatten_order: node id -> rank in the flattened order."""
        self.flatten_order()
        return self._flatten_pos

    def consumers(self) -> dict[int, list[tuple[Gate, int]]]:
        """Node id -> list of (gate, input pin index) fed by that node."""
        if self._consumers is None:
            cons: dict[int, list[tuple[Gate, int]]] = {i: [] for i in range(self.n_nodes)}
            for g in self.gates:
                for pin, i in enumerate(g.ins):
                    cons[self._id_of[i]].append((g, pin))
            self._consumers = cons
        return self._consumers

    def transitive_fanin(self, names) -> set[str]:
        """All signals reaching the given ones through gate inputs, inclusive
        of the seed names themselves. Does not cross DFF boundaries."""
        seen = set()
        stack = [n if isinstance(n, str) else self._names[n] for n in names]
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            g = self.gate_of(n)
            if g is not None and g.kind != "DFF":
                stack.extend(g.ins)
        return seen

    def digest(self) -> str:
        """sha256 of the canonical serialization; used to tie profiles to
        the exact netlist they were computed from."""
        if self._digest is None:
            self._digest = hashlib.sha256(serialize(self).encode()).hexdigest()
        return self._digest

    def __repr__(self):
        kind = "sequential" if self.is_sequential else "combinational"
        return (
            f"<Netlist {self.name}: {len(self.pis)} PI, {len(self.pos)} PO, "
            f"{len(self.gates)} gates, {kind}>"
        )


def parse_bench(text: str, name: str = "netlist") -> Netlist:
    """Parse bench-format text into a validated Netlist.

    Errors carry the 1-based line number of the offending construct.
    """
    pis: list[str] = []
    pos: list[str] = []
    gates: list[Gate] = []
    defined: dict[str, int] = {}  # signal -> defining line
    out_seen: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _INPUT_RE.match(line)
        if m:
            sig = m.group(1)
            if sig in defined:
                raise BenchParseError(
                    f"line {lineno}: duplicate definition of '{sig}' "
                    f"(first defined at line {defined[sig]})"
                )
            defined[sig] = lineno
            pis.append(sig)
            continue
        m = _OUTPUT_RE.match(line)
        if m:
            sig = m.group(1)
            if sig in out_seen:
                raise BenchParseError(f"line {lineno}: duplicate OUTPUT declaration '{sig}'")
            out_seen.add(sig)
            pos.append(sig)
            continue
        m = _GATE_RE.match(line)
        if m:
            out, kind, args = m.group(1), m.group(2).upper(), m.group(3)
            if kind not in GATE_KINDS:
                raise BenchParseError(f"line {lineno}: unknown gate kind '{m.group(2)}'")
            ins = tuple(a.strip() for a in args.split(",") if a.strip())
            if kind in UNARY_KINDS:
                if len(ins) != 1:
                    raise BenchParseError(
                        f"line {lineno}: {kind} takes exactly 1 input, got {len(ins)}"
                    )
            elif len(ins) < 2:
                raise BenchParseError(
                    f"line {lineno}: {kind} takes at least 2 inputs, got {len(ins)}"
                )
            if out in defined:
                raise BenchParseError(
                    f"line {lineno}: duplicate definition of '{out}' "
                    f"(first defined at line {defined[out]})"
                )
            defined[out] = lineno
            gates.append(Gate(out, kind, ins))
            continue
        raise BenchParseError(f"line {lineno}: unrecognized syntax: {line!r}")

    # reference checks here so messages can carry line numbers
    ref_lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        m = _GATE_RE.match(line) if line else None
        if m:
            for a in m.group(3).split(","):
                a = a.strip()
                if a and a not in defined and a not in ref_lines:
                    ref_lines[a] = lineno
    if ref_lines:
        sig, lineno = min(ref_lines.items(), key=lambda kv: kv[1])
        raise BenchParseError(f"line {lineno}: reference to undefined signal '{sig}'")
    for sig in pos:
        if sig not in defined:
            raise BenchParseError(f"OUTPUT({sig}) references an undefined signal")

    return Netlist(name, pis, pos, gates)


def serialize(netlist: Netlist) -> str:
    """Canonical bench text: INPUTs, OUTPUTs, then gates in node-id order."""
    lines = [f"# {netlist.name}"]
    lines += [f"INPUT({p})" for p in netlist.pis]
    lines += [f"OUTPUT({p})" for p in netlist.pos]
    lines += [f"{g.out} = {g.kind}({', '.join(g.ins)})" for g in netlist.gates]
    return "\n".join(lines) + "\n"


def load_bench(path) -> Netlist:
    """Read a bench file from disk; the netlist is named after the file stem."""
    import pathlib

    p = pathlib.Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise DataError(f"cannot read bench file {p}: {e}") from e
    try:
        return parse_bench(text, name=p.stem)
    except BenchParseError as e:
        raise BenchParseError(f"{p}: {e}") from None


def unroll_sequential(netlist: Netlist, frames: int) -> Netlist:
    """Expand a sequential netlist into `frames` combinational time frames.

    Frame-k copies of signal `n` are named `n@k`. Frame-0 DFF outputs become
    fresh pseudo-primary-inputs (free initial state); in later frames a DFF
    output aliases its data input's previous-frame signal. Primary inputs are
    replicated per frame (frame-major, pseudo-PIs last) and every frame's
    primary outputs are exposed. A DFF output that is itself a primary output
    is materialized with a BUF in frames beyond the first so that PO names
    stay unique.
    """
    if frames < 1:
        raise ConfigError(f"frames must be >= 1, got {frames}")
    if not netlist.is_sequential:
        raise DataError("unroll_sequential requires a sequential netlist")

    dff_of = {g.out: g for g in netlist.gates if g.kind == "DFF"}
    comb = [g for g in netlist.gates if g.kind != "DFF"]

    def sig(n: str, k: int) -> str:
        while n in dff_of:
            if k == 0:
                break
            n, k = dff_of[n].ins[0], k - 1
        return f"{n}@{k}"

    pis = [f"{p}@{k}" for k in range(frames) for p in netlist.pis]
    pis += [f"{g.out}@0" for g in netlist.gates if g.kind == "DFF"]

    gates = []
    for k in range(frames):
        for g in comb:
            gates.append(Gate(f"{g.out}@{k}", g.kind, tuple(sig(i, k) for i in g.ins)))

    pos = []
    for k in range(frames):
        for po in netlist.pos:
            target = sig(po, k)
            if po in dff_of and k > 0:
                alias = f"{po}@{k}"
                gates.append(Gate(alias, "BUF", (target,)))
                pos.append(alias)
            else:
                pos.append(target)

    return Netlist(f"{netlist.name}_u{frames}", pis, pos, gates)
