"""Shared test utilities: random netlist generation and independent oracles.

The oracles here deliberately avoid the library's levelized/bit-parallel code
paths: evaluation is naive memoized recursion over gate definitions, so any
agreement between library and oracle is meaningful.
"""

from __future__ import annotations

import random
from pathlib import Path

from htpg.netlist import Gate, Netlist

BENCH_DIR = Path(__file__).resolve().parent.parent / "benchmarks"

COMB_KINDS = ["AND", "NAND", "OR", "NOR", "XOR", "XNOR", "NOT", "BUF"]


def random_netlist(rng: random.Random, n_pi=6, n_gates=20, sequential=False,
                   dff_rate=0.2, name="rand") -> Netlist:
    """Random acyclic netlist. Gates reference only earlier signals, every
    sink becomes a primary output (no dead logic)."""
    signals = [f"x{i}" for i in range(n_pi)]
    pis = list(signals)
    gates = []
    for gi in range(n_gates):
        out = f"g{gi}"
        if sequential and rng.random() < dff_rate:
            gates.append(Gate(out, "DFF", (rng.choice(signals),)))
        else:
            kind = rng.choice(COMB_KINDS)
            if kind in ("NOT", "BUF"):
                ins = (rng.choice(signals),)
            else:
                k = rng.choice([2, 2, 2, 3])
                k = min(k, len(signals))
                if k < 2:
                    kind, ins = "NOT", (rng.choice(signals),)
                else:
                    ins = tuple(rng.sample(signals, k))
            gates.append(Gate(out, kind, ins))
        signals.append(out)
    used = {i for g in gates for i in g.ins}
    sinks = [g.out for g in gates if g.out not in used]
    extra = [g.out for g in gates if g.out in used and rng.random() < 0.15]
    pos = sinks + extra
    if not pos:
        pos = [gates[-1].out] if gates else [pis[0]]
    return Netlist(name, pis, pos, gates)


def oracle_eval(netlist: Netlist, assignment: dict) -> dict:
    """Naive recursive two-valued evaluation of every node. `assignment` maps
    PI names (and, for unrolled contexts, pseudo-PI names) to 0/1."""
    values = dict(assignment)

    def ev(name):
        if name in values:
            return values[name]
        g = netlist.gate_of(name)
        if g is None:
            raise AssertionError(f"no value for PI {name}")
        ins = [ev(i) for i in g.ins]
        k = g.kind
        if k == "AND":
            v = int(all(ins))
        elif k == "NAND":
            v = int(not all(ins))
        elif k == "OR":
            v = int(any(ins))
        elif k == "NOR":
            v = int(not any(ins))
        elif k == "XOR":
            v = sum(ins) % 2
        elif k == "XNOR":
            v = (sum(ins) + 1) % 2
        elif k == "NOT":
            v = 1 - ins[0]
        elif k == "BUF":
            v = ins[0]
        else:
            raise AssertionError(f"oracle cannot evaluate {k}")
        values[name] = v
        return v

    for n in netlist.names:
        if n not in values:
            ev(n)
    return values


def oracle_sequential_steps(netlist: Netlist, initial_state: dict,
                            input_steps: list[dict]) -> list[dict]:
    """Stateful step-by-step simulation of a sequential netlist.

    DFF outputs start at `initial_state`; at each step the combinational
    logic is evaluated with current state + inputs, POs are recorded, then
    every DFF output takes its data input's value for the next step.
    """
    dffs = [g for g in netlist.gates if g.kind == "DFF"]
    comb = Netlist(
        netlist.name + "_comb",
        list(netlist.pis) + [g.out for g in dffs],
        netlist.pos,
        [g for g in netlist.gates if g.kind != "DFF"],
    )
    state = dict(initial_state)
    po_rows = []
    for step_inputs in input_steps:
        env = {**step_inputs, **state}
        values = oracle_eval(comb, env)
        po_rows.append({po: values[po] for po in netlist.pos})
        state = {g.out: values[g.ins[0]] for g in dffs}
    return po_rows


def all_inputs(n_pi):
    """All 2^n_pi input tuples, LSB-first in x0."""
    for m in range(1 << n_pi):
        yield tuple((m >> i) & 1 for i in range(n_pi))
