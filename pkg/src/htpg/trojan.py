"""Benchmark Trojan construction and stealth measurement.

A Trojan here is an AND trigger over a handful of rare nodes (each taken at
its rare polarity) whose output is XORed into a payload signal, flipping it
exactly when every trigger node sits at its rare value. Insertion rewires
the payload's fanout through the XOR while leaving the original gate
functions alone, so the infected circuit is indistinguishable from the
golden one until the trigger fires.

Sampled Trojans are validated with a SAT query: a spec is only emitted if
some input actually drives all trigger nodes to their rare values at once.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .netlist import Gate, Netlist
from .profiling import Profile, RareNode
from .satinit import assignment_to_vector, cnf_for, cone_decision_order, solve
from .sim import pack_vectors, simulator_for

TRIGGER_WIDTH_DEFAULT = 3


@dataclass(frozen=True)
class TrojanSpec:
    trigger_nodes: tuple  # RareNode, in trigger input order
    payload_node: int  # NodeId of the gate output to corrupt
    id: str

    def trigger_names(self) -> tuple:
        return tuple(r.name for r in self.trigger_nodes)


def trojan_to_json(spec: TrojanSpec) -> str:
    doc = {
        "id": spec.id,
        "payload": spec.payload_node,
        "trigger": [
            {
                "node": r.name,
                "node_id": r.node_id,
                "rare_value": r.rare_value,
                "p_one": r.p_one,
                "p_trans": r.p_trans,
            }
            for r in spec.trigger_nodes
        ],
    }
    return json.dumps(doc, indent=1)


def trojan_from_json(text: str, netlist: Netlist) -> TrojanSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"trojan spec is not valid JSON: {e}") from e
    try:
        trigger = tuple(
            RareNode(
                node_id=t["node_id"],
                name=t["node"],
                p_one=t["p_one"],
                p_trans=t["p_trans"],
                rare_value=t["rare_value"],
            )
            for t in doc["trigger"]
        )
        spec = TrojanSpec(trigger_nodes=trigger, payload_node=doc["payload"],
                          id=doc["id"])
    except (KeyError, TypeError) as e:
        raise DataError(f"malformed trojan spec: {e}") from e
    validate_spec(netlist, spec)
    return spec


def validate_spec(netlist: Netlist, spec: TrojanSpec) -> None:
    if len(spec.trigger_nodes) == 0:
        raise DataError("trigger must have at least one node")
    ids = [r.node_id for r in spec.trigger_nodes]
    if len(set(ids)) != len(ids):
        raise DataError("trigger nodes must be distinct")
    for r in spec.trigger_nodes:
        if not 0 <= r.node_id < netlist.n_nodes or \
                netlist.name_of(r.node_id) != r.name:
            raise DataError(f"trigger node {r.name} not in netlist")
        if r.rare_value not in (0, 1):
            raise DataError(f"bad rare value for {r.name}")
    if spec.payload_node in ids:
        raise DataError("payload must not be a trigger node")
    payload_name = None
    if 0 <= spec.payload_node < netlist.n_nodes:
        payload_name = netlist.name_of(spec.payload_node)
    if payload_name is None or netlist.gate_of(payload_name) is None:
        raise DataError("payload must be a gate output of the netlist")
    cone = netlist.transitive_fanin(list(spec.trigger_names()))
    if payload_name in cone:
        raise DataError(
            f"payload {payload_name} feeds the trigger cone; insertion "
            "would create a combinational cycle"
        )


def _fresh(base: str, taken: set) -> str:
    name = base
    k = 0
    while name in taken:
        k += 1
        name = f"{base}_{k}"
    taken.add(name)
    return name


def insert_trojan(netlist: Netlist, spec: TrojanSpec) -> Netlist:
    """New netlist with the Trojan wired in; the input netlist is untouched.

    The payload gate keeps its fanout and PO membership: its original output
    is renamed and the payload name is re-driven by XOR(original, trigger).
    """
    validate_spec(netlist, spec)
    taken = set(netlist.names)
    tag = "".join(c if c.isalnum() else "_" for c in spec.id) or "ht"

    payload_name = netlist.name_of(spec.payload_node)
    pre_name = _fresh(f"{payload_name}_{tag}_pre", taken)

    gates = []
    for g in netlist.gates:
        if g.out == payload_name:
            gates.append(Gate(pre_name, g.kind, g.ins))
        else:
            gates.append(g)

    # trigger literals: the node itself at rare value 1, an inverter else
    literals = []
    for r in spec.trigger_nodes:
        if r.rare_value == 1:
            literals.append(r.name)
        else:
            inv = _fresh(f"{tag}_n_{r.name}", taken)
            gates.append(Gate(inv, "NOT", (r.name,)))
            literals.append(inv)

    # linear AND tree, q-1 two-input gates
    trig = literals[0]
    for j, lit in enumerate(literals[1:], start=1):
        out = _fresh(f"{tag}_and{j}", taken)
        gates.append(Gate(out, "AND", (trig, lit)))
        trig = out

    gates.append(Gate(payload_name, "XOR", (pre_name, trig)))

    return Netlist(
        name=f"{netlist.name}_{tag}",
        pis=netlist.pis,
        pos=netlist.pos,
        gates=tuple(gates),
    )


def legal_payloads(netlist: Netlist, trigger_names) -> list:
    """Gate-output NodeIds that can take the payload XOR without forming a
    cycle: everything outside the triggers' combined fanin cone."""
    cone = netlist.transitive_fanin(list(trigger_names))
    out = []
    for g in netlist.gates:
        if g.kind != "DFF" and g.out not in cone:
            out.append(netlist.id_of(g.out))
    return out


def trigger_assumptions(cnf, spec: TrojanSpec):
    return [
        cnf.node_var[r.node_id] if r.rare_value == 1 else -cnf.node_var[r.node_id]
        for r in spec.trigger_nodes
    ]


def sample_trojans(netlist: Netlist, profile: Profile, count: int,
                   q: int = TRIGGER_WIDTH_DEFAULT, seed: int = 0,
                   prefer_rare_one: bool = True) -> list:
    """`count` distinct SAT-validated Trojan specs with q-node triggers.

    Triggers draw from the rare_value=1 pool when it is large enough (and
    `prefer_rare_one` is set), otherwise from all rare nodes with their
    native polarities. Payloads are uniform over gate outputs outside the
    trigger's fanin cone. Each accepted spec carries a SAT witness that was
    re-simulated to confirm the trigger actually fires.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if q < 1:
        raise ConfigError(f"trigger width must be >= 1, got {q}")
    profile.validate_against(netlist)

    pool = [r for r in profile.rare if r.rare_value == 1]
    if not prefer_rare_one or len(pool) < q:
        pool = list(profile.rare)
    if len(pool) < q:
        raise DataError(
            f"need {q} rare nodes for a trigger, profile has {len(profile.rare)}"
        )

    rng = np.random.default_rng(seed)
    cnf = cnf_for(netlist)
    sim = simulator_for(netlist)
    pos = netlist.flatten_pos()

    specs = []
    seen = set()
    budget = 200 * count
    attempts = 0
    while len(specs) < count:
        attempts += 1
        if attempts > budget:
            raise DataError(
                f"no jointly satisfiable trigger found after {budget} attempts"
                f" ({len(specs)}/{count} sampled)"
            )
        pick = rng.choice(len(pool), size=q, replace=False)
        trigger = tuple(pool[i] for i in sorted(pick))
        payloads = legal_payloads(netlist, [r.name for r in trigger])
        if not payloads:
            continue
        payload = int(payloads[int(rng.integers(0, len(payloads)))])
        key = (frozenset(r.node_id for r in trigger), payload)
        if key in seen:
            continue

        spec = TrojanSpec(trigger_nodes=trigger, payload_node=payload,
                          id=f"trojan_{len(specs):03d}")
        solution = solve(
            cnf,
            assumptions=trigger_assumptions(cnf, spec),
            rng=rng,
            decision_order=cone_decision_order(
                netlist, cnf, [r.name for r in trigger]
            ),
        )
        if solution is None:
            continue
        witness = assignment_to_vector(netlist, cnf, solution)
        state = sim.eval_bool(witness.reshape(1, -1))[0]
        for r in trigger:
            if int(state[pos[r.node_id]]) != r.rare_value:
                raise DataError(
                    f"SAT witness does not activate trigger node {r.name}"
                )
        seen.add(key)
        specs.append(spec)
    return specs


@dataclass(frozen=True)
class ActivationEstimate:
    probability: float
    stderr: float
    trials: int


def estimate_activation_probability(netlist: Netlist, spec: TrojanSpec,
                                    trials: int = 100_000,
                                    seed: int = 0) -> ActivationEstimate:
    """Monte-Carlo trigger activation probability under uniform inputs,
    with its binomial standard error."""
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    validate_spec(netlist, spec)
    sim = simulator_for(netlist)
    rng = np.random.default_rng(seed)
    n_pi = len(netlist.pis)
    rows = [r.node_id for r in spec.trigger_nodes]  # eval_packed is id-indexed
    values = [r.rare_value for r in spec.trigger_nodes]

    hits = 0
    done = 0
    while done < trials:
        block = min(trials - done, 1 << 16)
        vecs = rng.integers(0, 2, size=(block, n_pi), dtype=np.uint8)
        lanes, n_vec = pack_vectors(vecs)
        node_lanes = sim.eval_packed(lanes, n_vec)
        acc = None
        for row, val in zip(rows, values):
            bits = node_lanes[row] if val == 1 else ~node_lanes[row]
            acc = bits if acc is None else acc & bits
        full_words = n_vec // 64
        rem = n_vec % 64
        masked = acc.copy()
        if rem:
            masked[full_words] &= np.uint64((1 << rem) - 1)
            masked[full_words + 1:] = 0
        else:
            masked[full_words:] = 0
        hits += int(np.bitwise_count(masked).sum())
        done += block

    p = hits / trials
    stderr = math.sqrt(p * (1.0 - p) / trials)
    return ActivationEstimate(probability=p, stderr=stderr, trials=trials)
