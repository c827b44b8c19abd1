"""CNF encoding and SAT-based smart initialization.

The circuit is Tseitin-encoded (one variable per node, auxiliary variables
for folded multi-input XOR chains) and solved with an embedded iterative
DPLL: two-watched-literal unit propagation, chronological backtracking,
branching in a configurable variable order with seeded random polarity.
The default order is ascending variable index; node variables are numbered
in node-id order, so primary inputs are decided first and everything else
follows by propagation. Queries against specific target nodes pass a
cone-first order instead (see cone_decision_order), which keeps conflicts
adjacent to the decisions that caused them. Unconstrained variables end up
with random values, which diversifies the solutions.

Smart initialization targets small groups of rare nodes per query (hardest
first, round-robin), relaxing the group on UNSAT and dropping nodes that are
individually unsatisfiable; every returned vector is re-simulated to verify
it activates its recorded targets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, InternalError
from .netlist import Netlist
from .sim import simulator_for

log = logging.getLogger(__name__)


@dataclass
class Cnf:
    variable_count: int
    clauses: list
    node_var: dict  # node_id -> variable (1-based)

    def var_of(self, netlist: Netlist, name: str) -> int:
        return self.node_var[netlist.id_of(name)]


def encode_cnf(netlist: Netlist) -> Cnf:
    """Tseitin encoding of a combinational netlist.

    Satisfying assignments restricted to PI variables correspond exactly to
    circuit executions: every gate's output variable is constrained to equal
    its gate function.
    """
    if netlist.is_sequential:
        raise DataError("CNF encoding requires a combinational netlist; unroll first")
    node_var = {nid: nid + 1 for nid in range(netlist.n_nodes)}
    next_var = netlist.n_nodes + 1
    clauses = []

    def xor2(out, a, b):
        clauses.append((-out, a, b))
        clauses.append((-out, -a, -b))
        clauses.append((out, -a, b))
        clauses.append((out, a, -b))

    def xnor2(out, a, b):
        clauses.append((out, a, b))
        clauses.append((out, -a, -b))
        clauses.append((-out, -a, b))
        clauses.append((-out, a, -b))

    for g in netlist.gates:
        o = node_var[netlist.id_of(g.out)]
        ins = [node_var[netlist.id_of(i)] for i in g.ins]
        k = g.kind
        if k == "AND":
            for a in ins:
                clauses.append((-o, a))
            clauses.append(tuple([o] + [-a for a in ins]))
        elif k == "NAND":
            for a in ins:
                clauses.append((o, a))
            clauses.append(tuple([-o] + [-a for a in ins]))
        elif k == "OR":
            for a in ins:
                clauses.append((o, -a))
            clauses.append(tuple([-o] + ins))
        elif k == "NOR":
            for a in ins:
                clauses.append((-o, -a))
            clauses.append(tuple([o] + ins))
        elif k == "NOT":
            clauses.append((-o, -ins[0]))
            clauses.append((o, ins[0]))
        elif k == "BUF":
            clauses.append((-o, ins[0]))
            clauses.append((o, -ins[0]))
        elif k in ("XOR", "XNOR"):
            acc = ins[0]
            for a in ins[1:-1]:
                aux = next_var
                next_var += 1
                xor2(aux, acc, a)
                acc = aux
            if k == "XOR":
                xor2(o, acc, ins[-1])
            else:
                xnor2(o, acc, ins[-1])
        else:  # pragma: no cover - netlist validation forbids this
            raise InternalError(f"cannot encode gate kind {k}")

    return Cnf(variable_count=next_var - 1, clauses=clauses, node_var=node_var)


def to_dimacs(cnf: Cnf, netlist: Netlist | None = None) -> str:
    """Standard DIMACS text; node-name/variable map included as comments."""
    lines = []
    if netlist is not None:
        for nid, var in sorted(cnf.node_var.items()):
            lines.append(f"c var {var} = node {netlist.name_of(nid)}")
    lines.append(f"p cnf {cnf.variable_count} {len(cnf.clauses)}")
    for c in cnf.clauses:
        lines.append(" ".join(str(l) for l in c) + " 0")
    return "\n".join(lines) + "\n"


def cone_decision_order(netlist: Netlist, cnf: Cnf, target_names) -> list:
    """Variable order that fronts the targets' fanin-cone inputs, sequenced
    by first use along the levelized gate order.

    Chronological backtracking degrades badly when the input that caused a
    conflict was decided long before the conflict surfaced (deep carry or
    equality chains); deciding cone inputs next to the logic that consumes
    them keeps the backtrack distance short. Remaining variables follow in
    ascending order.
    """
    cone = netlist.transitive_fanin(list(target_names))
    pi_set = set(netlist.pis)
    order: list[int] = []
    listed = set()
    for nid in netlist.flatten_order():
        g = netlist.gate_of(netlist.name_of(nid))
        if g is None or g.out not in cone:
            continue
        for i in g.ins:
            if i in pi_set and i in cone and i not in listed:
                listed.add(i)
                order.append(cnf.node_var[netlist.id_of(i)])
    for pid in netlist.pi_ids:
        v = cnf.node_var[pid]
        if netlist.name_of(pid) not in listed:
            order.append(v)
    return order


def solve(cnf: Cnf, assumptions=(), seed: int = 0, rng=None, decision_order=None):
    """DPLL solve. Returns {variable: bool} covering every variable, or None
    if unsatisfiable under the assumptions.

    `decision_order` optionally lists variables to branch on first (e.g.
    from cone_decision_order); variables not listed follow in ascending
    order.
    """
    nv = cnf.variable_count
    for lit in assumptions:
        if not (0 < abs(lit) <= nv):
            raise ConfigError(f"assumption literal {lit} out of range")
    if rng is None:
        rng = np.random.default_rng(seed)

    if decision_order is None:
        order = list(range(1, nv + 1))
    else:
        order = list(decision_order)
        for v in order:
            if not (0 < v <= nv):
                raise ConfigError(f"decision variable {v} out of range")
        tail = set(order)
        order.extend(v for v in range(1, nv + 1) if v not in tail)

    clauses = [tuple(c) for c in cnf.clauses]
    assign: dict[int, bool] = {}
    trail: list[int] = []  # literals in assignment order
    watch: dict[int, list[int]] = {}
    units: list[int] = []

    for ci, c in enumerate(clauses):
        if not c:
            return None
        if len(c) == 1:
            units.append(c[0])
        else:
            watch.setdefault(c[0], []).append(ci)
            watch.setdefault(c[1], []).append(ci)
    watched = [list(c[:2]) for c in clauses]

    def lit_value(lit):
        v = assign.get(abs(lit))
        if v is None:
            return None
        return v if lit > 0 else not v

    def enqueue(lit, queue):
        v = lit_value(lit)
        if v is not None:
            return v
        assign[abs(lit)] = lit > 0
        trail.append(lit)
        queue.append(lit)
        return True

    def propagate(queue):
        """Two-watched-literal propagation; returns False on conflict."""
        while queue:
            lit = queue.pop()
            falsified = -lit
            watchers = watch.get(falsified)
            if not watchers:
                continue
            keep = []
            for wi, ci in enumerate(watchers):
                w = watched[ci]
                other = w[0] if w[1] == falsified else w[1]
                if lit_value(other) is True:
                    keep.append(ci)
                    continue
                moved = False
                for cand in clauses[ci]:
                    if cand == other or cand == falsified:
                        continue
                    if lit_value(cand) is not False:
                        if w[0] == falsified:
                            w[0] = cand
                        else:
                            w[1] = cand
                        watch.setdefault(cand, []).append(ci)
                        moved = True
                        break
                if moved:
                    continue
                keep.append(ci)
                if not enqueue(other, queue):
                    keep.extend(watchers[wi + 1 :])
                    watch[falsified] = keep
                    return False
            watch[falsified] = keep
        return True

    queue: list[int] = []
    for lit in units + list(assumptions):
        if not enqueue(lit, queue):
            return None
    if not propagate(queue):
        return None

    # decision stack entries: (trail length before decision, literal,
    # flipped?, order position)
    stack: list[list] = []
    pos = 0
    while True:
        while pos < nv and order[pos] in assign:
            pos += 1
        if pos == nv:
            return dict(assign)
        polarity = bool(rng.integers(0, 2))
        var = order[pos]
        lit = var if polarity else -var
        stack.append([len(trail), lit, False, pos])
        queue = []
        enqueue(lit, queue)
        while not propagate(queue):
            # conflict: chronological backtrack to the last unflipped decision
            while stack and stack[-1][2]:
                top = stack.pop()
                _undo_to(assign, trail, top[0])
            if not stack:
                return None
            top = stack[-1]
            _undo_to(assign, trail, top[0])
            top[1] = -top[1]
            top[2] = True
            queue = []
            enqueue(top[1], queue)
        pos = stack[-1][3]


def _undo_to(assign, trail, length):
    while len(trail) > length:
        lit = trail.pop()
        del assign[abs(lit)]


def assignment_to_vector(netlist: Netlist, cnf: Cnf, assignment) -> np.ndarray:
    """PI bits in declaration order, extracted from a full SAT assignment."""
    return np.asarray(
        [int(assignment[cnf.node_var[pid]]) for pid in netlist.pi_ids], dtype=np.uint8
    )


_cnf_cache: dict[int, tuple] = {}


def cnf_for(netlist: Netlist) -> Cnf:
    """Per-netlist CNF, cached by object identity."""
    hit = _cnf_cache.get(id(netlist))
    if hit is None or hit[0] is not netlist:
        cnf = encode_cnf(netlist)
        if len(_cnf_cache) >= 64:
            _cnf_cache.pop(next(iter(_cnf_cache)))
        _cnf_cache[id(netlist)] = (netlist, cnf)
        return cnf
    return hit[1]


@dataclass
class SmartInitResult:
    vectors: np.ndarray  # (count, #PI) uint8
    targets: list  # per vector: tuple of RareNode targeted (empty if fallback)
    fallback_used: bool
    unsat_nodes: tuple  # rare nodes individually unsatisfiable


def smart_initialize(
    netlist: Netlist, rare_nodes, count: int, seed: int = 0, group_size: int = 3
) -> SmartInitResult:
    """SAT-seeded initial test set.

    Targets rotate round-robin over the rare nodes sorted by ascending
    activation probability (hardest first), `group_size` per query. On UNSAT
    the group shrinks by halving down to a single node; a node UNSAT on its
    own is dropped for good. If no rare node is satisfiable (or none exists),
    the remainder is filled with uniform random vectors and flagged.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if group_size < 1:
        raise ConfigError(f"group_size must be >= 1, got {group_size}")
    rng = np.random.default_rng(seed)
    cnf = cnf_for(netlist)
    sim = simulator_for(netlist)
    n_pi = len(netlist.pis)

    rotation = sorted(rare_nodes, key=lambda r: (r.activation_probability, r.node_id))
    dropped = []
    vectors = np.zeros((count, n_pi), dtype=np.uint8)
    targets: list[tuple] = []
    fallback = False
    ptr = 0

    def lits(group):
        return [
            cnf.node_var[r.node_id] if r.rare_value == 1 else -cnf.node_var[r.node_id]
            for r in group
        ]

    made = 0
    while made < count:
        if not rotation:
            fallback = True
            break
        take = min(group_size, len(rotation))
        group = [rotation[(ptr + j) % len(rotation)] for j in range(take)]
        ptr = (ptr + take) % len(rotation)

        solution = None
        chosen = None
        size = take
        while size >= 1:
            sub = group[:size]
            solution = solve(
                cnf,
                assumptions=lits(sub),
                rng=rng,
                decision_order=cone_decision_order(
                    netlist, cnf, [r.name for r in sub]
                ),
            )
            if solution is not None:
                chosen = tuple(sub)
                break
            size = size // 2 if size > 1 else 0
        if solution is None:
            bad = group[0]
            rotation.remove(bad)
            dropped.append(bad)
            if ptr > 0:
                ptr = ptr % max(len(rotation), 1)
            log.warning(
                "rare node %s is unsatisfiable on its own; dropped from "
                "initialization targets", bad.name,
            )
            continue

        vec = assignment_to_vector(netlist, cnf, solution)
        state = sim.eval_bool(vec.reshape(1, -1))[0]
        pos = netlist.flatten_pos()
        for r in chosen:
            if int(state[pos[r.node_id]]) != r.rare_value:
                raise InternalError(
                    f"SAT witness fails to activate {r.name} under simulation"
                )
        vectors[made] = vec
        targets.append(chosen)
        made += 1

    while made < count:
        vectors[made] = rng.integers(0, 2, size=n_pi, dtype=np.uint8)
        targets.append(())
        made += 1
    if fallback:
        log.warning("smart initialization fell back to random vectors")

    return SmartInitResult(
        vectors=vectors,
        targets=targets,
        fallback_used=fallback,
        unsat_nodes=tuple(dropped),
    )
