"""Circuit profiling: Monte-Carlo transition probabilities, rare-node
identification, and SCOAP testability measures (CC0, CC1, CO).

Transition probabilities are estimated by logic simulation of uniform random
input vectors rather than analytic propagation, so reconvergent fanout needs
no independence assumption. SCOAP follows the classical combinational rules:
controllability forward in level order, observability backward, fanout stems
taking the cheapest branch.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .netlist import Netlist
from .sim import popcount_rows, simulator_for

_WORD = 64

#: SCOAP observability sentinel for nodes with no structural path to any PO.
UNOBSERVABLE = -1


@dataclass(frozen=True)
class RareNode:
    node_id: int
    name: str
    p_one: float
    p_trans: float
    rare_value: int

    @property
    def activation_probability(self) -> float:
        """Estimated probability of sitting at the rare value."""
        return self.p_one if self.rare_value == 1 else 1.0 - self.p_one


def estimate_transition_probabilities(
    netlist: Netlist, trials: int = 100_000, seed: int = 0, jobs: int = 1
):
    """p_one and p_trans per node id over `trials` uniform random vectors.

    The random input block is generated once from the seed; with jobs > 1
    only the simulation is split (by word chunks), so results are identical
    for any job count.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    sim = simulator_for(netlist)
    n_pi = len(netlist.pis)
    words = max(1, -(-trials // _WORD))
    rng = np.random.default_rng(seed)
    raw = rng.bytes(n_pi * words * 8) if n_pi else b""
    lanes = np.frombuffer(raw, dtype=np.uint64).reshape(n_pi, words).copy()
    tail = trials % _WORD
    if tail:
        lanes[:, -1] &= np.uint64((1 << tail) - 1)

    def count_chunk(lo: int, hi: int, n_vec: int) -> np.ndarray:
        vals = sim.eval_packed(lanes[:, lo:hi], n_vec)
        return popcount_rows(vals)

    jobs = max(1, int(jobs))
    if jobs == 1 or words == 1:
        counts = count_chunk(0, words, trials)
    else:
        step = -(-words // jobs)
        spans = []
        for lo in range(0, words, step):
            hi = min(lo + step, words)
            n_vec = min(trials - lo * _WORD, (hi - lo) * _WORD)
            spans.append((lo, hi, n_vec))
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda s: count_chunk(*s), spans))
        counts = np.sum(parts, axis=0)

    p_one = counts / float(trials)
    p_trans = p_one * (1.0 - p_one)
    return p_one, p_trans


def identify_rare_nodes(netlist: Netlist, p_one, p_trans, theta: float):
    """Nodes with p_trans < theta, annotated with their minority rare value.

    theta is only required to be positive; values above 0.25 mark every node
    rare (p_trans is capped at 0.25).
    """
    if not theta > 0:
        raise ConfigError(f"theta must be > 0, got {theta}")
    rare = []
    for nid in range(netlist.n_nodes):
        if p_trans[nid] < theta:
            rare.append(
                RareNode(
                    node_id=nid,
                    name=netlist.name_of(nid),
                    p_one=float(p_one[nid]),
                    p_trans=float(p_trans[nid]),
                    rare_value=1 if p_one[nid] < 0.5 else 0,
                )
            )
    return rare


# -- SCOAP --------------------------------------------------------------------

_ALL_SUM = {"AND": "cc1", "NAND": "cc1", "OR": "cc0", "NOR": "cc0"}


def compute_scoap(netlist: Netlist):
    """Goldstein combinational SCOAP.

    Returns (cc0, cc1, co) int64 arrays indexed by node id. co is
    UNOBSERVABLE (-1) for nodes with no path to a primary output.
    """
    if netlist.is_sequential:
        raise DataError("SCOAP here is combinational only; unroll first")
    n = netlist.n_nodes
    cc0 = np.zeros(n, dtype=np.int64)
    cc1 = np.zeros(n, dtype=np.int64)
    for pid in netlist.pi_ids:
        cc0[pid] = cc1[pid] = 1

    order = netlist.flatten_order()
    for nid in order:
        g = netlist.gate_of(netlist.name_of(nid))
        if g is None:
            continue
        ins = [netlist.id_of(i) for i in g.ins]
        k = g.kind
        if k in ("AND", "NAND"):
            set_all = int(sum(cc1[i] for i in ins)) + 1  # all inputs 1
            set_any = int(min(cc0[i] for i in ins)) + 1  # any input 0
            cc1[nid], cc0[nid] = (set_all, set_any) if k == "AND" else (set_any, set_all)
        elif k in ("OR", "NOR"):
            set_all = int(sum(cc0[i] for i in ins)) + 1  # all inputs 0
            set_any = int(min(cc1[i] for i in ins)) + 1  # any input 1
            cc0[nid], cc1[nid] = (set_all, set_any) if k == "OR" else (set_any, set_all)
        elif k in ("XOR", "XNOR"):
            even, odd = _parity_costs(cc0, cc1, ins)
            if k == "XOR":
                cc0[nid], cc1[nid] = even + 1, odd + 1
            else:
                cc0[nid], cc1[nid] = odd + 1, even + 1
        elif k == "NOT":
            cc0[nid] = cc1[ins[0]] + 1
            cc1[nid] = cc0[ins[0]] + 1
        elif k == "BUF":
            cc0[nid] = cc0[ins[0]] + 1
            cc1[nid] = cc1[ins[0]] + 1

    INF = math.inf
    co = [INF] * n
    for pid in netlist.po_ids:
        co[pid] = 0
    consumers = netlist.consumers()
    for nid in reversed(order):
        best = co[nid]
        for g, pin in consumers[nid]:
            out = netlist.id_of(g.out)
            if co[out] == INF:
                continue
            ins = [netlist.id_of(i) for i in g.ins]
            others = [i for p, i in enumerate(ins) if p != pin]
            if g.kind in ("AND", "NAND"):
                side = sum(int(cc1[i]) for i in others)
            elif g.kind in ("OR", "NOR"):
                side = sum(int(cc0[i]) for i in others)
            elif g.kind in ("XOR", "XNOR"):
                side = sum(int(min(cc0[i], cc1[i])) for i in others)
            else:  # NOT / BUF
                side = 0
            best = min(best, co[out] + side + 1)
        co[nid] = best

    co_arr = np.asarray(
        [UNOBSERVABLE if v == INF else int(v) for v in co], dtype=np.int64
    )
    return cc0, cc1, co_arr


def _parity_costs(cc0, cc1, ins):
    """Minimum controllability cost to give the input set even/odd parity."""
    even, odd = int(cc0[ins[0]]), int(cc1[ins[0]])
    for i in ins[1:]:
        even, odd = (
            min(even + int(cc0[i]), odd + int(cc1[i])),
            min(even + int(cc1[i]), odd + int(cc0[i])),
        )
    return even, odd


# -- Profile bundle -----------------------------------------------------------


@dataclass
class Profile:
    """Everything downstream stages need to know about one netlist: per-node
    probabilities, the rare set, SCOAP triples, and the parameters used."""

    circuit: str
    netlist_digest: str
    theta: float
    trials: int
    seed: int
    node_names: tuple
    p_one: np.ndarray
    p_trans: np.ndarray
    cc0: np.ndarray
    cc1: np.ndarray
    co: np.ndarray
    rare: tuple

    @property
    def rare_ids(self) -> np.ndarray:
        return np.asarray([r.node_id for r in self.rare], dtype=np.int64)

    @property
    def rare_values(self) -> np.ndarray:
        return np.asarray([r.rare_value for r in self.rare], dtype=np.uint8)

    def scoap_weight(self, r: RareNode) -> int:
        """CC at the rare value plus CO; the per-node testability weight."""
        cc = self.cc1[r.node_id] if r.rare_value == 1 else self.cc0[r.node_id]
        co = self.co[r.node_id]
        return int(cc) + (int(co) if co != UNOBSERVABLE else 0)

    def validate_against(self, netlist: Netlist):
        if netlist.digest() != self.netlist_digest:
            raise DataError(
                f"profile was computed from a different netlist "
                f"(profile digest {self.netlist_digest[:12]}..., "
                f"netlist {netlist.digest()[:12]}...)"
            )

    def to_json(self) -> str:
        nodes = {}
        for nid, name in enumerate(self.node_names):
            co = int(self.co[nid])
            nodes[name] = {
                "p_one": float(self.p_one[nid]),
                "p_trans": float(self.p_trans[nid]),
                "cc0": int(self.cc0[nid]),
                "cc1": int(self.cc1[nid]),
                "co": None if co == UNOBSERVABLE else co,
                "rare": False,
                "rare_value": None,
            }
        for r in self.rare:
            nodes[r.name]["rare"] = True
            nodes[r.name]["rare_value"] = r.rare_value
        doc = {
            "circuit": self.circuit,
            "netlist_digest": self.netlist_digest,
            "theta": self.theta,
            "trials": self.trials,
            "seed": self.seed,
            "rare_count": len(self.rare),
            "nodes": nodes,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Profile":
        try:
            doc = json.loads(text)
            names = tuple(doc["nodes"].keys())
            recs = [doc["nodes"][n] for n in names]
            p_one = np.asarray([r["p_one"] for r in recs], dtype=np.float64)
            p_trans = np.asarray([r["p_trans"] for r in recs], dtype=np.float64)
            cc0 = np.asarray([r["cc0"] for r in recs], dtype=np.int64)
            cc1 = np.asarray([r["cc1"] for r in recs], dtype=np.int64)
            co = np.asarray(
                [UNOBSERVABLE if r["co"] is None else r["co"] for r in recs],
                dtype=np.int64,
            )
            rare = tuple(
                RareNode(nid, names[nid], float(p_one[nid]), float(p_trans[nid]),
                         int(recs[nid]["rare_value"]))
                for nid in range(len(names))
                if recs[nid]["rare"]
            )
            return cls(
                circuit=doc["circuit"],
                netlist_digest=doc["netlist_digest"],
                theta=float(doc["theta"]),
                trials=int(doc["trials"]),
                seed=int(doc["seed"]),
                node_names=names,
                p_one=p_one,
                p_trans=p_trans,
                cc0=cc0,
                cc1=cc1,
                co=co,
                rare=rare,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed profile JSON: {e}") from e


def profile_netlist(
    netlist: Netlist,
    theta: float = 0.1,
    trials: int = 100_000,
    seed: int = 0,
    jobs: int = 1,
) -> Profile:
    """Run the full profiling pass and bundle the results."""
    p_one, p_trans = estimate_transition_probabilities(netlist, trials, seed, jobs)
    rare = identify_rare_nodes(netlist, p_one, p_trans, theta)
    cc0, cc1, co = compute_scoap(netlist)
    return Profile(
        circuit=netlist.name,
        netlist_digest=netlist.digest(),
        theta=float(theta),
        trials=int(trials),
        seed=int(seed),
        node_names=netlist.names,
        p_one=p_one,
        p_trans=p_trans,
        cc0=cc0,
        cc1=cc1,
        co=co,
        rare=tuple(rare),
    )
