"""Two-valued logic simulation of combinational netlists.

Evaluation is levelized and bit-parallel: a batch of vectors is packed into
64-bit lanes (vector v lives in bit v of each word), every gate is one
vectorized bitwise operation over its input rows, and per-node results come
back either packed (for counting) or unpacked into DagStates. Semantics never
depend on the lane width; `simulate_batch` equals mapping `simulate`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DataError, InternalError
from .netlist import Netlist

_WORD = 64


class DagState:
    """Node values for one input vector, in the netlist's flattened
    (level-major) node order."""

    __slots__ = ("bits", "_netlist")

    def __init__(self, bits: np.ndarray, netlist: Netlist):
        self.bits = bits
        self._netlist = netlist

    def value_of(self, name: str) -> int:
        nid = self._netlist.id_of(name)
        return int(self.bits[self._netlist.flatten_pos()[nid]])

    def po_bits(self) -> np.ndarray:
        pos = self._netlist.flatten_pos()
        return self.bits[[pos[i] for i in self._netlist.po_ids]]

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        return isinstance(other, DagState) and np.array_equal(self.bits, other.bits)


def pack_vectors(vectors: np.ndarray) -> tuple[np.ndarray, int]:
    """Pack a (V, width) 0/1 matrix into (width, ceil(V/64)) uint64 lanes."""
    vectors = np.ascontiguousarray(vectors, dtype=np.uint8)
    n_vec, width = vectors.shape
    words = max(1, -(-n_vec // _WORD))
    by_signal = np.zeros((width, words * 8), dtype=np.uint8)
    packed8 = np.packbits(vectors.T, axis=1, bitorder="little")
    by_signal[:, : packed8.shape[1]] = packed8
    return by_signal.view(np.uint64), n_vec


def unpack_lanes(lanes: np.ndarray, n_vec: int) -> np.ndarray:
    """Inverse of pack_vectors: (rows, words) uint64 -> (rows, n_vec) uint8."""
    as_bytes = np.ascontiguousarray(lanes).view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :n_vec]


def popcount_rows(lanes: np.ndarray) -> np.ndarray:
    """Per-row population count of packed lanes."""
    return np.bitwise_count(lanes).sum(axis=1, dtype=np.int64)


class Simulator:
    """Compiled levelized evaluator for one combinational netlist.

    Build once, reuse for many batches: the constructor freezes the gate
    program (kind, input ids, output id in level order) so evaluation is a
    straight pass of vectorized bitwise ops.
    """

    def __init__(self, netlist: Netlist):
        if netlist.is_sequential:
            raise DataError(
                f"netlist '{netlist.name}' is sequential; unroll it before simulation"
            )
        self.netlist = netlist
        self.n_pi = len(netlist.pis)
        order = netlist.flatten_order()
        self._flat_pos = np.asarray(netlist.flatten_pos(), dtype=np.int64)
        gate_of = {netlist.id_of(g.out): g for g in netlist.gates}
        program = []
        for nid in order:
            g = gate_of.get(nid)
            if g is None:
                continue  # primary input
            in_ids = np.asarray([netlist.id_of(i) for i in g.ins], dtype=np.int64)
            program.append((g.kind, in_ids, nid))
        self._program = program
        self._pi_ids = np.asarray(netlist.pi_ids, dtype=np.int64)
        self._po_rows = self._flat_pos[np.asarray(netlist.po_ids, dtype=np.int64)]
        self._flat_order = np.asarray(order, dtype=np.int64)

    # -- packed-domain evaluation ---------------------------------------------

    def eval_packed(self, pi_lanes: np.ndarray, n_vec: int) -> np.ndarray:
        """Evaluate packed PI lanes -> packed node lanes, one row per node id.

        The tail word is masked back to zero after the pass so population
        counts over rows are exact.
        """
        if pi_lanes.shape[0] != self.n_pi:
            raise DataError(
                f"input width mismatch: netlist has {self.n_pi} PIs, "
                f"got {pi_lanes.shape[0]}"
            )
        words = pi_lanes.shape[1]
        vals = np.zeros((self.netlist.n_nodes, words), dtype=np.uint64)
        vals[self._pi_ids] = pi_lanes
        for kind, in_ids, out in self._program:
            rows = vals[in_ids]
            if kind == "AND":
                r = np.bitwise_and.reduce(rows, axis=0)
            elif kind == "NAND":
                r = ~np.bitwise_and.reduce(rows, axis=0)
            elif kind == "OR":
                r = np.bitwise_or.reduce(rows, axis=0)
            elif kind == "NOR":
                r = ~np.bitwise_or.reduce(rows, axis=0)
            elif kind == "XOR":
                r = np.bitwise_xor.reduce(rows, axis=0)
            elif kind == "XNOR":
                r = ~np.bitwise_xor.reduce(rows, axis=0)
            elif kind == "NOT":
                r = ~rows[0]
            elif kind == "BUF":
                r = rows[0]
            else:  # pragma: no cover - construction forbids this
                raise InternalError(f"unsupported gate kind {kind}")
            vals[out] = r
        tail = n_vec % _WORD
        if tail:
            mask = np.uint64((1 << tail) - 1)
            vals[:, (n_vec - 1) // _WORD] &= mask
            vals[:, (n_vec - 1) // _WORD + 1 :] = 0
        return vals

    def eval_bool(self, vectors: np.ndarray) -> np.ndarray:
        """Evaluate a (V, #PI) 0/1 matrix -> (V, n_nodes) node values in
        flattened node order."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.uint8))
        if vectors.shape[0] == 0:
            return np.zeros((0, self.netlist.n_nodes), dtype=np.uint8)
        lanes, n_vec = pack_vectors(vectors)
        vals = self.eval_packed(lanes, n_vec)
        by_node = unpack_lanes(vals, n_vec)  # (n_nodes, V) in node-id order
        return by_node.T[:, self._flat_order]

    def po_matrix(self, node_matrix: np.ndarray) -> np.ndarray:
        """(V, n_nodes) flattened node values -> (V, #PO) output bits."""
        return node_matrix[:, self._po_rows]


def _as_matrix(batch, n_pi: int) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        mat = np.atleast_2d(batch.astype(np.uint8, copy=False))
    else:
        mat = np.asarray([np.asarray(v, dtype=np.uint8) for v in batch], dtype=np.uint8)
        if mat.size == 0:
            mat = mat.reshape(0, n_pi)
    if mat.ndim != 2 or (mat.shape[0] and mat.shape[1] != n_pi):
        raise DataError(
            f"input width mismatch: netlist has {n_pi} PIs, got shape {mat.shape}"
        )
    return mat


_sim_cache: dict[int, Simulator] = {}
_SIM_CACHE_MAX = 64


def simulator_for(netlist: Netlist) -> Simulator:
    """Per-netlist compiled simulator, cached by object identity."""
    sim = _sim_cache.get(id(netlist))
    if sim is None or sim.netlist is not netlist:
        sim = Simulator(netlist)
        if len(_sim_cache) >= _SIM_CACHE_MAX:
            _sim_cache.pop(next(iter(_sim_cache)))
        _sim_cache[id(netlist)] = sim
    return sim


def simulate(netlist: Netlist, vector) -> DagState:
    """Evaluate one input vector; node values come back in flattened order."""
    sim = simulator_for(netlist)
    mat = _as_matrix([vector], sim.n_pi)
    node_matrix = sim.eval_bool(mat)
    return DagState(node_matrix[0], netlist)

def simulate_batch(netlist: Netlist, batch) -> list[DagState]:
    """Evaluate many vectors; element-wise identical to simulate."""
    sim = simulator_for(netlist)
    mat = _as_matrix(batch, sim.n_pi)
    if mat.shape[0] == 0:
        return []
    node_matrix = sim.eval_bool(mat)
    return [DagState(row, netlist) for row in node_matrix]


def primary_outputs_of(state: DagState, netlist: Netlist) -> np.ndarray:
    """PO bits of a DagState, in PO declaration order."""
    if len(state) != netlist.n_nodes:
        raise DataError("DagState does not belong to this netlist")
    return state.po_bits()
