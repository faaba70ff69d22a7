"""Chimera hardware graphs and the canonical biclique minor embedding.

A p-bit is labelled ``(row, col, side, index)`` with ``side`` 0 for the
vertical half of a unit cell and 1 for the horizontal half.  The linear
index used by :class:`~pbitnqs.pbit.PbitNetwork` is
``((row * N + col) * 2 + side) * L + index``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import fixedpoint as fx
from .pbit import PbitNetwork

VERTICAL, HORIZONTAL = 0, 1
VISIBLE, HIDDEN = "visible", "hidden"
READOUT_POLICIES = ("majority", "discard")


class CapacityError(ValueError):
    pass


class PrecisionLossWarning(UserWarning):
    """A nonzero logical bias vanished after being split over a chain."""


@dataclass(frozen=True)
class ChimeraTopology:
    M: int
    N: int
    L: int

    def __post_init__(self):
        for name in ("M", "N", "L"):
            if getattr(self, name) < 1:
                raise ValueError(f"Chimera dimension {name} must be >= 1")

    @property
    def n_nodes(self) -> int:
        return 2 * self.M * self.N * self.L

    def linear(self, row, col, side, index) -> int:
        return ((row * self.N + col) * 2 + side) * self.L + index

    def label(self, q: int) -> tuple:
        q, index = divmod(q, self.L)
        q, side = divmod(q, 2)
        row, col = divmod(q, self.N)
        return (row, col, side, index)

    @cached_property
    def intra_couplers(self) -> list:
        M, N, L = self.M, self.N, self.L
        return [(self.linear(r, c, VERTICAL, i), self.linear(r, c, HORIZONTAL, j))
                for r in range(M) for c in range(N) for i in range(L) for j in range(L)]

    @cached_property
    def vertical_couplers(self) -> list:
        return [(self.linear(r, c, VERTICAL, k), self.linear(r + 1, c, VERTICAL, k))
                for r in range(self.M - 1) for c in range(self.N) for k in range(self.L)]

    @cached_property
    def horizontal_couplers(self) -> list:
        return [(self.linear(r, c, HORIZONTAL, k), self.linear(r, c + 1, HORIZONTAL, k))
                for r in range(self.M) for c in range(self.N - 1) for k in range(self.L)]

    @cached_property
    def couplers(self) -> list:
        return self.intra_couplers + self.vertical_couplers + self.horizontal_couplers

    @cached_property
    def coupler_set(self) -> frozenset:
        return frozenset(tuple(sorted(e)) for e in self.couplers)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=int)
        for i, j in self.couplers:
            deg[i] += 1
            deg[j] += 1
        return deg


def build_chimera(M: int, N: int, L: int) -> ChimeraTopology:
    return ChimeraTopology(M, N, L)


@dataclass(frozen=True)
class Embedding:
    """Logical RBM nodes mapped to chains of physical p-bits.

    ``chains[k]`` is the ordered chain (linear indices) of
    ``logical_nodes[k]``; visible nodes come first.
    """

    topology: ChimeraTopology
    nv: int
    nh: int
    chains: tuple

    @property
    def logical_nodes(self) -> list:
        return [(VISIBLE, v) for v in range(self.nv)] + [(HIDDEN, h) for h in range(self.nh)]

    def chain(self, kind: str, index: int) -> tuple:
        return self.chains[index if kind == VISIBLE else self.nv + index]

    @property
    def n_pbits(self) -> int:
        return sum(len(c) for c in self.chains)

    @cached_property
    def edge_map(self) -> dict:
        """Logical edge ``(v, h)`` -> physical coupler ``(i, j)``, i < j."""
        L = self.topology.L
        out = {}
        for v in range(self.nv):
            col, kv = divmod(v, L)
            for h in range(self.nh):
                row, kh = divmod(h, L)
                i = self.topology.linear(row, col, VERTICAL, kv)
                j = self.topology.linear(row, col, HORIZONTAL, kh)
                out[(v, h)] = (min(i, j), max(i, j))
        return out

    def chain_couplers(self) -> list:
        return [tuple(sorted((c[k], c[k + 1]))) for c in self.chains for k in range(len(c) - 1)]

    def to_text(self) -> str:
        topo = self.topology
        lines = [f"# chimera {topo.M},{topo.N},{topo.L}",
                 f"# nv {self.nv} nh {self.nh}",
                 "# kind index : row,col,side,index labels separated by ':'"]
        for (kind, idx), chain in zip(self.logical_nodes, self.chains):
            labels = ":".join(",".join(map(str, topo.label(q))) for q in chain)
            lines.append(f"{kind} {idx} {labels}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Embedding":
        dims = None
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            s = line.strip()
            if s.startswith("# chimera"):
                dims = tuple(int(x) for x in s.split()[2].split(","))
                continue
            if not s or s.startswith("#"):
                continue
            try:
                kind, idx, labels = s.split()
                chain = [tuple(int(x) for x in lab.split(",")) for lab in labels.split(":")]
                if kind not in (VISIBLE, HIDDEN) or any(len(lab) != 4 for lab in chain):
                    raise ValueError
                rows.append((kind, int(idx), chain))
            except ValueError:
                raise ValueError(f"line {lineno}: malformed embedding entry {s!r}") from None
        if dims is None:
            raise ValueError("missing '# chimera M,N,L' header")
        topo = ChimeraTopology(*dims)
        vis = sorted((i, c) for k, i, c in rows if k == VISIBLE)
        hid = sorted((i, c) for k, i, c in rows if k == HIDDEN)
        if [i for i, _ in vis] != list(range(len(vis))) or [i for i, _ in hid] != list(range(len(hid))):
            raise ValueError("logical indices must be contiguous from 0")
        chains = tuple(tuple(topo.linear(*lab) for lab in c) for _, c in vis + hid)
        return cls(topo, len(vis), len(hid), chains)


def embed_bipartite(nv: int, nh: int, topo: ChimeraTopology) -> Embedding:
    """Embed K_{nv,nh}: visible nodes on vertical column chains, hidden on row chains.

    Visible ``v`` occupies the index ``v % L`` vertical qubit of column
    ``v // L`` in every row; hidden ``h`` the index ``h % L`` horizontal qubit
    of row ``h // L`` in every column.  Each visible/hidden pair meets in
    exactly one unit cell.
    """
    if nv < 1 or nh < 1:
        raise ValueError("need at least one visible and one hidden node")
    if nv > topo.N * topo.L:
        raise CapacityError(f"nv={nv} exceeds N*L={topo.N * topo.L} (visible capacity)")
    if nh > topo.M * topo.L:
        raise CapacityError(f"nh={nh} exceeds M*L={topo.M * topo.L} (hidden capacity)")
    L = topo.L
    chains = []
    for v in range(nv):
        col, k = divmod(v, L)
        chains.append(tuple(topo.linear(r, col, VERTICAL, k) for r in range(topo.M)))
    for h in range(nh):
        row, k = divmod(h, L)
        chains.append(tuple(topo.linear(row, c, HORIZONTAL, k) for c in range(topo.N)))
    return Embedding(topo, nv, nh, tuple(chains))


def chimera_for(nv: int, nh: int, L: int = 4) -> ChimeraTopology:
    """Smallest Chimera that holds K_{nv,nh} under :func:`embed_bipartite`."""
    return ChimeraTopology(-(-nh // L), -(-nv // L), L)


def map_weights(a, b, W, emb: Embedding, chain_strength: float = 1.0) -> PbitNetwork:
    """Place logical RBM parameters on the embedded physical network.

    Each logical weight goes (quantized) on its unique coupler, every chain
    coupler carries ``quantize(chain_strength)``, and each logical bias is
    split evenly across its chain before quantization.  Emits
    :class:`PrecisionLossWarning` when a nonzero bias rounds away entirely.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if a.shape != (emb.nv,) or b.shape != (emb.nh,) or W.shape != (emb.nv, emb.nh):
        raise ValueError(f"parameter shapes {a.shape}, {b.shape}, {W.shape} do not match "
                         f"embedding ({emb.nv}, {emb.nh})")
    n = emb.topology.n_nodes
    bias = np.zeros(n)
    lost = 0
    for k, (chain, value) in enumerate(zip(emb.chains, np.concatenate([a, b]))):
        share = value / len(chain)
        bias[list(chain)] = share
        if value != 0 and fx.quantize_raw(share) == 0:
            lost += 1
    if lost:
        warnings.warn(f"{lost} nonzero logical biases quantized to zero after chain splitting",
                      PrecisionLossWarning, stacklevel=2)

    pairs = emb.edge_map
    logical_edges = np.array([pairs[(v, h)] for v in range(emb.nv) for h in range(emb.nh)],
                             dtype=np.int64).reshape(-1, 2)
    chain_edges = np.array(emb.chain_couplers(), dtype=np.int64).reshape(-1, 2)
    edges = np.concatenate([logical_edges, chain_edges])
    raw = np.concatenate([fx.quantize_raw(W.reshape(-1)),
                          np.full(len(chain_edges), fx.quantize_raw(chain_strength), dtype=np.int16)])
    return PbitNetwork(n, edges, raw, fx.quantize_raw(bias))


@dataclass
class Readout:
    logical: np.ndarray
    broken_chain_rate: float
    keep: np.ndarray


def readout(states, emb: Embedding, policy: str = "majority") -> Readout:
    """Decode physical states to logical spins, one row per sample.

    ``majority`` votes within each chain, breaking ties with the chain's
    lowest-labelled p-bit; ``discard`` drops every row with a broken chain.
    ``broken_chain_rate`` is the fraction of (row, chain) pairs that are not
    unanimous.
    """
    if policy not in READOUT_POLICIES:
        raise ValueError(f"unknown readout policy {policy!r}; expected one of {READOUT_POLICIES}")
    states = np.atleast_2d(np.asarray(states))
    if states.shape[1] != emb.topology.n_nodes:
        raise ValueError(f"state length {states.shape[1]} != {emb.topology.n_nodes} p-bits")
    n_rows = len(states)
    logical = np.empty((n_rows, len(emb.chains)), dtype=np.int8)
    broken = np.zeros((n_rows, len(emb.chains)), dtype=bool)
    for k, chain in enumerate(emb.chains):
        idx = np.asarray(chain)
        s = states[:, idx].astype(np.int64)
        total = s.sum(axis=1)
        tie = states[:, idx.min()]
        logical[:, k] = np.where(total > 0, 1, np.where(total < 0, -1, tie))
        broken[:, k] = np.abs(total) != len(chain)
    rate = float(broken.mean()) if broken.size else 0.0
    keep = ~broken.any(axis=1) if policy == "discard" else np.ones(n_rows, dtype=bool)
    return Readout(logical[keep], rate, keep)


def broadcast(logical, emb: Embedding) -> np.ndarray:
    """Copy logical spins onto every p-bit of their chains (unused p-bits = +1)."""
    logical = np.atleast_2d(np.asarray(logical))
    out = np.ones((len(logical), emb.topology.n_nodes), dtype=np.int8)
    for k, chain in enumerate(emb.chains):
        out[:, list(chain)] = logical[:, k:k + 1]
    return out
