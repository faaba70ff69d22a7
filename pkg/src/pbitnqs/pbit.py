"""Emulated p-bit network with fixed-point synapses and Gibbs sweeps.

Each p-bit holds a bipolar state ``m_i`` and is updated with

    I_i = sat(sum_j W_ij m_j + h_i)
    m_i = +1 if r < tanh(I_i) else -1,   r ~ U(-1, 1)

so ``P(m_i = +1) = (1 + tanh I_i) / 2`` and the stationary distribution is
``P(m) ~ exp(sum_{i<j} W_ij m_i m_j + sum_i h_i m_i)``.  Weights and biases
are s{6}{3} fixed-point numbers; the input sum is exact in raw units and
saturated to the same format before the activation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from numba import njit

from . import fixedpoint as fx

RNG_NAME = "pcg64"
UPDATE_MODES = ("sequential", "colored")
ACTIVATIONS = ("tanh", "lut")
LUT_FRAC_BITS = 8

# Upper bound on uniforms materialised at once.
_CHUNK_UNIFORMS = 1 << 22


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def uniforms(rng: np.random.Generator, size) -> np.ndarray:
    """Draw uniforms on (-1, 1) (the endpoint -1 has probability 2**-53)."""
    return 2.0 * rng.random(size) - 1.0


@dataclass
class PbitNetwork:
    """Sparse symmetric fixed-point network plus its bipolar state.

    ``edges`` holds each coupler once as ``(i, j)`` with ``i < j``, sorted,
    and ``weight_raw`` the matching raw s{6}{3} values.
    """

    n: int
    edges: np.ndarray
    weight_raw: np.ndarray
    bias_raw: np.ndarray
    state: np.ndarray = None
    rng: np.random.Generator = None
    _csr: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("network needs at least one p-bit")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        wraw = np.asarray(self.weight_raw, dtype=np.int16).reshape(-1)
        if len(edges) != len(wraw):
            raise ValueError("edges and weight_raw differ in length")
        if len(edges):
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("self-couplings are not allowed")
            lo = edges.min(axis=1)
            hi = edges.max(axis=1)
            edges = np.stack([lo, hi], axis=1)
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValueError("coupler index out of range")
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges, wraw = edges[order], wraw[order]
            if np.any(np.all(np.diff(edges, axis=0) == 0, axis=1)):
                raise ValueError("duplicate coupler")
        self.edges, self.weight_raw = edges, wraw
        self.bias_raw = np.asarray(self.bias_raw, dtype=np.int16).reshape(-1)
        if len(self.bias_raw) != self.n:
            raise ValueError(f"expected {self.n} biases, got {len(self.bias_raw)}")
        if np.any(self.bias_raw < fx.RAW_MIN) or np.any(self.bias_raw > fx.RAW_MAX):
            raise ValueError("bias outside s{6}{3} range")
        if np.any(self.weight_raw < fx.RAW_MIN) or np.any(self.weight_raw > fx.RAW_MAX):
            raise ValueError("weight outside s{6}{3} range")
        if self.rng is None:
            self.rng = make_rng(0)
        if self.state is None:
            self.state = np.ones(self.n, dtype=np.int8)
        else:
            self.state = np.asarray(self.state, dtype=np.int8).copy()
            if self.state.shape != (self.n,) or not np.all(np.abs(self.state) == 1):
                raise ValueError("state must be a length-n vector of +-1")

    @classmethod
    def from_dense(cls, weights, biases, **kwargs) -> "PbitNetwork":
        """Quantize a dense symmetric matrix (upper triangle is read)."""
        w = np.asarray(weights, dtype=np.float64)
        n = w.shape[0]
        iu, ju = np.triu_indices(n, k=1)
        raw = fx.quantize_raw(w[iu, ju])
        keep = raw != 0
        return cls(n, np.stack([iu[keep], ju[keep]], axis=1), raw[keep],
                   fx.quantize_raw(biases), **kwargs)

    @classmethod
    def from_couplers(cls, n, couplers: dict, biases, **kwargs) -> "PbitNetwork":
        """Build from ``{(i, j): value}``; values are quantized."""
        keys = list(couplers)
        edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
        raw = fx.quantize_raw([couplers[k] for k in keys])
        return cls(n, edges, raw, fx.quantize_raw(biases), **kwargs)

    @property
    def biases(self) -> np.ndarray:
        return self.bias_raw.astype(np.float64) * fx.LSB

    def weight(self, i: int, j: int) -> fx.FixedPoint:
        if i == j:
            return fx.FixedPoint(0)
        a, b = min(i, j), max(i, j)
        k = np.searchsorted(self.edges[:, 0], a, side="left")
        while k < len(self.edges) and self.edges[k, 0] == a:
            if self.edges[k, 1] == b:
                return fx.FixedPoint(int(self.weight_raw[k]))
            k += 1
        return fx.FixedPoint(0)

    def couplers(self) -> dict:
        return {(int(i), int(j)): int(r) * fx.LSB
                for (i, j), r in zip(self.edges, self.weight_raw)}

    def dense_weights(self) -> np.ndarray:
        w = np.zeros((self.n, self.n))
        vals = self.weight_raw.astype(np.float64) * fx.LSB
        w[self.edges[:, 0], self.edges[:, 1]] = vals
        w[self.edges[:, 1], self.edges[:, 0]] = vals
        return w

    def csr(self):
        """Return ``(indptr, indices, raw)`` adjacency arrays (both directions)."""
        if self._csr is None:
            i = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
            j = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
            r = np.concatenate([self.weight_raw, self.weight_raw]).astype(np.int32)
            order = np.lexsort((j, i))
            i, j, r = i[order], j[order], r[order]
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            np.add.at(indptr, i + 1, 1)
            self._csr = (np.cumsum(indptr), j.astype(np.int64), r)
        return self._csr

    def same_parameters(self, other: "PbitNetwork") -> bool:
        return (self.n == other.n
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.weight_raw, other.weight_raw)
                and np.array_equal(self.bias_raw, other.bias_raw))

    def max_degree(self) -> int:
        indptr = self.csr()[0]
        return int(np.max(np.diff(indptr))) if self.n else 0


@dataclass
class SampleBatch:
    n_bits: int
    rows: np.ndarray
    seed: int | None = None
    sweeps_per_sample: int = 1
    burn_in_sweeps: int = 0

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int8).reshape(-1, self.n_bits)

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        if not isinstance(other, SampleBatch):
            return NotImplemented
        return (self.n_bits == other.n_bits
                and self.seed == other.seed
                and self.sweeps_per_sample == other.sweeps_per_sample
                and self.burn_in_sweeps == other.burn_in_sweeps
                and np.array_equal(self.rows, other.rows))


def activation_table(activation: str = "tanh") -> np.ndarray:
    """tanh of every representable input, indexed by ``raw - RAW_MIN``.

    ``"lut"`` rounds the entries to ``LUT_FRAC_BITS`` fraction bits, as a
    1024-entry activation ROM would.
    """
    raws = np.arange(fx.RAW_MIN, fx.RAW_MAX + 1)
    t = np.tanh(raws * fx.LSB)
    if activation == "tanh":
        return t
    if activation == "lut":
        s = float(1 << LUT_FRAC_BITS)
        return np.rint(t * s) / s
    raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def update_order(net: PbitNetwork, update: str = "sequential") -> np.ndarray:
    """Index order of one sweep.

    ``colored`` visits one colour class at a time; no two neighbours share a
    class, so each class could be updated in parallel.
    """
    if update == "sequential":
        return np.arange(net.n, dtype=np.int64)
    if update == "colored":
        return np.concatenate(color_classes(net)).astype(np.int64)
    raise ValueError(f"unknown update mode {update!r}; expected one of {UPDATE_MODES}")


def color_classes(net: PbitNetwork) -> list[np.ndarray]:
    g = nx.Graph()
    g.add_nodes_from(range(net.n))
    g.add_edges_from(map(tuple, net.edges.tolist()))
    colors = nx.greedy_color(g, strategy="DSATUR")
    k = max(colors.values()) + 1
    return [np.array(sorted(i for i, c in colors.items() if c == col)) for col in range(k)]


@njit(cache=True)
def _run_sweeps(state, indptr, indices, wraw, braw, table, order, r, n_sweeps, every, out):
    n = order.shape[0]
    lo = -512
    hi = 511
    row = 0
    for s in range(n_sweeps):
        base = s * n
        for k in range(n):
            i = order[k]
            acc = np.int64(braw[i])
            for p in range(indptr[i], indptr[i + 1]):
                acc += wraw[p] * state[indices[p]]
            if acc > hi:
                acc = hi
            elif acc < lo:
                acc = lo
            if r[base + k] < table[acc - lo]:
                state[i] = 1
            else:
                state[i] = -1
        if every > 0 and (s + 1) % every == 0:
            for q in range(state.shape[0]):
                out[row, q] = state[q]
            row += 1


def _sweep_block(net, order, table, rng, n_sweeps, every=0, out=None):
    indptr, indices, wraw = net.csr()
    if out is None:
        out = np.empty((0, net.n), dtype=np.int8)
    r = uniforms(rng, n_sweeps * net.n)
    _run_sweeps(net.state, indptr, indices, wraw, net.bias_raw.astype(np.int32),
                table, order, r, n_sweeps, every, out)


def pbit_input(net: PbitNetwork, i: int) -> float:
    """Saturated synaptic input of p-bit ``i`` given the current state."""
    if not 0 <= i < net.n:
        raise IndexError(f"p-bit {i} out of range for n={net.n}")
    indptr, indices, wraw = net.csr()
    sl = slice(indptr[i], indptr[i + 1])
    acc = int(net.bias_raw[i]) + int(np.dot(wraw[sl].astype(np.int64), net.state[indices[sl]]))
    return int(fx.saturate_raw(acc)) * fx.LSB


def pbit_update(I: float, r: float) -> int:
    return 1 if r < math.tanh(I) else -1


def gibbs_sweep(net: PbitNetwork, update: str = "sequential",
                activation: str = "tanh") -> PbitNetwork:
    """One in-place sweep: every p-bit updated once, reading the latest states."""
    _sweep_block(net, update_order(net, update), activation_table(activation), net.rng, 1)
    return net


def sample(net: PbitNetwork, n_samples: int, sweeps_per_sample: int = 1,
           burn_in_sweeps: int = 0, seed: int = 0, update: str = "sequential",
           activation: str = "tanh") -> SampleBatch:
    """Draw ``n_samples`` states, one every ``sweeps_per_sample`` sweeps.

    The network's generator is reseeded and its state randomised from
    ``seed`` first, so the batch depends only on (network, seed, schedule).
    """
    if net.n < 1:
        raise ValueError("cannot sample a network with no p-bits")
    if n_samples < 1 or sweeps_per_sample < 1 or burn_in_sweeps < 0:
        raise ValueError("need n_samples >= 1, sweeps_per_sample >= 1, burn_in_sweeps >= 0")
    net.rng = make_rng(seed)
    net.state = (2 * net.rng.integers(0, 2, size=net.n) - 1).astype(np.int8)
    order = update_order(net, update)
    table = activation_table(activation)

    per_chunk = max(1, _CHUNK_UNIFORMS // net.n)
    left = burn_in_sweeps
    while left > 0:
        k = min(left, per_chunk)
        _sweep_block(net, order, table, net.rng, k)
        left -= k

    rows = np.empty((n_samples, net.n), dtype=np.int8)
    per_chunk_samples = max(1, per_chunk // sweeps_per_sample)
    done = 0
    while done < n_samples:
        k = min(n_samples - done, per_chunk_samples)
        _sweep_block(net, order, table, net.rng, k * sweeps_per_sample,
                     every=sweeps_per_sample, out=rows[done:done + k])
        done += k
    return SampleBatch(net.n, rows, seed, sweeps_per_sample, burn_in_sweeps)


def boltzmann_distribution(net: PbitNetwork) -> np.ndarray:
    """Exact P(m) over all 2**n states by enumeration (small n only).

    State index ``k`` has bit ``i`` set when ``m_i = +1``.
    """
    if net.n > 24:
        raise ValueError("enumeration limited to 24 p-bits")
    states = all_states(net.n)
    w = net.dense_weights()
    logp = 0.5 * np.einsum("ki,ij,kj->k", states, w, states) + states @ net.biases
    logp -= logp.max()
    p = np.exp(logp)
    return p / p.sum()


def all_states(n: int) -> np.ndarray:
    """All bipolar vectors of length n; row k has m_i = +1 iff bit i of k is set."""
    k = np.arange(1 << n)[:, None]
    return np.where((k >> np.arange(n)) & 1, 1.0, -1.0)


def state_index(rows) -> np.ndarray:
    rows = np.asarray(rows)
    return ((rows > 0).astype(np.int64) << np.arange(rows.shape[1])).sum(axis=1)


def network_to_text(net: PbitNetwork) -> str:
    """Plain-text network: ``n <count>``, ``bias <i> <value>``, ``coupler <i> <j> <value>``."""
    lines = [f"n {net.n}"]
    lines += [f"bias {i} {v:g}" for i, v in enumerate(net.biases) if v != 0]
    lines += [f"coupler {i} {j} {int(r) * fx.LSB:g}" for (i, j), r in zip(net.edges, net.weight_raw)]
    return "\n".join(lines) + "\n"


def network_from_text(text: str) -> PbitNetwork:
    n = None
    biases = {}
    couplers = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "n" and len(parts) == 2 and n is None:
                n = int(parts[1])
                if n < 1:
                    raise ValueError
            elif parts[0] == "bias" and len(parts) == 3 and n is not None:
                i = int(parts[1])
                if not 0 <= i < n:
                    raise ValueError
                biases[i] = float(parts[2])
            elif parts[0] == "coupler" and len(parts) == 4 and n is not None:
                i, j = int(parts[1]), int(parts[2])
                if not (0 <= i < n and 0 <= j < n) or i == j or (min(i, j), max(i, j)) in couplers:
                    raise ValueError
                couplers[(min(i, j), max(i, j))] = float(parts[3])
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"line {lineno}: malformed network entry {raw.strip()!r}") from None
    if n is None:
        raise ValueError("missing 'n <count>' line")
    h = np.zeros(n)
    for i, v in biases.items():
        h[i] = v
    return PbitNetwork.from_couplers(n, couplers, h)
