"""1D transverse-field Ising chain with periodic boundary.

    H = -( sum_i J_i s^z_i s^z_{i+1} + Gamma sum_i s^x_i ),   s_{N+1} = s_1

Configurations are sigma^z eigenvalues in {-1, +1}.  Basis state ``k`` has
spin ``i`` up iff bit ``i`` of ``k`` is set.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .pbit import all_states, state_index
from .rbm import RbmParams, log_psi, psi_ratios_all

MAX_SPINS = 20


@dataclass(frozen=True)
class TfimModel:
    n_spins: int
    J: tuple
    gamma: float

    def __post_init__(self):
        if self.n_spins < 2:
            raise ValueError("need at least 2 spins")
        J = np.broadcast_to(np.asarray(self.J, dtype=np.float64), (self.n_spins,))
        object.__setattr__(self, "J", tuple(float(x) for x in J))

    @classmethod
    def uniform(cls, n_spins: int, J: float = 1.0, gamma: float = 1.0) -> "TfimModel":
        return cls(n_spins, (J,) * n_spins, gamma)

    @property
    def bonds(self) -> np.ndarray:
        return np.asarray(self.J)


@dataclass
class SpectrumResult:
    ground_energy: float
    ground_vector: np.ndarray | None
    method: str
    residual: float = float("nan")
    wall_time: float = 0.0
    model: TfimModel | None = field(default=None, repr=False)

    def report(self) -> str:
        m = self.model
        lines = []
        if m is not None:
            J = m.bonds
            lines += [f"N: {m.n_spins}",
                      f"J: {J[0]:g}" if np.all(J == J[0]) else f"J: {','.join(f'{x:g}' for x in J)}",
                      f"gamma: {m.gamma:g}",
                      "boundary: periodic"]
        lines += [f"method: {self.method}",
                  f"E0: {self.ground_energy:.10f}",
                  f"residual: {self.residual:.3e}",
                  f"wall_time_s: {self.wall_time:.3f}"]
        return "\n".join(lines) + "\n"


def _check_len(v, m: TfimModel) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != m.n_spins:
        raise ValueError(f"configuration length {v.shape[-1]} != N={m.n_spins}")
    return v


def classical_energy(v, m: TfimModel):
    v = _check_len(v, m)
    return -(v * np.roll(v, -1, axis=-1)) @ m.bonds


class TabulatedWavefunction:
    """Arbitrary amplitudes given as a length-2**N vector (test helper)."""

    def __init__(self, amplitudes):
        self.amplitudes = np.asarray(amplitudes, dtype=np.float64)
        self.n_spins = int(np.log2(len(self.amplitudes)))

    def flip_ratios(self, v) -> np.ndarray:
        v = np.atleast_2d(v)
        k = state_index(v)
        flipped = k[:, None] ^ (1 << np.arange(v.shape[1]))
        return self.amplitudes[flipped] / self.amplitudes[k][:, None]


def local_energy(v, p, m: TfimModel):
    """E_loc(v) = <v|H|psi> / <v|psi>; accepts one row or a stack of rows."""
    v = _check_len(v, m)
    if isinstance(p, RbmParams):
        if p.nv != m.n_spins:
            raise ValueError(f"RBM has nv={p.nv} but model has N={m.n_spins}")
        ratios = psi_ratios_all(v, p)
    else:
        ratios = p.flip_ratios(v).reshape(v.shape)
    return classical_energy(v, m) - m.gamma * ratios.sum(axis=-1)


def _check_size(m: TfimModel):
    if m.n_spins > MAX_SPINS:
        raise ValueError(f"N={m.n_spins} exceeds the enumeration limit of {MAX_SPINS} spins")


def psi2_distribution(p: RbmParams, power: float = 2.0):
    """All configurations with normalised |psi|**power weights."""
    states = all_states(p.nv)
    lp = power * log_psi(states, p)
    w = np.exp(lp - lp.max())
    return states, w / w.sum()


def variational_energy_exact(p: RbmParams, m: TfimModel) -> float:
    _check_size(m)
    states, w = psi2_distribution(p)
    return float(w @ local_energy(states, p, m))


def hamiltonian(m: TfimModel) -> sp.csr_matrix:
    """Sparse H in the sigma^z product basis."""
    _check_size(m)
    n = m.n_spins
    dim = 1 << n
    diag = classical_energy(all_states(n), m)
    k = np.arange(dim)
    rows = [k]
    cols = [k]
    vals = [diag]
    for i in range(n):
        rows.append(k)
        cols.append(k ^ (1 << i))
        vals.append(np.full(dim, -m.gamma))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(dim, dim))


def rayleigh_quotient(psi, m: TfimModel) -> float:
    psi = np.asarray(psi, dtype=np.float64)
    return float(psi @ (hamiltonian(m) @ psi) / (psi @ psi))


def exact_ground_energy(m: TfimModel, keep_vector: bool = True, tol: float = 1e-12) -> SpectrumResult:
    """Lowest eigenvalue of H by Lanczos (``eigsh``), with its residual."""
    t0 = time.perf_counter()
    H = hamiltonian(m)
    v0 = np.ones(H.shape[0])
    vals, vecs = eigsh(H, k=1, which="SA", v0=v0, tol=tol)
    e0 = float(vals[0])
    x = vecs[:, 0]
    x = x * np.sign(x.sum() or 1.0)
    residual = float(np.linalg.norm(H @ x - e0 * x))
    if residual > 1e-8:
        raise RuntimeError(f"eigensolver did not converge: residual {residual:.3e}")
    return SpectrumResult(e0, x if keep_vector else None, "lanczos", residual,
                          time.perf_counter() - t0, m)


def free_fermion_ground_energy(n_spins: int, J: float = 1.0, gamma: float = 1.0) -> float:
    """Closed form for uniform ferromagnetic J >= 0 via the Jordan-Wigner mapping.

    The ground state lies in the even-parity sector, whose fermion momenta are
    antiperiodic: ``k = (2m + 1) pi / N``.
    """
    k = (2 * np.arange(n_spins) + 1) * np.pi / n_spins
    return float(-np.sum(np.sqrt(J * J + gamma * gamma - 2 * J * gamma * np.cos(k))))
