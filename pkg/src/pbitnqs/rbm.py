"""Real-valued RBM wavefunction.

    log psi(v) = sum_i a_i v_i + sum_j log(2 cosh theta_j),
    theta_j    = b_j + sum_i v_i W_ij

Parameters flatten in the fixed order (a, b, W row-major).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SAMPLING_MODES = ("psi2-duplicate", "psi-reweight")
CHECKPOINT_MAGIC = b"RBM1"


@dataclass
class RbmParams:
    a: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.shape != (len(self.a), len(self.b)):
            raise ValueError(f"W has shape {self.W.shape}, expected ({len(self.a)}, {len(self.b)})")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.W))):
            raise ValueError("RBM parameters must be finite")

    @property
    def nv(self) -> int:
        return len(self.a)

    @property
    def nh(self) -> int:
        return len(self.b)

    @property
    def alpha(self) -> float:
        return self.nh / self.nv

    @property
    def n_params(self) -> int:
        return self.nv + self.nh + self.nv * self.nh

    @classmethod
    def zeros(cls, nv: int, nh: int) -> "RbmParams":
        return cls(np.zeros(nv), np.zeros(nh), np.zeros((nv, nh)))

    @classmethod
    def random(cls, nv: int, alpha: int = 4, std: float = 0.01, seed=None) -> "RbmParams":
        rng = np.random.default_rng(seed)
        nh = alpha * nv
        return cls(rng.normal(0, std, nv), rng.normal(0, std, nh), rng.normal(0, std, (nv, nh)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.W.reshape(-1)])

    @classmethod
    def from_flat(cls, x, nv: int, nh: int) -> "RbmParams":
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (nv + nh + nv * nh,):
            raise ValueError(f"flat vector has length {x.size}, expected {nv + nh + nv * nh}")
        return cls(x[:nv], x[nv:nv + nh], x[nv + nh:].reshape(nv, nh))

    def copy(self) -> "RbmParams":
        return RbmParams(self.a.copy(), self.b.copy(), self.W.copy())


def _check(v, p: RbmParams) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != p.nv:
        raise ValueError(f"configuration length {v.shape[-1]} != nv={p.nv}")
    return v


def theta(v, p: RbmParams) -> np.ndarray:
    return p.b + _check(v, p) @ p.W


def _log2cosh(x):
    return np.logaddexp(x, -x)


def log_psi(v, p: RbmParams):
    """Log amplitude; ``v`` may be a single configuration or a stack of rows."""
    v = _check(v, p)
    return v @ p.a + _log2cosh(p.b + v @ p.W).sum(axis=-1)


def psi_ratio_flip(v, i: int, p: RbmParams, theta_cache=None):
    """psi(v with spin i flipped) / psi(v) from the cached hidden inputs."""
    v = _check(v, p)
    if not 0 <= i < p.nv:
        raise IndexError(f"spin {i} out of range for nv={p.nv}")
    th = theta(v, p) if theta_cache is None else theta_cache
    vi = v[..., i]
    th_new = th - 2.0 * vi[..., None] * p.W[i]
    return np.exp(-2.0 * p.a[i] * vi + (_log2cosh(th_new) - _log2cosh(th)).sum(axis=-1))


def psi_ratios_all(v, p: RbmParams) -> np.ndarray:
    """Single-flip ratios for every spin: shape ``v.shape[:-1] + (nv,)``."""
    v = _check(v, p)
    th = theta(v, p)
    # th_new[..., i, j] = th[..., j] - 2 v_i W_ij
    th_new = th[..., None, :] - 2.0 * v[..., :, None] * p.W
    logr = -2.0 * p.a * v + (_log2cosh(th_new) - _log2cosh(th)[..., None, :]).sum(axis=-1)
    return np.exp(logr)


def log_derivatives(v, p: RbmParams) -> np.ndarray:
    """d log psi / d parameter in the (a, b, W row-major) order."""
    v = _check(v, p)
    t = np.tanh(theta(v, p))
    ow = v[..., :, None] * t[..., None, :]
    return np.concatenate([v, t, ow.reshape(ow.shape[:-2] + (-1,))], axis=-1)


@dataclass
class SamplerParams:
    """Parameters handed to the Boltzmann sampler.

    ``duplication`` is how many copies of the hidden layer the sampler holds.
    """

    a: np.ndarray
    b: np.ndarray
    W: np.ndarray
    duplication: int
    mode: str


def effective_sampler_params(p: RbmParams, mode: str = "psi2-duplicate") -> SamplerParams:
    """Sampler parameters whose visible marginal is psi**2 or psi.

    Summing out hidden units of ``exp(a.v + b.h + v W h)`` gives
    ``exp(a.v) prod 2cosh(theta)``, i.e. psi.  Doubling the visible bias and
    duplicating the hidden layer therefore gives psi**2 exactly.
    """
    if mode == "psi2-duplicate":
        return SamplerParams(2.0 * p.a, np.concatenate([p.b, p.b]),
                             np.concatenate([p.W, p.W], axis=1), 2, mode)
    if mode == "psi-reweight":
        return SamplerParams(p.a.copy(), p.b.copy(), p.W.copy(), 1, mode)
    raise ValueError(f"unknown sampling mode {mode!r}; expected one of {SAMPLING_MODES}")


def save_checkpoint(path, p: RbmParams) -> None:
    """Little-endian: b"RBM1", nv u32, nh u32, then a, b, W as f64."""
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(p))


def checkpoint_bytes(p: RbmParams) -> bytes:
    return CHECKPOINT_MAGIC + struct.pack("<II", p.nv, p.nh) + p.flat().astype("<f8").tobytes()


def load_checkpoint(path) -> RbmParams:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


def checkpoint_from_bytes(data: bytes) -> RbmParams:
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not an RBM checkpoint (bad magic)")
    nv, nh = struct.unpack_from("<II", data, 4)
    n = nv + nh + nv * nh
    body = data[12:]
    if len(body) != 8 * n:
        raise ValueError(f"checkpoint body has {len(body)} bytes, expected {8 * n}")
    return RbmParams.from_flat(np.frombuffer(body, dtype="<f8"), nv, nh)
