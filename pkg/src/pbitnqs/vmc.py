"""Hybrid variational Monte Carlo loop.

Each epoch the sampler receives the current (fixed-point) weights and returns
configurations; the trainer evaluates local energies and log-derivatives at
full precision and takes one SGD step on the energy.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import chimera
from .link import InProcessSession, SamplerSession, connect
from .pbit import make_rng
from .rbm import (SAMPLING_MODES, RbmParams, effective_sampler_params, log_derivatives,
                  log_psi, save_checkpoint)
from .tfim import TfimModel, local_energy, psi2_distribution, variational_energy_exact

log = logging.getLogger(__name__)

SAMPLERS = ("exact-enumeration", "inprocess-pbit", "remote")
CSV_COLUMNS = ("epoch", "energy_mean", "energy_stderr", "grad_norm", "broken_chain_rate",
               "ess", "sample_ms", "train_ms")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    n_spins: int = 12
    J: float = 1.0
    gamma: float = 1.0
    alpha: int = 4
    sampler: str = "exact-enumeration"
    mode: str = "psi2-duplicate"
    chimera: tuple | None = None
    chain_strength: float = 1.0
    samples_per_epoch: int = 2000
    sweeps_per_sample: int = 5
    burn_in: int = 200
    learning_rate: float = 0.02
    epochs: int = 500
    seed: int = 0
    window: int = 20
    tolerance: float = 1e-4
    init_std: float = 0.01
    readout: str = "majority"
    update: str = "sequential"
    activation: str = "tanh"
    endpoint: str | None = None

    def __post_init__(self):
        if self.chimera is not None:
            self.chimera = tuple(int(x) for x in self.chimera)
        for name in ("n_spins", "alpha", "samples_per_epoch", "sweeps_per_sample", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.burn_in < 0:
            raise ValueError("epochs and burn_in must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.mode not in SAMPLING_MODES:
            raise ValueError(f"mode must be one of {SAMPLING_MODES}")
        if self.sampler == "remote" and not self.endpoint:
            raise ValueError("remote sampler needs an endpoint")

    @property
    def model(self) -> TfimModel:
        return TfimModel.uniform(self.n_spins, self.J, self.gamma)

    @property
    def nh(self) -> int:
        return self.alpha * self.n_spins

    def chimera_dims(self) -> tuple:
        """Chimera used by p-bit samplers; defaults to the smallest that fits."""
        if self.chimera is not None:
            return self.chimera
        dup = 2 if self.mode == "psi2-duplicate" else 1
        t = chimera.chimera_for(self.n_spins, dup * self.nh, L=4)
        return (t.M, t.N, t.L)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    energy_mean: float
    energy_stderr: float
    energy_variance: float
    grad_norm: float
    broken_chain_rate: float
    ess: float
    sample_ms: float
    train_ms: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def energies(self) -> np.ndarray:
        return np.array([r.energy_mean for r in self.records])

    def windowed(self, window: int) -> np.ndarray:
        e = self.energies()
        if len(e) < window:
            return np.array([])
        return np.convolve(e, np.ones(window) / window, mode="valid")

    def write_csv(self, f, timing: bool = True) -> None:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, repr(r.energy_mean), repr(r.energy_stderr), repr(r.grad_norm),
                        repr(r.broken_chain_rate), repr(r.ess),
                        f"{r.sample_ms:.3f}" if timing else "0",
                        f"{r.train_ms:.3f}" if timing else "0"])

    def same_trajectory(self, other: "TrainHistory") -> bool:
        """Equality ignoring wall-clock columns."""
        strip = lambda r: dataclasses.replace(r, sample_ms=0.0, train_ms=0.0)
        return [strip(r) for r in self.records] == [strip(r) for r in other.records]


@dataclass
class EnergyEstimate:
    mean: float
    stderr: float
    variance: float
    ess: float
    weights: np.ndarray
    local_energies: np.ndarray


def _batch_weights(rows, p: RbmParams, mode: str, weights=None) -> np.ndarray:
    n = len(rows)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    if mode == "psi-reweight":
        lp = log_psi(rows, p)
        w = w * np.exp(lp - lp.max())
    elif mode != "psi2-duplicate":
        raise ValueError(f"unknown sampling mode {mode!r}")
    return w / w.sum()


def estimate_energy(rows, p: RbmParams, m: TfimModel, mode: str = "psi2-duplicate",
                    weights=None) -> EnergyEstimate:
    """Mean local energy over a batch of logical configurations.

    ``psi2-duplicate`` rows are taken as draws from psi**2; ``psi-reweight``
    rows as draws from psi, corrected with self-normalised weights psi(v).
    Optional ``weights`` multiply the per-row weights (e.g. exact
    probabilities when ``rows`` enumerates every configuration).
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[0] == 0:
        raise ValueError("empty batch")
    w = _batch_weights(rows, p, mode, weights)
    e = local_energy(rows, p, m)
    mean = float(w @ e)
    var = float(w @ (e - mean) ** 2)
    ess = float(1.0 / np.sum(w * w))
    return EnergyEstimate(mean, float(np.sqrt(var / ess)), var, ess, w, e)


def _covariance_gradient(rows, p, est: EnergyEstimate) -> np.ndarray:
    O = log_derivatives(rows, p)
    w = est.weights
    de = est.local_energies - est.mean
    return 2.0 * ((w * de) @ (O - w @ O))


def gradient(rows, p: RbmParams, m: TfimModel, mode: str = "psi2-duplicate",
             weights=None) -> np.ndarray:
    """Energy gradient 2(<E O> - <E><O>) in the (a, b, W) parameter order."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    est = estimate_energy(rows, p, m, mode, weights)
    return _covariance_gradient(rows, p, est)


def update_params(p: RbmParams, g, eta: float) -> RbmParams:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (p.n_params,):
        raise ValueError(f"gradient has shape {g.shape}, expected ({p.n_params},)")
    bad = ~np.isfinite(g)
    if bad.any():
        raise FloatingPointError(f"non-finite gradient in {int(bad.sum())} components "
                                 f"(first at index {int(np.argmax(bad))})")
    return RbmParams.from_flat(p.flat() - eta * g, p.nv, p.nh)


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1, np.uint64)[0])


class ExactSampler:
    """Draws i.i.d. configurations from |psi|**power by full enumeration."""

    def __init__(self, mode: str):
        self.power = 2.0 if mode == "psi2-duplicate" else 1.0

    def draw(self, p: RbmParams, n: int, seed: int) -> np.ndarray:
        states, probs = psi2_distribution(p, self.power)
        return states[make_rng(seed).choice(len(states), size=n, p=probs)]


@dataclass
class TrainResult:
    history: TrainHistory
    params: RbmParams
    initial_params: RbmParams
    converged: bool = False
    embedding: chimera.Embedding | None = None

    def variational_energy(self, cfg: TrainConfig) -> float:
        return variational_energy_exact(self.params, cfg.model)


def open_session(cfg: TrainConfig) -> SamplerSession:
    if cfg.sampler == "remote":
        return connect(cfg.endpoint, cfg.update, cfg.activation)
    return InProcessSession(cfg.update, cfg.activation)


def train(cfg: TrainConfig, session: SamplerSession | None = None, callback=None,
          checkpoint_path=None) -> TrainResult:
    """Run the sample / estimate / update loop described by ``cfg``.

    ``session`` overrides the sampler session for p-bit samplers; it is not
    closed here.  ``callback(record, params)`` runs after every epoch.
    """
    model = cfg.model
    nv, nh = cfg.n_spins, cfg.nh
    params = RbmParams.random(nv, cfg.alpha, cfg.init_std, seed=cfg.seed)
    result = TrainResult(TrainHistory(), params, params.copy())

    own_session = False
    emb = None
    exact = None
    if cfg.sampler == "exact-enumeration":
        exact = ExactSampler(cfg.mode)
    else:
        dims = cfg.chimera_dims()
        dup = 2 if cfg.mode == "psi2-duplicate" else 1
        emb = chimera.embed_bipartite(nv, dup * nh, chimera.ChimeraTopology(*dims))
        result.embedding = emb
        if session is None:
            session = open_session(cfg)
            own_session = True
        session.set_topology(dims)

    try:
        for epoch in range(cfg.epochs):
            seed = epoch_seed(cfg.seed, epoch)
            t0 = time.perf_counter()
            broken = 0.0
            try:
                if exact is not None:
                    rows = exact.draw(params, cfg.samples_per_epoch, seed)
                else:
                    sp = effective_sampler_params(params, cfg.mode)
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", chimera.PrecisionLossWarning)
                        net = chimera.map_weights(sp.a, sp.b, sp.W, emb, cfg.chain_strength)
                    session.set_weights(net)
                    batch = session.run(cfg.samples_per_epoch, cfg.sweeps_per_sample,
                                        cfg.burn_in, seed)
                    ro = chimera.readout(batch.rows, emb, cfg.readout)
                    rows = ro.logical[:, :nv]
                    broken = ro.broken_chain_rate
                    if len(rows) == 0:
                        raise TrainingError("every sample had a broken chain")
            except Exception as exc:
                raise TrainingError(f"epoch {epoch}: sampler failed: {exc}") from exc
            t1 = time.perf_counter()

            rows = rows.astype(np.float64)
            est = estimate_energy(rows, params, model, cfg.mode)
            if not np.isfinite(est.mean):
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, params)
                raise TrainingError(f"epoch {epoch}: non-finite energy estimate")
            g = _covariance_gradient(rows, params, est)
            params = update_params(params, g, cfg.learning_rate)
            t2 = time.perf_counter()

            rec = EpochRecord(epoch, est.mean, est.stderr, est.variance,
                              float(np.linalg.norm(g)), broken, est.ess,
                              1e3 * (t1 - t0), 1e3 * (t2 - t1))
            result.history.records.append(rec)
            result.params = params
            if callback is not None:
                callback(rec, params)
            if _converged(result.history, cfg):
                result.converged = True
                log.info("converged after %d epochs", epoch + 1)
                break
    finally:
        if own_session:
            session.close()
    return result


def _converged(history: TrainHistory, cfg: TrainConfig) -> bool:
    w = cfg.window
    e = history.energies()
    if len(e) < 2 * w:
        return False
    last, prev = e[-w:].mean(), e[-2 * w:-w].mean()
    return abs(last - prev) < cfg.tolerance * abs(prev)
