"""Software p-bit computer and hybrid RBM training for the 1D transverse-field Ising chain."""
from .chimera import (ChimeraTopology, Embedding, build_chimera, embed_bipartite, map_weights,
                      readout)
from .fixedpoint import FixedPoint, quantize
from .link import InProcessSession, SamplerSession, connect, serve
from .pbit import PbitNetwork, SampleBatch, gibbs_sweep, pbit_input, pbit_update, sample
from .rbm import RbmParams, effective_sampler_params, log_derivatives, log_psi, psi_ratio_flip
from .tfim import (TfimModel, classical_energy, exact_ground_energy, local_energy,
                   variational_energy_exact)
from .vmc import TrainConfig, TrainHistory, estimate_energy, gradient, train, update_params

__all__ = [
    "ChimeraTopology", "Embedding", "build_chimera", "embed_bipartite", "map_weights", "readout",
    "FixedPoint", "quantize",
    "InProcessSession", "SamplerSession", "connect", "serve",
    "PbitNetwork", "SampleBatch", "gibbs_sweep", "pbit_input", "pbit_update", "sample",
    "RbmParams", "effective_sampler_params", "log_derivatives", "log_psi", "psi_ratio_flip",
    "TfimModel", "classical_energy", "exact_ground_energy", "local_energy",
    "variational_energy_exact",
    "TrainConfig", "TrainHistory", "estimate_energy", "gradient", "train", "update_params",
]
