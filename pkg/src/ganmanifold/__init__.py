"""Manifold regularization with generative adversarial networks.

A GAN trained on (mostly unlabeled) data supplies directions along the data
manifold; classifiers are penalized for changing their output along them.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .datasets import LabeledSet, SplitSpec, split_semi_supervised, two_circles, two_moons
from .gan import ConsensusConfig, GanModel, train_gan
from .nn import Mlp, MlpParams, MlpSpec, make_rng
from .regularizers import RegularizerConfig, omega, omega_ambient, omega_manifold
from .ssl_gan import SslGanModel, SslLossWeights, ssl_train_step
from .trainer import DecoupledConfig, UnsupConfig, train_decoupled, train_unsupervised

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ConsensusConfig", "DecoupledConfig", "GanModel", "LabeledSet", "Mlp",
    "MlpParams", "MlpSpec", "RegularizerConfig", "SplitSpec", "SslGanModel", "SslLossWeights",
    "UnsupConfig", "load_checkpoint", "make_rng", "omega", "omega_ambient", "omega_manifold",
    "save_checkpoint", "split_semi_supervised", "ssl_train_step", "train_decoupled", "train_gan",
    "train_unsupervised", "two_circles", "two_moons",
]
