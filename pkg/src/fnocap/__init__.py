"""Fourier neural operators with group-norm capacities and generalization bounds."""
from .activations import GELU, RELU, Activation
from .burgers import BurgersSpec, Dataset, GrfSpec, burgers_solve, grf_sample, make_dataset
from .model import FnoConfig, FnoModel, HypothesisClassSpec, forward, init_model, is_member
from .norms import GroupNormSpec, capacity, group_norm

__version__ = "0.1.0"
