"""Small numpy neural-network core: layers, losses, optimisers and the two models."""

from .checkpoint import load_checkpoint, save_checkpoint
from .losses import kld_closed_form, normalize_theta, reparameterize, vae_loss
from .vae import VAE, LearningCurve, TrainingDivergence, VaeTrainConfig, reconstruction_mse, train_vae
from .worknet import MinMaxScaler, WorkNet, WorkNetConfig, train_worknet

__all__ = [
    "VAE", "LearningCurve", "MinMaxScaler", "TrainingDivergence", "VaeTrainConfig", "WorkNet",
    "WorkNetConfig", "kld_closed_form", "load_checkpoint", "normalize_theta", "reconstruction_mse",
    "reparameterize", "save_checkpoint", "train_vae", "train_worknet", "vae_loss",
]
