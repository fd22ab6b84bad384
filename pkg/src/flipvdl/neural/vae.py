"""Convolutional variational autoencoder for 16 x 16 activation images."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Conv2d, Dense, ReLU, Reshape, Sequential, Sigmoid, Upsample, build_layer
from .losses import BETA, LATENT_DIM, reparameterize, vae_loss
from .optim import Adam, staged_rate


class TrainingDivergence(RuntimeError):
    pass


class VAE:
    """Encoder: two stride-2 convolutions (16 -> 8 -> 4) then dense mean and
    log-variance heads.  Decoder: dense, then upsample + convolution twice,
    with a sigmoid on the output."""

    def __init__(self, latent_dim: int = LATENT_DIM, channels=(8, 16), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        c1, c2 = channels
        self.latent_dim = latent_dim
        self.channels = tuple(channels)
        self.seed = seed
        flat = c2 * 4 * 4
        self.encoder = Sequential([
            Conv2d(1, c1, 3, 2, 1, rng=rng, dtype=dtype), ReLU(),
            Conv2d(c1, c2, 3, 2, 1, rng=rng, dtype=dtype), ReLU(),
            Reshape((-1,)),
        ])
        self.mu_head = Dense(flat, latent_dim, rng=rng, dtype=dtype)
        self.logvar_head = Dense(flat, latent_dim, rng=rng, dtype=dtype)
        # start the log-variance head near zero so early samples stay tame
        self.logvar_head.params["W"] *= 0.1
        self.decoder = Sequential([
            Dense(latent_dim, flat, rng=rng, dtype=dtype), ReLU(),
            Reshape((c2, 4, 4)),
            Upsample(2), Conv2d(c2, c1, 3, 1, 1, rng=rng, dtype=dtype), ReLU(),
            Upsample(2), Conv2d(c1, 1, 3, 1, 1, rng=rng, dtype=dtype), Sigmoid(),
        ])

    @property
    def dtype(self):
        return self.mu_head.params["W"].dtype

    def astype(self, dtype):
        for part in self._parts():
            part.astype(dtype)
        return self

    def _parts(self):
        return [self.encoder, Sequential([self.mu_head]), Sequential([self.logvar_head]), self.decoder]

    def parameters(self):
        for prefix, part in zip(("enc", "mu", "logvar", "dec"), self._parts()):
            for key, layer, name in part.parameters():
                yield f"{prefix}.{key}", layer, name

    def _prep(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.shape[-2:] != (16, 16):
            raise ValueError(f"expected 16x16 images, got shape {x.shape}")
        return x.reshape(x.shape[0], 1, 16, 16)

    def encode(self, x):
        h = self.encoder.forward(self._prep(x))
        return self.mu_head.forward(h), self.logvar_head.forward(h)

    def decode(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=self.dtype))
        return self.decoder.forward(z)[:, 0]

    def forward(self, x, eps):
        """Return ``(x_hat, mu, log_var, z)``; ``eps`` fixes the sample."""
        mu, log_var = self.encode(x)
        z = reparameterize(mu, log_var, np.asarray(eps, dtype=self.dtype).reshape(mu.shape))
        return self.decode(z), mu, log_var, z

    def loss_and_grads(self, x, eps, beta: float = BETA):
        """Forward + backward pass; gradients land in each layer's ``grads``."""
        x = self._prep(x)
        eps = np.asarray(eps, dtype=self.dtype).reshape(x.shape[0], self.latent_dim)
        h = self.encoder.forward(x)
        mu = self.mu_head.forward(h)
        log_var = self.logvar_head.forward(h)
        std = np.exp(0.5 * log_var)
        z = mu + eps * std
        x_hat = self.decoder.forward(z)
        loss, recon, kld, g = vae_loss(x, x_hat, mu, log_var, beta)
        dz = self.decoder.backward(g["x_hat"].astype(self.dtype))
        d_mu = g["mu"] + dz
        d_lv = g["log_var"] + dz * eps * 0.5 * std
        dh = self.mu_head.backward(d_mu.astype(self.dtype)) + self.logvar_head.backward(d_lv.astype(self.dtype))
        self.encoder.backward(dh)
        return loss, recon, kld

    def architecture(self) -> dict:
        return {
            "model": "vae",
            "latent_dim": self.latent_dim,
            "channels": list(self.channels),
            "encoder": self.encoder.describe(),
            "decoder": self.decoder.describe(),
        }

    def state_dict(self) -> dict:
        return {key: layer.params[name] for key, layer, name in self.parameters()}

    def load_state_dict(self, arrays: dict):
        for key, layer, name in self.parameters():
            if key not in arrays or arrays[key].shape != layer.params[name].shape:
                raise ValueError(f"checkpoint is missing or mis-shapes {key}")
            layer.params[name] = arrays[key].copy()

    def save(self, path, sidecar: dict | None = None):
        side = {"seed": self.seed}
        side.update(sidecar or {})
        save_checkpoint(path, self.architecture(), self.state_dict(), side)

    @classmethod
    def load(cls, path):
        arch, arrays, sidecar = load_checkpoint(path)
        if arch.get("model") != "vae":
            raise ValueError(f"{path} does not hold a VAE")
        dtype = next(iter(arrays.values())).dtype
        model = cls(arch["latent_dim"], tuple(arch["channels"]), seed=(sidecar or {}).get("seed", 0), dtype=dtype)
        # architecture must rebuild identically from the descriptor
        if [build_layer(d).describe() for d in arch["encoder"]] != model.encoder.describe():
            raise ValueError("encoder descriptor mismatch")
        model.load_state_dict(arrays)
        return model, sidecar


@dataclass
class VaeTrainConfig:
    beta: float = BETA
    schedule: list = field(default_factory=lambda: [(100, 1e-4), (100, 3.3e-5), (50, 5e-6)])
    batch_size: int = 32
    seed: int = 0
    latent_dim: int = LATENT_DIM
    dtype: str = "float32"

    def __post_init__(self):
        self.schedule = [(int(n), float(lr)) for n, lr in self.schedule]
        if any(n <= 0 or lr <= 0 for n, lr in self.schedule):
            raise ValueError("schedule stages need positive epochs and rates")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    @property
    def epochs(self) -> int:
        return sum(n for n, _ in self.schedule)


@dataclass
class LearningCurve:
    columns: tuple
    rows: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def reconstruction_mse(model: VAE, images) -> float:
    """Pixel MSE of decoding the encoder mean."""
    images = np.asarray(images)
    mu, _ = model.encode(images)
    return float(np.mean((model.decode(mu) - images.astype(model.dtype)) ** 2))


def evaluate_loss(model: VAE, images, eps, beta: float = BETA, batch: int = 512) -> tuple:
    """Full-dataset ``(loss, recon, kld)`` for a fixed noise draw, no gradients."""
    totals = np.zeros(3)
    n = images.shape[0]
    for start in range(0, n, batch):
        xb = model._prep(images[start : start + batch])
        x_hat, mu, log_var, _ = model.forward(xb, eps[start : start + batch])
        loss, recon, kld, _ = vae_loss(xb, x_hat[:, None], mu, log_var, beta)
        totals += np.array([loss, recon, kld]) * xb.shape[0]
    return tuple(totals / n)


def train_vae(images, config: VaeTrainConfig = VaeTrainConfig(), model: VAE | None = None):
    """Mini-batch Adam on the VAE objective with a staged learning rate.

    Returns ``(model, curve)``; the curve has the per-epoch mean training
    loss, its reconstruction MSE and KLD parts, and ``eval_loss``, the
    end-of-epoch loss over all images with one fixed noise draw.
    """
    images = np.asarray(images, dtype=config.dtype)
    if images.ndim != 3 or images.shape[1:] != (16, 16):
        raise ValueError("expected an array of 16x16 images")
    rng = np.random.default_rng(config.seed)
    model = model or VAE(config.latent_dim, seed=config.seed, dtype=np.dtype(config.dtype))
    opt = Adam(lr=config.schedule[0][1])
    curve = LearningCurve(("epoch", "loss", "recon_mse", "kld", "eval_loss", "lr"))
    n = images.shape[0]
    # one fixed draw so epoch-to-epoch changes in eval_loss come from the weights only
    eval_eps = np.random.default_rng([config.seed, 1]).standard_normal((n, model.latent_dim)).astype(model.dtype)
    for epoch in range(config.epochs):
        opt.lr = staged_rate(config.schedule, epoch)
        order = rng.permutation(n)
        tot = rec = kl = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            eps = rng.standard_normal((idx.size, model.latent_dim)).astype(model.dtype)
            loss, recon, kld = model.loss_and_grads(images[idx], eps, config.beta)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"VAE loss became non-finite at epoch {epoch}")
            opt.step(model.parameters())
            tot += loss * idx.size
            rec += recon * idx.size
            kl += kld * idx.size
        # reconstruction term back to a per-pixel MSE
        ev = evaluate_loss(model, images, eval_eps, config.beta)[0]
        curve.rows.append((epoch, tot / n, rec / n / config.beta, kl / n, ev, opt.lr))
    return model, curve


def config_dict(config) -> dict:
    d = asdict(config)
    d["schedule"] = [list(s) for s in config.schedule]
    return d
