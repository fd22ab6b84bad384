"""Loss functions and their gradients."""

from __future__ import annotations

import numpy as np

LATENT_DIM = 24
IMAGE_SIZE = 256
BETA = 1000.0


def normalize_theta(theta) -> np.ndarray:
    """Map an activation field to [0, 1] with the strongest contraction at 1.

    ``x = 1 - (theta - min) / (max - min)``; a constant field maps to zeros.
    """
    theta = np.asarray(theta, dtype=float)
    lo, hi = float(np.min(theta)), float(np.max(theta))
    if hi - lo <= 0:
        return np.zeros_like(theta)
    return 1.0 - (theta - lo) / (hi - lo)


def kld_closed_form(mu, log_var) -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over dimensions."""
    mu = np.asarray(mu, dtype=float)
    log_var = np.asarray(log_var, dtype=float)
    return float(0.5 * np.sum(mu**2 + np.exp(log_var) - 1.0 - log_var))


def kld_monte_carlo(mu, sigma, n: int, rng) -> tuple:
    """Sample estimate of E_q[log q - log p] for one dimension.

    Returns ``(mean, standard error)``.
    """
    z = mu + sigma * rng.standard_normal(n)
    log_q = -0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma)
    log_p = -0.5 * z**2
    d = log_q - log_p
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(n))


def reparameterize(mu, log_var, eps):
    return mu + eps * np.exp(0.5 * log_var)


def vae_loss(x, x_hat, mu, log_var, beta: float = BETA):
    """Batch-mean of ``KLD / M + beta / N * sum (x - x_hat)^2``.

    Returns ``(loss, recon_term, kld_term, grads)`` where ``grads`` holds
    the derivatives with respect to ``x_hat``, ``mu`` and ``log_var``.
    """
    b = x.shape[0]
    n = int(np.prod(x.shape[1:]))
    m = mu.shape[1]
    diff = x_hat - x
    recon = beta / n * np.sum(diff**2) / b
    kld = -0.5 / m * np.sum(1.0 + log_var - np.exp(log_var) - mu**2) / b
    grads = {
        "x_hat": (2.0 * beta / (n * b)) * diff,
        "mu": mu / (m * b),
        "log_var": -0.5 / (m * b) * (1.0 - np.exp(log_var)),
    }
    return float(recon + kld), float(recon), float(kld), grads


def mse(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size
