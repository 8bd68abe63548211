"""Denoising autoencoder and the optimal-reconstruction oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError, ShapeError
from .tensor_core import (
    AdamState,
    MlpParams,
    adam_step,
    backward,
    init_mlp,
    mlp_forward,
    output_grad_to_logits,
)


@dataclass
class DaeParams:
    encoder: MlpParams
    decoder: MlpParams

    def __post_init__(self):
        if self.encoder.output_dim != self.decoder.input_dim:
            raise ShapeError(
                f"encoder emits {self.encoder.output_dim} values but decoder reads {self.decoder.input_dim}"
            )
        if self.decoder.output_dim != self.encoder.input_dim:
            raise ShapeError("decoder must reconstruct the encoder's input width")

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_dim

    def arrays(self) -> list:
        return self.encoder.arrays() + self.decoder.arrays()

    def with_arrays(self, arrays) -> "DaeParams":
        split = len(self.encoder.arrays())
        return DaeParams(
            self.encoder.with_arrays(arrays[:split]), self.decoder.with_arrays(arrays[split:])
        )


def init_dae(input_dim, hidden=(160, 160), activation="elu", decoder_output="sigmoid", rng=None) -> DaeParams:
    """Encoder ``d -> hidden...`` and a mirrored decoder back to ``d``."""
    rng = np.random.default_rng(rng)
    hidden = list(hidden)
    encoder = init_mlp([input_dim] + hidden, activation, "hidden", rng)
    decoder = init_mlp(hidden[::-1] + [input_dim], activation, decoder_output, rng)
    return DaeParams(encoder, decoder)


def reconstruct(params: DaeParams, x):
    latent, _ = mlp_forward(params.encoder, x)
    return mlp_forward(params.decoder, latent)[0]


def encode(params: DaeParams, x):
    """Latent representation; a 1-D input gives a 1-D latent."""
    latent = mlp_forward(params.encoder, x)[0]
    return latent[0] if np.ndim(x) == 1 else latent


def _reconstruction_terms(params, clean, corrupted):
    """Sum over corrupted batches of the mean squared reconstruction error, with gradients."""
    clean = np.atleast_2d(np.asarray(clean, dtype=np.float64))
    n = clean.shape[0]
    total = 0.0
    grads = None
    for batch in corrupted:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if batch.shape != clean.shape:
            raise ContractError(f"corrupted batch {batch.shape} does not match clean {clean.shape}")
        latent, enc_cache = mlp_forward(params.encoder, batch)
        recon, dec_cache = mlp_forward(params.decoder, latent)
        residual = recon - clean
        total += float((residual**2).sum() / n)
        dec_grads = backward(
            params.decoder, dec_cache, output_grad_to_logits(params.decoder, dec_cache, 2.0 * residual / n)
        )
        enc_grads = backward(
            params.encoder,
            enc_cache,
            output_grad_to_logits(params.encoder, enc_cache, dec_grads.inputs),
        )
        step = enc_grads.arrays() + dec_grads.arrays()
        grads = step if grads is None else [a + b for a, b in zip(grads, step)]
    return total, grads


def dae_loss(params: DaeParams, clean_batch, noised_batch, adversarial_batch) -> float:
    """Mean over samples of ``|ae(M(x)) - x|^2 + |ae(x') - x|^2``, both against the clean x."""
    return _reconstruction_terms(params, clean_batch, [noised_batch, adversarial_batch])[0]


def dae_loss_and_grads(params: DaeParams, clean_batch, corrupted_batches):
    """Reconstruction loss and gradients in ``params.arrays()`` order."""
    return _reconstruction_terms(params, clean_batch, corrupted_batches)


def dae_update(params: DaeParams, state: AdamState, clean_batch, corrupted_batches):
    loss, grads = dae_loss_and_grads(params, clean_batch, corrupted_batches)
    arrays, state = adam_step(state, params.arrays(), grads)
    return params.with_arrays(arrays), state, loss


def train_gaussian_dae(params: DaeParams, data, sigma, epochs=200, batch_size=128, learning_rate=0.003, seed=None):
    """Fit ``params`` on the Gaussian-noise reconstruction loss.

    Used to check that a trained autoencoder approaches the optimal one;
    production training uses salt-and-pepper and adversarial corruption.
    """
    rng = np.random.default_rng(seed)
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 1:
        data = data.T
    state = AdamState.zeros_like(params.arrays(), learning_rate=learning_rate)
    for _ in range(epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            clean = data[order[start:start + batch_size]]
            noisy = clean + rng.normal(0.0, sigma, size=clean.shape)
            params, state, _ = dae_update(params, state, clean, [noisy])
    return params


def _kde_log_density(points, z, bandwidth):
    """Log of an isotropic Gaussian kernel density (up to a constant) at rows of ``z``."""
    out = np.empty(len(z))
    chunk = max(1, 2_000_000 // max(len(points), 1))
    for start in range(0, len(z), chunk):
        block = z[start:start + chunk]
        sq = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        out[start:start + chunk] = logsumexp(-0.5 * sq / bandwidth**2, axis=1)
    return out


def scott_bandwidth(points) -> float:
    n, d = points.shape
    return float(np.mean(points.std(axis=0, ddof=1)) * n ** (-1.0 / (d + 4))) if n > 1 else 0.0


def optimal_dae_oracle(training_points, sigma, x, draws=100_000, bandwidth=None, log_density=None, seed=None):
    """Monte-Carlo estimate of the optimal denoiser under Gaussian noise.

    Estimates ``E[p(x - e)(x - e)] / E[p(x - e)]`` with ``e ~ N(0, sigma^2)``
    using antithetic draws. ``p`` is ``log_density`` when given, otherwise a
    Gaussian kernel density of ``training_points`` (Scott bandwidth unless
    ``bandwidth`` is set). Identical training points form a point mass and
    the estimate is that point.
    """
    if not sigma > 0 or not np.isfinite(sigma):
        raise ContractError(f"noise scale must be positive, got {sigma}")
    query = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if log_density is None:
        points = np.asarray(training_points, dtype=np.float64)
        if points.size == 0:
            raise ContractError("need at least one training point")
        points = points.reshape(len(points), -1)
        if points.shape[1] != query.shape[0]:
            raise ShapeError(f"query has {query.shape[0]} dims, training points have {points.shape[1]}")
        if np.all(points == points[0]):
            return points[0].copy() if query.shape[0] > 1 else float(points[0, 0])
        h = scott_bandwidth(points) if bandwidth is None else float(bandwidth)
        if not h > 0:
            raise ContractError("kernel bandwidth must be positive")

        def log_density(z):
            return _kde_log_density(points, z, h)

    rng = np.random.default_rng(seed)
    half = rng.normal(0.0, sigma, size=((draws + 1) // 2, query.shape[0]))
    noise = np.concatenate([half, -half])
    z = query[None, :] - noise
    logw = np.asarray(log_density(z), dtype=np.float64)
    if not np.any(np.isfinite(logw)):
        raise ContractError("density vanishes around the query")
    w = np.exp(logw - logw[np.isfinite(logw)].max())
    estimate = (w[:, None] * z).sum(axis=0) / w.sum()
    return estimate if query.shape[0] > 1 else float(estimate[0])
