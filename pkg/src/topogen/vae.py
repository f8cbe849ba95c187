"""Variational autoencoder over flattened persistence-image pairs.

The two images of a shape (one per homology degree) are correlated, so a
single model sees their concatenation as one vector. Encoder and decoder are
mirrored MLPs; the decoder ends in a softplus so reconstructions stay
nonnegative like the images themselves. At inference the decoder turns prior
draws into topology conditioning for the denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadInputError, ShapeError
from .rng import make_rng
from . import tensor as T
from .tensor import ParamStore, Tensor

LOGVAR_LO = -30.0
LOGVAR_HI = 20.0


@dataclass(frozen=True)
class VaeConfig:
    pi_n: int
    latent_dim: int = 32
    hidden: tuple = (256, 64)
    kl_weight: float = 1.0

    def __post_init__(self):
        if self.pi_n < 1:
            raise BadInputError(f"pi_n must be >= 1, got {self.pi_n}")
        if self.latent_dim < 1:
            raise BadInputError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
            raise BadInputError(f"hidden must be two positive widths, got {self.hidden}")
        if self.kl_weight < 0:
            raise BadInputError(f"kl_weight must be >= 0, got {self.kl_weight}")

    @property
    def in_dim(self) -> int:
        return 2 * self.pi_n ** 2


# bias inits: the posterior starts tight (std e^-2) so the decoder binds to
# the code before the KL pull can re-inflate it, and the output layer starts
# at softplus(-3) ~ 0.05, the scale of a typical image pixel, so the first
# steps do not slam the softplus into its dead zone.
LOGVAR_INIT_BIAS = -4.0
DECODER_INIT_BIAS = -3.0


def init_vae_params(config: VaeConfig, seed: int = 0) -> ParamStore:
    rng = make_rng(seed, "vae-init")
    store = ParamStore()
    h1, h2 = config.hidden

    def lin(name, n_in, n_out, b=0.0):
        std = np.sqrt(2.0 / (n_in + n_out))
        store.add(f"{name}.w", rng.normal(0.0, std, size=(n_in, n_out)))
        store.add(f"{name}.b", np.full(n_out, float(b)))

    lin("enc.fc1", config.in_dim, h1)
    lin("enc.fc2", h1, h2)
    lin("enc.mu", h2, config.latent_dim)
    lin("enc.logvar", h2, config.latent_dim, b=LOGVAR_INIT_BIAS)
    lin("dec.fc1", config.latent_dim, h2)
    lin("dec.fc2", h2, h1)
    lin("dec.out", h1, config.in_dim, b=DECODER_INIT_BIAS)
    return store


def _lin(params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return T.linear(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def _as_batch(x, width: int, what: str) -> tuple[Tensor, bool]:
    """Promote a vector to a one-row batch; reject wrong widths."""
    t = x if isinstance(x, Tensor) else T.constant(np.asarray(x, dtype=np.float64))
    if t.data.ndim == 1:
        if t.shape[0] != width:
            raise ShapeError(f"{what} must have {width} entries, got {t.shape[0]}")
        return T.reshape(t, (1, width)), True
    if t.data.ndim == 2:
        if t.shape[1] != width:
            raise ShapeError(f"{what} rows must have {width} entries, got {t.shape[1]}")
        return t, False
    raise ShapeError(f"{what} must be 1-D or 2-D, got shape {t.shape}")


def _restore(t: Tensor, was_vector: bool) -> Tensor:
    return T.reshape(t, (t.shape[1],)) if was_vector else t


def encode(params: ParamStore, config: VaeConfig, pi_pair) -> tuple[Tensor, Tensor]:
    x, squeeze = _as_batch(pi_pair, config.in_dim, "pi_pair")
    h = T.gelu(_lin(params, "enc.fc1", x))
    h = T.gelu(_lin(params, "enc.fc2", h))
    mu = _lin(params, "enc.mu", h)
    logvar = T.clip(_lin(params, "enc.logvar", h), LOGVAR_LO, LOGVAR_HI)
    return _restore(mu, squeeze), _restore(logvar, squeeze)


def reparameterize(mu: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    lv = T.clip(logvar, LOGVAR_LO, LOGVAR_HI)
    std = T.exp(T.scale(lv, 0.5))
    eta = T.constant(rng.standard_normal(mu.shape))
    return T.add(mu, T.mul(std, eta))


def decode(params: ParamStore, config: VaeConfig, z) -> Tensor:
    zt, squeeze = _as_batch(z, config.latent_dim, "z")
    h = T.gelu(_lin(params, "dec.fc1", zt))
    h = T.gelu(_lin(params, "dec.fc2", h))
    out = T.softplus(_lin(params, "dec.out", h))
    return _restore(out, squeeze)


def kl_term(mu: Tensor, logvar: Tensor) -> Tensor:
    """0.5 * sum(mu^2 + e^lv - 1 - lv) per sample, averaged over the batch."""
    n_rows = mu.shape[0] if mu.data.ndim == 2 else 1
    s = T.add(T.sum_all(T.mul(mu, mu)), T.sum_all(T.exp(logvar)))
    s = T.sub(s, T.sum_all(logvar))
    s = T.add(s, T.constant(-float(mu.data.size)))
    return T.scale(s, 0.5 / n_rows)


def vae_loss(params: ParamStore, config: VaeConfig, pi_pair,
             rng: np.random.Generator) -> Tensor:
    """Reconstruction MSE plus kl_weight times the prior KL, as one scalar."""
    x, _ = _as_batch(pi_pair, config.in_dim, "pi_pair")
    mu, logvar = encode(params, config, x)
    z = reparameterize(mu, logvar, rng)
    xhat = decode(params, config, z)
    diff = T.sub(xhat, T.constant(x.data))
    recon = T.mean_all(T.mul(diff, diff))
    return T.add(recon, T.scale(kl_term(mu, logvar), config.kl_weight))


def sample_prior(params: ParamStore, config: VaeConfig,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw z ~ N(0, I) and decode it into an (image, image) pair."""
    z = rng.standard_normal(config.latent_dim)
    flat = decode(params, config, z).data
    n = config.pi_n
    return flat[: n * n].reshape(n, n), flat[n * n:].reshape(n, n)


def pack_pair(pi1, pi2) -> np.ndarray:
    """Flatten two equal-size square images into one training vector."""
    a = np.asarray(getattr(pi1, "pixels", pi1), dtype=np.float64)
    b = np.asarray(getattr(pi2, "pixels", pi2), dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"image pair must be equal square grids, got {a.shape} and {b.shape}")
    return np.concatenate([a.ravel(), b.ravel()])


def train_vae(params: ParamStore, config: VaeConfig, images: np.ndarray,
              steps: int, lr: float, batch_size: int = 10,
              seed: int = 0) -> list[float]:
    """Adam loop over a (count, 2*n^2) image-pair matrix; returns the loss trace."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or images.shape[1] != config.in_dim:
        raise ShapeError(f"images must be (count, {config.in_dim}), got {images.shape}")
    if steps < 1 or batch_size < 1:
        raise BadInputError("steps and batch_size must be >= 1")
    rng = make_rng(seed, "train-vae")
    history = []
    for _ in range(steps):
        idx = rng.integers(0, len(images), size=min(batch_size, len(images)))
        params.zero_grad()
        loss = vae_loss(params, config, images[idx], rng)
        T.backward(loss)
        T.adam_step(params, lr)
        history.append(float(loss.data))
    return history
