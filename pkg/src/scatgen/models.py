"""The three trainable models.

Decoder: whitened coefficient vector to image, through a fully
connected layer and a stack of upsample + conv + batch-norm + ReLU
blocks whose widths halve down to 32, ending in a sigmoid.

VAE: fully connected encoder producing a mean and log-variance over an
H-dimensional latent, reparameterized sample, fully connected decoder
back to coefficient space, trained with MSE plus a beta-weighted KL.

GAN: fully connected generator from H-dimensional noise and a
fully connected discriminator with a sigmoid head, trained with the
non-saturating logistic losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .optim import Adam
from . import tensor as T
from .tensor import Tensor
from .pca import WhitenedCoeffs


def _init_uniform(rng: np.random.Generator, shape, fan_in: int,
                  gain: float = 1.0) -> np.ndarray:
    # weight std = gain / sqrt(fan_in); gain sqrt(2) (He) keeps activation
    # variance roughly constant through ReLU stacks, gain 1 suits linear heads
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


_RELU_GAIN = float(np.sqrt(2.0))


class Linear:
    """Affine layer y = x W + b with W (n_in, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 gain: float = 1.0):
        self.weight = Tensor(_init_uniform(rng, (n_in, n_out), n_in, gain),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class BatchNorm1d:
    """Feature batch normalization with learned scale and shift."""

    def __init__(self, features: int):
        self.gamma = Tensor(np.ones(features), requires_grad=True)
        self.beta = Tensor(np.zeros(features), requires_grad=True)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta,
                            self.running_mean, self.running_var, training)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class BatchNorm2d(BatchNorm1d):
    """Per-channel normalization of (B, C, H, W) maps over batch and space."""

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        b, c, h, w = x.shape
        cols = T.reshape(T.transpose(x, (0, 2, 3, 1)), (b * h * w, c))
        normed = T.batch_norm(cols, self.gamma, self.beta,
                              self.running_mean, self.running_var, training)
        return T.transpose(T.reshape(normed, (b, h, w, c)), (0, 3, 1, 2))


class Conv3x3:
    """3x3 convolution, stride 1, padding 1, with a per-channel bias."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 gain: float = 1.0):
        self.kernel = Tensor(_init_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, gain),
                             requires_grad=True)
        self.bias = Tensor(np.zeros((1, c_out, 1, 1)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.conv2d(x, self.kernel, stride=1, padding=1), self.bias)

    def parameters(self):
        return [self.kernel, self.bias]


@dataclass(frozen=True)
class DecoderConfig:
    """Shape of the coefficient-to-image decoder."""

    n_components: int = 512
    base_spatial: int = 7
    channel_schedule: tuple = (128, 64, 32)
    kernel_size: int = 3
    out_channels: int = 1

    def __post_init__(self):
        if self.kernel_size != 3:
            raise ParameterError(f"kernel_size must be 3, got {self.kernel_size}")
        if self.n_components < 1 or self.base_spatial < 1:
            raise ParameterError("n_components and base_spatial must be >= 1")
        if self.out_channels not in (1, 3):
            raise ParameterError(f"out_channels must be 1 or 3, got {self.out_channels}")
        sched = tuple(self.channel_schedule)
        if not sched or sched[-1] != 32:
            raise ParameterError(f"channel_schedule must end at 32, got {sched}")
        for wide, narrow in zip(sched, sched[1:]):
            if wide != 2 * narrow:
                raise ParameterError(
                    f"channel_schedule must halve at each step, got {sched}"
                )
        object.__setattr__(self, "channel_schedule", sched)

    @property
    def output_side(self) -> int:
        return self.base_spatial * 2 ** (len(self.channel_schedule) - 1)


class Decoder:
    """Maps whitened coefficient vectors to images in (0, 1)."""

    kind = "decoder"

    def __init__(self, config: DecoderConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        sched = config.channel_schedule
        self.fc = Linear(config.n_components, sched[0] * config.base_spatial ** 2,
                         rng, _RELU_GAIN)
        self.blocks = []
        for c_in, c_out in zip(sched, sched[1:]):
            self.blocks.append((Conv3x3(c_in, c_out, rng, _RELU_GAIN), BatchNorm2d(c_out)))
        self.head = Conv3x3(sched[-1], config.out_channels, rng)

    def __call__(self, w, training: bool = False) -> Tensor:
        values = w.values if isinstance(w, WhitenedCoeffs) else w
        x = values if isinstance(values, Tensor) else Tensor(values)
        if x.ndim != 2 or x.shape[1] != self.config.n_components:
            raise DimensionError(
                f"decoder expects (B, {self.config.n_components}) input, got {x.shape}"
            )
        side = self.config.base_spatial
        h = T.relu(self.fc(x))
        h = T.reshape(h, (x.shape[0], self.config.channel_schedule[0], side, side))
        for conv, bn in self.blocks:
            h = T.relu(bn(conv(T.upsample_nearest(h, 2)), training))
        return T.sigmoid(self.head(h))

    def parameters(self):
        params = self.fc.parameters()
        for conv, bn in self.blocks:
            params += conv.parameters() + bn.parameters()
        return params + self.head.parameters()

    def named_parameters(self):
        named = {"fc.weight": self.fc.weight, "fc.bias": self.fc.bias}
        for i, (conv, bn) in enumerate(self.blocks):
            named[f"block{i}.kernel"] = conv.kernel
            named[f"block{i}.bias"] = conv.bias
            named[f"block{i}.gamma"] = bn.gamma
            named[f"block{i}.beta"] = bn.beta
        named["head.kernel"] = self.head.kernel
        named["head.bias"] = self.head.bias
        return named

    def named_buffers(self):
        named = {}
        for i, (_, bn) in enumerate(self.blocks):
            named[f"block{i}.running_mean"] = bn.running_mean
            named[f"block{i}.running_var"] = bn.running_var
        return named


def decoder_loss(predicted: Tensor, target) -> Tensor:
    """Mean absolute error over all pixels."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if predicted.shape != target.shape:
        raise DimensionError(
            f"decoder_loss shapes differ: {predicted.shape} vs {target.shape}"
        )
    return T.reduce_mean(T.absolute(T.sub(predicted, target)))


class Vae:
    """Fully connected variational autoencoder over coefficient vectors."""

    kind = "vae"

    def __init__(self, n_features: int, latent_width: int = 64,
                 beta: float = 0.001, seed: int = 0):
        if n_features < 1 or latent_width < 1:
            raise ParameterError("n_features and latent_width must be >= 1")
        rng = np.random.default_rng(seed)
        n, h = n_features, latent_width
        self.n_features = n
        self.latent_width = h
        self.beta = float(beta)
        self.enc1 = Linear(n, 4 * h, rng, _RELU_GAIN)
        self.enc2 = Linear(4 * h, 4 * h, rng, _RELU_GAIN)
        self.enc3 = Linear(4 * h, 2 * h, rng, _RELU_GAIN)
        self.head_mu = Linear(2 * h, h, rng)
        self.head_logvar = Linear(2 * h, h, rng)
        # start sigma near exp(-1.5) ~ 0.22: a nearly deterministic code lets
        # reconstruction couple to the latent before the KL term acts on it
        self.head_logvar.bias.data[:] = -3.0
        self.dec1 = Linear(h, 4 * h, rng, _RELU_GAIN)
        self.dec2 = Linear(4 * h, 4 * h, rng, _RELU_GAIN)
        self.dec3 = Linear(4 * h, n, rng)

    def encode(self, x: Tensor):
        h = T.relu(self.enc1(x))
        h = T.relu(self.enc2(h))
        h = T.relu(self.enc3(h))
        return self.head_mu(h), self.head_logvar(h)

    def decode(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.ndim != 2 or z.shape[1] != self.latent_width:
            raise DimensionError(
                f"vae decode expects (B, {self.latent_width}) input, got {z.shape}"
            )
        h = T.relu(self.dec1(z))
        h = T.relu(self.dec2(h))
        return self.dec3(h)  # linear output

    def parameters(self):
        layers = [self.enc1, self.enc2, self.enc3, self.head_mu, self.head_logvar,
                  self.dec1, self.dec2, self.dec3]
        return [p for layer in layers for p in layer.parameters()]

    def named_parameters(self):
        names = ["enc1", "enc2", "enc3", "head_mu", "head_logvar",
                 "dec1", "dec2", "dec3"]
        layers = [self.enc1, self.enc2, self.enc3, self.head_mu, self.head_logvar,
                  self.dec1, self.dec2, self.dec3]
        named = {}
        for name, layer in zip(names, layers):
            named[f"{name}.weight"] = layer.weight
            named[f"{name}.bias"] = layer.bias
        return named

    def named_buffers(self):
        return {}


def vae_forward(x, model: Vae, noise):
    """Encode, reparameterize with injected noise, decode.

    Returns (reconstruction, mu, logvar).  ``noise`` must be (B, H);
    drawing it outside keeps the forward pass deterministic.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    noise = noise if isinstance(noise, Tensor) else Tensor(noise)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise DimensionError(f"vae expects (B, {model.n_features}) input, got {x.shape}")
    if noise.shape != (x.shape[0], model.latent_width):
        raise DimensionError(
            f"noise must be ({x.shape[0]}, {model.latent_width}), got {noise.shape}"
        )
    mu, logvar = model.encode(x)
    z = T.add(mu, T.mul(T.exp(T.mul(logvar, 0.5)), noise))
    return model.decode(z), mu, logvar


def vae_loss(x, x_hat: Tensor, mu: Tensor, logvar: Tensor, beta: float) -> Tensor:
    """MSE plus beta times the batch-mean KL to a standard normal."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape != x_hat.shape:
        raise DimensionError(f"vae_loss shapes differ: {x.shape} vs {x_hat.shape}")
    recon = T.reduce_mean(T.square(T.sub(x_hat, x)))
    inner = T.sub(T.sub(T.add(1.0, logvar), T.square(mu)), T.exp(logvar))
    kl = T.reduce_mean(T.mul(T.reduce_sum(inner, axis=1), -0.5))
    return T.add(recon, T.mul(kl, beta))


class Gan:
    """Fully connected generator and discriminator over coefficient vectors."""

    kind = "gan"

    def __init__(self, n_features: int, noise_width: int = 64,
                 final_activation: str = "linear", seed: int = 0):
        if n_features < 4:
            raise ParameterError(f"n_features must be >= 4, got {n_features}")
        if noise_width < 1:
            raise ParameterError(f"noise_width must be >= 1, got {noise_width}")
        if final_activation not in ("linear", "relu"):
            raise ParameterError(
                f"final_activation must be 'linear' or 'relu', got {final_activation!r}"
            )
        rng = np.random.default_rng(seed)
        n, h = n_features, noise_width
        self.n_features = n
        self.noise_width = h
        self.final_activation = final_activation
        self.gen1 = Linear(h, 2 * h, rng, _RELU_GAIN)
        self.gen_bn1 = BatchNorm1d(2 * h)
        self.gen2 = Linear(2 * h, 4 * h, rng, _RELU_GAIN)
        self.gen_bn2 = BatchNorm1d(4 * h)
        self.gen3 = Linear(4 * h, n, rng)
        self.disc1 = Linear(n, n // 2, rng, _RELU_GAIN)
        self.disc2 = Linear(n // 2, n // 4, rng, _RELU_GAIN)
        self.disc_bn = BatchNorm1d(n // 4)
        self.disc3 = Linear(n // 4, 1, rng)

    def generate(self, z, training: bool = False) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.ndim != 2 or z.shape[1] != self.noise_width:
            raise DimensionError(
                f"generator expects (B, {self.noise_width}) input, got {z.shape}"
            )
        h = T.relu(self.gen_bn1(self.gen1(z), training))
        h = T.relu(self.gen_bn2(self.gen2(h), training))
        out = self.gen3(h)
        return T.relu(out) if self.final_activation == "relu" else out

    def discriminate(self, x, training: bool = False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DimensionError(
                f"discriminator expects (B, {self.n_features}) input, got {x.shape}"
            )
        h = T.leaky_relu(self.disc1(x), 0.2)
        h = T.leaky_relu(self.disc_bn(self.disc2(h), training), 0.2)
        return T.sigmoid(self.disc3(h))

    def generator_parameters(self):
        return (self.gen1.parameters() + self.gen_bn1.parameters()
                + self.gen2.parameters() + self.gen_bn2.parameters()
                + self.gen3.parameters())

    def discriminator_parameters(self):
        return (self.disc1.parameters() + self.disc2.parameters()
                + self.disc_bn.parameters() + self.disc3.parameters())

    def parameters(self):
        return self.generator_parameters() + self.discriminator_parameters()

    def named_parameters(self):
        named = {}
        for name, layer in [("gen1", self.gen1), ("gen2", self.gen2), ("gen3", self.gen3),
                            ("disc1", self.disc1), ("disc2", self.disc2), ("disc3", self.disc3)]:
            named[f"{name}.weight"] = layer.weight
            named[f"{name}.bias"] = layer.bias
        for name, bn in [("gen_bn1", self.gen_bn1), ("gen_bn2", self.gen_bn2),
                         ("disc_bn", self.disc_bn)]:
            named[f"{name}.gamma"] = bn.gamma
            named[f"{name}.beta"] = bn.beta
        return named

    def named_buffers(self):
        named = {}
        for name, bn in [("gen_bn1", self.gen_bn1), ("gen_bn2", self.gen_bn2),
                         ("disc_bn", self.disc_bn)]:
            named[f"{name}.running_mean"] = bn.running_mean
            named[f"{name}.running_var"] = bn.running_var
        return named


def gan_losses(d_real, d_fake):
    """Discriminator and non-saturating generator losses.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs.
    Pure math on its inputs: the caller controls what is detached, and
    a training step that backpropagates both losses must evaluate the
    discriminator twice (the two losses cannot share one recorded
    graph, which is consumed by the first backward pass).
    """
    d_real = d_real if isinstance(d_real, Tensor) else Tensor(d_real)
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(d_fake)
    clamp = lambda t: T.clip(t, 1e-7, 1.0 - 1e-7)
    loss_d = T.sub(T.mul(T.reduce_mean(T.log(clamp(d_real))), -1.0),
                   T.reduce_mean(T.log(T.sub(1.0, clamp(d_fake)))))
    loss_g = T.mul(T.reduce_mean(T.log(clamp(d_fake))), -1.0)
    return loss_d, loss_g


@dataclass
class TrainSettings:
    """Hyperparameters for one training run.

    ``kl_warmup_epochs`` ramps the VAE's KL weight linearly from zero to
    its configured value over that many epochs; 0 disables the ramp.
    Other model kinds ignore the field.
    """

    batch_size: int = 128
    learning_rate: float = 1e-3
    gan_learning_rate: float = 2e-4
    gan_beta1: float = 0.5
    epochs: int = 1
    seed: int = 0
    kl_warmup_epochs: int = 24


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches; a trailing singleton is dropped."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        batch = order[start:start + batch_size]
        if batch.size >= 2:
            yield batch


def _check_train_args(n: int, batch_size: int):
    if n == 0:
        raise ParameterError("training data is empty")
    if not 2 <= batch_size <= n:
        raise ParameterError(f"batch size must lie in [2, {n}], got {batch_size}")


def make_optimizers(model, settings: TrainSettings):
    """Adam instances matching the model kind, reusable across epochs."""
    if model.kind == "gan":
        return {
            "generator": Adam(model.generator_parameters(),
                              lr=settings.gan_learning_rate, beta1=settings.gan_beta1),
            "discriminator": Adam(model.discriminator_parameters(),
                                  lr=settings.gan_learning_rate, beta1=settings.gan_beta1),
        }
    return {"model": Adam(model.parameters(), lr=settings.learning_rate)}


def train_epoch(model, data, optimizers: dict, settings: TrainSettings,
                epoch_seed: int) -> dict:
    """One shuffled pass over the data; returns mean epoch metrics.

    ``data`` is (whitened values, target images) for the decoder and a
    plain (n, N) array of whitened values for the VAE and GAN.  The
    epoch seed fixes the shuffle and all injected noise.
    """
    rng = np.random.default_rng(epoch_seed)
    if model.kind == "decoder":
        w, images = data
        w = np.asarray(w, dtype=np.float64)
        images = np.asarray(images, dtype=np.float64)
        _check_train_args(w.shape[0], settings.batch_size)
        opt = optimizers["model"]
        losses = []
        for idx in _minibatches(w.shape[0], settings.batch_size, rng):
            opt.zero_grad()
            loss = decoder_loss(model(Tensor(w[idx]), training=True), Tensor(images[idx]))
            T.backward(loss)
            opt.step()
            losses.append(loss.item())
        return {"loss": float(np.mean(losses))}

    values = np.asarray(data, dtype=np.float64)
    _check_train_args(values.shape[0], settings.batch_size)

    if model.kind == "vae":
        opt = optimizers["model"]
        totals, recons = [], []
        for idx in _minibatches(values.shape[0], settings.batch_size, rng):
            x = values[idx]
            noise = rng.standard_normal((x.shape[0], model.latent_width))
            opt.zero_grad()
            x_hat, mu, logvar = vae_forward(Tensor(x), model, Tensor(noise))
            loss = vae_loss(Tensor(x), x_hat, mu, logvar, model.beta)
            T.backward(loss)
            opt.step()
            totals.append(loss.item())
            recons.append(float(np.mean((x_hat.data - x) ** 2)))
        return {"loss": float(np.mean(totals)), "recon": float(np.mean(recons))}

    if model.kind == "gan":
        opt_g = optimizers["generator"]
        opt_d = optimizers["discriminator"]
        losses_d, losses_g = [], []
        for idx in _minibatches(values.shape[0], settings.batch_size, rng):
            real = Tensor(values[idx])
            z = Tensor(rng.standard_normal((idx.size, model.noise_width)))
            # discriminator step: generator output detached
            fake = model.generate(z, training=True)
            d_real = model.discriminate(real, training=True)
            d_fake = model.discriminate(fake.detach(), training=True)
            loss_d, _ = gan_losses(d_real, d_fake)
            opt_d.zero_grad()
            opt_g.zero_grad()
            T.backward(loss_d)
            opt_d.step()
            # generator step: fresh discriminator pass, gradient flows to G
            d_fake_live = model.discriminate(fake, training=True)
            _, loss_g = gan_losses(d_real.detach(), d_fake_live)
            opt_d.zero_grad()
            opt_g.zero_grad()
            T.backward(loss_g)
            opt_g.step()
            losses_d.append(loss_d.item())
            losses_g.append(loss_g.item())
        return {"loss_d": float(np.mean(losses_d)), "loss_g": float(np.mean(losses_g))}

    raise ParameterError(f"unknown model kind {model.kind!r}")


def train(model, data, settings: TrainSettings, epochs: int | None = None) -> list[dict]:
    """Run several epochs with per-epoch seed substreams; returns metrics.

    For VAE models the KL weight follows a linear warmup (see
    ``TrainSettings.kl_warmup_epochs``); a full-strength KL term from the
    first batch flattens the encoder mean before reconstruction couples
    to the latent code, and the run never recovers.
    """
    epochs = settings.epochs if epochs is None else epochs
    if settings.kl_warmup_epochs < 0:
        raise ParameterError(
            f"kl_warmup_epochs must be >= 0, got {settings.kl_warmup_epochs}"
        )
    optimizers = make_optimizers(model, settings)
    history = []
    seeds = np.random.SeedSequence(settings.seed).spawn(epochs)
    anneal = model.kind == "vae" and settings.kl_warmup_epochs > 0
    beta_full = model.beta if anneal else 0.0
    for epoch, seq in enumerate(seeds):
        if anneal:
            model.beta = beta_full * min(1.0, (epoch + 1) / settings.kl_warmup_epochs)
        epoch_seed = int(seq.generate_state(1)[0])
        metrics = train_epoch(model, data, optimizers, settings, epoch_seed)
        history.append({"epoch": epoch, **metrics})
    if anneal:
        model.beta = beta_full
    return history
