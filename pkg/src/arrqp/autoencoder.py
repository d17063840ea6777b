"""Bottleneck autoencoders that compress similarity rows and one-hot context.

Hidden layers are tanh, outputs linear, trained on mean-squared
reconstruction error with RMSProp and patience-3 early stopping.  The
benchmark-scale configurations (encoder 120;80;50 / 1000;250;50, dropout
0.6;0.4) are provided as factories; arbitrary input sizes get
proportionally scaled hidden layers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nn import Dense, Dropout, TrainConfig, train_loop


@dataclass(frozen=True)
class AutoencoderConfig:
    input_dim: int
    encoder_layer_sizes: tuple[int, ...]  # output size per encoder layer; last = bottleneck
    decoder_layer_sizes: tuple[int, ...]  # output size per decoder layer; last = input_dim
    dropout_rates: tuple[float, ...] = (0.6, 0.4)
    hidden_activation: str = "tanh"
    optimizer: str = "rmsprop"
    learning_rate: float = 0.001
    max_epochs: int = 500
    patience: int = 3
    batch_size: int | None = None  # None = full batch
    validation_fraction: float = 0.2

    def __post_init__(self):
        if not self.encoder_layer_sizes or not self.decoder_layer_sizes:
            raise ValueError("encoder and decoder need at least one layer each")
        if self.decoder_layer_sizes[-1] != self.input_dim:
            raise ValueError(
                f"last decoder layer must reproduce the input dim "
                f"({self.decoder_layer_sizes[-1]} != {self.input_dim})"
            )

    @property
    def bottleneck(self) -> int:
        return self.encoder_layer_sizes[-1]


def user_context_autoencoder_config(input_dim: int = 507) -> AutoencoderConfig:
    return AutoencoderConfig(
        input_dim=input_dim,
        encoder_layer_sizes=(120, 80, 50),
        decoder_layer_sizes=(80, 120, input_dim),
    )


def service_context_autoencoder_config(input_dim: int = 8598) -> AutoencoderConfig:
    return AutoencoderConfig(
        input_dim=input_dim,
        encoder_layer_sizes=(1000, 250, 50),
        decoder_layer_sizes=(250, 1000, input_dim),
    )


def scaled_autoencoder_config(input_dim: int, bottleneck: int, **overrides) -> AutoencoderConfig:
    """Hidden sizes proportional to the 507 -> 120 -> 80 -> 50 reference."""
    h1 = max(bottleneck, round(input_dim * 120 / 507))
    h2 = max(bottleneck, round(input_dim * 80 / 507))
    cfg = AutoencoderConfig(
        input_dim=input_dim,
        encoder_layer_sizes=(h1, h2, bottleneck),
        decoder_layer_sizes=(h2, h1, input_dim),
    )
    return replace(cfg, **overrides) if overrides else cfg


class Autoencoder:
    """Encoder/decoder stack over float64 rows."""

    def __init__(self, config: AutoencoderConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng(rng.integers(2**32))

        def build(sizes, in_dim, tag):
            layers = []
            for k, out_dim in enumerate(sizes):
                act = config.hidden_activation if k < len(sizes) - 1 else "linear"
                layers.append(Dense(in_dim, out_dim, rng, activation=act, name=f"{tag}{k}"))
                in_dim = out_dim
            return layers

        self.encoder = build(config.encoder_layer_sizes, config.input_dim, "enc")
        self.decoder = build(config.decoder_layer_sizes, config.bottleneck, "dec")

    def params(self):
        return [p for layer in self.encoder + self.decoder for p in layer.params()]

    @staticmethod
    def _run(layers, x):
        for layer in layers:
            x = layer.forward(x)
        return x

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Map rows to the bottleneck representation (dropout off)."""
        return self._run(self.encoder, np.atleast_2d(np.asarray(x, dtype=float)))

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self._run(self.decoder, self._run(self.encoder, x))

    def loss_and_grads(self, x: np.ndarray) -> float:
        """Full forward/backward on a batch; returns mean squared error."""
        for p in self.params():
            p.grad[...] = 0.0
        layers = self.encoder + self.decoder
        acts = x
        taps = []  # dropout applied after encoder/decoder hidden layers
        enc_len = len(self.encoder)
        rates = self.config.dropout_rates
        for k, layer in enumerate(layers):
            acts = layer.forward(acts)
            local = k if k < enc_len else k - enc_len
            stack_len = enc_len if k < enc_len else len(self.decoder)
            if local < len(rates) and local < stack_len - 1 and rates[local] > 0:
                drop = Dropout(rates[local], self.dropout_rng)
                acts = drop.forward(acts, train=True)
                taps.append((k, drop))
        recon = acts
        n = x.size
        diff = recon - x
        loss = float((diff * diff).sum() / n)
        dout = 2.0 * diff / n
        tap_map = dict(taps)
        for k in reversed(range(len(layers))):
            if k in tap_map:
                dout = tap_map[k].backward(dout)
            dout = layers[k].backward(dout)
        return loss

    def reconstruction_mse(self, x: np.ndarray) -> float:
        diff = self.reconstruct(x) - x
        return float((diff * diff).sum() / x.size)


def train_autoencoder(inputs: np.ndarray, config: AutoencoderConfig, seed: int = 0) -> Autoencoder:
    """Train on reconstruction MSE with early stopping on held-out rows."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(f"inputs must be (n, {config.input_dim}), got {x.shape}")
    model = Autoencoder(config, seed=seed)
    rng = np.random.default_rng(seed)

    n = x.shape[0]
    n_val = int(round(n * config.validation_fraction))
    order = rng.permutation(n)
    val = x[order[:n_val]]
    train = x[order[n_val:]]
    if train.shape[0] == 0:
        train, val = x, x
    from .nn import make_optimizer

    optimizer = make_optimizer(config.optimizer, model.params(), config.learning_rate)

    def epoch_fn():
        if config.batch_size is None or config.batch_size >= train.shape[0]:
            loss = model.loss_and_grads(train)
            optimizer.step()
            return loss
        order = rng.permutation(train.shape[0])
        losses = []
        for start in range(0, train.shape[0], config.batch_size):
            batch = train[order[start : start + config.batch_size]]
            losses.append(model.loss_and_grads(batch))
            optimizer.step()
        return float(np.mean(losses))

    def val_fn():
        return model.reconstruction_mse(val) if val.shape[0] else model.reconstruction_mse(train)

    loop_cfg = TrainConfig(
        optimizer=config.optimizer,
        learning_rate=config.learning_rate,
        max_epochs=config.max_epochs,
        patience=min(config.patience, config.max_epochs),
        seed=seed,
    )
    model.last_training = train_loop(epoch_fn, val_fn, model.params(), loop_cfg)
    return model
