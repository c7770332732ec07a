"""Networks: the tanh MLP regressor and the two autoencoders."""
import numpy as np

from ..errors import ShapeMismatch
from .layers import (BatchNorm2d, Conv2d, Dense, Dropout, LeakyReLU, MaxPool2d, ReLU, Reshape,
                     Sequential, Sigmoid, Tanh, Upsample2x)

FULL_SCALE = {"kind": "conv_ae", "side": 128, "hidden": 32, "latent": 16, "blocks": 7,
              "deep_channels": 4196, "dropout_blocks": 3}


class Model:
    """Named chains of layers plus the config needed to rebuild them."""

    config = None
    chains = None

    def named_params(self):
        for name, chain in self.chains.items():
            yield from chain.named_params(prefix=f"{name}.")

    def named_buffers(self):
        for name, chain in self.chains.items():
            yield from chain.named_buffers(prefix=f"{name}.")

    def zero_grad(self):
        for chain in self.chains.values():
            chain.zero_grad()

    def state_dict(self):
        state = {path: store[key].copy() for path, store, _, key in self.named_params()}
        state.update({path: store[key].copy() for path, store, key in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        for path, store, _, key in self.named_params():
            store[key] = np.array(state[path], dtype=np.float64)
        for path, store, key in self.named_buffers():
            store[key] = np.array(state[path], dtype=np.float64)

    def n_params(self):
        return int(sum(store[key].size for _, store, _, key in self.named_params()))

    def __call__(self, x):
        return self.forward(x)


class MLP(Model):
    """Fully connected net: ``hidden`` tanh layers of ``width`` units, linear output."""

    def __init__(self, n_in, n_out, hidden=5, width=7, seed=0):
        rng = np.random.default_rng(seed)
        self.config = {"kind": "mlp", "n_in": n_in, "n_out": n_out, "hidden": hidden,
                       "width": width, "seed": seed}
        layers = []
        d = n_in
        for _ in range(hidden):
            layers += [Dense(d, width, rng), Tanh()]
            d = width
        layers.append(Dense(d, n_out, rng))
        self.net = Sequential(layers)
        self.chains = {"net": self.net}

    def forward(self, x, training=False):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.net.forward(x, training)

    def backward(self, dout):
        return self.net.backward(dout)


class AutoEncoder(Model):
    """Shared encode/decode plumbing; subclasses build ``encoder``/``decoder``."""

    side = None
    latent = None

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        S = self.side
        if x.shape[-2:] == (S, S):
            return x.reshape(-1, 1, S, S)
        if x.shape[-1] == S * S:
            return x.reshape(-1, 1, S, S)
        raise ShapeMismatch(f"expected fields of side {S}, got shape {x.shape}")

    def encode(self, x, training=False):
        return self.encoder.forward(self._in(self._as_batch(x)), training)

    def decode(self, z, training=False):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[-1] != self.latent:
            raise ShapeMismatch(f"latent size {z.shape[-1]} != {self.latent}")
        return self.decoder.forward(z, training).reshape(-1, self.side, self.side)

    def forward(self, x, training=False):
        return self.decode(self.encode(x, training), training)

    def backward(self, dout):
        d = self.decoder.backward(self._out_grad(dout))
        return self.encoder.backward(d)


class ConvAE(AutoEncoder):
    """Convolutional autoencoder with a halving/doubling block ladder.

    Parameters
    ----------
    side : int
        Field side ``S``, a power of two.
    hidden : int
        Channels after the first convolution ``H``; doubled per block.
    latent : int
        Bottleneck size ``Q``.
    blocks : int, optional
        Number of contracting (and expanding) blocks; ``log2(S)`` by default
        so the encoder ends at 1x1.
    deep_channels : int, optional
        Override for the channel count of the deepest block.
    dropout : float
        Dropout probability in the first ``dropout_blocks`` contracting blocks.
    batch_norm : bool
        Batch normalisation in every contracting/expanding block.
    """

    def __init__(self, side, hidden, latent, blocks=None, deep_channels=None, dropout=0.5,
                 dropout_blocks=3, batch_norm=True, seed=0):
        L = int(round(np.log2(side)))
        if 2 ** L != side:
            raise ShapeMismatch(f"side must be a power of two, got {side}")
        blocks = L if blocks is None else blocks
        if blocks > L:
            raise ShapeMismatch(f"{blocks} blocks would shrink a {side}-grid below 1x1")
        self.side, self.latent, self.blocks = side, latent, blocks
        self.config = {"kind": "conv_ae", "side": side, "hidden": hidden, "latent": latent,
                       "blocks": blocks, "deep_channels": deep_channels, "dropout": dropout,
                       "dropout_blocks": dropout_blocks, "batch_norm": batch_norm, "seed": seed}
        rng = np.random.default_rng(seed)
        drop_rng = np.random.default_rng([seed, 1])
        chans = [hidden * 2 ** k for k in range(blocks + 1)]
        if deep_channels is not None:
            chans[-1] = deep_channels
        self.channels = chans
        deep_side = side // 2 ** blocks
        flat = chans[-1] * deep_side * deep_side

        enc = [Conv2d(1, chans[0], rng), LeakyReLU(0.2)]
        for k in range(blocks):
            c_in, c_out = chans[k], chans[k + 1]
            enc += [Conv2d(c_in, c_out, rng)] + ([BatchNorm2d(c_out)] if batch_norm else []) + [LeakyReLU(0.2)]
            enc += [Conv2d(c_out, c_out, rng)] + ([BatchNorm2d(c_out)] if batch_norm else []) + [LeakyReLU(0.2)]
            enc.append(MaxPool2d())
            if k < dropout_blocks and dropout > 0:
                enc.append(Dropout(dropout, drop_rng))
        enc += [Reshape((flat,)), Dense(flat, latent, rng)]

        dec = [Dense(latent, flat, rng), Reshape((chans[-1], deep_side, deep_side))]
        for k in range(blocks, 0, -1):
            c_in, c_out = chans[k], chans[k - 1]
            dec += [Upsample2x(), Conv2d(c_in, c_out, rng)] + ([BatchNorm2d(c_out)] if batch_norm else []) + [ReLU()]
        dec += [Conv2d(chans[0], 1, rng), Sigmoid()]
        self.encoder, self.decoder = Sequential(enc), Sequential(dec)
        self.chains = {"encoder": self.encoder, "decoder": self.decoder}

    def _in(self, x):
        return x

    def _out_grad(self, dout):
        return dout.reshape(-1, 1, self.side, self.side)


class MlpAE(AutoEncoder):
    """Autoencoder without convolutions: tanh dense layers on the flattened field."""

    def __init__(self, side, latent, layers=7, width=64, seed=0):
        self.side, self.latent = side, latent
        self.config = {"kind": "mlp_ae", "side": side, "latent": latent, "layers": layers,
                       "width": width, "seed": seed}
        rng = np.random.default_rng(seed)
        n = side * side
        enc, d = [], n
        for _ in range(layers):
            enc += [Dense(d, width, rng), Tanh()]
            d = width
        enc.append(Dense(d, latent, rng))
        dec, d = [], latent
        for _ in range(layers):
            dec += [Dense(d, width, rng), Tanh()]
            d = width
        dec += [Dense(d, n, rng), Sigmoid()]
        self.encoder, self.decoder = Sequential(enc), Sequential(dec)
        self.chains = {"encoder": self.encoder, "decoder": self.decoder}

    def _in(self, x):
        return x.reshape(x.shape[0], -1)

    def _out_grad(self, dout):
        return dout.reshape(dout.shape[0], -1)


def build_model(config):
    """Rebuild an untrained model from its ``config`` dict."""
    cfg = dict(config)
    kind = cfg.pop("kind")
    if kind == "mlp":
        return MLP(**cfg)
    if kind == "conv_ae":
        return ConvAE(**cfg)
    if kind == "mlp_ae":
        return MlpAE(**cfg)
    raise ValueError(f"unknown model kind {kind!r}")


def shape_table(side, hidden, latent, blocks=None, deep_channels=None, batch=1):
    """Block-level ``(name, input shape, output shape)`` rows without allocating weights."""
    L = int(round(np.log2(side))) if blocks is None else blocks
    chans = [hidden * 2 ** k for k in range(L + 1)]
    if deep_channels is not None:
        chans[-1] = deep_channels
    rows = [("conv_in", (batch, 1, side, side), (batch, chans[0], side, side))]
    s = side
    for k in range(L):
        rows.append((f"contract_{k + 1}", (batch, chans[k], s, s), (batch, chans[k + 1], s // 2, s // 2)))
        s //= 2
    flat = chans[-1] * s * s
    rows.append(("bottleneck_1", (batch, flat), (batch, latent)))
    rows.append(("bottleneck_2", (batch, latent), (batch, flat)))
    for k in range(L, 0, -1):
        rows.append((f"expand_{L - k + 1}", (batch, chans[k], s, s), (batch, chans[k - 1], 2 * s, 2 * s)))
        s *= 2
    rows.append(("conv_out", (batch, chans[0], side, side), (batch, 1, side, side)))
    return rows
