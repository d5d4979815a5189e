"""Two-phase training protocol.

Phase 1 pre-trains the discriminator as a plain autoencoder on the real
target maps. Phase 2 clones the generator from it, freezes both decoders,
and alternates one discriminator update and one generator update per
batch. With L(v) = ||v - D(v)||_1 (elementwise mean):

    L_D = E[L(y)] - lambda_adv * E[L(G(x))]
    L_G = E[L(G(x))] + lambda_rec * E||G(x) - y||_1

During the D update the generator output is detached; during the G update
the gradient flows through all of D but D's parameters do not accumulate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape
from .errors import NonFiniteError, NumericalError, ShapeError
from .model import (NetConfig, Network, build_network,
                    clone_generator_from_discriminator, freeze_decoder)


@dataclass
class TrainConfig:
    lambda_adv: float = 1e-3
    lambda_rec: float = 1.0
    lr: float = 5e-5
    lr_decay: float = 0.95          # 5% every `lr_decay_every` epochs
    lr_decay_every: int = 30
    lr_decay_mode: str = "multiplicative"   # or "additive"
    pretrain_batch: int = 32
    pretrain_epochs: int = 300
    batch: int = 16
    epochs: int = 300
    seed: int = 0
    checkpoint_every: int = 0       # 0 = only final

    def __post_init__(self):
        if self.lambda_adv < 0 or self.lambda_rec < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch < 1 or self.pretrain_batch < 1:
            raise ValueError("batch size must be >= 1")
        if self.lr_decay_mode not in ("multiplicative", "additive"):
            raise ValueError(f"unknown lr decay mode {self.lr_decay_mode!r}")


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Learning rate for a 1-based epoch within a phase."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    steps = (epoch - 1) // config.lr_decay_every
    if config.lr_decay_mode == "multiplicative":
        return config.lr * config.lr_decay ** steps
    return config.lr * max(0.0, 1.0 - (1.0 - config.lr_decay) * steps)


@dataclass
class PairedDataset:
    """Input/target UV map pairs (y == x for the autoencoding task), with
    optional one-hot labels, all channels-first float32."""

    x: np.ndarray                      # (N, 3, H, W)
    y: np.ndarray                      # (N, 3, H, W)
    labels: np.ndarray | None = None   # (N, L) one-hot
    names: list[str] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.float32)
        if self.x.shape != self.y.shape:
            raise ShapeError(f"x/y shape mismatch: {self.x.shape} vs {self.y.shape}")
        if self.x.ndim != 4 or self.x.shape[1] != 3:
            raise ShapeError(f"maps must be (N, 3, H, W), got {self.x.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float32)
            if len(self.labels) != len(self.x):
                raise ShapeError("labels length mismatch")

    def __len__(self):
        return len(self.x)

    @property
    def num_label_channels(self) -> int:
        return 0 if self.labels is None else self.labels.shape[1]

    @property
    def resolution(self) -> int:
        return self.x.shape[2]


def _check_one_hot(l: np.ndarray):
    if l.ndim != 1:
        raise ShapeError(f"label must be a vector, got shape {l.shape}")
    if np.any((np.abs(l) > 1e-6) & (np.abs(l - 1) > 1e-6)) or abs(l.sum() - 1.0) > 1e-6:
        raise ValueError(f"label is not one-hot: {l}")


def condition_input(x: np.ndarray, l: np.ndarray | None) -> np.ndarray:
    """Append one constant channel per label entry after the 3 position
    channels. x: (3, H, W) or (N, 3, H, W); l: (L,) or (N, L)."""
    if l is None or (hasattr(l, "size") and l.size == 0):
        return x
    x = np.asarray(x, dtype=np.float32)
    l = np.asarray(l, dtype=np.float32)
    if x.ndim == 3:
        _check_one_hot(l)
        planes = np.broadcast_to(l[:, None, None], (l.shape[0],) + x.shape[1:])
        return np.concatenate([x, planes], axis=0)
    for row in l:
        _check_one_hot(row)
    planes = np.broadcast_to(l[:, :, None, None], l.shape + x.shape[2:])
    return np.concatenate([x, planes.astype(np.float32)], axis=1)


@dataclass
class TrainState:
    """Everything needed to resume a phase mid-run."""
    epoch: int                      # last completed epoch
    adam_d: AdamState
    adam_g: AdamState | None
    rng_state: dict


def _batches(n: int, batch: int, perm: np.ndarray):
    for i in range(0, n, batch):
        yield perm[i:i + batch]


def pretrain_discriminator(dataset: PairedDataset, net_config: NetConfig,
                           config: TrainConfig,
                           network: Network | None = None,
                           state: TrainState | None = None,
                           checkpoint_fn=None) -> tuple[Network, list[float]]:
    """Train the discriminator as an autoencoder of the real targets.
    Returns the network and the per-epoch mean reconstruction loss."""
    if len(dataset) == 0:
        raise ValueError("pretraining needs a non-empty dataset")
    rng = np.random.default_rng(config.seed)
    if network is None:
        network = build_network(net_config, rng)
    adam = AdamState() if state is None else state.adam_d
    start = 0
    if state is not None:
        rng.bit_generator.state = state.rng_state
        start = state.epoch
    params = network.params.tensors()
    history: list[float] = []
    n = len(dataset)
    for epoch in range(start + 1, config.pretrain_epochs + 1):
        lr = lr_at(epoch, config)
        perm = rng.permutation(n)
        losses = []
        for idx in _batches(n, config.pretrain_batch, perm):
            y = dataset.y[idx]
            y_in = condition_input(y, None if dataset.labels is None else dataset.labels[idx])
            tape = Tape()
            fp = network.forward(tape.leaf(y_in), tape)
            try:
                loss = ad.l1_mean(tape.leaf(y), fp.output)
            except NonFiniteError as e:
                raise NumericalError(f"pretrain epoch {epoch}: {e}") from e
            ad.zero_grad(params)
            ad.backward(tape, loss, params=params)
            ad.adam_step(params, adam, lr)
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
        if not np.isfinite(history[-1]):
            raise NumericalError(f"pretrain diverged at epoch {epoch}: loss={history[-1]}")
        if checkpoint_fn is not None:
            checkpoint_fn(epoch, network, TrainState(epoch, adam, None, rng.bit_generator.state))
    return network, history


def adversarial_step(batch: tuple[np.ndarray, np.ndarray, np.ndarray | None],
                     d_net: Network, g_net: Network,
                     adam_d: AdamState, adam_g: AdamState,
                     lr: float, config: TrainConfig,
                     return_internals: bool = False):
    """One D update followed by one G update on a batch.

    Returns (L_D, L_G, L_rec) as floats; with ``return_internals`` also a
    dict of the raw forward outputs the losses were computed from, for
    recomputing the loss formulas outside the engine.
    """
    x, y, labels = batch
    d_params = d_net.params.tensors()
    g_params = g_net.params.tensors()

    # generator forward (kept on its tape for the G update)
    tape = Tape()
    x_in = condition_input(x, labels)
    g_fp = g_net.forward(tape.leaf(x_in), tape)
    gx = g_fp.output

    try:
        # ---- D update: generator output is a constant here
        tape_d = Tape()
        gx_const = gx.data.copy()
        dy_fp = d_net.forward(tape_d.leaf(condition_input(y, labels)), tape_d)
        dgx_fp = d_net.forward(tape_d.leaf(condition_input(gx_const, labels)), tape_d)
        loss_real = ad.l1_mean(tape_d.leaf(y), dy_fp.output)
        loss_fake_pre = ad.l1_mean(tape_d.leaf(gx_const), dgx_fp.output)
        l_d = ad.add(loss_real, ad.scale(loss_fake_pre, -config.lambda_adv))
        ad.zero_grad(d_params)
        ad.zero_grad(g_params)
        ad.backward(tape_d, l_d, params=d_params)
        ad.adam_step(d_params, adam_d, lr)
        ad.zero_grad(d_params)  # leaves the G update's isolation observable

        # ---- G update: gradient flows through the updated D, but D's
        # parameters are held constant for this step
        if labels is not None:
            lplanes = np.broadcast_to(
                labels[:, :, None, None].astype(np.float32),
                labels.shape + gx.data.shape[2:]).copy()
            gx_in = ad.concat_channels(gx, tape.leaf(lplanes))
        else:
            gx_in = gx
        d_net.params.set_requires_grad(False)
        try:
            dgx_fp2 = d_net.forward(gx_in, tape)
            loss_adv = ad.l1_mean(gx, dgx_fp2.output)
            loss_rec = ad.l1_mean(gx, tape.leaf(y))
            l_g = ad.add(loss_adv, ad.scale(loss_rec, config.lambda_rec))
            ad.zero_grad(g_params)
            ad.backward(tape, l_g, params=g_params)
            ad.adam_step(g_params, adam_g, lr)
        finally:
            d_net.params.set_requires_grad(True)
    except NonFiniteError as e:
        raise NumericalError(str(e)) from e

    vals = (float(l_d.data), float(l_g.data), float(loss_rec.data))
    if not return_internals:
        return vals
    internals = {
        "x": x.copy(), "y": y.copy(), "gx": gx_const,
        "d_y": dy_fp.output.data.copy(),
        "d_gx_pre": dgx_fp.output.data.copy(),
        "d_gx_post": dgx_fp2.output.data.copy(),
        "loss_real": float(loss_real.data),
        "loss_fake_pre": float(loss_fake_pre.data),
        "loss_adv": float(loss_adv.data),
    }
    return vals, internals


@dataclass
class TrainResult:
    discriminator: Network
    generator: Network
    pretrained: Network | None                  # snapshot before adversarial
    pretrain_history: list[float]
    history: list[tuple[float, float, float]]   # (L_D, L_G, L_rec) per epoch


def train(dataset: PairedDataset, net_config: NetConfig, config: TrainConfig,
          pretrained: Network | None = None,
          pretrain_checkpoint_fn=None, checkpoint_fn=None,
          resume: tuple[Network, Network, TrainState] | None = None) -> TrainResult:
    """Full protocol: pretrain D (unless given), clone G from it, freeze
    both decoders, then run the adversarial epochs."""
    pretrain_history: list[float] = []
    snapshot: Network | None = None
    if resume is not None:
        d_net, g_net, state = resume
        rng = np.random.default_rng(config.seed)
        rng.bit_generator.state = state.rng_state
        adam_d, adam_g = state.adam_d, state.adam_g
        start = state.epoch
    else:
        if pretrained is None:
            d_net, pretrain_history = pretrain_discriminator(
                dataset, net_config, config, checkpoint_fn=pretrain_checkpoint_fn)
        else:
            d_net = pretrained
        snapshot = clone_generator_from_discriminator(d_net)
        g_net = clone_generator_from_discriminator(d_net)
        freeze_decoder(d_net.params)
        freeze_decoder(g_net.params)
        rng = np.random.default_rng(config.seed + 1)
        adam_d, adam_g = AdamState(), AdamState()
        start = 0

    n = len(dataset)
    history: list[tuple[float, float, float]] = []
    for epoch in range(start + 1, config.epochs + 1):
        lr = lr_at(epoch, config)
        perm = rng.permutation(n)
        epoch_vals = []
        for idx in _batches(n, config.batch, perm):
            labels = None if dataset.labels is None else dataset.labels[idx]
            try:
                vals = adversarial_step((dataset.x[idx], dataset.y[idx], labels),
                                        d_net, g_net, adam_d, adam_g, lr, config)
            except NumericalError as e:
                raise NumericalError(f"adversarial epoch {epoch}: {e}") from e
            epoch_vals.append(vals)
        history.append(tuple(float(v) for v in np.mean(epoch_vals, axis=0)))
        if checkpoint_fn is not None and (
                (config.checkpoint_every and epoch % config.checkpoint_every == 0)
                or epoch == config.epochs):
            checkpoint_fn(epoch, d_net, g_net,
                          TrainState(epoch, adam_d, adam_g, rng.bit_generator.state))
    return TrainResult(d_net, g_net, snapshot, pretrain_history, history)


def reconstruction_l1(net: Network, dataset: PairedDataset, batch: int = 32) -> float:
    """Mean over samples of the elementwise-mean L1 between G(x) and y."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    vals = []
    for i in range(0, len(dataset), batch):
        x = dataset.x[i:i + batch]
        labels = None if dataset.labels is None else dataset.labels[i:i + batch]
        out = net.forward(condition_input(x, labels)).output.data
        vals.append(np.mean(np.abs(out - dataset.y[i:i + batch]), axis=(1, 2, 3)))
    return float(np.mean(np.concatenate(vals)))
