"""Trainable reconstructors at desk scale, with hand-written gradients.

Two model families:

LinearFourierFilter     one complex gain per frequency; applying the model
                        is a pointwise multiply in the Fourier domain.
                        After every update the gains are projected back to
                        conjugate symmetry so outputs stay real.
ConvNetModel            small residual net of 3x3 periodic convolutions,
                        channels 1 -> 8 -> 8 -> 1, ReLU between layers.

Training modes pair the same blurred data with different targets:

NN        (y, x)                    ReNN      (y, Tikhonov(y))
StNN      (phi_k(y), x)             StReNN    (phi_k(y), Tikhonov(y))

Loss is MSE(x, x') = |x - x'|^2 / n.  Optimizers are plain SGD and Adam
(beta1 0.9, beta2 0.999, eps 1e-8); both act on a flat float parameter
vector so gradients can be checked by central finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (ParameterError, PgmParseError, ShapeError,
                     TrainingDivergedError)
from .linops import Shape
from .reconstruct import (Reconstructor, StabilizerSpec, TikhonovConfig,
                          compose, stabilizer, tikhonov)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"RSTB"


class TrainMode(str, Enum):
    NN = "NN"
    RENN = "ReNN"
    STNN = "StNN"
    STRENN = "StReNN"

    @property
    def stabilized(self):
        return self in (TrainMode.STNN, TrainMode.STRENN)

    @property
    def tikhonov_target(self):
        return self in (TrainMode.RENN, TrainMode.STRENN)


@dataclass
class TrainConfig:
    """Optimization hyperparameters plus the two noise levels.

    noise_injection_delta perturbs inputs freshly every epoch during
    training; noisy_target_delta is the dataset-construction noise whose
    draw is shared between each input and its Tikhonov target.
    """

    epochs: int = 50
    learning_rate: float = 1e-4
    batch_size: int = 8
    optimizer: str = "adam"
    noise_injection_delta: float = 0.0
    noisy_target_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ParameterError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ParameterError("batch size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.noise_injection_delta < 0 or self.noisy_target_delta < 0:
            raise ParameterError("noise deltas must be >= 0")


@dataclass
class DatasetPairs:
    """Input/target rows plus a record of how they were made."""

    inputs: np.ndarray            # (N, m)
    targets: np.ndarray           # (N, n)
    mode: TrainMode
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.inputs.shape[0]


def build_dataset(signals, op, mode, tikhonov_config=None, stabilizer_k=3,
                  input_noise_delta=0.0, target_noise_delta=0.0, seed=0):
    """Assemble training pairs for one mode.

    signals are ground-truth vectors.  Data is y = A x, plus optional
    construction noise: input_noise_delta adds an independent draw per
    sample; target_noise_delta adds a draw shared by the input and the
    Tikhonov target (so the pair is (A x + e, Tikhonov(A x + e))).
    Stabilized modes pass the data through phi_k before it becomes an
    input.  Tikhonov targets and phi_k both need tikhonov_config.
    """
    mode = TrainMode(mode)
    signals = [np.asarray(x, dtype=float) for x in signals]
    if not signals:
        raise ParameterError("no training signals")
    for x in signals:
        if x.ndim != 1 or x.shape[0] != op.cols:
            raise ShapeError(f"signals must have length {op.cols}")
    needs_tik = mode.tikhonov_target or mode.stabilized
    if needs_tik and tikhonov_config is None:
        raise ParameterError(f"mode {mode.value} needs a tikhonov_config")

    tik = tikhonov(op, tikhonov_config) if mode.tikhonov_target else None
    phi = (stabilizer(op, StabilizerSpec(k=stabilizer_k,
                                         tikhonov=tikhonov_config))
           if mode.stabilized else None)

    rng = np.random.default_rng(seed)
    inputs = []
    targets = []
    for x in signals:
        y = op.apply(x)
        if input_noise_delta > 0:
            y = y + input_noise_delta * rng.standard_normal(op.rows)
        if target_noise_delta > 0:
            y = y + target_noise_delta * rng.standard_normal(op.rows)
        targets.append(tik.reconstruct(y) if tik is not None else x)
        inputs.append(phi.reconstruct(y) if phi is not None else y)
    provenance = {"mode": mode.value,
                  "input_noise_delta": float(input_noise_delta),
                  "target_noise_delta": float(target_noise_delta),
                  "stabilizer_k": int(stabilizer_k) if mode.stabilized else None,
                  "lambda": (tikhonov_config.lam if needs_tik else None)}
    return DatasetPairs(inputs=np.stack(inputs), targets=np.stack(targets),
                        mode=mode, provenance=provenance)


class LinearFourierFilter:
    """One complex gain per frequency, initialized to zero."""

    family = "fourier_filter"

    def __init__(self, shape, gains=None):
        self.shape = shape
        if gains is None:
            gains = np.zeros((shape.height, shape.width), dtype=complex)
        else:
            gains = np.asarray(gains, dtype=complex)
            if gains.shape != (shape.height, shape.width):
                raise ShapeError("gains grid does not match shape")
        self.gains = gains
        self.input_dim = shape.n
        self.output_dim = shape.n

    def forward(self, y):
        y = np.asarray(y, dtype=float)
        yg = y.reshape(self.shape.height, self.shape.width)
        return np.fft.ifft2(self.gains * np.fft.fft2(yg)).real.ravel()

    def forward_batch(self, ys):
        b = ys.shape[0]
        grids = ys.reshape(b, self.shape.height, self.shape.width)
        out = np.fft.ifft2(self.gains[None] * np.fft.fft2(grids,
                                                          axes=(1, 2)),
                           axes=(1, 2)).real
        return out.reshape(b, -1)

    def project(self):
        """Restore conjugate symmetry g[-k] = conj(g[k]) after an update."""
        flipped = np.conj(self.gains[::-1, ::-1])
        flipped = np.roll(flipped, (1, 1), axis=(0, 1))
        self.gains = 0.5 * (self.gains + flipped)

    def get_params(self):
        return np.concatenate([self.gains.real.ravel(),
                               self.gains.imag.ravel()])

    def set_params(self, flat):
        n = self.shape.n
        re = flat[:n].reshape(self.shape.height, self.shape.width)
        im = flat[n:].reshape(self.shape.height, self.shape.width)
        self.gains = re + 1j * im

    def copy(self):
        return LinearFourierFilter(self.shape, self.gains.copy())

    def describe(self):
        return {"family": self.family, "height": self.shape.height,
                "width": self.shape.width}


class ConvNetModel:
    """Residual stack of 3x3 periodic convolutions with ReLU between."""

    family = "convnet"

    def __init__(self, shape, channels=(1, 8, 8, 1), residual=True, seed=0,
                 weights=None, biases=None):
        if channels[0] != 1 or channels[-1] != 1:
            raise ParameterError("first and last channel counts must be 1")
        self.shape = shape
        self.channels = tuple(int(c) for c in channels)
        self.residual = bool(residual)
        self.input_dim = shape.n
        self.output_dim = shape.n
        if weights is None:
            rng = np.random.default_rng(seed)
            self.weights = []
            self.biases = []
            for c_in, c_out in zip(self.channels[:-1], self.channels[1:]):
                scale = np.sqrt(2.0 / (9.0 * c_in))
                self.weights.append(scale * rng.standard_normal(
                    (c_out, c_in, 3, 3)))
                self.biases.append(np.zeros(c_out))
        else:
            self.weights = [np.asarray(w, dtype=float) for w in weights]
            self.biases = [np.asarray(b, dtype=float) for b in biases]

    @staticmethod
    def _conv(z, w, b):
        # z: (B, c_in, H, W); w: (c_out, c_in, 3, 3); periodic wrap
        out = np.tile(b[None, :, None, None],
                      (z.shape[0], 1, z.shape[2], z.shape[3]))
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                rolled = np.roll(z, (-dy, -dx), axis=(2, 3))
                out = out + np.einsum("oi,bihw->bohw",
                                      w[:, :, dy + 1, dx + 1], rolled)
        return out

    def _forward_cached(self, ys):
        b = ys.shape[0]
        z = ys.reshape(b, 1, self.shape.height, self.shape.width)
        inputs = z
        zs = [z]
        pres = []
        last = len(self.weights) - 1
        for l, (w, bias) in enumerate(zip(self.weights, self.biases)):
            pre = self._conv(z, w, bias)
            pres.append(pre)
            z = pre if l == last else np.maximum(pre, 0.0)
            zs.append(z)
        out = z + inputs if self.residual else z
        return out.reshape(b, -1), zs, pres

    def forward(self, y):
        y = np.asarray(y, dtype=float)
        out, _, _ = self._forward_cached(y[None, :])
        return out[0]

    def forward_batch(self, ys):
        out, _, _ = self._forward_cached(ys)
        return out

    def backward(self, zs, pres, dout_grid):
        """Parameter gradients given dL/d(output grid); returns (dws, dbs)."""
        last = len(self.weights) - 1
        dz = dout_grid
        dws = [None] * len(self.weights)
        dbs = [None] * len(self.weights)
        for l in range(last, -1, -1):
            dpre = dz if l == last else dz * (pres[l] > 0.0)
            dbs[l] = dpre.sum(axis=(0, 2, 3))
            dw = np.zeros_like(self.weights[l])
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    rolled = np.roll(zs[l], (-dy, -dx), axis=(2, 3))
                    dw[:, :, dy + 1, dx + 1] = np.einsum(
                        "bohw,bihw->oi", dpre, rolled)
            dws[l] = dw
            if l > 0:
                dz_next = np.zeros_like(zs[l])
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        rolled = np.roll(dpre, (dy, dx), axis=(2, 3))
                        dz_next = dz_next + np.einsum(
                            "oi,bohw->bihw",
                            self.weights[l][:, :, dy + 1, dx + 1], rolled)
                dz = dz_next
        return dws, dbs

    def project(self):
        pass

    def get_params(self):
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_params(self, flat):
        pos = 0
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[l] = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[l] = flat[pos:pos + b.size].reshape(b.shape).copy()
            pos += b.size

    def copy(self):
        return ConvNetModel(self.shape, channels=self.channels,
                            residual=self.residual,
                            weights=[w.copy() for w in self.weights],
                            biases=[b.copy() for b in self.biases])

    def describe(self):
        return {"family": self.family, "height": self.shape.height,
                "width": self.shape.width, "channels": list(self.channels),
                "residual": self.residual}


def mse(x, x_prime):
    """|x - x'|^2 / n."""
    d = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    return float(d @ d) / d.shape[0]


def loss_and_gradients(model, inputs, targets):
    """Batch-mean MSE and its gradient as a flat vector.

    The flat layout matches model.get_params(), so every entry can be
    checked against central finite differences.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeError("inputs and targets disagree on batch size")
    b = inputs.shape[0]
    n = targets.shape[1]
    if isinstance(model, LinearFourierFilter):
        h, w = model.shape.height, model.shape.width
        grids = inputs.reshape(b, h, w)
        yhat = np.fft.fft2(grids, axes=(1, 2))
        out = np.fft.ifft2(model.gains[None] * yhat, axes=(1, 2)).real
        resid = out - targets.reshape(b, h, w)
        loss = float(np.sum(resid * resid)) / (n * b)
        rhat = np.fft.fft2(resid, axes=(1, 2))
        # per-frequency gradient 2 conj(y_hat) r_hat / n^2, batch-averaged
        cgrad = (2.0 / (n * n * b)) * np.sum(np.conj(yhat) * rhat, axis=0)
        grad = np.concatenate([cgrad.real.ravel(), cgrad.imag.ravel()])
        return loss, grad
    if isinstance(model, ConvNetModel):
        out, zs, pres = model._forward_cached(inputs)
        resid = out - targets
        loss = float(np.sum(resid * resid)) / (n * b)
        dout = (2.0 / (n * b)) * resid
        dout_grid = dout.reshape(b, 1, model.shape.height, model.shape.width)
        dws, dbs = model.backward(zs, pres, dout_grid)
        parts = []
        for dw, db in zip(dws, dbs):
            parts.append(dw.ravel())
            parts.append(db.ravel())
        return loss, np.concatenate(parts)
    raise ParameterError(f"unknown model type {type(model).__name__}")


class _Adam:
    def __init__(self, size, lr):
        self.lr = lr
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1 - ADAM_BETA2) * grad * grad
        mhat = self.m / (1 - ADAM_BETA1 ** self.t)
        vhat = self.v / (1 - ADAM_BETA2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grad):
        return params - self.lr * grad


def train(model, data, config, checkpoint_every=0):
    """Mini-batch training; mutates the model in place.

    Returns (model, checkpoints, loss_curve) where checkpoints is a list
    of (epoch, model copy) snapshots (empty unless checkpoint_every > 0;
    epoch 0 is the untrained state and the final epoch is always
    included) and loss_curve is the per-epoch mean training loss.
    Shuffling and injected noise come from config.seed; a non-finite loss
    raises TrainingDivergedError.
    """
    n_samples = len(data)
    if n_samples == 0:
        raise ParameterError("empty dataset")
    rng = np.random.default_rng(config.seed)
    params = model.get_params()
    opt = (_Adam(params.shape[0], config.learning_rate)
           if config.optimizer == "adam" else _Sgd(config.learning_rate))
    checkpoints = []
    if checkpoint_every > 0:
        checkpoints.append((0, model.copy()))
    loss_curve = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_samples)
        total = 0.0
        for start in range(0, n_samples, config.batch_size):
            batch = order[start:start + config.batch_size]
            xs = data.inputs[batch]
            if config.noise_injection_delta > 0:
                xs = xs + config.noise_injection_delta \
                    * rng.standard_normal(xs.shape)
            loss, grad = loss_and_gradients(model, xs, data.targets[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", epoch=epoch)
            params = opt.step(params, grad)
            model.set_params(params)
            model.project()
            params = model.get_params()
            total += loss * len(batch)
        loss_curve.append(total / n_samples)
        if checkpoint_every > 0 and epoch % checkpoint_every == 0 \
                and epoch != config.epochs:
            checkpoints.append((epoch, model.copy()))
    if checkpoint_every > 0:
        checkpoints.append((config.epochs, model.copy()))
    return model, checkpoints, loss_curve


def save_loss_curve(path, loss_curve):
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(loss_curve, start=1):
            writer.writerow([epoch, repr(float(value))])


class LearnedReconstructor(Reconstructor):
    """Wraps a trained model as a reconstructor."""

    kind = "learned"

    def __init__(self, model, model_path=None):
        self.model = model
        self.model_path = model_path
        self.input_dim = model.input_dim
        self.output_dim = model.output_dim

    def reconstruct(self, y):
        y = self._check_data(y)
        return self.model.forward(y)

    def to_config(self):
        return {"kind": self.kind, "family": self.model.family,
                "model_path": self.model_path}


def as_reconstructor(model, stabilizer=None, model_path=None):
    """Reconstructor view of a model, optionally behind a stabilizer.

    With a stabilizer the result computes model(phi_k(y)), matching how
    stabilized modes were trained.
    """
    learned = LearnedReconstructor(model, model_path=model_path)
    if stabilizer is None:
        return learned
    return compose(learned, stabilizer)


# ---------------------------------------------------------------------------
# checkpoint container: magic, u32 header length, JSON header, then the
# flat parameter vector as little-endian float64 in declaration order

def save_model(model, path):
    header = json.dumps(model.describe(), sort_keys=True).encode("utf-8")
    params = model.get_params().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(params.tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ParameterError(f"{path}: not a model checkpoint")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    params = np.frombuffer(blob[8 + hlen:], dtype="<f8").astype(float)
    shape = Shape(header["height"], header["width"])
    if header["family"] == LinearFourierFilter.family:
        model = LinearFourierFilter(shape)
    elif header["family"] == ConvNetModel.family:
        model = ConvNetModel(shape, channels=tuple(header["channels"]),
                             residual=header["residual"], seed=0)
    else:
        raise ParameterError(f"unknown model family {header['family']!r}")
    expected = model.get_params().shape[0]
    if params.shape[0] != expected:
        raise ParameterError(
            f"{path}: expected {expected} parameters, found {params.shape[0]}")
    model.set_params(params)
    return model
