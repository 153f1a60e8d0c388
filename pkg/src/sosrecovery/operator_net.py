"""Deep operator network surrogate, trained with explicit backprop.

The network maps a function (sampled at fixed sensors, the branch input)
and a query time (the trunk input) to a scalar. Branch and trunk each end
in a p-dimensional feature layer and the prediction is their dot product
plus a scalar bias. Hidden layers use tanh; outputs are linear. Trunk
inputs are normalized by ``time_scale`` so query times of any magnitude
reach the tanh units in a reasonable range.

Two evaluation routes are provided and must agree: the factorized route
exploits a shared time grid (one trunk pass for all samples), the pairs
route scores arbitrary (input, time) pairs one by one. Training is
full-batch gradient descent (Adam by default) on the mean squared error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, TrainingError


@dataclass(frozen=True)
class DeepONetSpec:
    """Architecture: layer widths, feature dimension p, time normalization."""

    branch_input_dim: int
    p: int = 40
    branch_hidden: tuple = (64, 64)
    trunk_hidden: tuple = (64, 64)
    time_scale: float = 1.0
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "branch_hidden", tuple(int(w) for w in self.branch_hidden))
        object.__setattr__(self, "trunk_hidden", tuple(int(w) for w in self.trunk_hidden))
        if self.branch_input_dim < 1:
            raise ConfigError(f"branch_input_dim must be >= 1, got {self.branch_input_dim}")
        if self.p < 1:
            raise ConfigError(f"p must be >= 1, got {self.p}")
        if any(w < 1 for w in self.branch_hidden + self.trunk_hidden):
            raise ConfigError("hidden layer widths must be >= 1")
        if self.time_scale <= 0:
            raise ConfigError(f"time_scale must be positive, got {self.time_scale}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(
                f"activation must be 'tanh' or 'relu', got {self.activation!r}"
            )

    @property
    def branch_dims(self) -> tuple:
        return (self.branch_input_dim, *self.branch_hidden, self.p)

    @property
    def trunk_dims(self) -> tuple:
        return (1, *self.trunk_hidden, self.p)


@dataclass
class DeepONetParams:
    """Weights and biases of both subnetworks plus the output bias."""

    branch_weights: list
    branch_biases: list
    trunk_weights: list
    trunk_biases: list
    bias0: float


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_deeponet(spec: DeepONetSpec, rng: np.random.Generator) -> DeepONetParams:
    """Glorot-uniform weights, zero biases. Branch layers are drawn before
    trunk layers, so the rng consumption order is part of the contract."""

    def layers(dims):
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            ws.append(_glorot(rng, fan_in, fan_out))
            bs.append(np.zeros(fan_out))
        return ws, bs

    bw, bb = layers(spec.branch_dims)
    tw, tb = layers(spec.trunk_dims)
    return DeepONetParams(bw, bb, tw, tb, 0.0)


def _mlp_forward(weights, biases, x: np.ndarray, activation: str):
    """All layer activations, input first. Hidden nonlinearity, linear output."""
    acts = [x]
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = acts[-1] @ w + b
        if l < last:
            z = np.tanh(z) if activation == "tanh" else np.maximum(z, 0.0)
        acts.append(z)
    return acts


def _mlp_backward(weights, acts, grad_out: np.ndarray, activation: str):
    """Weight/bias gradients given dLoss/d(output)."""
    gws = [None] * len(weights)
    gbs = [None] * len(weights)
    g = grad_out
    for l in range(len(weights) - 1, -1, -1):
        if l < len(weights) - 1:
            a = acts[l + 1]
            # derivative recovered from the activation value itself; for
            # relu the subgradient at 0 is taken as 0
            g = g * (1.0 - a**2) if activation == "tanh" else g * (a > 0)
        gws[l] = acts[l].T @ g
        gbs[l] = g.sum(axis=0)
        g = g @ weights[l].T
    return gws, gbs


def _trunk_input(spec: DeepONetSpec, times: np.ndarray) -> np.ndarray:
    return (np.asarray(times, dtype=float) / spec.time_scale)[:, None]


def predict_factorized(
    spec: DeepONetSpec, params: DeepONetParams, inputs: np.ndarray, times: np.ndarray
) -> np.ndarray:
    """Predictions on the grid: (n_samples, n_times), one trunk pass total."""
    B = _mlp_forward(
        params.branch_weights, params.branch_biases,
        np.asarray(inputs, dtype=float), spec.activation,
    )[-1]
    T = _mlp_forward(
        params.trunk_weights, params.trunk_biases,
        _trunk_input(spec, times), spec.activation,
    )[-1]
    return B @ T.T + params.bias0


def predict_pairs(
    spec: DeepONetSpec, params: DeepONetParams, inputs: np.ndarray, times: np.ndarray
) -> np.ndarray:
    """Predictions for matched (input, time) pairs: shape (n_pairs,)."""
    inputs = np.asarray(inputs, dtype=float)
    times = np.asarray(times, dtype=float)
    if len(inputs) != len(times):
        raise ValueError(f"got {len(inputs)} inputs for {len(times)} times")
    B = _mlp_forward(params.branch_weights, params.branch_biases, inputs, spec.activation)[-1]
    T = _mlp_forward(
        params.trunk_weights, params.trunk_biases,
        _trunk_input(spec, times), spec.activation,
    )[-1]
    return (B * T).sum(axis=1) + params.bias0


def mse_loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    return float(np.mean((predictions - targets) ** 2))


def loss_and_grad_factorized(
    params: DeepONetParams,
    spec: DeepONetSpec,
    inputs: np.ndarray,
    times: np.ndarray,
    targets: np.ndarray,
):
    """MSE and its gradient over a shared time grid."""
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    act = spec.activation
    bacts = _mlp_forward(params.branch_weights, params.branch_biases, inputs, act)
    tacts = _mlp_forward(params.trunk_weights, params.trunk_biases, _trunk_input(spec, times), act)
    B, T = bacts[-1], tacts[-1]
    P = B @ T.T + params.bias0
    err = P - targets
    loss = float(np.mean(err**2))
    e = (2.0 / err.size) * err
    gB = e @ T
    gT = e.T @ B
    gbw, gbb = _mlp_backward(params.branch_weights, bacts, gB, act)
    gtw, gtb = _mlp_backward(params.trunk_weights, tacts, gT, act)
    return loss, DeepONetParams(gbw, gbb, gtw, gtb, float(e.sum()))


def loss_and_grad_pairs(
    params: DeepONetParams,
    spec: DeepONetSpec,
    inputs: np.ndarray,
    times: np.ndarray,
    targets: np.ndarray,
):
    """MSE and its gradient for matched (input, time, target) pairs.

    On a shared grid expanded to all pairs this must agree with the
    factorized route to rounding error.
    """
    inputs = np.asarray(inputs, dtype=float)
    times = np.asarray(times, dtype=float)
    targets = np.asarray(targets, dtype=float)
    act = spec.activation
    bacts = _mlp_forward(params.branch_weights, params.branch_biases, inputs, act)
    tacts = _mlp_forward(params.trunk_weights, params.trunk_biases, _trunk_input(spec, times), act)
    B, T = bacts[-1], tacts[-1]
    pred = (B * T).sum(axis=1) + params.bias0
    err = pred - targets
    loss = float(np.mean(err**2))
    e = (2.0 / err.size) * err
    gB = e[:, None] * T
    gT = e[:, None] * B
    gbw, gbb = _mlp_backward(params.branch_weights, bacts, gB, act)
    gtw, gtb = _mlp_backward(params.trunk_weights, tacts, gT, act)
    return loss, DeepONetParams(gbw, gbb, gtw, gtb, float(e.sum()))


def pack_parameters(params: DeepONetParams) -> np.ndarray:
    """Flatten to a single vector: branch W/b per layer, trunk W/b, bias0."""
    parts = []
    for ws, bs in ((params.branch_weights, params.branch_biases),
                   (params.trunk_weights, params.trunk_biases)):
        for w, b in zip(ws, bs):
            parts.append(np.asarray(w, dtype=float).ravel())
            parts.append(np.asarray(b, dtype=float).ravel())
    parts.append(np.array([params.bias0], dtype=float))
    return np.concatenate(parts)


def unpack_parameters(flat: np.ndarray, spec: DeepONetSpec) -> DeepONetParams:
    """Inverse of pack_parameters; arrays are views into ``flat``."""
    flat = np.asarray(flat, dtype=float)
    if flat.size != n_parameters(spec):
        raise ValueError(
            f"parameter vector has {flat.size} entries, expected {n_parameters(spec)}"
        )
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = flat[pos : pos + size].reshape(shape)
        pos += size
        return out

    def layers(dims):
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            ws.append(take((fan_in, fan_out)))
            bs.append(take((fan_out,)))
        return ws, bs

    bw, bb = layers(spec.branch_dims)
    tw, tb = layers(spec.trunk_dims)
    bias0 = float(flat[pos])
    return DeepONetParams(bw, bb, tw, tb, bias0)


def n_parameters(spec: DeepONetSpec) -> int:
    total = 1
    for dims in (spec.branch_dims, spec.trunk_dims):
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            total += fan_in * fan_out + fan_out
    return total


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2.0 * eps)
    return g


@dataclass(frozen=True)
class OperatorDataset:
    """Sensor-sampled branch inputs with per-sample target values.

    One sensor grid is shared by the whole dataset. ``times`` is either a
    single shared output grid of shape (n_times,), enabling the factorized
    route, or per-sample output times of shape (n_samples, n_times).
    """

    sensors: np.ndarray
    inputs: np.ndarray
    times: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        sensors = np.asarray(self.sensors, dtype=float)
        inputs = np.asarray(self.inputs, dtype=float)
        times = np.asarray(self.times, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if sensors.ndim != 1 or sensors.size < 1:
            raise ValueError(f"sensors must be a nonempty 1-d array, got shape {sensors.shape}")
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError(f"inputs must be 2-d and nonempty, got shape {inputs.shape}")
        if times.ndim == 1:
            expected = (inputs.shape[0], times.shape[0])
        elif times.ndim == 2 and times.shape[0] == inputs.shape[0]:
            expected = times.shape
        else:
            raise ValueError(
                f"times must be (n_times,) or (n_samples, n_times), got {times.shape}"
            )
        if times.size < 1:
            raise ValueError("need at least one output time")
        if targets.shape != expected:
            raise ValueError(f"targets shape {targets.shape}, expected {expected}")
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "targets", targets)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_times(self) -> int:
        return self.times.shape[-1]

    @property
    def shared_grid(self) -> bool:
        return self.times.ndim == 1

    def as_pairs(self):
        """Flatten to matched (input, time, target) rows, sample-major."""
        n, m = self.n_samples, self.n_times
        inputs = np.repeat(self.inputs, m, axis=0)
        if self.shared_grid:
            times = np.tile(self.times, n)
        else:
            times = self.times.ravel()
        return inputs, times, self.targets.ravel()


def predict_dataset(
    spec: DeepONetSpec, params: DeepONetParams, data: OperatorDataset
) -> np.ndarray:
    """Model predictions shaped like data.targets, on either time scheme."""
    if data.shared_grid:
        return predict_factorized(spec, params, data.inputs, data.times)
    inputs, times, _ = data.as_pairs()
    return predict_pairs(spec, params, inputs, times).reshape(data.targets.shape)


def dataset_loss_and_grad(params: DeepONetParams, spec: DeepONetSpec, data: OperatorDataset):
    """MSE and gradient over a dataset, factorized when the grid is shared."""
    if data.shared_grid:
        return loss_and_grad_factorized(params, spec, data.inputs, data.times, data.targets)
    inputs, times, targets = data.as_pairs()
    return loss_and_grad_pairs(params, spec, inputs, times, targets)


@dataclass(frozen=True)
class TrainConfig:
    n_iterations: int = 50000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    record_every: int = 100

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.n_iterations < 1:
            raise ConfigError(f"n_iterations must be >= 1, got {self.n_iterations}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.record_every < 1:
            raise ConfigError(f"record_every must be >= 1, got {self.record_every}")


@dataclass(frozen=True)
class TrainResult:
    """Final parameters and the recorded loss history.

    ``history`` columns are (iteration, train_loss, test_loss); the test
    column is NaN when no test set was supplied. The first row is the
    untrained loss, the last row is after the final update.
    """

    params: DeepONetParams
    history: np.ndarray
    final_train_loss: float


def train_deeponet(
    spec: DeepONetSpec,
    params: DeepONetParams,
    train: OperatorDataset,
    config: TrainConfig,
    test: Optional[OperatorDataset] = None,
) -> TrainResult:
    """Full-batch training on the factorized route.

    Raises TrainingError (carrying the partial history) as soon as the
    loss or any parameter goes non-finite.
    """
    x = pack_parameters(params)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    history = []

    def test_loss(vec):
        if test is None:
            return float("nan")
        p = unpack_parameters(vec, spec)
        return mse_loss(predict_dataset(spec, p, test), test.targets)

    # divergence shows up as overflow before the finite checks trip, so the
    # transient warnings carry no information
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(config.n_iterations):
            p = unpack_parameters(x, spec)
            loss, grads = dataset_loss_and_grad(p, spec, train)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite at iteration {it}", history)
            if it % config.record_every == 0:
                history.append((it, loss, test_loss(x)))
            g = pack_parameters(grads)
            if config.optimizer == "adam":
                m = config.beta1 * m + (1.0 - config.beta1) * g
                v = config.beta2 * v + (1.0 - config.beta2) * g * g
                mhat = m / (1.0 - config.beta1 ** (it + 1))
                vhat = v / (1.0 - config.beta2 ** (it + 1))
                x = x - config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)
            else:
                x = x - config.learning_rate * g
            if not np.all(np.isfinite(x)):
                raise TrainingError(
                    f"parameters became non-finite at iteration {it}", history
                )
    final = unpack_parameters(x.copy(), spec)
    final_loss = mse_loss(predict_dataset(spec, final, train), train.targets)
    history.append((config.n_iterations, final_loss, test_loss(x)))
    return TrainResult(params=final, history=np.array(history), final_train_loss=final_loss)


CHECKPOINT_VERSION = 1


def save_checkpoint(path, spec: DeepONetSpec, params: DeepONetParams):
    """Write spec and parameters as JSON (sorted keys, no timestamps)."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "spec": {
            "branch_input_dim": spec.branch_input_dim,
            "p": spec.p,
            "branch_hidden": list(spec.branch_hidden),
            "trunk_hidden": list(spec.trunk_hidden),
            "time_scale": spec.time_scale,
            "activation": spec.activation,
        },
        "bias0": params.bias0,
        "branch": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.branch_weights, params.branch_biases)
        ],
        "trunk": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.trunk_weights, params.trunk_biases)
        ],
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint back; returns (spec, params)."""
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r}")
    s = doc["spec"]
    spec = DeepONetSpec(
        branch_input_dim=int(s["branch_input_dim"]),
        p=int(s["p"]),
        branch_hidden=tuple(s["branch_hidden"]),
        trunk_hidden=tuple(s["trunk_hidden"]),
        time_scale=float(s["time_scale"]),
        activation=str(s.get("activation", "tanh")),
    )
    def layers(rows):
        ws = [np.array(r["weight"], dtype=float) for r in rows]
        bs = [np.array(r["bias"], dtype=float) for r in rows]
        return ws, bs

    bw, bb = layers(doc["branch"])
    tw, tb = layers(doc["trunk"])
    params = DeepONetParams(bw, bb, tw, tb, float(doc["bias0"]))
    expected = pack_parameters(params).size
    if expected != n_parameters(spec):
        raise ConfigError(
            f"checkpoint has {expected} parameters, spec implies {n_parameters(spec)}"
        )
    return spec, params
