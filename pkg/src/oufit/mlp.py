"""A small NumPy multilayer perceptron that regresses (mu, theta, sigma) from a path.

Hidden layers use ReLU, the 3-unit output is linear and ordered
``[mu, theta, sigma]``. Weights are Glorot-uniform, training is Adam on the
mean squared error between predicted and true parameters. Everything is
float64 so finite-difference gradient checks are meaningful.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from ._io import atomic_write
from .classical import EstimateReport
from .core import OUParams, TimeGrid, simulate
from .errors import InvalidConfig, ShapeMismatch, TooShort

log = logging.getLogger(__name__)

OUTPUTS = ("mu", "theta", "sigma")
CLAMP_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class MLPModel:
    layer_dims: tuple
    weights: list
    biases: list
    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step: int = 0

    @property
    def feature_len(self):
        return self.layer_dims[0] - 1

    def __eq__(self, other):
        if not isinstance(other, MLPModel):
            return NotImplemented
        if self.layer_dims != other.layer_dims or self.step != other.step:
            return False
        mine = self.weights + self.biases + self.m_w + self.v_w + self.m_b + self.v_b
        theirs = other.weights + other.biases + other.m_w + other.v_w + other.m_b + other.v_b
        return all(np.array_equal(a, b) for a, b in zip(mine, theirs))


def _check_dims(layer_dims):
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ShapeMismatch(f"invalid layer dims {layer_dims!r}")
    if dims[-1] != 3:
        raise ShapeMismatch(f"output layer must have 3 units, got {dims[-1]}")
    return dims


def _zeros_like(arrays):
    return [np.zeros_like(a) for a in arrays]


def glorot_init(layer_dims, seed):
    dims = _check_dims(layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPModel(dims, weights, biases, _zeros_like(weights), _zeros_like(weights),
                    _zeros_like(biases), _zeros_like(biases), 0)


def resample_indices(n_steps, feature_len):
    """Indices ``round(i*N/(L-1))`` for i = 0..L-1, rounding halves up."""
    i = np.arange(feature_len, dtype=np.int64)
    return (2 * i * n_steps + (feature_len - 1)) // (2 * (feature_len - 1))


def featurize(path, grid, feature_len):
    """L strided samples of one trajectory followed by the sampling interval."""
    path = np.asarray(path, dtype=np.float64)
    if feature_len < 2:
        raise InvalidConfig(f"feature_len must be >= 2, got {feature_len}")
    if path.shape != (grid.n_steps + 1,):
        raise ShapeMismatch(f"path has shape {path.shape}, grid expects ({grid.n_steps + 1},)")
    if grid.n_steps + 1 < feature_len:
        raise TooShort(f"trajectory has {grid.n_steps + 1} points, fewer than feature_len={feature_len}")
    idx = resample_indices(grid.n_steps, feature_len)
    return np.append(path[idx], grid.dt * grid.n_steps / (feature_len - 1))


def featurize_paths(paths, feature_len):
    """Feature matrix with one row per path of a PathSet."""
    grid = paths.grid
    if grid.n_steps + 1 < feature_len:
        raise TooShort(f"trajectory has {grid.n_steps + 1} points, fewer than feature_len={feature_len}")
    idx = resample_indices(grid.n_steps, feature_len)
    gap = np.full((paths.n_paths, 1), grid.dt * grid.n_steps / (feature_len - 1))
    return np.hstack([paths.values[:, idx], gap])


def forward(model, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ShapeMismatch(f"batch shape {x.shape} does not match input width {model.layer_dims[0]}")
    cache = []
    a = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        cache.append((a, z))
        a = z if l == last else np.maximum(z, 0.0)
    return a, cache


def loss_and_backward(model, batch, targets):
    """MSE over batch and outputs, with exact gradients for every weight and bias."""
    targets = np.asarray(targets, dtype=np.float64)
    pred, cache = forward(model, batch)
    if targets.shape != pred.shape:
        raise ShapeMismatch(f"targets shape {targets.shape} != predictions shape {pred.shape}")
    diff = pred - targets
    loss = float(np.mean(diff * diff))
    dz = 2.0 * diff / diff.size
    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        a_in, _ = cache[l]
        grad_w[l] = dz.T @ a_in
        grad_b[l] = dz.sum(axis=0)
        if l > 0:
            dz = (dz @ model.weights[l]) * (cache[l - 1][1] > 0)
    return loss, (grad_w, grad_b)


def adam_step(model, gradients, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update; returns a new model."""
    grad_w, grad_b = gradients
    b1, b2 = betas
    t = model.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t

    def update(params, grads, ms, vs):
        new_p, new_m, new_v = [], [], []
        for p, g, m, v in zip(params, grads, ms, vs):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
            new_m.append(m)
            new_v.append(v)
        return new_p, new_m, new_v

    w, m_w, v_w = update(model.weights, grad_w, model.m_w, model.v_w)
    b, m_b, v_b = update(model.biases, grad_b, model.m_b, model.v_b)
    return MLPModel(model.layer_dims, w, b, m_w, v_w, m_b, v_b, t)


@dataclass(frozen=True)
class TrainConfig:
    theta_range: tuple = (0.5, 10.0)
    mu_range: tuple = (-1.0, 2.0)
    sigma_range: tuple = (0.1, 2.0)
    x0_range: tuple = (-1.0, 2.0)
    # each instance draws its grid from these choices (the benchmark cells)
    n_steps_choices: tuple = (1000, 5000)
    horizon_choices: tuple = (1.0, 5.0)
    n_train: int = 20000
    n_val: int = 2000
    feature_len: int = 100
    hidden: tuple = (128, 128)
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        for name in ("theta_range", "mu_range", "sigma_range", "x0_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise InvalidConfig(f"{name} must be a finite (low, high) pair, got {(lo, hi)!r}")
        if self.theta_range[0] <= 0 or self.sigma_range[0] <= 0:
            raise InvalidConfig("theta_range and sigma_range need positive lower bounds")
        if self.n_train < 1 or self.n_val < 1:
            raise InvalidConfig(f"n_train and n_val must be >= 1, got {self.n_train}, {self.n_val}")
        if self.feature_len < 2:
            raise InvalidConfig(f"feature_len must be >= 2, got {self.feature_len}")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidConfig("batch_size must be >= 1 and epochs >= 0")
        if not self.n_steps_choices or not self.horizon_choices:
            raise InvalidConfig("n_steps_choices and horizon_choices must be non-empty")
        if min(self.n_steps_choices) + 1 < self.feature_len:
            raise InvalidConfig("every n_steps choice must give at least feature_len points")
        if any(h <= 0 for h in self.horizon_choices):
            raise InvalidConfig("horizon choices must be positive")
        if not (self.learning_rate > 0 and self.adam_eps > 0):
            raise InvalidConfig("learning_rate and adam_eps must be positive")
        if not all(0 <= b < 1 for b in self.adam_betas):
            raise InvalidConfig("adam_betas must lie in [0, 1)")

    @property
    def layer_dims(self):
        return (self.feature_len + 1, *self.hidden, 3)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float


def make_dataset(config, n, seed):
    """Simulate ``n`` single-path instances with parameters drawn from the priors.

    Returns ``(features, targets)`` with targets ordered ``[mu, theta, sigma]``.
    """
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    draw_ss, sim_ss = seed.spawn(2)
    rng = np.random.default_rng(draw_ss)
    theta = rng.uniform(*config.theta_range, size=n)
    mu = rng.uniform(*config.mu_range, size=n)
    sigma = rng.uniform(*config.sigma_range, size=n)
    x0 = rng.uniform(*config.x0_range, size=n)
    steps = rng.choice(np.asarray(config.n_steps_choices), size=n)
    horizons = rng.choice(np.asarray(config.horizon_choices, dtype=np.float64), size=n)
    sim_seeds = sim_ss.generate_state(n, dtype=np.uint64) >> np.uint64(1)

    features = np.empty((n, config.feature_len + 1))
    for i in range(n):
        params = OUParams(float(theta[i]), float(mu[i]), float(sigma[i]), float(x0[i]), float(horizons[i]))
        grid = TimeGrid.from_horizon(params.horizon, int(steps[i]))
        path = simulate(params, grid, 1, int(sim_seeds[i]))
        features[i] = featurize(path.values[0], grid, config.feature_len)
    return features, np.column_stack([mu, theta, sigma])


def mse(model, features, targets):
    pred, _ = forward(model, features)
    return float(np.mean((pred - targets) ** 2))


def train(config, *, data=None):
    """Train on simulated instances; returns ``(best_model, history)``.

    ``history[0]`` is the untrained model (epoch 0); each later row is one
    pass over the training set. The returned model is the one with the
    lowest validation loss. ``data`` may supply precomputed
    ``(train_x, train_y, val_x, val_y)`` arrays.
    """
    train_ss, val_ss, init_ss, shuffle_ss = np.random.SeedSequence(config.seed).spawn(4)
    if data is None:
        train_x, train_y = make_dataset(config, config.n_train, train_ss)
        val_x, val_y = make_dataset(config, config.n_val, val_ss)
    else:
        train_x, train_y, val_x, val_y = data
    model = glorot_init(config.layer_dims, init_ss)
    rng = np.random.default_rng(shuffle_ss)

    history = [HistoryRow(0, mse(model, train_x, train_y), mse(model, val_x, val_y))]
    best, best_val = model, history[0].val_loss
    n = train_x.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_backward(model, train_x[idx], train_y[idx])
            model = adam_step(model, grads, config.learning_rate, config.adam_betas, config.adam_eps)
            total += loss * idx.size
        if not all(np.all(np.isfinite(w)) for w in model.weights + model.biases):
            raise FloatingPointError(f"non-finite weights after epoch {epoch}")
        row = HistoryRow(epoch, total / n, mse(model, val_x, val_y))
        history.append(row)
        log.info("epoch %d train %.6g val %.6g", epoch, row.train_loss, row.val_loss)
        if row.val_loss < best_val:
            best, best_val = model, row.val_loss
    return best, history


def predict_params(model, paths):
    """Average per-path network outputs, clamping theta and sigma at 1e-6."""
    features = featurize_paths(paths, model.feature_len)
    pred, _ = forward(model, features)
    mu, theta, sigma = (float(v) for v in pred.mean(axis=0))
    return EstimateReport(
        method="NN",
        mu_hat=mu,
        theta_hat=max(theta, CLAMP_FLOOR),
        sigma_hat=max(sigma, CLAMP_FLOOR),
        diagnostics={"raw_theta": theta, "raw_sigma": sigma, "n_paths": paths.n_paths},
    )


def save_checkpoint(model, path, config=None):
    meta = {
        "format": "oufit-mlp/1",
        "layer_dims": list(model.layer_dims),
        "feature_len": model.feature_len,
        "outputs": list(OUTPUTS),
        "config_sha256": config.digest() if config is not None else None,
        "config": json.loads(config.to_json()) if config is not None else None,
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{l}"] = w
        arrays[f"b{l}"] = b
    with atomic_write(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        dims = _check_dims(meta["layer_dims"])
        weights = [data[f"W{l}"].astype(np.float64) for l in range(len(dims) - 1)]
        biases = [data[f"b{l}"].astype(np.float64) for l in range(len(dims) - 1)]
    for l, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
            raise ShapeMismatch(f"checkpoint layer {l} has shapes {w.shape}, {b.shape}")
    model = MLPModel(dims, weights, biases, _zeros_like(weights), _zeros_like(weights),
                     _zeros_like(biases), _zeros_like(biases), 0)
    return model, meta


def write_history(history, path):
    with atomic_write(path, newline="") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in history:
            fh.write(f"{row.epoch},{row.train_loss!r},{row.val_loss!r}\n")
