"""Minimal differentiable MLP core.

Networks are plain NumPy parameter containers: a stack of fully connected
layers plus a learnable per-bin time embedding that is concatenated to the
input. Gradients are computed by hand (reverse mode) for the three
objectives this project needs: squared error, diagonal-Gaussian negative
log-likelihood, and binary cross-entropy on logits. Everything is
deterministic given a seed and works on float64 arrays.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_ACTIVATIONS = ("relu", "identity")

_CHECKPOINT_MAGIC = b"SMILNN01"


@dataclass
class ApproximatorParams:
    """Weights of one MLP: per-layer matrices/biases plus the time embedding.

    ``layer_weights[i]`` has shape (fan_out, fan_in); the first layer's
    fan_in is ``input_dim + emb_dim`` because the time-embedding row for the
    requested bin is concatenated to the input vector. ``activation`` is
    applied after every layer except the last; with ``"identity"`` the whole
    network is an affine map of its input at fixed time bin.
    """

    layer_weights: list[np.ndarray]
    layer_biases: list[np.ndarray]
    time_embedding: np.ndarray  # (n_time_bins, emb_dim)
    activation: str

    @property
    def emb_dim(self) -> int:
        return self.time_embedding.shape[1]

    @property
    def n_time_bins(self) -> int:
        return self.time_embedding.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layer_weights[0].shape[1] - self.emb_dim

    @property
    def output_dim(self) -> int:
        return self.layer_weights[-1].shape[0]

    def copy(self) -> "ApproximatorParams":
        return ApproximatorParams(
            layer_weights=[w.copy() for w in self.layer_weights],
            layer_biases=[b.copy() for b in self.layer_biases],
            time_embedding=self.time_embedding.copy(),
            activation=self.activation,
        )


@dataclass
class ParamGrads:
    """Gradient container, shape-matched to :class:`ApproximatorParams`."""

    layer_weights: list[np.ndarray]
    layer_biases: list[np.ndarray]
    time_embedding: np.ndarray


@dataclass
class OptimizerState:
    """Adam moments, shape-matched to the parameters they update."""

    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    m_embedding: np.ndarray
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    v_embedding: np.ndarray
    step_count: int = 0
    learning_rate: float = 5e-3


def init_params(
    layer_sizes: list[int],
    n_time_bins: int,
    activation: str = "relu",
    seed: int = 0,
    emb_dim: int = 16,
) -> ApproximatorParams:
    """Build a network with the given layer sizes.

    ``layer_sizes`` lists the input, hidden, and output widths as seen from
    the caller; the time embedding (``emb_dim`` learnable values per bin) is
    concatenated internally, so the first weight matrix has fan_in
    ``layer_sizes[0] + emb_dim``. Weights are uniform in
    [-1/sqrt(fan_in), +1/sqrt(fan_in)]; biases and the embedding start at
    zero. Identical (sizes, seed) always produce bit-identical parameters.
    """
    if len(layer_sizes) < 2:
        raise ValueError("layer_sizes needs at least input and output sizes")
    if any(s <= 0 for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
    if n_time_bins <= 0:
        raise ValueError(f"n_time_bins must be positive, got {n_time_bins}")
    if emb_dim < 0:
        raise ValueError(f"emb_dim must be nonnegative, got {emb_dim}")
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}, expected one of {_ACTIVATIONS}")

    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for i in range(len(layer_sizes) - 1):
        fan_in = layer_sizes[i] + (emb_dim if i == 0 else 0)
        fan_out = layer_sizes[i + 1]
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    embedding = np.zeros((n_time_bins, emb_dim))
    return ApproximatorParams(weights, biases, embedding, activation)


def zero_output_layer(params: ApproximatorParams) -> ApproximatorParams:
    """Return a copy with the last layer zeroed (output exactly 0 at init)."""
    out = params.copy()
    out.layer_weights[-1][:] = 0.0
    out.layer_biases[-1][:] = 0.0
    return out


def _check_t_bins(params: ApproximatorParams, t_bins: np.ndarray) -> None:
    if t_bins.min() < 0 or t_bins.max() >= params.n_time_bins:
        raise ValueError(
            f"time bin out of range [0, {params.n_time_bins}): "
            f"got [{t_bins.min()}, {t_bins.max()}]"
        )


def _forward_cached(params, X: np.ndarray, t_bins: np.ndarray):
    """Forward pass over a batch, keeping the per-layer cache for backprop."""
    n = X.shape[0]
    if X.shape[1] != params.input_dim:
        raise ValueError(
            f"input dim {X.shape[1]} does not match network input {params.input_dim}"
        )
    t_bins = np.broadcast_to(np.asarray(t_bins, dtype=np.intp), (n,))
    _check_t_bins(params, t_bins)
    if params.emb_dim > 0:
        h = np.concatenate([X, params.time_embedding[t_bins]], axis=1)
    else:
        h = X
    pre_acts = []
    post_acts = [h]
    n_layers = len(params.layer_weights)
    for i, (W, b) in enumerate(zip(params.layer_weights, params.layer_biases)):
        a = post_acts[-1] @ W.T + b
        pre_acts.append(a)
        if i < n_layers - 1 and params.activation == "relu":
            post_acts.append(np.maximum(a, 0.0))
        else:
            post_acts.append(a)
    return post_acts[-1], (t_bins, pre_acts, post_acts)


def forward_batch(params: ApproximatorParams, X: np.ndarray, t_bins) -> np.ndarray:
    """Evaluate the network on a batch of rows; pure function of its inputs.

    Inference-only path: writes matmuls into preallocated buffers and applies
    the activation in place, which matters at the row counts the cost
    estimator uses. Gradient paths go through :func:`_forward_cached`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if X.shape[1] != params.input_dim:
        raise ValueError(
            f"input dim {X.shape[1]} does not match network input {params.input_dim}"
        )
    t_bins = np.broadcast_to(np.asarray(t_bins, dtype=np.intp), (n,))
    _check_t_bins(params, t_bins)
    if params.emb_dim > 0:
        h = np.empty((n, X.shape[1] + params.emb_dim))
        h[:, :X.shape[1]] = X
        h[:, X.shape[1]:] = params.time_embedding[t_bins]
    else:
        h = X
    n_layers = len(params.layer_weights)
    for i, (W, b) in enumerate(zip(params.layer_weights, params.layer_biases)):
        a = np.empty((n, W.shape[0]))
        np.dot(h, W.T, out=a)
        a += b
        if i < n_layers - 1 and params.activation == "relu":
            np.maximum(a, 0.0, out=a)
        h = a
    return h


def forward_batch_f32(params: ApproximatorParams, X: np.ndarray, t_bins) -> np.ndarray:
    """Single-precision variant of :func:`forward_batch`.

    Used by the Monte-Carlo cost estimator, where batches run to millions of
    rows and the ~1e-7 relative rounding is far below the estimator's own
    noise. Exactness-sensitive callers use the double-precision paths.
    """
    X = np.atleast_2d(np.asarray(X))
    n = X.shape[0]
    if X.shape[1] != params.input_dim:
        raise ValueError(
            f"input dim {X.shape[1]} does not match network input {params.input_dim}"
        )
    t_bins = np.broadcast_to(np.asarray(t_bins, dtype=np.intp), (n,))
    _check_t_bins(params, t_bins)
    h = np.empty((n, X.shape[1] + params.emb_dim), dtype=np.float32)
    h[:, :X.shape[1]] = X
    if params.emb_dim > 0:
        h[:, X.shape[1]:] = params.time_embedding[t_bins]
    n_layers = len(params.layer_weights)
    for i, (W, b) in enumerate(zip(params.layer_weights, params.layer_biases)):
        a = np.empty((n, W.shape[0]), dtype=np.float32)
        np.dot(h, W.T.astype(np.float32), out=a)
        a += b.astype(np.float32)
        if i < n_layers - 1 and params.activation == "relu":
            np.maximum(a, 0.0, out=a)
        h = a
    return h


def forward(params: ApproximatorParams, x: np.ndarray, t_bin: int) -> np.ndarray:
    """Single-input forward pass; returns a vector of ``output_dim``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d input vector, got shape {x.shape}")
    return forward_batch(params, x[None, :], np.array([t_bin]))[0]


def backward_from_output(params: ApproximatorParams, cache, dY: np.ndarray) -> ParamGrads:
    """Reverse-mode gradients given dLoss/dOutput for the cached batch."""
    t_bins, pre_acts, post_acts = cache
    n_layers = len(params.layer_weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    delta = dY
    for i in range(n_layers - 1, -1, -1):
        dW[i] = delta.T @ post_acts[i]
        db[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params.layer_weights[i]
            if params.activation == "relu":
                delta = delta * (pre_acts[i - 1] > 0)
    d_emb = np.zeros_like(params.time_embedding)
    if params.emb_dim > 0:
        d_input = delta @ params.layer_weights[0]
        np.add.at(d_emb, t_bins, d_input[:, params.input_dim:])
    return ParamGrads(dW, db, d_emb)


def sq_loss_grad(params: ApproximatorParams, batch) -> tuple[float, ParamGrads]:
    """Mean squared-norm regression loss and its exact gradients.

    ``batch`` is a nonempty list of (x, t_bin, target) triples; the loss is
    mean over the batch of ||forward(x, t_bin) - target||^2.
    """
    if len(batch) == 0:
        raise ValueError("sq_loss_grad requires a nonempty batch")
    X = np.stack([np.asarray(x, dtype=float) for x, _, _ in batch])
    t_bins = np.array([t for _, t, _ in batch], dtype=np.intp)
    targets = np.stack([np.asarray(tg, dtype=float) for _, _, tg in batch])
    return sq_loss_grad_arrays(params, X, t_bins, targets)


def sq_loss_grad_arrays(params, X, t_bins, targets) -> tuple[float, ParamGrads]:
    """Array form of :func:`sq_loss_grad` used by the training loops."""
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if targets.shape != (X.shape[0], params.output_dim):
        raise ValueError(
            f"target shape {targets.shape} does not match (batch, {params.output_dim})"
        )
    Y, cache = _forward_cached(params, X, t_bins)
    resid = Y - targets
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    dY = 2.0 * resid / X.shape[0]
    return loss, backward_from_output(params, cache, dY)


def gaussian_nll_grad(params, log_std: np.ndarray, X, actions):
    """Diagonal-Gaussian negative log-likelihood of ``actions`` given ``X``.

    The network predicts the mean; ``log_std`` is a free per-dimension
    vector. Returns (nll, mean-net grads, d nll / d log_std).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    n = X.shape[0]
    mu, cache = _forward_cached(params, X, np.zeros(n, dtype=np.intp))
    std = np.exp(log_std)
    z = (actions - mu) / std
    nll = float(np.mean(np.sum(0.5 * z**2 + log_std + 0.5 * np.log(2 * np.pi), axis=1)))
    d_mu = (mu - actions) / std**2 / n
    grads = backward_from_output(params, cache, d_mu)
    d_log_std = np.sum(1.0 - z**2, axis=0) / n
    return nll, grads, d_log_std


def bce_logits_grad(params, X, labels) -> tuple[float, ParamGrads]:
    """Binary cross-entropy on the network's scalar logit output."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=float).reshape(-1, 1)
    n = X.shape[0]
    logits, cache = _forward_cached(params, X, np.zeros(n, dtype=np.intp))
    p = 1.0 / (1.0 + np.exp(-logits))
    eps = 1e-12
    loss = float(-np.mean(labels * np.log(p + eps) + (1 - labels) * np.log(1 - p + eps)))
    dLogits = (p - labels) / n
    return loss, backward_from_output(params, cache, dLogits)


def init_opt(params: ApproximatorParams, learning_rate: float = 5e-3) -> OptimizerState:
    return OptimizerState(
        m_weights=[np.zeros_like(w) for w in params.layer_weights],
        m_biases=[np.zeros_like(b) for b in params.layer_biases],
        m_embedding=np.zeros_like(params.time_embedding),
        v_weights=[np.zeros_like(w) for w in params.layer_weights],
        v_biases=[np.zeros_like(b) for b in params.layer_biases],
        v_embedding=np.zeros_like(params.time_embedding),
        step_count=0,
        learning_rate=learning_rate,
    )


def adam_update_array(x, g, m, v, step, lr):
    """One Adam update on a single array; returns (x', m', v')."""
    m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
    v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g**2
    m_hat = m / (1 - ADAM_BETA1**step)
    v_hat = v / (1 - ADAM_BETA2**step)
    return x - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS), m, v


def adam_step(
    params: ApproximatorParams, grads: ParamGrads, opt: OptimizerState
) -> tuple[ApproximatorParams, OptimizerState]:
    """Standard Adam update; returns fresh parameter and optimizer values."""
    step = opt.step_count + 1
    new_w, new_mw, new_vw = [], [], []
    for x, g, m, v in zip(params.layer_weights, grads.layer_weights, opt.m_weights, opt.v_weights):
        x2, m2, v2 = adam_update_array(x, g, m, v, step, opt.learning_rate)
        new_w.append(x2)
        new_mw.append(m2)
        new_vw.append(v2)
    new_b, new_mb, new_vb = [], [], []
    for x, g, m, v in zip(params.layer_biases, grads.layer_biases, opt.m_biases, opt.v_biases):
        x2, m2, v2 = adam_update_array(x, g, m, v, step, opt.learning_rate)
        new_b.append(x2)
        new_mb.append(m2)
        new_vb.append(v2)
    emb, m_emb, v_emb = adam_update_array(
        params.time_embedding, grads.time_embedding, opt.m_embedding, opt.v_embedding,
        step, opt.learning_rate,
    )
    new_params = ApproximatorParams(new_w, new_b, emb, params.activation)
    new_opt = OptimizerState(
        new_mw, new_mb, m_emb, new_vw, new_vb, v_emb, step, opt.learning_rate
    )
    return new_params, new_opt


def flatten_params(params: ApproximatorParams) -> np.ndarray:
    parts = [w.ravel() for w in params.layer_weights]
    parts += [b.ravel() for b in params.layer_biases]
    parts.append(params.time_embedding.ravel())
    return np.concatenate(parts)


def flatten_grads(grads: ParamGrads) -> np.ndarray:
    parts = [w.ravel() for w in grads.layer_weights]
    parts += [b.ravel() for b in grads.layer_biases]
    parts.append(grads.time_embedding.ravel())
    return np.concatenate(parts)


def set_flat_params(params: ApproximatorParams, flat: np.ndarray) -> ApproximatorParams:
    """Inverse of :func:`flatten_params` (used by finite-difference checks)."""
    out = params.copy()
    i = 0
    for w in out.layer_weights:
        w[:] = flat[i:i + w.size].reshape(w.shape)
        i += w.size
    for b in out.layer_biases:
        b[:] = flat[i:i + b.size].reshape(b.shape)
        i += b.size
    out.time_embedding[:] = flat[i:i + out.time_embedding.size].reshape(
        out.time_embedding.shape
    )
    return out


def write_params(f, params: ApproximatorParams) -> None:
    """Serialize parameters to an open binary file.

    Layout (little-endian): 8-byte magic, u8 activation code, u32 layer
    count L, u32 n_time_bins, u32 emb_dim, L pairs of u32 (fan_out, fan_in),
    then row-major float64 data: each weight matrix, each bias vector, and
    the time embedding. Round-trips bit-exactly.
    """
    act_code = _ACTIVATIONS.index(params.activation)
    f.write(_CHECKPOINT_MAGIC)
    f.write(struct.pack("<BIII", act_code, len(params.layer_weights),
                        params.n_time_bins, params.emb_dim))
    for w in params.layer_weights:
        f.write(struct.pack("<II", w.shape[0], w.shape[1]))
    for w in params.layer_weights:
        f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    for b in params.layer_biases:
        f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    f.write(np.ascontiguousarray(params.time_embedding, dtype="<f8").tobytes())


def read_params(f) -> ApproximatorParams:
    magic = f.read(8)
    if magic != _CHECKPOINT_MAGIC:
        raise ValueError(f"not a network checkpoint (bad magic {magic!r})")
    act_code, n_layers, n_time_bins, emb_dim = struct.unpack("<BIII", f.read(13))
    shapes = [struct.unpack("<II", f.read(8)) for _ in range(n_layers)]
    weights = []
    for out_d, in_d in shapes:
        buf = f.read(out_d * in_d * 8)
        weights.append(np.frombuffer(buf, dtype="<f8").reshape(out_d, in_d).copy())
    biases = []
    for out_d, _ in shapes:
        biases.append(np.frombuffer(f.read(out_d * 8), dtype="<f8").copy())
    emb = np.frombuffer(f.read(n_time_bins * emb_dim * 8), dtype="<f8")
    emb = emb.reshape(n_time_bins, emb_dim).copy()
    return ApproximatorParams(weights, biases, emb, _ACTIVATIONS[act_code])


def save_params(path, params: ApproximatorParams) -> None:
    """Write a network checkpoint file (see :func:`write_params` for layout)."""
    with open(path, "wb") as f:
        write_params(f, params)


def load_params(path) -> ApproximatorParams:
    try:
        with open(path, "rb") as f:
            return read_params(f)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from None
