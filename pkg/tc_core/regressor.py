"""
Feedforward heading regressor f(x) -> (cos, sin) with exact analytic gradients
and a functional Adam optimiser.

Parameters are immutable snapshots: step() returns new arrays rather than
updating in place, so one snapshot can be shared by concurrent loss_and_grad calls.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

import config
from tc_core.angular import HeadingEncoding
from tc_core.errors import CheckpointFormatError, ShapeMismatchError, TrainingDivergedError
from tc_core.losses import combined_loss, continuity_loss_with_grad, supervised_loss_with_grad
from tc_core.models import LossConfig, OptimizerConfig, RegressorConfig
from utils.formatting import LineDecodeError, PathLike, array_to_lines, atomic_write_text, read_text

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegressorParams:
    """Per-layer weights (out, in) and biases (out,), input layer first."""
    config: RegressorConfig
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[1])

    def arrays(self) -> List[np.ndarray]:
        """Weights and biases interleaved in declared order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def param_count(self) -> int:
        return int(sum(a.size for a in self.arrays()))


@dataclass(frozen=True)
class GradientSet:
    """d(loss)/d(params), same layout as RegressorParams."""
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    supervised: float
    continuity: float


@dataclass(frozen=True)
class OptimizerState:
    """Adam moment accumulators (interleaved like RegressorParams.arrays()) and step counter."""
    first_moment: Tuple[np.ndarray, ...]
    second_moment: Tuple[np.ndarray, ...]
    step_count: int = 0
    learning_rate: float = config.LEARNING_RATE
    beta1: float = config.BETA1
    beta2: float = config.BETA2
    epsilon: float = config.EPSILON


def _check_shapes(params: RegressorParams) -> None:
    dims = params.config.layer_dims
    if len(params.weights) != len(dims) - 1 or len(params.biases) != len(dims) - 1:
        raise ShapeMismatchError(f"expected {len(dims) - 1} layers for dims {dims}")
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (dims[k + 1], dims[k]) or b.shape != (dims[k + 1],):
            raise ShapeMismatchError(
                f"layer {k}: got W{w.shape} b{b.shape}, expected W{(dims[k + 1], dims[k])} b{(dims[k + 1],)}"
            )


def init(cfg: RegressorConfig) -> RegressorParams:
    """
    Seeded initialisation: W ~ U(-1, 1) * init_scale / sqrt(fan_in), b = 0.

    Args:
        cfg: model configuration; cfg.seed fully determines the result

    Returns:
        RegressorParams
    """
    dims = cfg.layer_dims
    if any(d < 1 for d in dims):
        raise ValueError(f"zero-dimension layer in {dims}")
    rng = np.random.default_rng(cfg.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.uniform(-1.0, 1.0, size=(fan_out, fan_in)) * (cfg.init_scale / math.sqrt(fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out, dtype=np.float64))
    logger.debug(f"Initialised regressor dims={dims} seed={cfg.seed}")
    return RegressorParams(cfg, tuple(weights), tuple(biases))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def _as_batch(params: RegressorParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeMismatchError(f"expected inputs of dim {params.input_dim}, got shape {x.shape}")
    return x


def _forward_cache(params: RegressorParams, x: np.ndarray):
    activation = params.config.activation
    zs, acts = [], [x]
    a = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        a = z if k == last else _activate(z, activation)
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward_batch(params: RegressorParams, x) -> np.ndarray:
    """(n, input_dim) -> (n, 2) raw outputs."""
    x = _as_batch(params, x)
    return _forward_cache(params, x)[1][-1]


def forward(params: RegressorParams, x) -> HeadingEncoding:
    """Single feature vector -> raw (c, s), not normalised."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatchError(f"forward expects one feature vector, got shape {x.shape}")
    out = forward_batch(params, x)[0]
    return HeadingEncoding(float(out[0]), float(out[1]))


def _backward(params: RegressorParams, zs, acts, d_out: np.ndarray) -> GradientSet:
    activation = params.config.activation
    n_layers = len(params.weights)
    grad_w: List[Optional[np.ndarray]] = [None] * n_layers
    grad_b: List[Optional[np.ndarray]] = [None] * n_layers
    dz = d_out
    for k in range(n_layers - 1, -1, -1):
        grad_w[k] = dz.T @ acts[k]
        grad_b[k] = dz.sum(axis=0)
        if k > 0:
            da = dz @ params.weights[k]
            dz = da * _activation_grad(zs[k - 1], acts[k], activation)
    return GradientSet(tuple(grad_w), tuple(grad_b))


def _unpack_sequence(sequence):
    if sequence is None:
        return None, None
    if hasattr(sequence, "frames") and hasattr(sequence, "features"):
        return np.asarray(sequence.frames, dtype=np.int64), np.asarray(sequence.features, dtype=np.float64)
    frames, features = sequence
    return np.asarray(frames, dtype=np.int64), np.asarray(features, dtype=np.float64)


def loss_and_grad(params: RegressorParams, labeled_batch, unlabeled_sequence, loss_config: LossConfig,
                  triplets: Optional[np.ndarray] = None) -> Tuple[LossBreakdown, GradientSet]:
    """
    Combined loss on one labeled batch and one unlabeled window, with exact gradients.

    Args:
        params: model snapshot
        labeled_batch: (features (n, d), labels (n, 2)); may be None when supervised_weight == 0
        unlabeled_sequence: object with .frames/.features or a (frames, features) tuple;
            ignored when lambda == 0
        loss_config: loss hyperparameters
        triplets: index triples for the triplet variant (exhaustive when None)

    Returns:
        (LossBreakdown, GradientSet)
    """
    _check_shapes(params)
    use_supervised = loss_config.supervised_weight > 0
    use_continuity = loss_config.lambda_ > 0

    blocks = []
    if use_supervised:
        if labeled_batch is None:
            raise ValueError("labeled batch is required when supervised_weight > 0")
        x_lab, y_lab = labeled_batch
        x_lab = _as_batch(params, x_lab)
        y_lab = np.asarray(y_lab, dtype=np.float64).reshape(-1, 2)
        if len(x_lab) == 0:
            raise ValueError("labeled batch is empty")
        if len(y_lab) != len(x_lab):
            raise ShapeMismatchError(f"{len(x_lab)} labeled inputs vs {len(y_lab)} labels")
        blocks.append(x_lab)

    frames = x_seq = None
    if use_continuity:
        frames, x_seq = _unpack_sequence(unlabeled_sequence)
        if x_seq is None or len(x_seq) == 0:
            raise ValueError("lambda > 0 requires a non-empty unlabeled sequence")
        x_seq = _as_batch(params, x_seq)
        blocks.append(x_seq)

    if not blocks:
        zero = GradientSet(tuple(np.zeros_like(w) for w in params.weights),
                           tuple(np.zeros_like(b) for b in params.biases))
        return LossBreakdown(0.0, 0.0, 0.0), zero

    x_all = np.concatenate(blocks, axis=0)
    zs, acts = _forward_cache(params, x_all)
    out = acts[-1]
    d_out = np.zeros_like(out)

    sup = 0.0
    offset = 0
    if use_supervised:
        n_lab = len(x_lab)
        sup, d_sup = supervised_loss_with_grad(out[:n_lab], y_lab)
        d_out[:n_lab] += loss_config.supervised_weight * d_sup
        offset = n_lab

    cont = 0.0
    if use_continuity:
        cont, d_cont = continuity_loss_with_grad(out[offset:], frames, loss_config, triplets)
        d_out[offset:] += loss_config.lambda_ * d_cont

    if not (math.isfinite(sup) and math.isfinite(cont)):
        raise TrainingDivergedError(f"non-finite loss (supervised={sup}, continuity={cont})")
    total = combined_loss(sup, cont, loss_config.lambda_, loss_config.supervised_weight)
    return LossBreakdown(total, sup, cont), _backward(params, zs, acts, d_out)


def init_optimizer(params: RegressorParams, opt: Optional[OptimizerConfig] = None) -> OptimizerState:
    opt = opt or OptimizerConfig()
    zeros = tuple(np.zeros_like(a) for a in params.arrays())
    return OptimizerState(
        first_moment=zeros,
        second_moment=tuple(np.zeros_like(a) for a in params.arrays()),
        step_count=0,
        learning_rate=opt.learning_rate,
        beta1=opt.beta1,
        beta2=opt.beta2,
        epsilon=opt.epsilon,
    )


def step(params: RegressorParams, grads: GradientSet, state: OptimizerState) -> Tuple[RegressorParams, OptimizerState]:
    """One Adam update; returns new params and state."""
    values = params.arrays()
    g_arrays = grads.arrays()
    if len(g_arrays) != len(values) or len(state.first_moment) != len(values):
        raise ShapeMismatchError("gradient/optimizer layout does not match params")
    for v, g, m in zip(values, g_arrays, state.first_moment):
        if g.shape != v.shape or m.shape != v.shape:
            raise ShapeMismatchError(f"shape mismatch: param {v.shape}, grad {g.shape}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient passed to optimizer step")

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_values, new_m, new_v = [], [], []
    for v, g, m, s in zip(values, g_arrays, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        s = b2 * s + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        s_hat = s / (1.0 - b2 ** t)
        new_values.append(v - state.learning_rate * m_hat / (np.sqrt(s_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(s)

    new_params = RegressorParams(params.config, tuple(new_values[0::2]), tuple(new_values[1::2]))
    new_state = OptimizerState(tuple(new_m), tuple(new_v), t, state.learning_rate, b1, b2, state.epsilon)
    return new_params, new_state


def check_compatible(params: RegressorParams, input_dim: int) -> None:
    if params.input_dim != input_dim:
        raise ShapeMismatchError(f"model expects {params.input_dim} features, data has {input_dim}")


# ---- Checkpoints ----

def save_checkpoint(path: PathLike, params: RegressorParams) -> None:
    """Text checkpoint: format line, config echo, then every array in declared order."""
    cfg = params.config
    lines = [
        config.CHECKPOINT_FORMAT,
        f"input_dim={cfg.input_dim}",
        f"hidden_dims={','.join(str(h) for h in cfg.hidden_dims)}",
        f"activation={cfg.activation}",
        f"init_scale={cfg.init_scale!r}",
        f"seed={cfg.seed}",
        f"layers={len(params.weights)}",
    ]
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"array W{k} {w.shape[0]} {w.shape[1]}")
        lines.extend(array_to_lines(w))
        lines.append(f"array b{k} {b.shape[0]}")
        lines.extend(array_to_lines(b))
    lines.append("end")
    atomic_write_text(path, "\n".join(lines) + "\n")
    logger.info(f"Saved checkpoint ({params.param_count()} parameters) to {path}")


def load_checkpoint(path: PathLike) -> RegressorParams:
    try:
        text = read_text(path)
    except LineDecodeError as e:
        raise CheckpointFormatError(str(e)) from e
    lines = text.splitlines()
    if not lines or lines[0].strip() != config.CHECKPOINT_FORMAT:
        raise CheckpointFormatError(f"{path}: missing '{config.CHECKPOINT_FORMAT}' header")

    pos = 1
    header = {}
    try:
        while pos < len(lines) and not lines[pos].startswith("array"):
            key, value = lines[pos].split("=", 1)
            header[key.strip()] = value.strip()
            pos += 1
        hidden = [int(h) for h in header["hidden_dims"].split(",") if h]
        cfg = RegressorConfig(
            input_dim=int(header["input_dim"]),
            hidden_dims=hidden,
            activation=header["activation"],
            init_scale=float(header["init_scale"]),
            seed=int(header["seed"]),
        )
        n_layers = int(header["layers"])

        def read_array(expected_name: str) -> np.ndarray:
            nonlocal pos
            parts = lines[pos].split()
            if parts[0] != "array" or parts[1] != expected_name:
                raise CheckpointFormatError(f"{path}:{pos + 1}: expected array {expected_name}")
            shape = tuple(int(p) for p in parts[2:])
            rows = shape[0] if len(shape) == 2 else 1
            values = []
            for r in range(rows):
                values.append([float(v) for v in lines[pos + 1 + r].split(",")])
            pos += 1 + rows
            return np.array(values, dtype=np.float64).reshape(shape)

        weights, biases = [], []
        for k in range(n_layers):
            weights.append(read_array(f"W{k}"))
            biases.append(read_array(f"b{k}"))
        if pos >= len(lines) or lines[pos].strip() != "end":
            raise CheckpointFormatError(f"{path}: missing end marker (truncated file?)")
    except CheckpointFormatError:
        raise
    except (KeyError, ValueError, IndexError) as e:
        raise CheckpointFormatError(f"{path}:{pos + 1}: {e}") from e

    params = RegressorParams(cfg, tuple(weights), tuple(biases))
    try:
        _check_shapes(params)
    except ShapeMismatchError as e:
        raise CheckpointFormatError(f"{path}: {e}") from e
    if not all(np.all(np.isfinite(a)) for a in params.arrays()):
        raise CheckpointFormatError(f"{path}: non-finite parameter values")
    return params

