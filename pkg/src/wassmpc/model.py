"""Online one-hidden-layer dynamics model trained on the episode buffer.

The network maps a normalized (state, input) pair to the normalized next
state, plus an optional extra output channel for plants whose constraint
output has direct input feedthrough (the battery voltage).  Snapshots are
immutable; training returns a new snapshot and never reports a loss above
the incoming one.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

_SNAPSHOT_MAGIC = b"WZM1"


@dataclass(frozen=True)
class NetworkTopology:
    """Layer sizes; hidden layer uses sigmoid, output layer is linear."""

    input_dim: int
    output_dim: int
    hidden: int = 10

    def __post_init__(self) -> None:
        if min(self.input_dim, self.output_dim, self.hidden) < 1:
            raise ValueError("network dimensions must be positive")

    @property
    def n_params(self) -> int:
        return (self.input_dim + 1) * self.hidden + (self.hidden + 1) * self.output_dim


@dataclass(frozen=True)
class Normalization:
    """Per-dimension shift/scale applied to network inputs and outputs."""

    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray

    @classmethod
    def identity(cls, input_dim: int, output_dim: int) -> "Normalization":
        return cls(
            in_mean=np.zeros(input_dim),
            in_scale=np.ones(input_dim),
            out_mean=np.zeros(output_dim),
            out_scale=np.ones(output_dim),
        )

    def normalize_in(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.in_mean) / self.in_scale

    def denormalize_out(self, normed: np.ndarray) -> np.ndarray:
        return normed * self.out_scale + self.out_mean

    def normalize_out(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.out_mean) / self.out_scale


def _unpack(topology: NetworkTopology, theta: np.ndarray):
    i, h, o = topology.input_dim, topology.hidden, topology.output_dim
    k = 0
    w1 = theta[k : k + h * i].reshape(h, i); k += h * i
    b1 = theta[k : k + h]; k += h
    w2 = theta[k : k + o * h].reshape(o, h); k += o * h
    b2 = theta[k : k + o]
    return w1, b1, w2, b2


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_norm(topology: NetworkTopology, theta: np.ndarray, xn: np.ndarray) -> np.ndarray:
    w1, b1, w2, b2 = _unpack(topology, theta)
    hidden = _sigmoid(xn @ w1.T + b1)
    return hidden @ w2.T + b2


def loss_and_gradient(
    topology: NetworkTopology,
    theta: np.ndarray,
    inputs_norm: np.ndarray,
    targets_norm: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean squared error over the batch and its gradient w.r.t. the weights."""
    w1, b1, w2, b2 = _unpack(topology, theta)
    z1 = inputs_norm @ w1.T + b1
    hidden = _sigmoid(z1)
    pred = hidden @ w2.T + b2
    err = pred - targets_norm
    n = err.size
    loss = float(np.mean(err**2))

    d_pred = 2.0 * err / n
    g_w2 = d_pred.T @ hidden
    g_b2 = d_pred.sum(axis=0)
    d_hidden = d_pred @ w2
    d_z1 = d_hidden * hidden * (1.0 - hidden)
    g_w1 = d_z1.T @ inputs_norm
    g_b1 = d_z1.sum(axis=0)
    grad = np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])
    return loss, grad


@dataclass(frozen=True)
class ModelSnapshot:
    """Frozen model parameterization used inside one control step."""

    topology: NetworkTopology
    theta: np.ndarray = field(repr=False)
    norm: Normalization = field(repr=False)
    trained_on: int = 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.theta, dtype=float)
        if arr.size != self.topology.n_params:
            raise ValueError(
                f"theta has {arr.size} entries, topology needs {self.topology.n_params}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("snapshot weights must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "theta", arr)

    def forward_batch(self, states: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """De-normalized full output (next state plus any extra channels)."""
        raw = np.concatenate([np.atleast_2d(states), np.atleast_2d(inputs)], axis=1)
        xn = self.norm.normalize_in(raw)
        return self.norm.denormalize_out(_forward_norm(self.topology, self.theta, xn))

    def predict_batch(self, states: np.ndarray, inputs: np.ndarray, state_dim: int) -> np.ndarray:
        return self.forward_batch(states, inputs)[:, :state_dim]


class TransitionBuffer:
    """Append-only episode memory of (state, input, next state, output) rows."""

    def __init__(self, state_dim: int, input_dim: int, has_aux: bool = False):
        self.state_dim = state_dim
        self.input_dim = input_dim
        self.has_aux = has_aux
        self._states: list[np.ndarray] = []
        self._inputs: list[np.ndarray] = []
        self._next_states: list[np.ndarray] = []
        self._aux: list[float] = []
        self._times: list[int] = []

    def __len__(self) -> int:
        return len(self._states)

    def append(
        self,
        state: np.ndarray,
        inp: np.ndarray,
        next_state: np.ndarray,
        timestep: int,
        aux: float | None = None,
    ) -> None:
        if self.has_aux and aux is None:
            raise ValueError("buffer configured with an output channel, aux missing")
        self._states.append(np.asarray(state, dtype=float).copy())
        self._inputs.append(np.atleast_1d(np.asarray(inp, dtype=float)).copy())
        self._next_states.append(np.asarray(next_state, dtype=float).copy())
        self._times.append(int(timestep))
        if self.has_aux:
            self._aux.append(float(aux))

    @property
    def states(self) -> np.ndarray:
        return np.asarray(self._states)

    @property
    def inputs(self) -> np.ndarray:
        return np.asarray(self._inputs)

    @property
    def next_states(self) -> np.ndarray:
        return np.asarray(self._next_states)

    @property
    def aux(self) -> np.ndarray:
        return np.asarray(self._aux)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self._times)

    def training_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Raw (input, target) design matrices for one-step prediction."""
        x = np.concatenate([self.states, self.inputs], axis=1)
        if self.has_aux:
            y = np.concatenate([self.next_states, self.aux[:, None]], axis=1)
        else:
            y = self.next_states
        return x, y

    def statistics(self) -> Normalization:
        """Running per-dimension mean/scale; degenerate dimensions get scale 1."""
        x, y = self.training_arrays()

        def scale_of(a: np.ndarray) -> np.ndarray:
            s = a.std(axis=0)
            return np.where(s > 1e-12, s, 1.0)

        return Normalization(
            in_mean=x.mean(axis=0),
            in_scale=scale_of(x),
            out_mean=y.mean(axis=0),
            out_scale=scale_of(y),
        )


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    learning_rate: float = 1e-2
    lr_decay: float = 0.999
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


def init_random(topology: NetworkTopology, seed: int) -> ModelSnapshot:
    """Seeded uniform(-0.5, 0.5) weights scaled by 1/sqrt(fan-in) per layer."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    i, h, o = topology.input_dim, topology.hidden, topology.output_dim
    parts = [
        rng.uniform(-0.5, 0.5, size=h * i) / np.sqrt(i),
        rng.uniform(-0.5, 0.5, size=h) / np.sqrt(i),
        rng.uniform(-0.5, 0.5, size=o * h) / np.sqrt(h),
        rng.uniform(-0.5, 0.5, size=o) / np.sqrt(h),
    ]
    theta = np.concatenate(parts)
    return ModelSnapshot(
        topology=topology,
        theta=theta,
        norm=Normalization.identity(i, o),
        trained_on=0,
    )


def predict_one_step(snapshot: ModelSnapshot, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """De-normalized next-state prediction for a single (state, input) pair."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    expected = snapshot.topology.input_dim
    if x.size + u.size != expected:
        raise ValueError(f"state+input size {x.size + u.size} != model input {expected}")
    out = snapshot.forward_batch(x[None, :], u[None, :])
    return out[0, : x.size]


def rollout(snapshot: ModelSnapshot, x0: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Iterated one-step predictions; returns the n predicted states."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    states = np.empty((inputs.shape[0], np.asarray(x0).size))
    x = np.asarray(x0, dtype=float)
    for k in range(inputs.shape[0]):
        x = predict_one_step(snapshot, x, inputs[k])
        states[k] = x
    return states


def train(
    buffer: TransitionBuffer,
    snapshot: ModelSnapshot,
    config: TrainConfig = TrainConfig(),
) -> ModelSnapshot:
    """Full-batch adaptive-moment descent on one-step MSE over the buffer.

    Normalization statistics are recomputed from the buffer first; the
    returned snapshot carries the best weights seen, so its loss on this
    buffer never exceeds the incoming snapshot's.  A non-finite loss reverts
    to the input weights and logs a divergence warning.
    """
    if len(buffer) == 0:
        raise ValueError("cannot train on an empty buffer")
    norm = buffer.statistics()
    x_raw, y_raw = buffer.training_arrays()
    xn = norm.normalize_in(x_raw)
    yn = norm.normalize_out(y_raw)
    topo = snapshot.topology

    theta = snapshot.theta.copy()
    best_theta = theta.copy()
    best_loss, grad = loss_and_gradient(topo, theta, xn, yn)
    if not np.isfinite(best_loss):
        logger.warning("training diverged: non-finite loss at entry, keeping input weights")
        return ModelSnapshot(topo, snapshot.theta, norm, trained_on=len(buffer))

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    lr = config.learning_rate
    for it in range(1, config.iterations + 1):
        m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * grad
        v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * grad**2
        m_hat = m / (1.0 - config.adam_beta1**it)
        v_hat = v / (1.0 - config.adam_beta2**it)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        lr *= config.lr_decay
        loss, grad = loss_and_gradient(topo, theta, xn, yn)
        if not np.isfinite(loss):
            logger.warning("training diverged at iteration %d, reverting", it)
            return ModelSnapshot(topo, best_theta, norm, trained_on=len(buffer))
        if loss < best_loss:
            best_loss = loss
            best_theta = theta.copy()
    return ModelSnapshot(topo, best_theta, norm, trained_on=len(buffer))


def compute_residuals(
    buffer: TransitionBuffer,
    snapshot: ModelSnapshot,
    g_pred,
    g_true: np.ndarray,
    max_depth: int,
    cap: int = 2000,
    rng: np.random.Generator | None = None,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Constraint-space rollout errors grouped by prediction depth.

    For start index j and depth d the residual is
    ``g_true[j + d] - g_pred(snapshot, rollout_d(x[j]), u[j + d])``, built
    from the recorded input sequence.  Start indices are subsampled uniformly
    (seeded) to at most ``cap`` per depth.  Returns ``depth -> (values,
    start_times)``; depths without data are absent.
    """
    n = len(buffer)
    if n == 0:
        return {}
    rng = rng or np.random.default_rng(0)
    states = buffer.states
    inputs = buffer.inputs
    times = buffer.times
    g_true = np.asarray(g_true, dtype=float)
    state_dim = buffer.state_dim

    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for depth in range(1, max_depth + 1):
        avail = n - depth  # start j needs g_true and an input at j + depth
        if avail < 1:
            break
        starts = np.arange(avail)
        if avail > cap:
            starts = np.sort(rng.choice(avail, size=cap, replace=False))
        x = states[starts]
        for step in range(depth):
            x = snapshot.predict_batch(x, inputs[starts + step], state_dim)
        predicted = g_pred(snapshot, x, inputs[starts + depth])
        values = g_true[starts + depth] - predicted
        out[depth] = (values, times[starts].astype(float))
    return out


def save_snapshot(snapshot: ModelSnapshot, path: str) -> None:
    """Versioned binary dump: magic, topology header, little-endian float64."""
    topo = snapshot.topology
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(struct.pack("<IIIQ", topo.input_dim, topo.hidden, topo.output_dim,
                             snapshot.trained_on))
        for arr in (
            snapshot.norm.in_mean,
            snapshot.norm.in_scale,
            snapshot.norm.out_mean,
            snapshot.norm.out_scale,
            snapshot.theta,
        ):
            fh.write(np.asarray(arr, dtype="<f8").tobytes())


def load_snapshot(path: str) -> ModelSnapshot:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _SNAPSHOT_MAGIC:
            raise ValueError(f"not a snapshot file (magic {magic!r})")
        input_dim, hidden, output_dim, trained_on = struct.unpack("<IIIQ", fh.read(20))
        topo = NetworkTopology(input_dim=input_dim, output_dim=output_dim, hidden=hidden)

        def read(count: int) -> np.ndarray:
            return np.frombuffer(fh.read(8 * count), dtype="<f8").astype(float)

        norm = Normalization(
            in_mean=read(input_dim),
            in_scale=read(input_dim),
            out_mean=read(output_dim),
            out_scale=read(output_dim),
        )
        theta = read(topo.n_params)
    return ModelSnapshot(topology=topo, theta=theta, norm=norm, trained_on=trained_on)
