"""
The Q-network: a small fully-connected network written directly in numpy, plus the Adam optimizer that trains it.

Input is the simulator's 4m state vector, two ReLU hidden layers (256 wide by default), and one linear output per
action. Backpropagation is written out by hand; targets are constants, so only Q(s, a) is differentiated.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from volume_inference.config import VEHICLE_GROUPS, GroupId
from volume_inference.errors import ShapeError
from volume_inference.files import read_document, write_document

MODEL_FILE_VERSION = 1


#################################
# Actions
#################################

class ActionCatalog:
    """The (group, delta) actions, group-major with deltas -1, 0, +1 inside each group."""

    def __init__(self, groups: tuple[GroupId, ...] = VEHICLE_GROUPS, deltas: tuple[int, ...] = (-1, 0, 1)):
        self.actions: tuple[tuple[GroupId, int], ...] = tuple((g, d) for g in groups for d in deltas)

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, index: int) -> tuple[GroupId, int]:
        return self.actions[index]

    def index(self, group: GroupId, delta: int) -> int:
        return self.actions.index((group, delta))


ACTIONS = ActionCatalog()


#################################
# Network
#################################

@dataclass
class QNetwork:
    """Weights and biases of a fully-connected network, input layer first."""
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def params(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order: W1, b1, W2, b2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_qnetwork(
    input_dim: int, hidden: list[int], n_actions: int = len(ACTIONS), seed: int = 0
) -> QNetwork:
    """He-initialized weights and zero biases."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, n_actions]
    weights = [rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, d_out)) for d_in, d_out in zip(dims, dims[1:])]
    biases = [np.zeros(d_out) for d_out in dims[1:]]
    return QNetwork(weights, biases)


def _forward(net: QNetwork, states: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, the input first and the Q-values last."""
    activations = [states]
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = activations[-1] @ w + b
        activations.append(z if k == len(net.weights) - 1 else np.maximum(z, 0.0))
    return activations


def _check_width(net: QNetwork, states: np.ndarray) -> None:
    if states.shape[-1] != net.input_dim:
        raise ShapeError("state feature width", net.input_dim, states.shape[-1])


def q_forward(net: QNetwork, state) -> np.ndarray:
    """Q-values of one state (shape (A,)) or of a batch of states (shape (B, A)).

    Args:
        net: The Q-network.
        state: A 4m feature vector, or a (B, 4m) batch.

    Returns:
        One value per action.
    """
    states = np.asarray(state, dtype=float)
    _check_width(net, states)
    return _forward(net, states)[-1]


def loss_and_gradients(
    net: QNetwork, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """Mean squared TD error and its gradient with respect to every parameter.

    Args:
        net: The Q-network.
        states: (B, 4m) batch of states.
        actions: (B,) action indices.
        targets: (B,) TD targets, treated as constants.

    Returns:
        The loss, gradients in `net.params` order, and the per-item squared errors.
    """
    states = np.asarray(states, dtype=float)
    _check_width(net, states)
    actions = np.asarray(actions, dtype=int)
    batch = states.shape[0]
    activations = _forward(net, states)
    q = activations[-1]
    residual = q[np.arange(batch), actions] - np.asarray(targets, dtype=float)
    squared = residual**2

    # dL/dQ is non-zero only at the taken action
    delta = np.zeros_like(q)
    delta[np.arange(batch), actions] = 2.0 * residual / batch

    grads: list[np.ndarray] = []
    for k in range(len(net.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(activations[k].T @ delta)
        if k > 0:
            delta = (delta @ net.weights[k].T) * (activations[k] > 0.0)
    grads.reverse()
    return float(squared.mean()), grads, squared


#################################
# Optimizer
#################################

@dataclass
class Adam:
    """Adam with bias correction. Moments are created on the first step."""
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update params in place."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


#################################
# Files
#################################

def save_model(net: QNetwork, path: str | Path) -> None:
    """Layer dims plus row-major weight arrays."""
    write_document(path, {
        "version": MODEL_FILE_VERSION,
        "dims": net.dims,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    })


def load_model(path: str | Path) -> QNetwork:
    data = read_document(path, MODEL_FILE_VERSION)
    dims = data.get("dims", [])
    weights = [np.asarray(w, dtype=float) for w in data.get("weights", [])]
    biases = [np.asarray(b, dtype=float) for b in data.get("biases", [])]
    if len(weights) != len(dims) - 1 or len(biases) != len(weights):
        raise ShapeError(f"{path}: layer count", len(dims) - 1, len(weights))
    for k, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
            raise ShapeError(f"{path}: layer {k}", (dims[k], dims[k + 1]), w.shape)
    return QNetwork(weights, biases)
