"""
Deep Q-learning of the simulator's group speed limits.

Each episode replays the simulator from the start. Every macro step the agent picks one of the 9 actions
(epsilon-greedy), the simulator runs one minute, and the reward is how sharply vehicles hit their observed
arrival times during that minute. The transition goes into replay memory and, once the memory holds a full
mini-batch, the network takes one Adam step on a sampled batch.

There is a single network: targets are computed with the same weights that are being trained.

## KEY TAKEAWAYS
- The reward of a step is the sum of exp(-|t_sim - t_real|) over the arrivals logged during it.
- State features are compressed with log1p before they reach the network; raw counts and seconds span several
  orders of magnitude.
"""
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from tqdm import tqdm

from volume_inference.config import SimConfig, TrainConfig
from volume_inference.errors import TrainingError, VolumeInferenceError
from volume_inference.logs import progress_disabled
from volume_inference.network import RoadNetwork
from volume_inference.recovery.qnetwork import ACTIONS, Adam, QNetwork, init_qnetwork, loss_and_gradients, q_forward
from volume_inference.recovery.replay import ReplayMemory, Transition
from volume_inference.simulation.simulator import (
    ArrivalRecord,
    new_sim,
    recovery_error,
    run_to_completion,
)
from volume_inference.trajectory import TrajectorySet

logger = logging.getLogger(__name__)


class EpisodeLog(BaseModel):
    """Summary of one training episode."""
    episode: int
    total_reward: float = Field(..., description="Sum of step rewards")
    recovery_error_s: float = Field(..., description="Mean absolute arrival time error of the episode, seconds")
    epsilon: float = Field(..., description="Exploration rate used during the episode")
    mean_loss: float | None = Field(None, description="Mean training loss, None while warming up")


#################################
# Building Blocks
#################################

def encode_state(features: np.ndarray) -> np.ndarray:
    return np.log1p(np.maximum(np.asarray(features, dtype=float), 0.0))


def select_action(net: QNetwork, state: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice. The greedy branch breaks ties toward the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(len(ACTIONS)))
    return int(np.argmax(q_forward(net, state)))


def reward(arrived: list[ArrivalRecord]) -> float:
    """Sum of exp(-|t_sim - t_real|) over the arrivals; 0 when nobody arrived."""
    return math.fsum(math.exp(-abs(r.t_sim - r.t_real)) for r in arrived)


def td_target(reward_value: float, next_state: np.ndarray, net: QNetwork, terminal: bool, gamma: float) -> float:
    if terminal:
        return float(reward_value)
    return float(reward_value + gamma * np.max(q_forward(net, next_state)))


def epsilon_at(cfg: TrainConfig, episode: int) -> float:
    """Linear decay from eps_start to eps_end over eps_decay_episodes, flat afterwards."""
    if episode < 0:
        raise ValueError(f"episode must be non-negative, got {episode}")
    progress = min(1.0, episode / cfg.eps_decay_episodes)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * progress


def train_step(net: QNetwork, batch: list[Transition], cfg: TrainConfig, optimizer: Adam | None = None) -> float:
    """One Adam step on the mean squared TD error of a batch.

    Args:
        net: The Q-network, updated in place.
        batch: Non-empty list of transitions.
        cfg: Discount and Adam settings.
        optimizer: Optimizer state to continue from. A fresh one is used when None.

    Returns:
        The loss before the update.
    """
    if not batch:
        raise ValueError("train_step needs a non-empty batch")
    if optimizer is None:
        optimizer = Adam(lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)

    states = np.stack([t.state for t in batch])
    actions = np.array([t.action for t in batch])
    next_q = q_forward(net, np.stack([t.next_state for t in batch])).max(axis=1)
    rewards = np.array([t.reward for t in batch])
    terminal = np.array([t.terminal for t in batch])
    targets = np.where(terminal, rewards, rewards + cfg.gamma * next_q)

    loss, grads, squared = loss_and_gradients(net, states, actions, targets)
    bad = np.flatnonzero(~np.isfinite(squared))
    if bad.size or not math.isfinite(loss):
        index = int(bad[0]) if bad.size else None
        raise TrainingError(f"Non-finite loss at batch item {index}", index=index)
    optimizer.step(net.params, grads)
    return loss


#################################
# Training
#################################

def train(
    net: RoadNetwork,
    incomplete: TrajectorySet,
    sim_cfg: SimConfig,
    cfg: TrainConfig,
    horizon_s: float | None = None,
) -> tuple[QNetwork, list[EpisodeLog]]:
    """Train a Q-network that adjusts group speed limits while the simulator runs.

    Args:
        net: The road network.
        incomplete: Observed trajectories the simulator follows.
        sim_cfg: Simulator settings; `group_speed_limits` are the starting limits of every episode.
        cfg: Learning settings.
        horizon_s: Simulated seconds per episode. Falls back to `cfg.episode_horizon_s`, then the simulator default.

    Returns:
        The trained network and one log entry per episode.
    """
    qnet = init_qnetwork(4 * net.m, cfg.hidden, seed=cfg.seed)
    optimizer = Adam(lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    memory = ReplayMemory(cfg.memory_capacity)
    rng = np.random.default_rng(cfg.seed + 1)
    horizon_s = horizon_s or cfg.episode_horizon_s
    log: list[EpisodeLog] = []

    for episode in tqdm(range(cfg.episodes), desc="episodes", disable=progress_disabled()):
        epsilon = epsilon_at(cfg, episode)
        total_reward = 0.0
        losses: list[float] = []
        try:
            sim = new_sim(net, incomplete, sim_cfg, horizon_s=horizon_s)
            state = encode_state(sim.features())
            while not sim.finished:
                action = select_action(qnet, state, epsilon, rng)
                sim.apply_action(*ACTIONS[action])
                features, records = sim.macro_step()
                next_state = encode_state(features)
                # Spawns are not arrivals
                step_reward = reward([r for r in records if r.point_index > 0])
                memory.push(Transition(state, action, next_state, step_reward, sim.finished))
                if memory.can_sample(cfg.batch):
                    losses.append(train_step(qnet, memory.sample(cfg.batch, rng), cfg, optimizer))
                total_reward += step_reward
                state = next_state
            _, records = run_to_completion(sim)
        except TrainingError as e:
            raise TrainingError(f"Episode {episode}: {e}", index=e.index) from e
        except VolumeInferenceError as e:
            raise TrainingError(f"Episode {episode}: {e}") from e

        entry = EpisodeLog(
            episode=episode,
            total_reward=total_reward,
            recovery_error_s=recovery_error(records) if records else 0.0,
            epsilon=epsilon,
            mean_loss=float(np.mean(losses)) if losses else None,
        )
        log.append(entry)
        logger.debug("Episode %d: reward %.3f, error %.2f s", episode, entry.total_reward, entry.recovery_error_s)

    return qnet, log


def rollout(
    qnet: QNetwork | None,
    net: RoadNetwork,
    incomplete: TrajectorySet,
    sim_cfg: SimConfig,
    horizon_s: float | None = None,
) -> tuple[TrajectorySet, list[ArrivalRecord]]:
    """Run the simulator once, acting greedily with the network (or never acting when it is None).

    Returns:
        The recovered trajectories and the arrival records of every itinerary point.
    """
    sim = new_sim(net, incomplete, sim_cfg, horizon_s=horizon_s)
    state = encode_state(sim.features())
    while not sim.finished:
        if qnet is not None:
            sim.apply_action(*ACTIONS[int(np.argmax(q_forward(qnet, state)))])
        features, _ = sim.macro_step()
        state = encode_state(features)
    return run_to_completion(sim)


def log_to_frame(log: list[EpisodeLog]) -> pd.DataFrame:
    """Training log in the CSV layout episode,total_reward,recovery_error_s,epsilon."""
    return pd.DataFrame(
        [(e.episode, e.total_reward, e.recovery_error_s, e.epsilon) for e in log],
        columns=["episode", "total_reward", "recovery_error_s", "epsilon"],
    )


def save_log(log: list[EpisodeLog], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    log_to_frame(log).to_csv(path, index=False)
