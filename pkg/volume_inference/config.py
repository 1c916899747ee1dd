"""
Configuration for every pipeline stage.

Each stage gets its own pydantic model so it can be validated, dumped to JSON, and passed around on its own.
`PipelineConfig` bundles them into the single document the CLI reads. Defaults follow the published
hyperparameters wherever they exist (replay size, discount, batch size, learning rate, exploration schedule,
embedding size and window, speed clamp).
"""
import hashlib
import json
from pathlib import Path
from typing import Any, Literal, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from volume_inference.errors import ConfigError

M = TypeVar("M", bound=BaseModel)

GroupId = Literal["sedan", "suv", "truck"]
VEHICLE_GROUPS: tuple[GroupId, ...] = ("sedan", "suv", "truck")

# Every speed limit (segment or vehicle group) lives in this range, in m/s
SPEED_MIN = 1.0
SPEED_MAX = 40.0


#################################
# Stage Configs
#################################

class GenConfig(BaseModel):
    """How to generate a synthetic scenario."""
    model_config = ConfigDict(extra="forbid")

    rows: int = Field(5, ge=2, description="Number of intersection rows in the grid")
    cols: int = Field(5, ge=2, description="Number of intersection columns in the grid")
    block_length: float = Field(400.0, gt=0, description="Distance between neighboring intersections, meters")
    diagonal_arterials: bool = Field(False, description="Add a major diagonal road through the grid")
    vehicles: int = Field(1500, ge=1, description="Number of vehicles to simulate")
    demand_profile: Literal["double_peak", "uniform"] = Field("double_peak", description="Departure time profile")
    taxi_fraction: float = Field(0.2, gt=0, lt=1, description="Share of vehicles that report dense trajectories")
    monitored_fraction: float = Field(0.25, gt=0, lt=1, description="Share of segments with a sensor")
    seed: int = Field(0, description="Seed for network, demand, and sensor placement")
    interval_length: float = Field(300.0, gt=0, description="Length of one volume interval, seconds")
    horizon: int = Field(288, ge=1, description="Number of volume intervals")
    true_group_limits: dict[GroupId, float] = Field(
        default_factory=lambda: {"sedan": 12.0, "suv": 10.0, "truck": 8.0},
        description="Hidden group speed limits that produce the ground truth, m/s",
    )
    group_shares: dict[GroupId, float] = Field(
        default_factory=lambda: {"sedan": 0.6, "suv": 0.3, "truck": 0.1},
        description="Share of vehicles in each group",
    )
    major_lanes: int = Field(2, ge=1, description="Lanes on major roads")
    secondary_lanes: int = Field(1, ge=1, description="Lanes on secondary roads")
    major_speed_limit: float = Field(20.0, ge=SPEED_MIN, le=SPEED_MAX, description="Major road speed limit, m/s")
    secondary_speed_limit: float = Field(14.0, ge=SPEED_MIN, le=SPEED_MAX, description="Secondary road speed limit, m/s")

    @model_validator(mode="after")
    def _check_groups(self):
        for name, limits in (("true_group_limits", self.true_group_limits), ("group_shares", self.group_shares)):
            if set(limits) != set(VEHICLE_GROUPS):
                raise ValueError(f"{name} must name exactly the groups {VEHICLE_GROUPS}")
        for group, limit in self.true_group_limits.items():
            if not SPEED_MIN <= limit <= SPEED_MAX:
                raise ValueError(f"true limit {limit} for {group} is outside [{SPEED_MIN}, {SPEED_MAX}]")
        if any(share < 0 for share in self.group_shares.values()) or sum(self.group_shares.values()) <= 0:
            raise ValueError("group_shares must be non-negative and not all zero")
        return self


class SimConfig(BaseModel):
    """Traffic simulator settings."""
    model_config = ConfigDict(extra="forbid")

    micro_step: float = Field(1.0, gt=0, description="Integration step, seconds")
    macro_step: float = Field(60.0, gt=0, description="One control step of the simulator, seconds")
    headway: float = Field(1.0, gt=0, description="Driver reaction time used by the safe-speed rule, seconds")
    max_accel: float = Field(2.6, gt=0, description="Maximum acceleration, m/s^2")
    max_decel: float = Field(4.5, gt=0, description="Comfortable deceleration, m/s^2")
    min_gap: float = Field(7.5, gt=0, description="Minimum front-to-front spacing on a lane, meters")
    resync: bool = Field(True, description="Teleport late vehicles to their next observed point")
    resync_grace: float = Field(300.0, ge=0, description="Lateness tolerated before a resync, seconds")
    stop_speed: float = Field(0.1, ge=0, description="Speeds below this count as waiting, m/s")
    occupancy_floor: float = Field(0.1, gt=0, le=1, description="Lower bound of the occupancy speed discount")
    horizon_s: float | None = Field(None, gt=0, description="Simulated horizon, seconds. None derives it from the data")
    seed: int = Field(0, description="Seed for group assignment of vehicles without a known group")
    group_speed_limits: dict[GroupId, float] = Field(
        default_factory=lambda: {"sedan": 22.0, "suv": 20.0, "truck": 18.0},
        description="Initial group speed limits, m/s",
    )

    @model_validator(mode="after")
    def _check_steps(self):
        ratio = self.macro_step / self.micro_step
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(f"macro_step {self.macro_step} must be a multiple of micro_step {self.micro_step}")
        if set(self.group_speed_limits) != set(VEHICLE_GROUPS):
            raise ValueError(f"group_speed_limits must name exactly the groups {VEHICLE_GROUPS}")
        for group, limit in self.group_speed_limits.items():
            if not SPEED_MIN <= limit <= SPEED_MAX:
                raise ValueError(f"limit {limit} for {group} is outside [{SPEED_MIN}, {SPEED_MAX}]")
        return self

    @property
    def micro_steps_per_macro(self) -> int:
        return int(round(self.macro_step / self.micro_step))


class TrainConfig(BaseModel):
    """Deep Q-learning settings for tuning the group speed limits."""
    model_config = ConfigDict(extra="forbid")

    gamma: float = Field(0.8, ge=0, lt=1, description="Discount factor")
    lr: float = Field(1e-4, gt=0, description="Adam learning rate")
    batch: int = Field(128, ge=1, description="Mini-batch size")
    eps_start: float = Field(0.5, ge=0, le=1, description="Exploration rate at episode 0")
    eps_end: float = Field(0.01, ge=0, le=1, description="Exploration rate after the decay")
    eps_decay_episodes: int = Field(2000, ge=1, description="Episodes over which exploration decays linearly")
    episodes: int = Field(200, ge=0, description="Training episodes")
    memory_capacity: int = Field(10_000, ge=1, description="Replay memory size")
    hidden: list[int] = Field(default_factory=lambda: [256, 256], description="Hidden layer widths")
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    episode_horizon_s: float | None = Field(
        None, gt=0, description="Simulated seconds per episode. None replays the full scenario horizon"
    )
    seed: int = Field(0, description="Seed for weights, exploration, and replay sampling")

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.eps_start < self.eps_end:
            raise ValueError(f"eps_start {self.eps_start} must be >= eps_end {self.eps_end}")
        if len(self.hidden) != 2 or any(width < 1 for width in self.hidden):
            raise ValueError(f"hidden must list two positive widths, got {self.hidden}")
        return self


class EmbedConfig(BaseModel):
    """Joint skip-gram embedding settings."""
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(50, ge=1, description="Embedding dimension")
    window: int = Field(10, ge=1, description="Skip-gram window")
    negatives: int = Field(5, ge=1, description="Negative samples per positive pair")
    lr: float = Field(0.025, gt=0, description="Initial learning rate")
    lr_min: float = Field(0.0001, gt=0, description="Learning rate reached at the end of training")
    epochs: int = Field(5, ge=1, description="Passes over the walk corpus")
    alpha: float = Field(0.5, ge=0, le=1, description="Weight of the dense-trajectory graph")
    noise_exponent: float = Field(0.75, ge=0, description="Exponent on node frequency for negative sampling")
    walk_len: int = Field(20, ge=1, description="Maximum nodes per random walk")
    walks_per_node: int = Field(10, ge=1, description="Walks started from every node with out-edges")
    batch_pairs: int = Field(1024, ge=1, description="Training pairs updated together in one vectorized step")
    seed: int = Field(0, description="Seed for walks, initialization, and negative sampling")


class InferenceConfig(BaseModel):
    """Volume propagation settings."""
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(1e-8, gt=0, description="Stop when no cell changes more than this in one sweep")
    max_iter: int = Field(10_000, ge=1, description="Maximum sweeps")
    mode: Literal["gauss_seidel", "jacobi"] = Field("gauss_seidel", description="Relaxation scheme")
    clamp_negative: bool = Field(True, description="Clamp negative similarities to zero")
    spatial_mask: bool = Field(True, description="Only relate road-adjacent segments")
    temporal_window: int = Field(1, ge=0, description="Only relate cells at most this many intervals apart")


class EvalConfig(BaseModel):
    """Evaluation settings."""
    model_config = ConfigDict(extra="forbid")

    knn_k: int = Field(5, ge=1, description="Neighbors used by the spatial kNN baseline")
    seeds: list[int] = Field(default_factory=lambda: list(range(10)), description="Split seeds to average over")
    test_fraction: float = Field(0.2, gt=0, lt=1, description="Share of monitored segments held out for testing")
    validation_fraction: float = Field(0.2, ge=0, lt=1, description="Share of the training part used for validation")
    mape_min_volume: float = Field(5.0, ge=0, description="Samples with a lower true volume are left out of MAPE")


class PipelineConfig(BaseModel):
    """Everything one end-to-end run needs."""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, description="Master seed. Every stage derives its own seed from it")
    scenario_path: str | None = Field(None, description="Existing scenario file. None generates one from `gen`")
    output_dir: str = Field("runs/default", description="Run directory")
    recovery_method: Literal["dqn", "greedy", "default"] = Field(
        "dqn", description="How the simulator's group speed limits are set before recovery"
    )
    gen: GenConfig = Field(default_factory=GenConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    embed: EmbedConfig = Field(default_factory=EmbedConfig)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)


#################################
# Loading and Overrides
#################################

def derive_seed(master: int, name: str) -> int:
    """Derive a stage seed from the master seed so every stage gets its own stream."""
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def load_config(path: str | Path) -> PipelineConfig:
    """Read and validate a pipeline config document.

    Args:
        path: Path to the JSON config.

    Returns:
        The validated config.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    try:
        return PipelineConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}") from e


def save_config(config: BaseModel, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(config.model_dump_json(indent=2))


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: M, overrides: list[str]) -> M:
    """Override config fields by dotted path, e.g. `embed.alpha=0.25`.

    Args:
        config: The config to start from. It is not modified.
        overrides: `path=value` strings. Values are read as JSON when possible, otherwise as strings.

    Returns:
        A new, re-validated config.
    """
    data = config.model_dump()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override {item!r} must look like path=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = data
        for key in keys[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"Unknown config field {path!r}")
            node = node[key]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ConfigError(f"Unknown config field {path!r}")
        node[keys[-1]] = _parse_value(raw)
    try:
        return type(config).model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid override: {e}") from e
