"""
Per-seed experiment loops. Each loop is deterministic given the configuration
and the seed, performs no I/O, and returns the rows of the per-seed CSV plus a
summary for the run manifest.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np
from prefect.logging import get_logger

from farcuriosity_lab.agent import PpoAgent, RandomPolicy, RolloutBuffer, ppo_update
from farcuriosity_lab.blocks import ExperimentConfig
from farcuriosity_lab.constants import NORMALIZE_FLOOR
from farcuriosity_lab.curiosity import (
    CountCuriosity,
    Event,
    IntrinsicSource,
    ObservationNormalizer,
    RndCuriosity,
    RunningStat,
    VisitCounter,
    normalize_intrinsic,
    rnd_new,
)
from farcuriosity_lab.envs import (
    MOVES,
    MultiRoomGrid,
    ToyGrid,
    TwoRegionStream,
    encode_observation,
    heterogeneity,
    observation_size,
)
from farcuriosity_lab.exceptions import InvalidArgumentError
from farcuriosity_lab.memory import FarCuriosity
from farcuriosity_lab.metrics import bwt, trend_slope

logger = get_logger("farcuriosity_lab.experiments")

HETEROGENEITY_WINDOW = 1000
RETURN_WINDOW = 100
TOY_REGIMES = {
    "toygrid-resetfree": "reset-free",
    "toygrid-fixed": "fixed",
    "toygrid-increasing": "increasing",
}


@dataclass
class SeedResult:
    """Outcome of one seed (and decay variant) of an experiment."""

    seed: int
    rows: List[Dict[str, Any]]
    summary: Dict[str, Any] = field(default_factory=dict)
    events: List[Dict[str, Any]] = field(default_factory=list)
    variant: Optional[float] = None


def derive_seeds(seed: int, n: int) -> List[int]:
    """`n` independent integer seeds for the components of one run."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def make_curiosity(
    config: ExperimentConfig,
    obs_dim: int,
    seed: int,
    gamma_decay: Optional[float] = None,
) -> Union[RndCuriosity, CountCuriosity, FarCuriosity]:
    """Build the intrinsic source named by `config.curiosity`."""
    obs_norm = ObservationNormalizer(obs_dim) if config.obs_norm else None
    if config.curiosity == "count":
        decay = config.gamma_decay if gamma_decay is None else gamma_decay
        return CountCuriosity(VisitCounter(decay))
    if config.curiosity == "rnd":
        module = rnd_new(
            obs_dim,
            out_dim=config.rnd_feature_dim,
            hidden=config.rnd_hidden,
            seed=seed,
            lr=config.rnd_lr,
        )
        return RndCuriosity(module, obs_norm=obs_norm)
    return FarCuriosity(
        obs_dim,
        feature_dim=config.rnd_feature_dim,
        hidden=config.rnd_hidden,
        seed=seed,
        lr=config.rnd_lr,
        rho=config.rho,
        psi=config.psi,
        sim_cap=config.sim_cap,
        warmup=config.warmup,
        criterion=config.criterion,
        z_threshold=config.z_threshold,
        capacity=config.ltm_capacity,
        refractory=config.refractory,
        recall_enabled=config.recall_enabled,
        obs_norm=obs_norm,
    )


def make_toy_env(
    config: ExperimentConfig, seed: int
) -> Union[ToyGrid, TwoRegionStream]:
    if config.kind == "toygrid-far":
        return TwoRegionStream(seed=seed, block_length=config.block_length)
    return ToyGrid(
        seed=seed,
        regime=TOY_REGIMES[config.kind],
        fixed_length=config.episode_length,
        increase_factor=config.increase_factor,
    )


def _scaled(value: float, stats: RunningStat, enabled: bool) -> float:
    if enabled and stats.count > 0 and stats.mean >= NORMALIZE_FLOOR:
        return value / stats.mean
    return value


class _EventTracker:
    """Collects structural events between two recorded rows."""

    def __init__(self):
        self.timeline: List[Dict[str, Any]] = []
        self._pending: List[str] = []

    def add(self, step: int, event: Event, source: IntrinsicSource) -> None:
        if event is Event.NONE:
            return
        self._pending.append(event.value)
        self.timeline.append(
            {"step": step, "event": event.value, "n_fragments": source.n_fragments()}
        )

    def flush(self) -> str:
        label = self._pending[-1] if self._pending else Event.NONE.value
        self._pending = []
        return label


def _window_mean(rows, key: str, lo: int, hi: int) -> Optional[float]:
    values = [row[key] for row in rows if lo <= row["step"] <= hi]
    return float(np.mean(values)) if values else None


def run_toy(config: ExperimentConfig, seed: int) -> SeedResult:
    """
    Random walk on the toy grid (or the two-region stream) scored by the
    configured curiosity module.

    Reset-free and two-region runs probe the start observation every
    `probe_interval` steps without learning from it. Episodic runs record the
    reward of the start observation each time an episode begins there.
    """
    env_seed, curiosity_seed, walk_seed = derive_seeds(seed, 3)
    env = make_toy_env(config, env_seed)
    source = make_curiosity(config, env.obs_dim, curiosity_seed)
    rng = np.random.default_rng(walk_seed)
    policy = RandomPolicy(len(MOVES))
    far = config.curiosity == "far"
    episodic = config.kind in ("toygrid-fixed", "toygrid-increasing")
    two_region = isinstance(env, TwoRegionStream)
    normalize = config.normalize_by_running_mean

    stats = RunningStat()
    events = _EventTracker()
    recent = deque(maxlen=HETEROGENEITY_WINDOW)
    rows: List[Dict[str, Any]] = []
    blocks: List[List[float]] = []

    def record(step: int, value: float) -> None:
        row = {"step": step, "start_obs_intrinsic": _scaled(value, stats, normalize)}
        if far:
            row["n_fragments"] = source.n_fragments()
            row["event"] = events.flush()
        rows.append(row)

    start = env.probe_start()
    if episodic:
        reward, event = source.observe(start)
        events.add(0, event, source)
        record(0, reward)
    else:
        record(0, source.probe(start))
        if not two_region:
            source.observe(start)

    for step in range(1, config.steps + 1):
        if two_region:
            obs, boundary = env.step(rng)
        else:
            obs, boundary = env.step(rng, policy)
        reward, event = source.observe(obs)
        stats.update(reward)
        events.add(step, event, source)
        recent.append(obs)

        if episodic and boundary:
            reward, event = source.observe(env.probe_start())
            events.add(step, event, source)
            record(step, reward)
        elif not episodic and step % config.probe_interval == 0:
            record(step, source.probe(env.probe_start()))
        if two_region and boundary:
            blocks.append(
                [-source.probe(env.anchor(r)) for r in range(env.n_regions)]
            )

    summary = _toy_summary(rows, recent)
    if far:
        summary["n_fragments"] = source.n_fragments()
        summary["n_fragmented"] = sum(
            e["event"] == Event.FRAGMENTED.value for e in events.timeline
        )
        summary["n_recalled"] = sum(
            e["event"] == Event.RECALLED.value for e in events.timeline
        )
    if two_region:
        summary.update(_forgetting_summary(blocks, env.n_regions))
    logger.debug("Seed %d of %s done: %s", seed, config.kind, summary)
    return SeedResult(seed=seed, rows=rows, summary=summary, events=events.timeline)


def _toy_summary(rows, recent) -> Dict[str, Any]:
    key = "start_obs_intrinsic"
    tail = max(1, len(rows) // 10)
    steps = [row["step"] for row in rows]
    values = [row[key] for row in rows]
    return {
        "final": float(np.mean(values[-tail:])),
        "early": _window_mean(rows, key, 1000, 5000),
        "mid": float(np.mean(values[len(values) // 2 : len(values) // 2 + tail])),
        "trend_slope": trend_slope(steps, values),
        "heterogeneity": heterogeneity(np.asarray(recent)) if recent else None,
    }


def _forgetting_summary(blocks: List[List[float]], n_regions: int) -> Dict[str, Any]:
    """
    Square matrix over completed blocks: entry `[j, i]` is the negated probe
    reward of block `i`'s anchor at the end of block `j`.
    """
    n_blocks = len(blocks)
    xi = [
        [blocks[j][i % n_regions] for i in range(n_blocks)] for j in range(n_blocks)
    ]
    return {"xi": xi, "bwt": bwt(xi) if n_blocks >= 2 else None}


def run_multiroom(
    config: ExperimentConfig, seed: int, gamma_decay: Optional[float] = None
) -> SeedResult:
    """
    PPO on `n_envs` MultiRoom instances with a count-based (optionally
    decaying) or fragmentation-and-recall intrinsic reward.

    One row per PPO update: rolling mean return over the last episodes and the
    intrinsic reward of the first observation of the episodes begun during the
    rollout.
    """
    ppo = config.ppo
    agent_seed, curiosity_seed, env_seed, update_seed = derive_seeds(seed, 4)
    envs = [
        MultiRoomGrid(config.n_rooms, config.t_max, seed=env_seed + i)
        for i in range(ppo.n_envs)
    ]
    raw = [env.reset() for env in envs]
    obs_dim = observation_size()
    agent = PpoAgent(
        obs_dim,
        hidden=ppo.hidden,
        seed=agent_seed,
        **ppo.dict(exclude={"hidden"}),
    )
    decay = config.gamma_decay if gamma_decay is None else gamma_decay
    source = make_curiosity(config, obs_dim, curiosity_seed, gamma_decay=decay)
    far = config.curiosity == "far"
    counting = config.curiosity == "count"
    buffer = RolloutBuffer(ppo.rollout_length, ppo.n_envs, obs_dim)
    rng = np.random.default_rng(update_seed)
    stats = RunningStat()
    events = _EventTracker()

    def prepared(frame):
        # counts key on the raw frame, networks read the one-hot encoding
        return frame if counting else encode_observation(frame)

    def intrinsic(frame) -> float:
        reward, event = source.observe(prepared(frame))
        events.add(step, event, source)
        if config.normalize_by_running_mean:
            return normalize_intrinsic(stats, reward)
        return reward

    step = 0
    for frame in raw:
        intrinsic(frame)
    returns = deque(maxlen=RETURN_WINDOW)
    episode_return = np.zeros(ppo.n_envs)
    start_rewards: List[float] = []
    rows: List[Dict[str, Any]] = []
    last_frames: List[np.ndarray] = []
    n_updates = -(-config.steps // (ppo.rollout_length * ppo.n_envs))

    for update in range(n_updates):
        start_rewards = []
        last_frames = []
        for _ in range(ppo.rollout_length):
            encoded = np.stack([encode_observation(frame) for frame in raw])
            actions, log_probs, values = agent.act(encoded, rng)
            ext = np.zeros(ppo.n_envs)
            intr = np.zeros(ppo.n_envs)
            dones = np.zeros(ppo.n_envs)
            for i, env in enumerate(envs):
                frame, reward, done = env.step(int(actions[i]))
                step += 1
                ext[i] = reward
                intr[i] = intrinsic(frame)
                episode_return[i] += reward
                if done:
                    dones[i] = 1.0
                    returns.append(episode_return[i])
                    episode_return[i] = 0.0
                    frame = env.reset()
                    # scored only: visits and decay belong to environment steps
                    start_rewards.append(
                        _scaled(
                            source.probe(prepared(frame)),
                            stats,
                            config.normalize_by_running_mean,
                        )
                    )
                raw[i] = frame
            last_frames.append(raw[0])
            buffer.add(encoded, actions, log_probs, values, ext, intr, dones)

        last_values = agent.evaluate(
            np.stack([encode_observation(frame) for frame in raw])
        )
        buffer.finish(last_values, config.c_int, ppo.gamma, ppo.gae_lambda)
        losses = ppo_update(agent, buffer, rng)
        buffer.reset()

        row = {
            "step": step,
            "mean_return": float(np.mean(returns)) if returns else 0.0,
            "start_obs_intrinsic": (
                float(np.mean(start_rewards)) if start_rewards else None
            ),
            "episodes": len(returns),
            "policy_loss": losses.policy,
            "value_loss": losses.value,
            "entropy": losses.entropy,
        }
        if far:
            row["n_fragments"] = source.n_fragments()
            row["event"] = events.flush()
        if counting:
            row["gamma_decay"] = decay
        rows.append(row)
        if (update + 1) % 50 == 0:
            logger.debug(
                "Seed %d update %d/%d: mean return %.3f",
                seed,
                update + 1,
                n_updates,
                row["mean_return"],
            )

    summary = {
        "final": rows[-1]["mean_return"] if rows else 0.0,
        "trend_slope": trend_slope(
            [row["step"] for row in rows], [row["mean_return"] for row in rows]
        ),
        "heterogeneity": (
            heterogeneity(np.asarray(last_frames, dtype=np.float64))
            if last_frames
            else None
        ),
    }
    if far:
        summary["n_fragments"] = source.n_fragments()
    if counting:
        summary["gamma_decay"] = decay
    return SeedResult(
        seed=seed,
        rows=rows,
        summary=summary,
        events=events.timeline,
        variant=decay if counting else None,
    )


def run_seed_experiment(
    config: ExperimentConfig, seed: int, gamma_decay: Optional[float] = None
) -> SeedResult:
    """Dispatch on `config.kind`."""
    if config.is_multiroom():
        return run_multiroom(config, seed, gamma_decay=gamma_decay)
    return run_toy(config, seed)


def variants(config: ExperimentConfig) -> List[Optional[float]]:
    """Decay variants of a configuration (`[None]` unless multiroom-decay)."""
    if config.kind == "multiroom-decay" and config.curiosity == "count":
        return list(config.decay_factors)
    return [None]


def _toy_walk(env, rng):
    policy = RandomPolicy(len(MOVES))
    while True:
        if isinstance(env, TwoRegionStream):
            yield env.step(rng)[0]
        else:
            yield env.step(rng, policy)[0]


def train_curiosity(
    config: ExperimentConfig, seed: int, steps: int
) -> Union[RndCuriosity, CountCuriosity, FarCuriosity]:
    """Feed `steps` observations of the configured toy stream to a fresh module."""
    if config.is_multiroom():
        raise InvalidArgumentError("Curiosity states are trained on toy streams.")
    env_seed, curiosity_seed, walk_seed = derive_seeds(seed, 3)
    env = make_toy_env(config, env_seed)
    source = make_curiosity(config, env.obs_dim, curiosity_seed)
    walk = _toy_walk(env, np.random.default_rng(walk_seed))
    source.observe(env.probe_start())
    for _ in range(steps):
        source.observe(next(walk))
    return source


def probe_sequence(
    config: ExperimentConfig, seed: int, count: int, probe_seed: int = 0
) -> np.ndarray:
    """
    The start observation of the configured toy stream followed by `count - 1`
    observations of a fresh walk seeded with `probe_seed`.
    """
    if count < 1:
        raise InvalidArgumentError("A probe sequence needs at least one observation.")
    env = make_toy_env(config, derive_seeds(seed, 3)[0])
    walk = _toy_walk(env, np.random.default_rng(probe_seed))
    frames = [env.probe_start()] + [next(walk) for _ in range(count - 1)]
    return np.stack(frames)
