"""
Intrinsic-reward generators.

- `RndModule`: a frozen random target net and a trainable predictor; the
  prediction error on an observation is its intrinsic reward (surprisal). This
  is the unit that `farcuriosity_lab.memory` fragments and recalls.
- `VisitCounter`: MD5-keyed visit counts with exponential decay,
  rewarding `1 / sqrt(N_visit(o))`.
- `RunningStat`: streaming count/mean/variance plus an EMA, used for
  surprisal statistics and intrinsic-reward normalization.

`RndCuriosity` and `CountCuriosity` wrap the modules behind the intrinsic
source interface shared with `farcuriosity_lab.memory.FarCuriosity`:
`observe(obs)` scores and learns, `probe(obs)` is a pure read.
"""

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Protocol, Tuple

import numpy as np

from farcuriosity_lab.constants import (
    DEFAULT_FEATURE_DIM,
    DEFAULT_HIDDEN,
    EMA_COEF,
    NORMALIZE_FLOOR,
    OBS_CLIP,
    RND_LEARNING_RATE,
)
from farcuriosity_lab.exceptions import InvalidArgumentError, StateFormatError
from farcuriosity_lab.nnkit import (
    AdamState,
    DenseNet,
    adam_from_dict,
    adam_step,
    adam_to_dict,
    dense_init,
    forward,
    mse_loss_and_grads,
    net_from_dict,
    net_to_dict,
)


class Event(str, Enum):
    """Structural event produced while processing one observation."""

    NONE = "none"
    FRAGMENTED = "fragmented"
    RECALLED = "recalled"


@dataclass
class RunningStat:
    """
    Streaming statistics of a scalar stream.

    `mean`/`variance` follow Welford's algorithm (population variance); `ema`
    is initialized lazily from the first sample.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    ema: Optional[float] = None
    ema_coef: float = EMA_COEF

    def update(self, x: float) -> None:
        x = float(x)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        if self.ema is None:
            self.ema = x
        else:
            self.ema = self.ema_coef * self.ema + (1.0 - self.ema_coef) * x

    @property
    def variance(self) -> float:
        if self.count == 0:
            return 0.0
        return max(self.m2 / self.count, 0.0)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def merge(self, other: "RunningStat") -> "RunningStat":
        """Combine two disjoint streams (Chan et al. parallel update)."""
        n = self.count + other.count
        if n == 0:
            return RunningStat(ema_coef=self.ema_coef)
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta**2 * self.count * other.count / n
        emas = [(s.ema, s.count) for s in (self, other) if s.ema is not None]
        ema = sum(e * c for e, c in emas) / sum(c for _, c in emas) if emas else None
        return RunningStat(n, mean, m2, ema, self.ema_coef)

    def copy(self) -> "RunningStat":
        return RunningStat(self.count, self.mean, self.m2, self.ema, self.ema_coef)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "count": self.count,
            "mean": self.mean,
            "m2": self.m2,
            "ema": self.ema,
            "ema_coef": self.ema_coef,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "RunningStat":
        return cls(
            count=int(doc["count"]),
            mean=float(doc["mean"]),
            m2=float(doc["m2"]),
            ema=None if doc["ema"] is None else float(doc["ema"]),
            ema_coef=float(doc["ema_coef"]),
        )


def normalize_intrinsic(stats: RunningStat, r: float) -> float:
    """
    Divide `r` by the running mean of earlier samples, then record `r`.

    The mean is initialized lazily from the first sample, so the first call
    returns 1.0 (or `r` itself when it is below the division floor).
    """
    if stats.count == 0:
        stats.update(r)
        return 1.0 if r >= NORMALIZE_FLOOR else r
    out = r / stats.mean if stats.mean >= NORMALIZE_FLOOR else r
    stats.update(r)
    return out


@dataclass
class FeatureExtractor:
    """A frozen net `phi` shared by every fragment; the RND target by default."""

    net: DenseNet

    @property
    def in_dim(self) -> int:
        return self.net.in_dim

    @property
    def dim(self) -> int:
        return self.net.out_dim

    def feature(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.in_dim:
            raise InvalidArgumentError(
                f"Observation of size {obs.shape[-1]} does not match extractor "
                f"input size {self.in_dim}."
            )
        return forward(self.net, obs)


@dataclass
class ObservationNormalizer:
    """Per-dimension running standardization clipped to `[-clip, clip]`."""

    dim: int
    clip: float = OBS_CLIP
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros(self.dim)

    def update(self, obs) -> None:
        obs = np.asarray(obs, dtype=np.float64)
        self.count += 1
        delta = obs - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (obs - self.mean)

    def normalize(self, obs, update: bool = True) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if update:
            self.update(obs)
        if self.count < 2:
            std = np.ones(self.dim)
        else:
            std = np.sqrt(self.m2 / self.count) + 1e-8
        return np.clip((obs - self.mean) / std, -self.clip, self.clip)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "clip": self.clip,
            "count": self.count,
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ObservationNormalizer":
        return cls(
            dim=int(doc["dim"]),
            clip=float(doc["clip"]),
            count=int(doc["count"]),
            mean=np.asarray(doc["mean"], dtype=np.float64),
            m2=np.asarray(doc["m2"], dtype=np.float64),
        )


@dataclass
class RndModule:
    """
    One curiosity fragment: frozen target, trainable predictor and the
    statistics of the surprisal it produced while active.
    """

    target: DenseNet
    predictor: DenseNet
    adam: AdamState
    surprisal_stats: RunningStat = field(default_factory=RunningStat)
    birth_step: int = 0
    fragment_id: int = 0

    @property
    def obs_dim(self) -> int:
        return self.predictor.in_dim

    def _check(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise InvalidArgumentError(
                f"Observation of size {obs.shape[-1]} does not match module input "
                f"size {self.obs_dim}."
            )
        return obs

    def reward(
        self, obs, record: bool = False, target_out: Optional[np.ndarray] = None
    ) -> float:
        """
        Prediction error on `obs`; never trains. With `record`, the value is
        added to `surprisal_stats`.
        """
        obs = self._check(obs)
        if target_out is None:
            target_out = forward(self.target, obs)
        value = float(np.mean((forward(self.predictor, obs) - target_out) ** 2))
        if record:
            self.surprisal_stats.update(value)
        return value

    def train(self, obs_batch, target_out: Optional[np.ndarray] = None) -> float:
        """One Adam step on the batch-mean MSE; returns the pre-step loss."""
        batch = self._check(obs_batch)
        if batch.size == 0:
            raise InvalidArgumentError("Cannot train on an empty batch.")
        if target_out is None:
            target_out = forward(self.target, batch)
        loss, grads = mse_loss_and_grads(self.predictor, batch, target_out)
        adam_step(self.adam, self.predictor.params(), grads)
        return loss

    def to_dict(self, include_target: bool = True) -> Dict[str, Any]:
        doc = {
            "predictor": net_to_dict(self.predictor),
            "adam": adam_to_dict(self.adam),
            "surprisal_stats": self.surprisal_stats.to_dict(),
            "birth_step": self.birth_step,
            "fragment_id": self.fragment_id,
        }
        if include_target:
            doc["target"] = net_to_dict(self.target)
        return doc

    @classmethod
    def from_dict(
        cls, doc: Dict[str, Any], target: Optional[DenseNet] = None
    ) -> "RndModule":
        try:
            if target is None:
                target = net_from_dict(doc["target"])
            return cls(
                target=target,
                predictor=net_from_dict(doc["predictor"]),
                adam=adam_from_dict(doc["adam"]),
                surprisal_stats=RunningStat.from_dict(doc["surprisal_stats"]),
                birth_step=int(doc["birth_step"]),
                fragment_id=int(doc.get("fragment_id", 0)),
            )
        except KeyError as exc:
            raise StateFormatError(f"RND module document lacks {exc}.") from exc


def _derive_seeds(seed: Optional[int]) -> Tuple[int, int]:
    target_seed, predictor_seed = np.random.SeedSequence(seed).generate_state(2)
    return int(target_seed), int(predictor_seed)


def rnd_new(
    obs_dim: int,
    out_dim: int = DEFAULT_FEATURE_DIM,
    hidden: int = DEFAULT_HIDDEN,
    seed: Optional[int] = None,
    shared_target: Optional[FeatureExtractor] = None,
    lr: float = RND_LEARNING_RATE,
    birth_step: int = 0,
    fragment_id: int = 0,
) -> RndModule:
    """
    Create an RND module with two fully connected layers per net.

    With `shared_target`, the target aliases the extractor's frozen net and
    only a new predictor is drawn from `seed`.
    """
    if obs_dim <= 0 or out_dim <= 0 or hidden <= 0:
        raise InvalidArgumentError(
            f"Dimensions must be positive: obs_dim={obs_dim}, out_dim={out_dim}, "
            f"hidden={hidden}."
        )
    target_seed, predictor_seed = _derive_seeds(seed)
    if shared_target is not None:
        if shared_target.in_dim != obs_dim or shared_target.dim != out_dim:
            raise InvalidArgumentError(
                f"Shared target maps {shared_target.in_dim} -> {shared_target.dim}, "
                f"module needs {obs_dim} -> {out_dim}."
            )
        target = shared_target.net
    else:
        target = dense_init([obs_dim, hidden, out_dim], seed=target_seed)
    predictor = dense_init([obs_dim, hidden, out_dim], seed=predictor_seed)
    return RndModule(
        target=target,
        predictor=predictor,
        adam=AdamState.for_params(predictor.params(), lr=lr),
        birth_step=birth_step,
        fragment_id=fragment_id,
    )


def observation_key(obs) -> str:
    """
    MD5 of the canonical byte encoding: integer and boolean cell codes as
    little-endian int64, everything else as little-endian float64, row-major.
    """
    arr = np.asarray(obs)
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        raw = np.ascontiguousarray(arr, dtype="<i8").tobytes()
    else:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return hashlib.md5(raw).hexdigest()


class VisitCounter:
    """
    Visit counts keyed by `observation_key`, decayed as
    `N(o) <- gamma_decay * N(o) + [o visited]` once per environment step.
    """

    def __init__(self, gamma_decay: float = 1.0):
        if not 0.0 < gamma_decay <= 1.0:
            raise InvalidArgumentError(
                f"gamma_decay must lie in (0, 1], got {gamma_decay}."
            )
        self.gamma_decay = float(gamma_decay)
        self._index: Dict[str, int] = {}
        self._counts = np.zeros(64)

    def __len__(self) -> int:
        return len(self._index)

    def _slot(self, key: str) -> int:
        slot = self._index.get(key)
        if slot is None:
            slot = len(self._index)
            if slot == self._counts.size:
                self._counts = np.concatenate([self._counts, np.zeros(slot)])
            self._index[key] = slot
        return slot

    def count(self, obs) -> float:
        slot = self._index.get(observation_key(obs))
        return 0.0 if slot is None else float(self._counts[slot])

    def decay_step(self, visited=None) -> None:
        """Decay every count, then add one visit to `visited` (if any)."""
        if self.gamma_decay != 1.0:
            self._counts[: len(self._index)] *= self.gamma_decay
        if visited is not None:
            self._counts[self._slot(observation_key(visited))] += 1.0

    def count_reward(self, obs) -> float:
        """Register this step's visit and return `1 / sqrt(N(obs))`."""
        self.decay_step(obs)
        return float(1.0 / np.sqrt(self._counts[self._index[observation_key(obs)]]))

    def peek_reward(self, obs) -> float:
        n = self.count(obs)
        return float(1.0 / np.sqrt(n)) if n > 0.0 else 1.0

    def counts(self) -> Dict[str, float]:
        return {key: float(self._counts[slot]) for key, slot in self._index.items()}

    def to_dict(self) -> Dict[str, Any]:
        return {"gamma_decay": self.gamma_decay, "counts": self.counts()}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "VisitCounter":
        counter = cls(float(doc["gamma_decay"]))
        for key, value in doc["counts"].items():
            counter._counts[counter._slot(key)] = float(value)
        return counter


class IntrinsicSource(Protocol):
    """Anything that turns observations into intrinsic rewards."""

    def observe(self, obs) -> Tuple[float, Event]:
        ...

    def probe(self, obs) -> float:
        ...


class RndCuriosity:
    """Monolithic RND: one module scoring and training on every observation."""

    def __init__(
        self,
        module: RndModule,
        obs_norm: Optional[ObservationNormalizer] = None,
    ):
        self.module = module
        self.obs_norm = obs_norm

    def _prepare(self, obs, update: bool) -> np.ndarray:
        if self.obs_norm is None:
            return np.asarray(obs, dtype=np.float64)
        return self.obs_norm.normalize(obs, update=update)

    def observe(self, obs) -> Tuple[float, Event]:
        x = self._prepare(obs, update=True)
        target_out = forward(self.module.target, x)
        reward = self.module.reward(x, record=True, target_out=target_out)
        self.module.train(x, target_out=target_out)
        return reward, Event.NONE

    def probe(self, obs) -> float:
        return self.module.reward(self._prepare(obs, update=False))

    def n_fragments(self) -> int:
        return 1


class CountCuriosity:
    """Count-based bonus `1 / sqrt(N_visit(o))` over a decaying counter."""

    def __init__(self, counter: VisitCounter):
        self.counter = counter

    def observe(self, obs) -> Tuple[float, Event]:
        return self.counter.count_reward(obs), Event.NONE

    def probe(self, obs) -> float:
        return self.counter.peek_reward(obs)

    def n_fragments(self) -> int:
        return 1

