"""
Fragmentation-and-recall curiosity.

A single RND module (the short-term memory) scores and learns every
observation. When its surprisal jumps far above the module's own running
average and nothing similar is stored yet, the module is written to a
capacity-bounded long-term memory under the feature of the observation that
created it, and a fresh module takes over (fragmentation). When an
observation's feature is close enough to a stored key, the stored module is
swapped back in (recall).

Example:
    Feed a stream of observations and inspect the fragment timeline:
    ```python
    import numpy as np
    from farcuriosity_lab.memory import FarCuriosity

    fc = FarCuriosity(obs_dim=32, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        reward, event = fc.process_observation(rng.uniform(size=32))
    n_fragments, timeline = fc.ltm_stats()
    ```
"""

from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
from prefect.logging import get_logger

from farcuriosity_lab.constants import (
    DEFAULT_FEATURE_DIM,
    DEFAULT_HIDDEN,
    LTM_CAPACITY,
    PSI,
    REFRACTORY,
    RHO,
    RND_LEARNING_RATE,
    SIM_CAP,
    STATE_FORMAT_VERSION,
    WARMUP,
    Z_THRESHOLD,
)
from farcuriosity_lab.curiosity import (
    Event,
    FeatureExtractor,
    ObservationNormalizer,
    RndModule,
    rnd_new,
)
from farcuriosity_lab.exceptions import InvalidArgumentError, StateFormatError
from farcuriosity_lab.nnkit import check_version, net_from_dict, net_to_dict

logger = get_logger("farcuriosity_lab.memory")

CRITERIA = ("ratio", "zscore")
DIVISION_FLOOR = 1e-12


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between `a` and `b`; 0.0 when either norm is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"Shapes differ: {a.shape} vs {b.shape}.")
    norms = np.linalg.norm(a) * np.linalg.norm(b)
    if norms == 0.0:
        return 0.0
    return float(np.clip(a @ b / norms, -1.0, 1.0))


@dataclass
class FragmentEntry:
    """A stored curiosity module and the feature key it was born under."""

    key: np.ndarray
    module: RndModule
    last_used: int


class MemoryEvent(NamedTuple):
    step: int
    kind: str
    fragment_id: int


class LongTermMemory:
    """
    Capacity-bounded fragment store. When full, storing evicts the entry with
    the smallest `last_used` (the earliest stored one on ties).
    """

    def __init__(self, capacity: int = LTM_CAPACITY):
        if capacity < 1:
            raise InvalidArgumentError(f"capacity must be >= 1, got {capacity}.")
        self.capacity = int(capacity)
        self.entries: List[FragmentEntry] = []
        self._unit_keys: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> FragmentEntry:
        return self.entries[index]

    def __iter__(self) -> Iterator[FragmentEntry]:
        return iter(self.entries)

    @staticmethod
    def _unit(key: np.ndarray) -> np.ndarray:
        norm = np.linalg.norm(key)
        return key / norm if norm > 0.0 else np.zeros_like(key)

    def store(self, entry: FragmentEntry) -> Optional[FragmentEntry]:
        """Append `entry`; returns the evicted entry when capacity was reached."""
        evicted = None
        if len(self.entries) >= self.capacity:
            lru = int(np.argmin([e.last_used for e in self.entries]))
            evicted = self.remove(lru)
        unit = self._unit(np.asarray(entry.key, dtype=np.float64))[None, :]
        self.entries.append(entry)
        if self._unit_keys is None:
            self._unit_keys = unit
        else:
            self._unit_keys = np.vstack([self._unit_keys, unit])
        return evicted

    def remove(self, index: int) -> FragmentEntry:
        if not 0 <= index < len(self.entries):
            raise IndexError(
                f"LTM index {index} out of range for {len(self.entries)} entries."
            )
        entry = self.entries.pop(index)
        self._unit_keys = np.delete(self._unit_keys, index, axis=0)
        if not self.entries:
            self._unit_keys = None
        return entry

    def similarities(self, feat: np.ndarray) -> np.ndarray:
        """Cosine similarity of `feat` to every stored key, in entry order."""
        if not self.entries:
            return np.zeros(0)
        unit = self._unit(np.asarray(feat, dtype=np.float64))
        return np.clip(self._unit_keys @ unit, -1.0, 1.0)


class FarCuriosity:
    """
    Fragmentation-and-recall controller around RND modules sharing one frozen
    target network, which doubles as the feature extractor for keys.

    Args:
        obs_dim: Observation size.
        feature_dim: Output size of target and predictor nets.
        hidden: Hidden width of target and predictor nets.
        seed: Seed for the shared target and every fragment's predictor.
        lr: Adam learning rate of each predictor.
        rho: Fragmentation threshold on surprisal / running average.
        psi: Recall threshold on cosine similarity.
        sim_cap: Fragmentation is skipped when any stored key is at least this
            similar to the current feature.
        warmup: Surprisal samples a module needs before it may fragment.
        criterion: `"ratio"` or `"zscore"`.
        z_threshold: Threshold used by the z-score criterion.
        capacity: Long-term memory capacity.
        refractory: Steps after a structural event during which no other
            structural event may happen.
        recall_enabled: Disable to keep fragmenting without ever recalling.
        obs_norm: Optional running observation standardization.
    """

    def __init__(
        self,
        obs_dim: int,
        feature_dim: int = DEFAULT_FEATURE_DIM,
        hidden: int = DEFAULT_HIDDEN,
        seed: int = 0,
        lr: float = RND_LEARNING_RATE,
        rho: float = RHO,
        psi: float = PSI,
        sim_cap: float = SIM_CAP,
        warmup: int = WARMUP,
        criterion: str = "ratio",
        z_threshold: float = Z_THRESHOLD,
        capacity: int = LTM_CAPACITY,
        refractory: int = REFRACTORY,
        recall_enabled: bool = True,
        obs_norm: Optional[ObservationNormalizer] = None,
    ):
        if rho <= 1.0:
            raise InvalidArgumentError(f"rho must exceed 1, got {rho}.")
        if not 0.0 < psi <= 1.0:
            raise InvalidArgumentError(f"psi must lie in (0, 1], got {psi}.")
        if not 0.0 <= sim_cap < 1.0:
            raise InvalidArgumentError(f"sim_cap must lie in [0, 1), got {sim_cap}.")
        if criterion not in CRITERIA:
            raise InvalidArgumentError(
                f"Unknown fragmentation criterion {criterion!r}."
            )
        if warmup < 0 or refractory < 0:
            raise InvalidArgumentError("warmup and refractory must be non-negative.")
        self.obs_dim = obs_dim
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.seed = int(seed)
        self.lr = lr
        self.rho = rho
        self.psi = psi
        self.sim_cap = sim_cap
        self.warmup = warmup
        self.criterion = criterion
        self.z_threshold = z_threshold
        self.refractory = refractory
        self.recall_enabled = recall_enabled
        self.obs_norm = obs_norm
        self.ltm = LongTermMemory(capacity)
        self.global_step = 0
        self.event_log: List[MemoryEvent] = []
        self._cooldown = 0
        self._next_id = 1

        self.active: RndModule = rnd_new(
            obs_dim, feature_dim, hidden, seed=self._module_seed(0), lr=lr
        )
        self.extractor = FeatureExtractor(self.active.target)
        self.active_key: Optional[np.ndarray] = None

    def _module_seed(self, fragment_id: int) -> int:
        sequence = np.random.SeedSequence([self.seed, fragment_id])
        return int(sequence.generate_state(1)[0])

    def _prepare(self, obs, update: bool) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,):
            raise InvalidArgumentError(
                f"Observation of shape {obs.shape} does not match ({self.obs_dim},)."
            )
        if self.obs_norm is not None:
            return self.obs_norm.normalize(obs, update=update)
        return obs

    def _log_event(self, kind: Event, fragment_id: int) -> None:
        self.event_log.append(MemoryEvent(self.global_step, kind.value, fragment_id))
        logger.debug(
            "Step %d: %s fragment %d (%d in LTM)",
            self.global_step,
            kind.value,
            fragment_id,
            len(self.ltm),
        )

    def _store_active(self) -> None:
        evicted = self.ltm.store(
            FragmentEntry(self.active_key, self.active, self.global_step)
        )
        if evicted is not None:
            logger.info(
                "LTM full at step %d: evicted fragment %d (last used at step %d)",
                self.global_step,
                evicted.module.fragment_id,
                evicted.last_used,
            )

    def check_recall(self, feat: np.ndarray) -> Optional[int]:
        """Index of the most similar stored entry at or above `psi`, if any."""
        sims = self.ltm.similarities(feat)
        if sims.size == 0:
            return None
        best = int(np.argmax(sims))
        return best if sims[best] >= self.psi else None

    def check_fragmentation(self, surprisal: float, feat: np.ndarray) -> bool:
        """
        Whether `surprisal` warrants a new fragment, judged against the active
        module's statistics before `surprisal` is recorded.
        """
        stats = self.active.surprisal_stats
        if stats.count < self.warmup:
            return False
        if self.criterion == "ratio":
            average = 0.0 if stats.ema is None else stats.ema
            if average >= DIVISION_FLOOR and surprisal / average <= self.rho:
                return False
        else:
            sigma = stats.std
            if sigma >= DIVISION_FLOOR:
                if (surprisal - stats.mean) / sigma <= self.z_threshold:
                    return False
            elif surprisal <= stats.mean:
                return False
        sims = self.ltm.similarities(feat)
        return sims.size == 0 or float(sims.max()) < self.sim_cap

    def fragment(self, feat: np.ndarray) -> None:
        """Store the active module and start a fresh one keyed by `feat`."""
        self._store_active()
        fragment_id = self._next_id
        self._next_id += 1
        self.active = rnd_new(
            self.obs_dim,
            self.feature_dim,
            self.hidden,
            seed=self._module_seed(fragment_id),
            shared_target=self.extractor,
            lr=self.lr,
            birth_step=self.global_step,
            fragment_id=fragment_id,
        )
        self.active_key = np.array(feat, dtype=np.float64)
        self._log_event(Event.FRAGMENTED, fragment_id)

    def recall(self, index: int) -> None:
        """Swap the stored entry at `index` with the active module."""
        entry = self.ltm.remove(index)
        self._store_active()
        self.active = entry.module
        self.active_key = entry.key
        self._log_event(Event.RECALLED, entry.module.fragment_id)

    def process_observation(self, obs) -> Tuple[float, Event]:
        """
        Recall if a stored key matches, score `obs` with the active module,
        fragment if the score is anomalous, then train the active module.

        Returns:
            The surprisal of the module that was active when `obs` was scored,
            and the structural event of this step.
        """
        x = self._prepare(obs, update=True)
        feat = self.extractor.feature(x)
        if self.active_key is None:
            self.active_key = feat.copy()
        event = Event.NONE
        quiet = self._cooldown > 0

        if self.recall_enabled and not quiet:
            index = self.check_recall(feat)
            if index is not None:
                self.recall(index)
                event = Event.RECALLED

        surprisal = self.active.reward(x, target_out=feat)
        fragmenting = (
            event is Event.NONE
            and not quiet
            and self.check_fragmentation(surprisal, feat)
        )
        self.active.surprisal_stats.update(surprisal)
        if fragmenting:
            self.fragment(feat)
            event = Event.FRAGMENTED

        self.active.train(x, target_out=feat)
        if event is not Event.NONE:
            self._cooldown = self.refractory
        elif self._cooldown > 0:
            self._cooldown -= 1
        self.global_step += 1
        return surprisal, event

    observe = process_observation

    def probe_reward(self, obs) -> float:
        """
        Reward the module `process_observation` would select for `obs`, without
        touching any state.
        """
        x = self._prepare(obs, update=False)
        feat = self.extractor.feature(x)
        module = self.active
        if self.recall_enabled:
            index = self.check_recall(feat)
            if index is not None:
                module = self.ltm[index].module
        return module.reward(x, target_out=feat)

    probe = probe_reward

    def ltm_stats(self) -> Tuple[int, List[MemoryEvent]]:
        """Number of fragments (stored plus active) and the event timeline."""
        return len(self.ltm) + 1, list(self.event_log)

    def n_fragments(self) -> int:
        return len(self.ltm) + 1

    def to_dict(self) -> Dict[str, Any]:
        """Loss-free, versioned JSON-ready document of the full state."""
        return {
            "version": STATE_FORMAT_VERSION,
            "settings": {
                "obs_dim": self.obs_dim,
                "feature_dim": self.feature_dim,
                "hidden": self.hidden,
                "seed": self.seed,
                "lr": self.lr,
                "rho": self.rho,
                "psi": self.psi,
                "sim_cap": self.sim_cap,
                "warmup": self.warmup,
                "criterion": self.criterion,
                "z_threshold": self.z_threshold,
                "capacity": self.ltm.capacity,
                "refractory": self.refractory,
                "recall_enabled": self.recall_enabled,
            },
            "extractor": net_to_dict(self.extractor.net),
            "obs_norm": None if self.obs_norm is None else self.obs_norm.to_dict(),
            "active": self.active.to_dict(include_target=False),
            "active_key": None if self.active_key is None else self.active_key.tolist(),
            "ltm": [
                {
                    "key": entry.key.tolist(),
                    "last_used": entry.last_used,
                    "module": entry.module.to_dict(include_target=False),
                }
                for entry in self.ltm
            ],
            "global_step": self.global_step,
            "event_log": [list(event) for event in self.event_log],
            "cooldown": self._cooldown,
            "next_id": self._next_id,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "FarCuriosity":
        check_version(doc, "FARCuriosity state", STATE_FORMAT_VERSION)
        try:
            fc = cls(**doc["settings"])
            target = net_from_dict(doc["extractor"])
            fc.extractor = FeatureExtractor(target)
            if doc["obs_norm"] is not None:
                fc.obs_norm = ObservationNormalizer.from_dict(doc["obs_norm"])
            fc.active = RndModule.from_dict(doc["active"], target=target)
            if doc["active_key"] is not None:
                fc.active_key = np.asarray(doc["active_key"], dtype=np.float64)
            for item in doc["ltm"]:
                fc.ltm.store(
                    FragmentEntry(
                        key=np.asarray(item["key"], dtype=np.float64),
                        module=RndModule.from_dict(item["module"], target=target),
                        last_used=int(item["last_used"]),
                    )
                )
            fc.global_step = int(doc["global_step"])
            fc.event_log = [
                MemoryEvent(int(s), k, int(f)) for s, k, f in doc["event_log"]
            ]
            fc._cooldown = int(doc["cooldown"])
            fc._next_id = int(doc["next_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise StateFormatError(f"Malformed FARCuriosity state: {exc}") from exc
        return fc
