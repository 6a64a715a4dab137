"""
Desk-scale environments and trajectory analytics.

- `ToyGrid`: a 10x10 grid whose cells emit fixed random 32-dim observations;
  an agent wanders randomly, never re-entering the start cell mid-episode,
  under reset-free, fixed-length or increasing-length episodes.
- `TwoRegionStream`: two disjoint sets of fixed random observations visited in
  long alternating blocks.
- `MultiRoomGrid`: procedurally generated chain of rooms joined by doors, seen
  through a 7x7x3 egocentric view, with seven actions and a time-discounted
  goal reward.
- `Trajectory` and `heterogeneity`: per-pixel temporal standard deviation
  averaged over pixels.
"""

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from farcuriosity_lab.constants import (
    MULTIROOM_MAX_ROOM,
    MULTIROOM_MIN_ROOM,
    MULTIROOM_T_MAX,
    N_ACTIONS,
    TOY_FIXED_LENGTH,
    TOY_HEIGHT,
    TOY_INCREASE_FACTOR,
    TOY_OBS_DIM,
    TOY_WIDTH,
    TWO_REGION_BLOCK,
    TWO_REGION_SIZE,
    VIEW_SIZE,
)
from farcuriosity_lab.exceptions import InvalidArgumentError, StateFormatError
from farcuriosity_lab.nnkit import Rng, make_rng

REGIMES = ("reset-free", "fixed", "increasing")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


class ToyGrid:
    """
    Random-walk grid with a fixed uniform(0, 1) observation per cell.

    Args:
        seed: Seed of the observation table.
        regime: `"reset-free"`, `"fixed"` (episodes of `fixed_length` steps) or
            `"increasing"` (episode `n` lasts `increase_factor * n` steps).
    """

    def __init__(
        self,
        seed: Optional[int] = None,
        regime: str = "reset-free",
        width: int = TOY_WIDTH,
        height: int = TOY_HEIGHT,
        obs_dim: int = TOY_OBS_DIM,
        fixed_length: int = TOY_FIXED_LENGTH,
        increase_factor: int = TOY_INCREASE_FACTOR,
    ):
        if regime not in REGIMES:
            raise InvalidArgumentError(f"Unknown toy grid regime {regime!r}.")
        if width < 2 or height < 2 or obs_dim < 1:
            raise InvalidArgumentError("The toy grid needs at least 2x2 cells.")
        self.regime = regime
        self.width = width
        self.height = height
        self.fixed_length = fixed_length
        self.increase_factor = increase_factor
        self.table = make_rng(seed).uniform(0.0, 1.0, size=(height, width, obs_dim))
        self.table.setflags(write=False)
        self.start = (height // 2, width // 2)
        self.position = self.start
        self.episode = 1
        self.t = 0

    @property
    def obs_dim(self) -> int:
        return self.table.shape[-1]

    def episode_length(self) -> Optional[int]:
        if self.regime == "fixed":
            return self.fixed_length
        if self.regime == "increasing":
            return self.increase_factor * self.episode
        return None

    def observation(self) -> np.ndarray:
        return self.table[self.position]

    def probe_start(self) -> np.ndarray:
        """The start cell's observation; the agent does not move."""
        return self.table[self.start]

    def _legal(self, row: int, col: int) -> bool:
        inside = 0 <= row < self.height and 0 <= col < self.width
        return inside and (row, col) != self.start

    def step(self, rng: Rng, policy=None) -> Tuple[np.ndarray, bool]:
        """
        Move to a random legal neighbour, redrawing illegal moves. Moves come
        from `policy.act` when a policy is given, uniform draws otherwise.

        Returns:
            The new cell's observation and whether the episode just ended, in
            which case the agent is already back on the start cell.
        """
        row, col = self.position
        while True:
            if policy is None:
                action = int(rng.integers(len(MOVES)))
            else:
                action = policy.act(self.observation(), rng)[0]
            d_row, d_col = MOVES[action]
            if self._legal(row + d_row, col + d_col):
                break
        self.position = (row + d_row, col + d_col)
        obs = self.observation()
        self.t += 1
        length = self.episode_length()
        ended = length is not None and self.t >= length
        if ended:
            self.position = self.start
            self.t = 0
            self.episode += 1
        return obs, ended


class TwoRegionStream:
    """
    Two disjoint observation sets, each supported on its own slice of the
    observation dimensions, visited in alternating blocks of `block_length`
    steps. Each block opens with its region's anchor observation and then
    sweeps the region in a fresh random order, so an observation is seen again
    within two sweeps. Region 0's anchor is the probe.
    """

    def __init__(
        self,
        seed: Optional[int] = None,
        n_per_region: int = TWO_REGION_SIZE,
        obs_dim: int = TOY_OBS_DIM,
        block_length: int = TWO_REGION_BLOCK,
        n_regions: int = 2,
    ):
        if n_regions < 2 or obs_dim < n_regions or n_per_region < 1:
            raise InvalidArgumentError("Need at least two non-empty regions.")
        if block_length < 1:
            raise InvalidArgumentError("block_length must be positive.")
        self.block_length = block_length
        self.n_regions = n_regions
        rng = make_rng(seed)
        self.table = np.zeros((n_regions, n_per_region, obs_dim))
        bounds = np.linspace(0, obs_dim, n_regions + 1).astype(int)
        for region, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
            self.table[region, :, lo:hi] = rng.uniform(size=(n_per_region, hi - lo))
        self.table.setflags(write=False)
        self.t = 0
        self._sweep: List[int] = []

    @property
    def obs_dim(self) -> int:
        return self.table.shape[-1]

    @property
    def region(self) -> int:
        return (self.t // self.block_length) % self.n_regions

    def anchor(self, region: int) -> np.ndarray:
        return self.table[region, 0]

    def probe_start(self) -> np.ndarray:
        return self.anchor(0)

    def step(self, rng: Rng) -> Tuple[np.ndarray, bool]:
        """Next observation and whether it closes the current block."""
        region = self.region
        if self.t % self.block_length == 0:
            index = 0
            self._sweep = []
        else:
            if not self._sweep:
                self._sweep = rng.permutation(self.table.shape[1]).tolist()
            index = self._sweep.pop()
        self.t += 1
        return self.table[region, index], self.t % self.block_length == 0


# MultiRoom code books
EMPTY, WALL, DOOR, GOAL = 1, 2, 3, 4
UNSEEN = 0
N_OBJECTS = 5
COLORS = ("red", "green", "blue", "purple", "yellow", "grey")
GREEN, GREY = COLORS.index("green"), COLORS.index("grey")
N_STATES = 2
OPEN, CLOSED = 0, 1
DIRECTIONS = ((1, 0), (0, 1), (-1, 0), (0, -1))
ACTIONS = ("left", "right", "forward", "pickup", "drop", "toggle", "done")
AGENT_GLYPHS = ">v<^"


def goal_reward(t: int, t_max: int = MULTIROOM_T_MAX) -> float:
    """Extrinsic reward for reaching the goal at time `t`."""
    return 1.0 - 0.9 * t / t_max


@dataclass
class Room:
    left: int
    top: int
    width: int
    height: int

    def interior(self) -> List[Tuple[int, int]]:
        return [
            (x, y)
            for y in range(self.top + 1, self.top + self.height - 1)
            for x in range(self.left + 1, self.left + self.width - 1)
        ]

    def overlaps(self, other: "Room") -> bool:
        return not (
            self.left + self.width <= other.left
            or other.left + other.width <= self.left
            or self.top + self.height <= other.top
            or other.top + other.height <= self.top
        )


class MultiRoomGrid:
    """
    Chain of `n_rooms` rooms (sizes 4 to 8, walls included), consecutive rooms
    sharing a wall with one closed door. The agent starts in the first room
    and must reach the goal in the last one within `t_max` steps.

    Observations are `uint8` arrays of shape `(7, 7, 3)`: object type, color
    and door state of the cells in front of the agent, which sits at the bottom
    centre facing up. Walls and closed doors hide what is behind them.
    """

    def __init__(
        self,
        n_rooms: int = 2,
        t_max: int = MULTIROOM_T_MAX,
        seed: Optional[int] = None,
        min_room: int = MULTIROOM_MIN_ROOM,
        max_room: int = MULTIROOM_MAX_ROOM,
    ):
        if not 2 <= n_rooms <= 6:
            raise InvalidArgumentError(f"n_rooms must lie in [2, 6], got {n_rooms}.")
        if not 4 <= min_room <= max_room:
            raise InvalidArgumentError("Room sizes need 4 <= min_room <= max_room.")
        self.n_rooms = n_rooms
        self.t_max = t_max
        self.min_room = min_room
        self.max_room = max_room
        self.rng = make_rng(seed)
        self.rooms: List[Room] = []
        self.step_count = 0

    # generation

    def _place(self, prev: Room) -> Optional[Room]:
        rng = self.rng
        width = int(rng.integers(self.min_room, self.max_room + 1))
        height = int(rng.integers(self.min_room, self.max_room + 1))
        if rng.integers(2) == 0:
            door_y = int(rng.integers(prev.top + 1, prev.top + prev.height - 1))
            top = int(rng.integers(door_y - height + 2, door_y))
            room = Room(prev.left + prev.width - 1, top, width, height)
        else:
            door_x = int(rng.integers(prev.left + 1, prev.left + prev.width - 1))
            left = int(rng.integers(door_x - width + 2, door_x))
            room = Room(left, prev.top + prev.height - 1, width, height)
        if any(room.overlaps(other) for other in self.rooms[:-1]):
            return None
        return room

    def _layout(self) -> None:
        while True:
            first = Room(
                0,
                0,
                int(self.rng.integers(self.min_room, self.max_room + 1)),
                int(self.rng.integers(self.min_room, self.max_room + 1)),
            )
            self.rooms = [first]
            for _ in range(self.n_rooms - 1):
                for _ in range(20):
                    room = self._place(self.rooms[-1])
                    if room is not None:
                        self.rooms.append(room)
                        break
                else:
                    break
            if len(self.rooms) == self.n_rooms:
                return

    def _generate(self) -> None:
        self._layout()
        min_x = min(room.left for room in self.rooms)
        min_y = min(room.top for room in self.rooms)
        for room in self.rooms:
            room.left -= min_x
            room.top -= min_y
        width = max(room.left + room.width for room in self.rooms)
        height = max(room.top + room.height for room in self.rooms)
        self.objects = np.full((height, width), WALL, dtype=np.uint8)
        self.colors = np.full((height, width), GREY, dtype=np.uint8)
        self.states = np.zeros((height, width), dtype=np.uint8)
        for room in self.rooms:
            for x, y in room.interior():
                self.objects[y, x] = EMPTY
                self.colors[y, x] = 0

        prev_color = None
        for prev, room in zip(self.rooms, self.rooms[1:]):
            if room.left == prev.left + prev.width - 1:
                x = room.left
                lo = max(prev.top, room.top) + 1
                hi = min(prev.top + prev.height, room.top + room.height) - 1
                y = int(self.rng.integers(lo, hi))
            else:
                y = room.top
                lo = max(prev.left, room.left) + 1
                hi = min(prev.left + prev.width, room.left + room.width) - 1
                x = int(self.rng.integers(lo, hi))
            choices = [c for c in range(len(COLORS)) if c != prev_color]
            prev_color = int(self.rng.choice(choices))
            self.objects[y, x] = DOOR
            self.colors[y, x] = prev_color
            self.states[y, x] = CLOSED

        start_cells = self.rooms[0].interior()
        self.agent_pos = start_cells[int(self.rng.integers(len(start_cells)))]
        self.agent_dir = int(self.rng.integers(4))
        goal_cells = self.rooms[-1].interior()
        self.goal_pos = goal_cells[int(self.rng.integers(len(goal_cells)))]
        self.objects[self.goal_pos[1], self.goal_pos[0]] = GOAL
        self.colors[self.goal_pos[1], self.goal_pos[0]] = GREEN
        if not self.solvable():
            raise RuntimeError("Generated MultiRoom map has no start-to-goal path.")

    def solvable(self) -> bool:
        """BFS from the agent to the goal, treating every door as passable."""
        height, width = self.objects.shape
        seen = {self.agent_pos}
        queue = deque([self.agent_pos])
        while queue:
            x, y = queue.popleft()
            if (x, y) == self.goal_pos:
                return True
            for dx, dy in DIRECTIONS:
                nx, ny = x + dx, y + dy
                if (
                    0 <= nx < width
                    and 0 <= ny < height
                    and (nx, ny) not in seen
                    and self.objects[ny, nx] != WALL
                ):
                    seen.add((nx, ny))
                    queue.append((nx, ny))
        return False

    # dynamics

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        """Generate a fresh map (reseeding first when `seed` is given)."""
        if seed is not None:
            self.rng = make_rng(seed)
        self._generate()
        self.step_count = 0
        return self.observation()

    def _front(self) -> Tuple[int, int]:
        dx, dy = DIRECTIONS[self.agent_dir]
        return self.agent_pos[0] + dx, self.agent_pos[1] + dy

    def _walkable(self, x: int, y: int) -> bool:
        height, width = self.objects.shape
        if not (0 <= x < width and 0 <= y < height):
            return False
        obj = self.objects[y, x]
        return obj in (EMPTY, GOAL) or (obj == DOOR and self.states[y, x] == OPEN)

    def step(self, action: int) -> Tuple[np.ndarray, float, bool]:
        if not 0 <= int(action) < N_ACTIONS:
            raise InvalidArgumentError(
                f"Action must lie in [0, {N_ACTIONS - 1}], got {action}."
            )
        action = ACTIONS[int(action)]
        self.step_count += 1
        reward, done = 0.0, False
        if action == "left":
            self.agent_dir = (self.agent_dir - 1) % 4
        elif action == "right":
            self.agent_dir = (self.agent_dir + 1) % 4
        elif action == "forward":
            fx, fy = self._front()
            if self._walkable(fx, fy):
                self.agent_pos = (fx, fy)
                if self.agent_pos == self.goal_pos:
                    reward, done = goal_reward(self.step_count, self.t_max), True
        elif action == "toggle":
            fx, fy = self._front()
            height, width = self.objects.shape
            if 0 <= fx < width and 0 <= fy < height and self.objects[fy, fx] == DOOR:
                self.states[fy, fx] = OPEN if self.states[fy, fx] == CLOSED else CLOSED
        if not done and self.step_count >= self.t_max:
            done = True
        return self.observation(), reward, done

    # observation

    def _view_cell(self, vx: int, vy: int) -> Tuple[int, int, int]:
        forward = VIEW_SIZE - 1 - vy
        lateral = vx - VIEW_SIZE // 2
        dx, dy = DIRECTIONS[self.agent_dir]
        x = self.agent_pos[0] + forward * dx - lateral * dy
        y = self.agent_pos[1] + forward * dy + lateral * dx
        height, width = self.objects.shape
        if not (0 <= x < width and 0 <= y < height):
            return WALL, GREY, 0
        return int(self.objects[y, x]), int(self.colors[y, x]), int(self.states[y, x])

    def observation(self) -> np.ndarray:
        """Egocentric `(7, 7, 3)` view with occluded cells marked unseen."""
        view = np.zeros((VIEW_SIZE, VIEW_SIZE, 3), dtype=np.uint8)
        for vy in range(VIEW_SIZE):
            for vx in range(VIEW_SIZE):
                view[vy, vx] = self._view_cell(vx, vy)
        opaque = (view[..., 0] == WALL) | (
            (view[..., 0] == DOOR) & (view[..., 2] == CLOSED)
        )
        mask = np.zeros((VIEW_SIZE, VIEW_SIZE), dtype=bool)
        mask[VIEW_SIZE - 1, VIEW_SIZE // 2] = True
        last = VIEW_SIZE - 1
        for vy in range(last, -1, -1):
            for vx in range(0, last):
                if mask[vy, vx] and not opaque[vy, vx]:
                    mask[vy, vx + 1] = True
                    if vy > 0:
                        mask[vy - 1, vx + 1] = True
                        mask[vy - 1, vx] = True
            for vx in range(last, 0, -1):
                if mask[vy, vx] and not opaque[vy, vx]:
                    mask[vy, vx - 1] = True
                    if vy > 0:
                        mask[vy - 1, vx - 1] = True
                        mask[vy - 1, vx] = True
        view[~mask] = UNSEEN
        return view

    def render(self) -> str:
        """Plain-text map: `#` wall, `D`/`d` closed/open door, `G` goal."""
        glyphs = {EMPTY: ".", WALL: "#", GOAL: "G"}
        rows = []
        for y, row in enumerate(self.objects):
            line = []
            for x, obj in enumerate(row):
                if (x, y) == self.agent_pos:
                    line.append(AGENT_GLYPHS[self.agent_dir])
                elif obj == DOOR:
                    line.append("D" if self.states[y, x] == CLOSED else "d")
                else:
                    line.append(glyphs[int(obj)])
            rows.append("".join(line))
        return "\n".join(rows)


def observation_size(one_hot: bool = True) -> int:
    per_cell = N_OBJECTS + len(COLORS) + N_STATES if one_hot else 3
    return VIEW_SIZE * VIEW_SIZE * per_cell


def encode_observation(obs: np.ndarray, one_hot: bool = True) -> np.ndarray:
    """Flatten a `(7, 7, 3)` view, one-hot per channel code book by default."""
    obs = np.asarray(obs)
    if not one_hot:
        scale = np.array([N_OBJECTS - 1, len(COLORS) - 1, N_STATES - 1], dtype=float)
        return (obs / scale).reshape(-1)
    cells = obs.reshape(-1, 3).astype(np.intp)
    out = np.zeros((cells.shape[0], N_OBJECTS + len(COLORS) + N_STATES))
    rows = np.arange(cells.shape[0])
    out[rows, cells[:, 0]] = 1.0
    out[rows, N_OBJECTS + cells[:, 1]] = 1.0
    out[rows, N_OBJECTS + len(COLORS) + cells[:, 2]] = 1.0
    return out.reshape(-1)


@dataclass
class Trajectory:
    """Time-ordered frames of identical shape, `T x H x W` or `T x D`."""

    frames: np.ndarray

    def __post_init__(self):
        if isinstance(self.frames, (list, tuple)):
            if not self.frames:
                raise InvalidArgumentError("A trajectory needs at least one frame.")
            shapes = {np.shape(frame) for frame in self.frames}
            if len(shapes) != 1:
                raise InvalidArgumentError(f"Frames differ in shape: {sorted(shapes)}.")
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim < 2 or self.frames.shape[0] < 1:
            raise InvalidArgumentError("A trajectory needs at least one frame.")

    def __len__(self) -> int:
        return self.frames.shape[0]


def heterogeneity(traj: Union[Trajectory, np.ndarray, list]) -> float:
    """Mean over pixels of each pixel's population standard deviation over time."""
    if not isinstance(traj, Trajectory):
        if len(traj) == 0:
            raise InvalidArgumentError("Cannot measure an empty trajectory.")
        traj = Trajectory(traj)
    flat = traj.frames.reshape(len(traj), -1)
    return float(flat.std(axis=0).mean())


def save_trajectory(traj: Trajectory, path: Union[str, Path]) -> Path:
    """Write frames as CSV (`t` then flattened columns) plus a JSON shape sidecar."""
    path = Path(path)
    flat = traj.frames.reshape(len(traj), -1)
    frame = pd.DataFrame(flat, columns=[f"c{i}" for i in range(flat.shape[1])])
    frame.insert(0, "t", np.arange(len(traj)))
    frame.to_csv(path, index=False)
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"version": 1, "shape": list(traj.frames.shape)}))
    return path


def load_trajectory(path: Union[str, Path]) -> Trajectory:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    frame = pd.read_csv(path)
    flat = frame.drop(columns=["t"]).to_numpy(dtype=np.float64)
    if flat.size != int(np.prod(meta["shape"])):
        raise StateFormatError(
            f"Trajectory {path} holds {flat.size} values, sidecar declares "
            f"shape {meta['shape']}."
        )
    return Trajectory(flat.reshape(meta["shape"]))
