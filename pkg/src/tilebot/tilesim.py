"""Kinematic tile-installation environment.

A suction effector on the 6-DOF arm picks a tile off the table and carries it
to a wall target.  Rewards are sparse: +1.0 for the pick, +1.0 for the
install, -0.5 when the tile falls (knocked or dropped badly), 0 otherwise,
with at most one reward event per step.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass

import numpy as np

from .gesture import EffectorState
from .kinematics import DHTable, fk_frames, ur3_dh, wrap_angles

EVENTS = ("none", "picked", "installed", "fell", "truncated")
TILE_STATUSES = ("resting", "attached", "installed", "fallen")

# Effector command channel: categorical index order is pinned, as is the
# scalar encoding used inside observation vectors.
CMD_NAMES = ("hold", "suction", "drop")
CMD_SCALARS = np.array([0.0, 1.0, -1.0])

# One-hot order of the effector mode inside each observation frame.
MODE_ORDER = ("suction_on", "suction_off", "fixed_pose")

FRAME_DIM = 18     # 6 joints + 3 mode one-hot + effector + target + tile
ACTION_DIM = 7     # 6 joint deltas + 1 command scalar
STACK = 5
OBS_DIM = STACK * (FRAME_DIM + ACTION_DIM)


class SteppedAfterDone(RuntimeError):
    """step() was called on a finished episode."""


@dataclass(frozen=True)
class SceneConfig:
    """Geometry, thresholds, and episode limits for the tile task."""

    suction_threshold: float = 0.04
    install_threshold: float = 0.03
    contact_knock_threshold: float = 0.015
    tile_x_range: tuple = (0.0, 0.15)
    tile_start_y: float = 0.30
    tile_rest_z: float = 0.02
    table_top: float = 0.0
    table_extents: tuple = (-0.45, 0.45, -0.45, 0.45)
    target: tuple = (-0.15, 0.30, 0.25)
    max_steps: int = 750
    max_delta: float = 2.0
    home_q: tuple = (-127.5, -88.4, 138.5, -140.1, -90.0, -37.5)
    seed: int = 0

    def __post_init__(self):
        for name in ("suction_threshold", "install_threshold",
                     "contact_knock_threshold", "max_delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        x0, x1 = self.tile_x_range
        ex = self.table_extents
        if not (ex[0] <= x0 <= x1 <= ex[1]):
            raise ValueError("tile_x_range must lie inside table extents")
        if not (ex[2] <= self.tile_start_y <= ex[3]):
            raise ValueError("tile_start_y must lie inside table extents")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


_SCALAR_FIELDS = {
    "suction_threshold", "install_threshold", "contact_knock_threshold",
    "tile_start_y", "tile_rest_z", "table_top", "max_delta",
}
_INT_FIELDS = {"max_steps", "seed"}
_TUPLE_FIELDS = {"tile_x_range", "table_extents", "target", "home_q"}


def parse_scene(text: str) -> SceneConfig:
    kw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        if key in _SCALAR_FIELDS:
            kw[key] = float(vals[0])
        elif key in _INT_FIELDS:
            kw[key] = int(vals[0])
        elif key in _TUPLE_FIELDS:
            kw[key] = tuple(float(v) for v in vals)
        else:
            raise ValueError(f"line {lineno}: unknown scene key {key!r}")
    return SceneConfig(**kw)


def load_scene(path=None) -> SceneConfig:
    """Read a scene config from a plain-text file (default: packaged scene)."""
    if path is None:
        ref = importlib.resources.files("tilebot.configs") / "scene_default.txt"
        return parse_scene(ref.read_text())
    with open(path) as fh:
        return parse_scene(fh.read())


@dataclass
class AgentAction:
    """Six joint deltas in [-1, 1] plus an effector command."""

    joint_deltas: np.ndarray
    effector_cmd: str = "hold"

    def __post_init__(self):
        self.joint_deltas = np.clip(
            np.asarray(self.joint_deltas, dtype=float).reshape(6), -1.0, 1.0)
        if self.effector_cmd not in CMD_NAMES:
            raise ValueError(f"unknown effector command {self.effector_cmd!r}")

    def to_vector(self) -> np.ndarray:
        scalar = CMD_SCALARS[CMD_NAMES.index(self.effector_cmd)]
        return np.concatenate([self.joint_deltas, [scalar]])


@dataclass
class EnvState:
    """Snapshot of the simulation for controllers and the teleop bridge."""

    q: np.ndarray
    effector: EffectorState
    effector_pos: np.ndarray
    tile_pose: np.ndarray
    attached: bool
    tile_status: str
    step_index: int


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    event: str


def stack_observations(history) -> np.ndarray:
    """Concatenate the last 5 (frame + previous-action) rows, oldest first,
    zero-padded on the left when the episode is younger than the window."""
    rows = list(history)[-STACK:]
    pad = STACK - len(rows)
    out = np.zeros(OBS_DIM)
    for k, row in enumerate(rows):
        start = (pad + k) * (FRAME_DIM + ACTION_DIM)
        out[start:start + FRAME_DIM + ACTION_DIM] = row
    return out


def episode_return(trajectory) -> float:
    """Sum of step rewards over one episode."""
    return float(sum(r.reward for r in trajectory))


class TileEnv:
    """Single-threaded tile-installation episode engine."""

    def __init__(self, config: SceneConfig | None = None,
                 dh: DHTable | None = None):
        self.config = config or load_scene()
        self.dh = dh or ur3_dh()
        self._rng = np.random.default_rng(self.config.seed)
        self._target = np.asarray(self.config.target, dtype=float)
        self._done = True
        self._history = []

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed=None) -> np.ndarray:
        cfg = self.config
        rng = self._rng if seed is None else np.random.default_rng(seed)
        x0, x1 = cfg.tile_x_range
        self.tile = np.array([rng.uniform(x0, x1), cfg.tile_start_y,
                              cfg.tile_rest_z])
        self.q = wrap_angles(np.asarray(cfg.home_q, dtype=float))
        self.mode = "fixed_pose"
        self.tile_status = "resting"
        self.attached = False
        self.step_index = 0
        self._picked = False
        self._done = False
        self._eff = fk_frames(self.dh, self.q)[6, :3, 3]
        self._history = [np.concatenate([self._frame(), np.zeros(ACTION_DIM)])]
        return stack_observations(self._history)

    @property
    def done(self) -> bool:
        return self._done

    def state(self) -> EnvState:
        return EnvState(
            q=self.q.copy(),
            effector=EffectorState(self.mode, 0),
            effector_pos=self._eff.copy(),
            tile_pose=self.tile.copy(),
            attached=self.attached,
            tile_status=self.tile_status,
            step_index=self.step_index,
        )

    # -- stepping -----------------------------------------------------------

    def step(self, action) -> StepResult:
        if isinstance(action, AgentAction):
            deltas = action.joint_deltas
            cmd = CMD_NAMES.index(action.effector_cmd)
        else:
            deltas, cmd = action
            deltas = np.clip(np.asarray(deltas, dtype=float), -1.0, 1.0)
        return self._advance(deltas, int(cmd))

    def _advance(self, deltas, cmd) -> StepResult:
        if self._done:
            raise SteppedAfterDone("episode already finished")
        cfg = self.config
        was_resting = self.tile_status == "resting"
        was_attached = self.tile_status == "attached"

        self.q = wrap_angles(self.q + deltas * cfg.max_delta)
        self._eff = fk_frames(self.dh, self.q)[6, :3, 3]
        if cmd == 1:
            self.mode = "suction_on"
        elif cmd == 2:
            self.mode = "suction_off"
        if self.attached:
            self.tile = self._eff.copy()

        reward, event = 0.0, "none"
        if (was_resting and cmd == 1
                and np.linalg.norm(self._eff - self.tile) < cfg.suction_threshold):
            self.attached = True
            self.tile_status = "attached"
            self.tile = self._eff.copy()
            if not self._picked:  # release-and-regrab earns nothing extra
                reward, event = 1.0, "picked"
                self._picked = True
        elif (was_attached
              and np.linalg.norm(self.tile - self._target) < cfg.install_threshold):
            self.tile_status = "installed"
            self.attached = False
            reward, event = 1.0, "installed"
        elif (was_resting and cmd != 1
              and np.linalg.norm(self._eff - self.tile)
              < cfg.contact_knock_threshold):
            self.tile_status = "fallen"
            reward, event = -0.5, "fell"
        elif was_attached and cmd == 2:
            ex = cfg.table_extents
            off_table = not (ex[0] <= self.tile[0] <= ex[1]
                             and ex[2] <= self.tile[1] <= ex[3])
            if off_table or self.tile[2] > cfg.table_top + 0.05:
                self.tile_status = "fallen"
                self.attached = False
                reward, event = -0.5, "fell"
            else:  # gentle release: the tile settles where it was let go
                self.attached = False
                self.tile_status = "resting"
                self.tile = np.array([self.tile[0], self.tile[1],
                                      cfg.tile_rest_z])

        self.step_index += 1
        if event == "none" and self.step_index >= cfg.max_steps:
            event = "truncated"
        self._done = event in ("installed", "fell", "truncated")

        action_vec = np.concatenate([deltas, [CMD_SCALARS[cmd]]])
        self._history.append(np.concatenate([self._frame(), action_vec]))
        return StepResult(stack_observations(self._history), reward,
                          self._done, event)

    def _frame(self) -> np.ndarray:
        frame = np.empty(FRAME_DIM)
        frame[0:6] = self.q / 180.0
        frame[6:9] = [float(self.mode == m) for m in MODE_ORDER]
        frame[9:12] = self._eff
        frame[12:15] = self._target
        frame[15:18] = self.tile
        return frame
