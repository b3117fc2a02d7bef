"""Demonstration trajectories: a scripted IK expert, episode recording, and
lossless JSONL storage shared by scripted and teleoperated sources."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from .tilesim import AgentAction, SceneConfig, StepResult, TileEnv, episode_return

SCHEMA_VERSION = 1

# Waypoint geometry for the scripted expert (meters).
HOVER_HEIGHT = 0.08        # approach ceiling above the tile / target
APPROACH_SLOPE = 2.0       # extra height per meter of horizontal misalignment
SUCTION_ENGAGE = 0.05      # start commanding suction inside this distance
DESCENT_RATE = 0.015       # max commanded downward motion per step
GRAB_OFFSET = 0.02         # descend toward tile center plus this clearance

# Tool orientation for all waypoints: z axis pointing straight down.
_R_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])

_IK = kin.IkSettings(max_iterations=25)


class ExpertStuck(RuntimeError):
    """The scripted expert's IK tracking failed to make progress."""


class SchemaVersionMismatch(ValueError):
    """Stored demos use an unsupported schema version."""


class ParseError(ValueError):
    """A demo file line could not be decoded."""


class TooFew(ValueError):
    """Requested more trajectories than the set contains."""


@dataclass
class Transition:
    observation: np.ndarray
    action: AgentAction
    reward: float
    done: bool


@dataclass
class Trajectory:
    transitions: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.transitions)

    @property
    def outcome(self) -> str:
        return self.meta.get("outcome", "none")


@dataclass
class DemoSet:
    trajectories: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.trajectories)


# ---------------------------------------------------------------------------
# scripted expert


def scripted_expert(state, config: SceneConfig) -> AgentAction:
    """Waypoint controller: hover over the tile, descend, suck, carry, place.

    The phase is recovered from the state alone, so the controller is
    memoryless and its behavior can be cloned from observations.
    """
    tile = state.tile_pose
    eff = state.effector_pos
    target = np.asarray(config.target, dtype=float)

    # Approach height shrinks continuously with horizontal misalignment; a
    # discontinuous hover-then-descend switch would limit-cycle at the
    # boundary between two IK solution branches.
    if state.tile_status == "attached":
        cmd = "hold"
        xy = np.linalg.norm(eff[:2] - target[:2])
        lift = min(HOVER_HEIGHT, APPROACH_SLOPE * xy)
        goal = target + np.array([0.0, 0.0, lift])
    elif state.tile_status == "resting":
        cmd = "suction" if np.linalg.norm(eff - tile) < SUCTION_ENGAGE else "hold"
        xy = np.linalg.norm(eff[:2] - tile[:2])
        lift = min(HOVER_HEIGHT - GRAB_OFFSET, APPROACH_SLOPE * xy)
        z = max(tile[2] + GRAB_OFFSET + lift, eff[2] - DESCENT_RATE)
        goal = np.array([tile[0], tile[1], z])
    else:  # terminal states: hold still
        return AgentAction(np.zeros(6), "hold")

    pose = kin.pose_to_transform(goal, _R_DOWN)
    dh = kin.ur3_dh()
    try:
        q_goal = kin.solve_ik(dh, state.q, pose, _IK)
    except kin.NotConverged as e:
        q_goal = e.q  # partial progress still moves the right way
    deltas = kin.wrap_angles(q_goal - state.q) / config.max_delta
    return AgentAction(np.clip(deltas, -1.0, 1.0), cmd)


# ---------------------------------------------------------------------------
# recording


def record_episode(env: TileEnv, policy, seed, source: str = "scripted",
                   stall_limit: int = 200) -> Trajectory:
    """Roll one episode, storing (observation, action, reward, done) tuples.

    `policy` maps an EnvState to an AgentAction.  Raises ExpertStuck when the
    controller stops progressing (no event within stall_limit consecutive
    zero-motion steps).
    """
    obs = env.reset(seed=seed)
    transitions = []
    stalled = 0
    result = None
    while not env.done:
        action = policy(env.state())
        result = env.step(action)
        transitions.append(Transition(obs, action, result.reward, result.done))
        obs = result.observation
        if result.event == "none" and np.max(np.abs(action.joint_deltas)) < 1e-6:
            stalled += 1
            if stalled > stall_limit:
                raise ExpertStuck(f"no progress after {stall_limit} idle steps")
        else:
            stalled = 0
    meta = {
        "source": source,
        "seed": int(seed),
        "schema_version": SCHEMA_VERSION,
        "outcome": result.event,
        "return": episode_return(transitions),
    }
    return Trajectory(transitions, meta)


def collect_demos(n: int, seed: int = 0, config: SceneConfig | None = None,
                  max_attempts_per_demo: int = 5) -> DemoSet:
    """Record n scripted-expert episodes with distinct reset seeds.

    Episodes that fail (expert stuck or tile lost) are discarded and retried
    with a fresh seed.
    """
    env = TileEnv(config)
    cfg = env.config
    out = []
    attempt_seed = seed
    for _ in range(n):
        for attempt in range(max_attempts_per_demo):
            try:
                traj = record_episode(
                    env, lambda s: scripted_expert(s, cfg), attempt_seed)
            except ExpertStuck:
                traj = None
            attempt_seed += 1
            if traj is not None and traj.outcome == "installed":
                out.append(traj)
                break
        else:
            raise ExpertStuck(
                f"expert failed {max_attempts_per_demo} seeds in a row")
    return DemoSet(out, {"schema_version": SCHEMA_VERSION, "source": "scripted",
                         "seed": int(seed)})


# ---------------------------------------------------------------------------
# storage: JSONL, one transition per line, blank line between trajectories


def _fmt_floats(values) -> str:
    return "[" + ",".join(f"{float(v):.17g}" for v in values) + "]"


def _transition_line(t: Transition) -> str:
    return ('{"o":' + _fmt_floats(t.observation)
            + ',"a":{"d":' + _fmt_floats(t.action.joint_deltas)
            + ',"c":"' + t.action.effector_cmd + '"}'
            + ',"r":' + f"{t.reward:.17g}"
            + ',"done":' + ("true" if t.done else "false") + "}")


def save_demos(demos: DemoSet, path) -> None:
    with open(path, "w") as fh:
        header = dict(demos.meta)
        header["schema_version"] = SCHEMA_VERSION
        header["kind"] = "demos"
        fh.write(json.dumps(header) + "\n")
        for traj in demos.trajectories:
            fh.write(json.dumps({"trajectory": traj.meta}) + "\n")
            for t in traj.transitions:
                fh.write(_transition_line(t) + "\n")
            fh.write("\n")


def load_demos(path) -> DemoSet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty demo file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:1: {e}") from None
    if header.get("kind") != "demos":
        raise ParseError(f"{path}:1: missing demos header")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"schema_version {header.get('schema_version')} != {SCHEMA_VERSION}")
    trajectories = []
    current, meta = [], None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            if current:
                trajectories.append(Trajectory(current, meta or {}))
                current, meta = [], None
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:{lineno}: {e}") from None
        if "trajectory" in obj:
            if current:
                trajectories.append(Trajectory(current, meta or {}))
                current = []
            meta = obj["trajectory"]
        elif "o" in obj:
            action = AgentAction(np.asarray(obj["a"]["d"]), obj["a"]["c"])
            current.append(Transition(np.asarray(obj["o"]), action,
                                      float(obj["r"]), bool(obj["done"])))
        else:
            raise ParseError(f"{path}:{lineno}: unrecognized record")
    if current:
        trajectories.append(Trajectory(current, meta or {}))
    return DemoSet(trajectories, header)


def subsample(demos: DemoSet, n: int, seed: int = 0) -> DemoSet:
    """Seeded uniform subset without replacement, preserving original order."""
    if n > len(demos):
        raise TooFew(f"asked for {n} of {len(demos)} trajectories")
    if n == len(demos):
        return DemoSet(list(demos.trajectories), dict(demos.meta))
    rng = np.random.default_rng(seed)
    keep = sorted(rng.choice(len(demos), size=n, replace=False).tolist())
    meta = dict(demos.meta)
    meta["subsampled"] = {"n": n, "seed": int(seed)}
    return DemoSet([demos.trajectories[i] for i in keep], meta)
