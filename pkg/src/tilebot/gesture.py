"""Hand-gesture classification and the gesture-to-effector command machines.

A one-vs-rest SVM (SMO-trained) maps wrist-relative skeleton coordinates to
gesture labels; `apply_gesture` turns labels into end-effector state
transitions for mechanical grippers, suction cups, and screwdrivers.
"""

from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .handmap import DEFAULT_SCHEMA, HandSkeleton

# Single-gesture command set for gripping and suction effectors.
GRIP_LABELS = ("closing", "opening", "fixed")

# Two-gesture tuples for the screwdriver effector: (grip gesture, screw
# gesture).  Only these five combinations are meaningful commands.
SCREW_LABELS = (
    ("closing", "tightening"),
    ("closing", "loosening"),
    ("closing", "fixed"),
    ("opening", "stopped"),
    ("fixed", "stopped"),
)

MODES = ("open", "closed", "fixed_pose", "suction_on", "suction_off")
_GRIPPER_MODES = ("open", "closed")
_SUCTION_MODES = ("fixed_pose", "suction_on", "suction_off")


class DegenerateDataset(ValueError):
    """Too few classes or samples to train or fold the data."""


class DimensionMismatch(ValueError):
    """Feature vector length does not match the trained model."""


class InvalidTransition(RuntimeError):
    """A gesture command is not legal from the current effector state."""


# ---------------------------------------------------------------------------
# Effector state machine


@dataclass(frozen=True)
class EffectorState:
    """End-effector command state: grip/suction mode plus spin command.

    A non-zero screw rate is only legal while the gripper is closed around
    the tool.
    """

    mode: str = "open"
    screw_rate: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.screw_rate not in (-1, 0, 1):
            raise ValueError(f"screw_rate must be -1, 0 or +1, got {self.screw_rate}")
        if self.screw_rate != 0 and self.mode != "closed":
            raise ValueError("screw_rate != 0 requires mode 'closed'")


def apply_gesture(state: EffectorState, label, strict: bool = True) -> EffectorState:
    """Advance the effector state by one gesture command.

    Tuple labels drive the screwdriver machine, plain labels the gripper or
    suction machine (disambiguated by the current mode).  In strict mode an
    illegal command raises InvalidTransition; otherwise it is ignored and the
    state held.
    """
    try:
        return _transition(state, label)
    except InvalidTransition:
        if strict:
            raise
        return state


def _transition(state: EffectorState, label) -> EffectorState:
    if isinstance(label, (tuple, list)):
        pair = tuple(label)
        if pair not in SCREW_LABELS:
            raise ValueError(f"unknown screw gesture tuple {pair!r}")
        if state.mode not in _GRIPPER_MODES:
            raise InvalidTransition(
                f"screw command {pair!r} on a non-gripping effector ({state.mode})"
            )
        grip, screw = pair
        if screw in ("tightening", "loosening"):
            if state.mode != "closed":
                raise InvalidTransition(
                    f"{screw} requires a closed grip, effector is {state.mode!r}"
                )
            return EffectorState("closed", +1 if screw == "tightening" else -1)
        if grip == "closing":  # (closing, fixed): grip shut, hold the tool still
            return EffectorState("closed", 0)
        if grip == "opening":  # (opening, stopped): release
            return EffectorState("open", 0)
        return EffectorState(state.mode, 0)  # (fixed, stopped): hold everything

    if label not in GRIP_LABELS:
        raise ValueError(f"unknown gesture label {label!r}")
    if state.mode in _GRIPPER_MODES:
        if label == "closing":
            return EffectorState("closed", 0)
        if label == "opening":
            return EffectorState("open", 0)
        return EffectorState(state.mode, 0)
    # Suction effector: closing/opening map onto suction on/off.
    if label == "closing":
        return EffectorState("suction_on", 0)
    if label == "opening":
        return EffectorState("suction_off", 0)
    return EffectorState(state.mode, 0)


# ---------------------------------------------------------------------------
# Features and samples


@dataclass
class GestureSample:
    """A flat landmark-coordinate vector with its gesture label."""

    features: np.ndarray
    label: object

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).ravel()
        if isinstance(self.label, list):
            self.label = tuple(self.label)


def featurize(skel: HandSkeleton) -> np.ndarray:
    """Flatten landmark coordinates in schema order, relative to the wrist."""
    coords = skel.coords()
    return (coords - skel["wrist"]).ravel()


def save_samples(samples, path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            label = list(s.label) if isinstance(s.label, tuple) else s.label
            fh.write(json.dumps({"features": s.features.tolist(),
                                 "label": label}) + "\n")


def load_samples(path) -> list[GestureSample]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(GestureSample(np.asarray(obj["features"]), obj["label"]))
    return out


# ---------------------------------------------------------------------------
# SVM (SMO dual solver, one-vs-rest)


def _kernel_matrix(kind, gamma, X, Z):
    if kind == "linear":
        return X @ Z.T
    if kind == "rbf":
        sq = (
            np.sum(X * X, axis=1)[:, None]
            + np.sum(Z * Z, axis=1)[None, :]
            - 2.0 * (X @ Z.T)
        )
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ValueError(f"unknown kernel {kind!r}")


def _smo_solve(K, y, C, tol, max_iter):
    """Maximal-violating-pair SMO on the binary C-SVC dual.

    K is the full Gram matrix, y in {-1,+1}.  Returns (alpha, bias).
    """
    n = len(y)
    alpha = np.zeros(n)
    f = np.zeros(n)  # f_raw(x_t) = sum_s alpha_s y_s K_st, bias excluded
    diag = np.diag(K).copy()
    for _ in range(max_iter):
        grad = y - f  # -y_t * dual gradient; KKT optimum has grad ~ bias
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            break
        i = np.flatnonzero(up)[np.argmax(grad[up])]
        j = np.flatnonzero(low)[np.argmin(grad[low])]
        if grad[i] - grad[j] <= tol:
            break
        eta = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        # Two-variable analytic step along y_i a_i + y_j a_j = const.
        if y[i] != y[j]:
            lo, hi = max(0.0, alpha[j] - alpha[i]), min(C, C + alpha[j] - alpha[i])
        else:
            lo, hi = max(0.0, alpha[i] + alpha[j] - C), min(C, alpha[i] + alpha[j])
        aj = np.clip(alpha[j] + y[j] * (grad[j] - grad[i]) / eta, lo, hi)
        aj = 0.0 if aj < 1e-12 else C if aj > C - 1e-12 else aj
        ai = alpha[i] + y[i] * y[j] * (alpha[j] - aj)
        ai = 0.0 if ai < 1e-12 else C if ai > C - 1e-12 else ai
        if abs(ai - alpha[i]) + abs(aj - alpha[j]) < 1e-14:
            break  # box-bound dust; the pair cannot move
        f = f + (ai - alpha[i]) * y[i] * K[i] + (aj - alpha[j]) * y[j] * K[j]
        alpha[i], alpha[j] = ai, aj
    grad = y - f
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    hi = grad[up].max() if up.any() else 0.0
    lo = grad[low].min() if low.any() else 0.0
    return alpha, 0.5 * (hi + lo)


@dataclass
class SvmModel:
    """One-vs-rest SVM: one binary machine (SVs, coefs, bias) per class."""

    classes: list
    kernel: str
    gamma: float
    C: float
    support_vectors: list[np.ndarray] = field(default_factory=list)
    dual_coef: list[np.ndarray] = field(default_factory=list)  # alpha_s * y_s
    bias: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.support_vectors[0].shape[1]

    def decision_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"expected {self.n_features} features, got {X.shape[1]}"
            )
        out = np.empty((X.shape[0], len(self.classes)))
        for c, (sv, coef, b) in enumerate(
            zip(self.support_vectors, self.dual_coef, self.bias)
        ):
            out[:, c] = _kernel_matrix(self.kernel, self.gamma, X, sv) @ coef + b
        return out

    def predict(self, X) -> list:
        idx = np.argmax(self.decision_values(X), axis=1)  # first max on ties
        return [self.classes[i] for i in idx]


def svm_train(data, kernel: str = "rbf", C: float = 1.0, gamma=None,
              tol: float = 1e-3, max_iter: int = 200_000) -> SvmModel:
    """Train a one-vs-rest SVM with an SMO dual solver (KKT tolerance `tol`)."""
    X = np.asarray([s.features for s in data], dtype=float)
    labels = [s.label for s in data]
    classes = sorted(set(labels), key=str)
    if len(classes) < 2:
        raise DegenerateDataset("need at least 2 classes")
    counts = {c: labels.count(c) for c in classes}
    if min(counts.values()) < 5:
        raise DegenerateDataset(f"need >= 5 samples per class, got {counts}")
    if gamma is None:
        var = X.var()
        gamma = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
    K = _kernel_matrix(kernel, gamma, X, X)
    model = SvmModel(classes=classes, kernel=kernel, gamma=float(gamma), C=float(C))
    y_all = np.asarray([classes.index(l) for l in labels])
    for c in range(len(classes)):
        y = np.where(y_all == c, 1.0, -1.0)
        alpha, b = _smo_solve(K, y, C, tol, max_iter)
        sv = alpha > 1e-8
        if not sv.any():  # keep the machine well-formed even if fully slack
            sv = alpha >= 0
        model.support_vectors.append(X[sv])
        model.dual_coef.append(alpha[sv] * y[sv])
        model.bias.append(float(b))
    return model


def svm_predict(model: SvmModel, features):
    """Predict one sample's label (argmax of one-vs-rest decision values)."""
    return model.predict(np.asarray(features, dtype=float)[None, :])[0]


# ---------------------------------------------------------------------------
# Splits and cross-validation


def _class_indices(labels, seed):
    rng = np.random.default_rng(seed)
    by_class = {}
    for i, l in enumerate(labels):
        by_class.setdefault(str(l), []).append(i)
    return {c: rng.permutation(idx) for c, idx in sorted(by_class.items())}


def train_test_split(data, test_frac: float, seed: int = 0):
    """Stratified split; test_frac of each class (rounded) goes to the test set."""
    labels = [s.label for s in data]
    test_idx = set()
    for _, idx in _class_indices(labels, seed).items():
        n_test = int(round(len(idx) * test_frac))
        test_idx.update(idx[:n_test].tolist())
    train = [data[i] for i in range(len(data)) if i not in test_idx]
    test = [data[i] for i in sorted(test_idx)]
    return train, test


def stratified_kfold(labels, k: int, seed: int = 0):
    """Round-robin per-class fold assignment; yields (train_idx, test_idx)."""
    if k < 2:
        raise DegenerateDataset("k must be >= 2")
    if len(labels) < k:
        raise DegenerateDataset(f"dataset size {len(labels)} < k={k}")
    folds = [[] for _ in range(k)]
    cursor = 0  # shared across classes so k == n degenerates to leave-one-out
    for _, idx in _class_indices(labels, seed).items():
        for i in idx:
            folds[cursor % k].append(int(i))
            cursor += 1
    out = []
    for f in range(k):
        test = sorted(folds[f])
        train = sorted(i for g in range(k) if g != f for i in folds[g])
        out.append((np.asarray(train), np.asarray(test)))
    return out


def cross_validate(data, param_grid: dict, k: int = 5, seed: int = 0,
                   kernel: str = "rbf"):
    """Stratified k-fold grid search.

    Returns (best_params, best_mean_accuracy); ties break toward the earlier
    grid point (itertools.product over the dict's key order).
    """
    labels = [s.label for s in data]
    folds = stratified_kfold(labels, k, seed)
    keys = list(param_grid)
    best = None
    for values in itertools.product(*(param_grid[key] for key in keys)):
        params = dict(zip(keys, values))
        accs = []
        for train_idx, test_idx in folds:
            model = svm_train([data[i] for i in train_idx], kernel=kernel, **params)
            pred = model.predict(np.asarray([data[i].features for i in test_idx]))
            truth = [data[i].label for i in test_idx]
            accs.append(np.mean([p == t for p, t in zip(pred, truth)]))
        mean_acc = float(np.mean(accs))
        if best is None or mean_acc > best[1]:
            best = (params, mean_acc)
    return best


def accuracy(model: SvmModel, data) -> float:
    pred = model.predict(np.asarray([s.features for s in data]))
    return float(np.mean([p == s.label for p, s in zip(pred, data)]))


# ---------------------------------------------------------------------------
# Synthetic hand-pose datasets


@dataclass(frozen=True)
class SynthSpec:
    """Class proportions and noise scales for the parametric hand generator.

    Each class is (label, count, finger curl in [0,1], wrist roll in rad).
    """

    classes: tuple
    jitter: float = 0.002  # per-coordinate landmark noise, meters
    rot_jitter: float = 0.12  # global orientation noise, radians (~7 deg)


_ROLL = np.deg2rad(35.0)

GRIP_SPEC = SynthSpec(classes=(
    ("closing", 290, 0.85, 0.0),
    ("opening", 274, 0.15, 0.0),
    ("fixed", 263, 0.50, 0.0),
))

SCREW_SPEC = SynthSpec(classes=(
    (("closing", "tightening"), 1475, 0.85, +_ROLL),
    (("closing", "loosening"), 1289, 0.85, -_ROLL),
    (("closing", "fixed"), 1494, 0.85, 0.0),
    (("opening", "stopped"), 1209, 0.15, 0.0),
    (("fixed", "stopped"), 1458, 0.50, 0.0),
))

# Canonical palm: wrist at the origin, fingers along +y, palm plane z=0.
_FINGER_BASE = {
    "index": np.array([0.025, 0.090, 0.0]),
    "middle": np.array([0.000, 0.100, 0.0]),
    "ring": np.array([-0.022, 0.095, 0.0]),
    "pinky": np.array([-0.042, 0.085, 0.0]),
}
_SEGMENTS = (0.035, 0.025, 0.020)  # proximal->intermediate->distal->tip
_CURL_STAGES = np.deg2rad((55.0, 120.0, 170.0))  # cumulative flexion at full curl


def _rodrigues(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def _canonical_hand(curl: float) -> dict:
    pts = {"wrist": np.zeros(3)}
    for finger, base in _FINGER_BASE.items():
        names = (f"{finger}_proximal", f"{finger}_intermediate",
                 f"{finger}_distal", f"{finger}_tip")
        pts[names[0]] = base.copy()
        p = base.copy()
        for k, (seg, stage) in enumerate(zip(_SEGMENTS, _CURL_STAGES)):
            ang = curl * stage
            p = p + seg * np.array([0.0, np.cos(ang), -np.sin(ang)])
            pts[names[k + 1]] = p
    # Thumb folds across the palm as curl increases.
    cmc = np.array([0.035, 0.020, 0.0])
    pts["thumb_cmc"] = cmc
    sweep = np.deg2rad(30.0 + 90.0 * curl)
    d = np.array([np.cos(sweep), np.sin(sweep), -0.3 * curl])
    d = d / np.linalg.norm(d)
    pts["thumb_mcp"] = cmc + 0.040 * d
    pts["thumb_ip"] = pts["thumb_mcp"] + 0.030 * d
    pts["thumb_tip"] = pts["thumb_ip"] + 0.025 * d
    return pts


def synth_hand_dataset(spec: SynthSpec, seed: int = 0) -> list[GestureSample]:
    """Generate labelled hand skeletons: per-class curl + roll, pose noise."""
    rng = np.random.default_rng(seed)
    samples = []
    for label, count, curl, roll in spec.classes:
        for _ in range(count):
            c = np.clip(curl + rng.normal(0.0, 0.05), 0.0, 1.0)
            pts = _canonical_hand(float(c))
            R = _rodrigues((0.0, 1.0, 0.0), roll)  # screw roll about the forearm
            axis = rng.normal(size=3)
            R = _rodrigues(axis, rng.normal(0.0, spec.rot_jitter)) @ R
            t = rng.uniform(-0.3, 0.3, size=3)  # invisible after wrist-centering
            noisy = {
                n: R @ p + t + rng.normal(0.0, spec.jitter, size=3)
                for n, p in pts.items()
            }
            skel = HandSkeleton(noisy)
            samples.append(GestureSample(featurize(skel), label))
    return samples


# ---------------------------------------------------------------------------
# Model serialization (GSVM1)

_MAGIC = b"GSVM1"


def save_model(model: SvmModel, path) -> None:
    meta = {
        "version": 1,
        "kernel": model.kernel,
        "gamma": model.gamma,
        "C": model.C,
        "n_features": model.n_features,
        "classes": [list(c) if isinstance(c, tuple) else c for c in model.classes],
        "n_sv": [int(sv.shape[0]) for sv in model.support_vectors],
    }
    blob = json.dumps(meta).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for sv, coef, b in zip(model.support_vectors, model.dual_coef, model.bias):
            fh.write(np.ascontiguousarray(sv, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(coef, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", b))


def load_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a GSVM1 model file")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len))
        if meta.get("version") != 1:
            raise ValueError(f"unsupported GSVM1 version {meta.get('version')}")
        classes = [tuple(c) if isinstance(c, list) else c for c in meta["classes"]]
        model = SvmModel(classes=classes, kernel=meta["kernel"],
                         gamma=meta["gamma"], C=meta["C"])
        d = meta["n_features"]
        for n_sv in meta["n_sv"]:
            sv = np.frombuffer(fh.read(8 * n_sv * d), dtype="<f8").reshape(n_sv, d)
            coef = np.frombuffer(fh.read(8 * n_sv), dtype="<f8").copy()
            (b,) = struct.unpack("<d", fh.read(8))
            model.support_vectors.append(sv.copy())
            model.dual_coef.append(coef)
            model.bias.append(b)
    return model
