"""Adaptive loss-weight schedulers driven by training/validation loss traces.

Each classification branch gets a weight proportional to a generalization
measure over a squared overfitting measure, normalized to sum to one:

* the first-order scheme compares current losses against their values at the
  first evaluation (gain = drop in validation loss; overfit = growth of the
  validation-minus-training gap);
* the second-order scheme compares the *slopes* of the smoothed loss curves
  against a per-branch reference slope taken where the validation curve was
  falling fastest, after a warm-up of ``window`` evaluations with weights
  held equal.

Raw weights are floored at EPS_WEIGHT (and quotients at EPS_WEIGHT**2) so a
deteriorating branch keeps a vanishingly small but well-defined share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

BRANCH_NAMES = ("1", "2", "*")
EPS_WEIGHT = 1e-8


def fit_line_slope(values) -> float:
    """Ordinary-least-squares slope of ``values`` against indices 0..n-1."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ValueError(f"need at least 2 values to fit a slope, got shape {v.shape}")
    i = np.arange(v.size, dtype=np.float64)
    di = i - i.mean()
    return float((di * (v - v.mean())).sum() / (di * di).sum())


def moving_average(values, window: int) -> np.ndarray:
    """Trailing ``window``-point mean; early entries average what exists so far."""
    v = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    c = np.concatenate([[0.0], np.cumsum(v)])
    n = v.size
    idx = np.arange(1, n + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


class LossTrace:
    """Append-only per-branch training/validation losses, one row per evaluation."""

    def __init__(self, n_branches: int = 3, cadence: int = 100):
        self.n_branches = n_branches
        self.cadence = cadence
        self.steps: list[int] = []
        self._train: list[np.ndarray] = []
        self._valid: list[np.ndarray] = []

    def append(self, step: int, train_losses, valid_losses) -> None:
        train = np.asarray(train_losses, dtype=np.float64)
        valid = np.asarray(valid_losses, dtype=np.float64)
        if train.shape != (self.n_branches,) or valid.shape != (self.n_branches,):
            raise ValueError(f"expected {self.n_branches} losses per row")
        if not (np.isfinite(train).all() and np.isfinite(valid).all()):
            raise ValueError("losses must be finite")
        if (train < 0).any() or (valid < 0).any():
            raise ValueError("losses must be non-negative")
        self.steps.append(int(step))
        self._train.append(train)
        self._valid.append(valid)

    @property
    def n_evals(self) -> int:
        return len(self.steps)

    def train_series(self, branch: int) -> np.ndarray:
        return np.array([row[branch] for row in self._train])

    def valid_series(self, branch: int) -> np.ndarray:
        return np.array([row[branch] for row in self._valid])


@dataclass(frozen=True)
class BlendWeights:
    """Normalized per-branch loss weights (view 1, view 2, joint)."""

    w1: float
    w2: float
    wstar: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.wstar])

    @classmethod
    def from_array(cls, w) -> "BlendWeights":
        w = np.asarray(w, dtype=np.float64)
        return cls(float(w[0]), float(w[1]), float(w[2]))

    @classmethod
    def equal(cls) -> "BlendWeights":
        return cls(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)


@dataclass(frozen=True)
class BranchState:
    """Reference tangents for one branch of the second-order scheduler."""

    eval_index: int
    train_tangent: float
    valid_tangent: float


def _normalize(raw: np.ndarray) -> np.ndarray:
    return raw / raw.sum()


def weights_v1(trace: LossTrace) -> np.ndarray:
    """First-order weights from loss values, referenced to the first evaluation."""
    n = trace.n_evals
    if n == 0:
        return np.full(trace.n_branches, 1.0 / trace.n_branches)
    raw = np.empty(trace.n_branches)
    for b in range(trace.n_branches):
        train = trace.train_series(b)
        valid = trace.valid_series(b)
        gain = valid[0] - valid[-1]
        overfit = (valid[-1] - train[-1]) - (valid[0] - train[0])
        raw[b] = max(gain, EPS_WEIGHT) / max(overfit * overfit, EPS_WEIGHT ** 2)
    return _normalize(raw)


def weights_v2(trace: LossTrace, states, window: int):
    """Second-order weights from smoothed loss tangents.

    ``states`` holds one :class:`BranchState` (or None before the first
    eligible evaluation) per branch. Returns ``(weights, updated_states)``;
    during warm-up (fewer than ``window`` evaluations) the weights are equal
    and the states are untouched.
    """
    n = trace.n_evals
    if n < window:
        return np.full(trace.n_branches, 1.0 / trace.n_branches), list(states)
    raw = np.empty(trace.n_branches)
    new_states = []
    for b in range(trace.n_branches):
        train_smooth = moving_average(trace.train_series(b), window)
        valid_smooth = moving_average(trace.valid_series(b), window)
        tan_train = fit_line_slope(train_smooth[-window:])
        tan_valid = fit_line_slope(valid_smooth[-window:])
        ref = states[b]
        if ref is None:
            ref = BranchState(n - 1, tan_train, tan_valid)
        gain = tan_valid - ref.valid_tangent
        overfit = (tan_valid - tan_train) - (ref.valid_tangent - ref.train_tangent)
        raw[b] = max(abs(gain), EPS_WEIGHT) / max(overfit * overfit, EPS_WEIGHT ** 2)
        if tan_valid < ref.valid_tangent:
            ref = BranchState(n - 1, tan_train, tan_valid)
        new_states.append(ref)
    return _normalize(raw), new_states


def weighted_total_loss(branch_losses, weights) -> ad.Tensor:
    """Scalar sum of per-branch losses times their weights.

    Weights enter as constants of the step: gradients flow through the branch
    losses only.
    """
    w = weights.as_array() if isinstance(weights, BlendWeights) else np.asarray(weights)
    total = ad.mul(branch_losses[0], float(w[0]))
    for loss, wk in zip(branch_losses[1:], w[1:]):
        total = ad.add(total, ad.mul(loss, float(wk)))
    return total


# ---------------------------------------------------------------------------
# Trace files: plain text, one row per (evaluation, branch), repr-exact floats.


def save_trace(path, trace: LossTrace, weights_history, meta: dict | None = None) -> None:
    """Write a loss trace plus the weights emitted at each evaluation."""
    weights_history = [np.asarray(w) for w in weights_history]
    if len(weights_history) != trace.n_evals:
        raise ValueError("need one weight row per evaluation")
    names = BRANCH_NAMES if trace.n_branches == 3 else tuple(
        str(b + 1) for b in range(trace.n_branches))
    with open(path, "w") as f:
        f.write("# gblend-loss-trace v1\n")
        for key, value in (meta or {}).items():
            f.write(f"# {key} {value}\n")
        f.write(f"# cadence {trace.cadence}\n")
        f.write("# columns: step branch train_loss valid_loss weight\n")
        for i, step in enumerate(trace.steps):
            for b, name in enumerate(names):
                f.write(f"{step} {name} {float(trace._train[i][b])!r} "
                        f"{float(trace._valid[i][b])!r} {float(weights_history[i][b])!r}\n")


def load_trace(path):
    """Read a trace file; returns (LossTrace, weights (n_evals, n_branches), meta)."""
    meta: dict[str, str] = {}
    rows: dict[int, dict[str, tuple[float, float, float]]] = {}
    step_order: list[int] = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].strip().split(None, 1)
                if len(parts) == 2 and not parts[0].endswith(":"):
                    meta[parts[0]] = parts[1]
                continue
            step_s, branch, train_s, valid_s, weight_s = line.split()
            step = int(step_s)
            if step not in rows:
                rows[step] = {}
                step_order.append(step)
            rows[step][branch] = (float(train_s), float(valid_s), float(weight_s))
    if not step_order:
        raise ValueError(f"no data rows in trace file {path}")
    branch_names = list(rows[step_order[0]])
    cadence = int(meta.pop("cadence", 100))
    trace = LossTrace(n_branches=len(branch_names), cadence=cadence)
    weights = np.empty((len(step_order), len(branch_names)))
    for i, step in enumerate(step_order):
        per_branch = rows[step]
        trace.append(step,
                     [per_branch[b][0] for b in branch_names],
                     [per_branch[b][1] for b in branch_names])
        weights[i] = [per_branch[b][2] for b in branch_names]
    return trace, weights, meta


def replay_weights(trace: LossTrace, scheme: str, window: int = 20) -> np.ndarray:
    """Recompute the weight trajectory a scheduler would emit over ``trace``.

    Replays evaluation by evaluation, exactly as the training loop would have
    queried the scheduler.
    """
    out = np.empty((trace.n_evals, trace.n_branches))
    prefix = LossTrace(n_branches=trace.n_branches, cadence=trace.cadence)
    states = [None] * trace.n_branches
    for i in range(trace.n_evals):
        prefix.append(trace.steps[i], trace._train[i], trace._valid[i])
        if scheme == "blend_v1":
            out[i] = weights_v1(prefix)
        elif scheme == "blend_v2":
            out[i], states = weights_v2(prefix, states, window)
        else:
            raise ValueError(f"unknown scheduler scheme {scheme!r}")
    return out
