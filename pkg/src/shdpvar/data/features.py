"""Observation vectors from raw trials: wrench, smoothed wrench
derivatives and optional pose."""
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigurationError, DataError, InsufficientDataError
from ..model import ObservationSequence

DERIVATIVE_METHODS = ("backward", "central")


@dataclass(frozen=True)
class FeatureConfig:
    """``smoothing_window`` frames of trailing moving average are applied to
    the wrench before differencing; the raw wrench is kept as is."""

    include_pose: bool = False
    derivative_method: str = "backward"
    smoothing_window: int = 5

    def __post_init__(self):
        if self.derivative_method not in DERIVATIVE_METHODS:
            raise ConfigurationError(
                f"derivative_method must be one of {DERIVATIVE_METHODS}, got {self.derivative_method!r}")
        w = self.smoothing_window
        if isinstance(w, bool) or int(w) != w or w < 1 or w % 2 == 0:
            raise ConfigurationError(f"smoothing_window must be an odd integer >= 1, got {w!r}")
        object.__setattr__(self, "smoothing_window", int(w))
        object.__setattr__(self, "include_pose", bool(self.include_pose))

    @property
    def dim(self):
        return 19 if self.include_pose else 12

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"include_pose", "derivative_method", "smoothing_window"}
        if unknown:
            raise ConfigurationError(f"unknown feature options {sorted(unknown)}")
        return cls(**d)


def canonical_quaternion(q):
    """Pick the sign of each quaternion (w, x, y, z) so that its first
    non-zero component is positive (w >= 0 in all but the w = 0 case)."""
    q = np.array(q, dtype=float)
    flat = q.reshape(-1, 4)
    nz = flat != 0
    first = np.where(nz.any(axis=1), nz.argmax(axis=1), 0)
    neg = flat[np.arange(flat.shape[0]), first] < 0
    flat[neg] = -flat[neg]
    return flat.reshape(q.shape)


class StreamingFeaturizer:
    """Frame-by-frame features with backward differences.

    Uses only past frames, so it can run alongside a live feed. Batch
    featurization with the backward method runs through this class, which
    keeps both paths identical.
    """

    def __init__(self, config):
        if config.derivative_method != "backward":
            raise ConfigurationError("streaming features need derivative_method='backward'")
        self.config = config
        self.reset()

    def reset(self):
        self._window = np.empty((self.config.smoothing_window, 6))
        self._count = 0
        self._prev_smooth = None
        self._prev_time = None

    def push(self, time_s, wrench, pose=None):
        wrench = np.asarray(wrench, dtype=float)
        if self.config.include_pose and pose is None:
            raise ConfigurationError("include_pose is set but the frame has no pose")
        W = self.config.smoothing_window
        if self._count < W:
            self._window[self._count] = wrench
            n = self._count + 1
        else:
            self._window[:-1] = self._window[1:]
            self._window[-1] = wrench
            n = W
        self._count += 1
        # offsets from the newest frame keep a constant signal exactly constant
        smooth = wrench + (self._window[:n] - wrench).mean(axis=0)
        if self._prev_smooth is None:
            deriv = np.zeros(6)
        else:
            dt = float(time_s) - self._prev_time
            if dt <= 0:
                raise DataError(f"timestamps must increase, got step {dt!r}")
            deriv = (smooth - self._prev_smooth) / dt
        self._prev_smooth = smooth
        self._prev_time = float(time_s)
        parts = [wrench, deriv]
        if self.config.include_pose:
            parts.append(canonical_quaternion_pose(pose))
        return np.concatenate(parts)


def canonical_quaternion_pose(pose):
    pose = np.array(pose, dtype=float)
    pose[..., 3:] = canonical_quaternion(pose[..., 3:])
    return pose


def _trailing_mean(w, W):
    out = np.empty_like(w)
    for t in range(w.shape[0]):
        out[t] = w[t] + (w[max(0, t - W + 1):t + 1] - w[t]).mean(axis=0)
    return out


def featurize_frames(timestamps, wrench, pose, config):
    """T x d feature matrix for one contiguous run of frames."""
    timestamps = np.asarray(timestamps, dtype=float)
    wrench = np.asarray(wrench, dtype=float)
    T = timestamps.shape[0]
    if config.include_pose and pose is None:
        raise ConfigurationError("include_pose requested but the trial has no pose columns")
    if config.derivative_method == "backward":
        fz = StreamingFeaturizer(config)
        rows = [fz.push(timestamps[t], wrench[t], None if pose is None else pose[t]) for t in range(T)]
        return np.vstack(rows)
    s = _trailing_mean(wrench, config.smoothing_window)
    deriv = np.zeros_like(s)
    if T > 1:
        deriv[1:-1] = (s[2:] - s[:-2]) / (timestamps[2:] - timestamps[:-2])[:, None]
        deriv[0] = (s[1] - s[0]) / (timestamps[1] - timestamps[0])
        deriv[-1] = (s[-1] - s[-2]) / (timestamps[-1] - timestamps[-2])
    parts = [wrench, deriv]
    if config.include_pose:
        parts.append(canonical_quaternion_pose(pose))
    return np.hstack(parts)


def featurize(trial, config, sample_rate=200.0):
    """One :class:`ObservationSequence` per skill segment.

    Features restart at each segment boundary, as the online monitor does
    at each FSM transition.
    """
    if config.include_pose and not trial.has_pose:
        raise ConfigurationError(f"trial {trial.trial_id!r} has no pose columns but include_pose is set")
    out = []
    for seg in trial.segments:
        if len(seg) <= config.smoothing_window:
            raise InsufficientDataError(
                f"segment {seg.skill_id!r} of trial {trial.trial_id!r} has {len(seg)} frames; "
                f"need more than the smoothing window {config.smoothing_window}")
        sl = slice(seg.start, seg.end)
        pose = trial.pose[sl] if config.include_pose else None
        feats = featurize_frames(trial.timestamps[sl], trial.wrench[sl], pose, config)
        out.append(ObservationSequence(feats, sample_rate, seg.skill_id, trial.trial_id))
    return out
