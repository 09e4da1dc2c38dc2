"""Seeded synthetic data: switching-VAR trajectories with ground-truth
states, injected anomalies, and multi-skill raw trials."""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .. import kernels
from ..errors import InvalidParameterError
from ..model import ObservationSequence, SHDPVARModel, VAREmission
from ..stats import rng_stream
from .trials import RawTrial, Segment

ANOMALY_KINDS = ("spike", "swap", "noise")


@dataclass(frozen=True)
class AnomalySpec:
    """An injected fault over frames ``frame .. frame + duration - 1``.

    spike: add ``magnitude`` noise standard deviations to ``channels``
        (all channels by default) of the emitted observations.
    swap: generate with ``emission`` (default: the active mode with negated
        coefficients) instead of the scheduled mode.
    noise: multiply the innovation standard deviation by ``magnitude``.
    """

    kind: str
    frame: int
    magnitude: float = 10.0
    duration: int = 1
    channels: Optional[Tuple[int, ...]] = None
    emission: Optional[VAREmission] = None

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise InvalidParameterError(f"anomaly kind must be one of {ANOMALY_KINDS}, got {self.kind!r}")
        if self.frame < 0 or self.duration < 1:
            raise InvalidParameterError("anomaly needs frame >= 0 and duration >= 1")


@dataclass(frozen=True)
class ModeSchedule:
    """Scripted mode sequence: ``blocks`` is a list of (mode, n_frames)."""

    emissions: Tuple[VAREmission, ...]
    blocks: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "emissions", tuple(self.emissions))
        object.__setattr__(self, "blocks", tuple((int(m), int(n)) for m, n in self.blocks))
        if any(not 0 <= m < len(self.emissions) or n < 1 for m, n in self.blocks):
            raise InvalidParameterError("schedule blocks need valid mode indices and positive lengths")

    @property
    def length(self):
        return sum(n for _, n in self.blocks)

    def states(self):
        return np.concatenate([np.full(n, m, dtype=np.int64) for m, n in self.blocks])


@dataclass(frozen=True, eq=False)
class SyntheticSequence:
    data: np.ndarray
    states: np.ndarray
    anomaly: np.ndarray

    def as_observation(self, sample_rate=200.0, skill_label=None, trial_id=""):
        return ObservationSequence(self.data, sample_rate, skill_label, trial_id)


def _stack(emissions):
    W = np.ascontiguousarray(np.stack([e.regression_matrix() for e in emissions]))
    C = np.ascontiguousarray(np.stack([e.chol for e in emissions]))
    return W, C


def _swapped(e):
    # order 0 has no dynamics to swap, so flip the mean instead
    if e.order == 0 and e.mean is not None:
        return VAREmission(e.coeffs, e.noise, -e.mean)
    return VAREmission(-e.coeffs, e.noise, e.mean)


def generate_synthetic(truth, T, rng, *, anomalies=(), noise_scale=1.0, warmup=0):
    """Simulate T frames from a model or a :class:`ModeSchedule`.

    ``warmup`` extra frames are generated first and discarded so that the
    returned sequence starts near stationarity. Returns a
    :class:`SyntheticSequence` with states and a per-frame anomaly mask.
    """
    T = int(T)
    warmup = int(warmup)
    if isinstance(truth, SHDPVARModel):
        emissions = truth.emissions
        z = kernels.sample_chain(np.asarray(truth.initial_distribution, dtype=float),
                                 np.ascontiguousarray(truth.hdp.pi), rng.random(T + warmup))
    elif isinstance(truth, ModeSchedule):
        emissions = truth.emissions
        if truth.length != T:
            raise InvalidParameterError(f"schedule covers {truth.length} frames, T={T}")
        z = np.concatenate([np.full(warmup, truth.blocks[0][0], dtype=np.int64), truth.states()])
    else:
        raise InvalidParameterError(f"truth must be a model or a ModeSchedule, got {type(truth).__name__}")
    if noise_scale <= 0:
        raise InvalidParameterError("noise_scale must be positive")
    first = emissions[0]
    order, intercept, d = first.order, first.has_mean, first.dim
    L = len(emissions)

    pool = list(emissions)
    zz = z.copy()
    mask = np.zeros(T, dtype=bool)
    spikes = []
    for spec in anomalies:
        lo, hi = spec.frame, min(spec.frame + spec.duration, T)
        if lo >= T:
            raise InvalidParameterError(f"anomaly frame {spec.frame} beyond T={T}")
        mask[lo:hi] = True
        if spec.kind == "spike":
            spikes.append(spec)
            continue
        if spec.kind == "swap":
            alt = [spec.emission or _swapped(e) for e in emissions]
        else:
            alt = [VAREmission(e.coeffs, e.noise * spec.magnitude ** 2, e.mean) for e in emissions]
        offset = len(pool)
        pool.extend(alt)
        zz[warmup + lo:warmup + hi] = offset + z[warmup + lo:warmup + hi]

    W, C = _stack(pool)
    E = noise_scale * rng.standard_normal((T + warmup, d))
    Y = kernels.var_simulate(W, C, zz, E, order, intercept)[warmup:]
    for spec in spikes:
        lo, hi = spec.frame, min(spec.frame + spec.duration, T)
        ch = np.arange(d) if spec.channels is None else np.asarray(spec.channels)
        for t in range(lo, hi):
            std = noise_scale * np.sqrt(np.diag(emissions[z[warmup + t]].noise))
            Y[t, ch] += spec.magnitude * std[ch]
    states = z[warmup:] % L
    return SyntheticSequence(Y, states, mask)


def rotation_blocks(d, angles, radius):
    """Block-diagonal ``radius * R(angle)`` 2 x 2 rotations (d even)."""
    A = np.zeros((d, d))
    for i, th in enumerate(angles):
        c, s = np.cos(th), np.sin(th)
        A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = radius * np.array([[c, -s], [s, c]])
    return A


# ---------------------------------------------------------------------------
# multi-skill raw trials
# ---------------------------------------------------------------------------

FORCE_STD = 0.5
TORQUE_STD = 0.05


@dataclass(frozen=True)
class TaskSpec:
    """Layout of a simulated assembly task: every trial runs all skills in
    order; anomalous trials carry one wrench spike in a random skill."""

    n_skills: int = 4
    nominal_trials: int = 10
    anomalous_trials: int = 4
    segment_frames: int = 200
    jitter: float = 0.1
    include_pose: bool = False
    sample_rate: float = 200.0
    spike_magnitude: float = 10.0
    skill_ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.n_skills < 1 or self.nominal_trials < 0 or self.anomalous_trials < 0:
            raise InvalidParameterError("task needs >= 1 skill and non-negative trial counts")
        if self.segment_frames < 20 or not 0 <= self.jitter < 0.5:
            raise InvalidParameterError("segment_frames must be >= 20 and jitter in [0, 0.5)")
        if self.skill_ids is not None and len(self.skill_ids) != self.n_skills:
            raise InvalidParameterError("skill_ids must list n_skills names")

    @property
    def ids(self):
        return self.skill_ids or tuple(f"skill_{i + 1}" for i in range(self.n_skills))


def skill_schedule_emissions(n_skills, rng):
    """Two wrench modes per skill, each a stable VAR(1) around its own
    offset with skill-specific rotational dynamics."""
    scale = np.array([FORCE_STD] * 3 + [TORQUE_STD] * 3)
    noise = np.diag(scale ** 2)
    out = []
    for s in range(n_skills):
        modes = []
        for m in range(2):
            angles = rng.uniform(0.05, 1.5, size=3)
            A = rotation_blocks(6, angles, rng.uniform(0.75, 0.95))
            # conjugate by the channel scale so that torques stay small
            A = (A * scale[:, None]) / scale[None, :]
            offset = rng.normal(0.0, 6.0, size=6) * scale
            mean = (np.eye(6) - A) @ offset
            modes.append(VAREmission(A[None], noise, mean))
        out.append(tuple(modes))
    return out


def _pose_track(n, rng, base):
    pos0, q0 = base
    pos = np.empty((n, 3))
    p = pos0.copy()
    for t in range(n):
        p = pos0 + 0.95 * (p - pos0) + rng.normal(0.0, 1e-3, size=3)
        pos[t] = p
    q = q0 + rng.normal(0.0, 1e-3, size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return np.hstack([pos, q])


def simulate_task_dataset(spec, seed):
    """Raw trials for :class:`TaskSpec`; identical for identical seeds."""
    master = rng_stream(seed, 0)
    emissions = skill_schedule_emissions(spec.n_skills, master)
    poses = []
    for _ in range(spec.n_skills):
        q = master.normal(size=4)
        q /= np.linalg.norm(q)
        poses.append((master.uniform(-0.5, 0.5, size=3), q))
    n_total = spec.nominal_trials + spec.anomalous_trials
    anomalous = set(rng_stream(seed, 1).permutation(n_total)[:spec.anomalous_trials].tolist())
    trials = []
    for i in range(n_total):
        rng = rng_stream(seed, 2, i)
        outcome = "anomalous" if i in anomalous else "nominal"
        faulty = int(rng.integers(spec.n_skills)) if outcome == "anomalous" else -1
        wrench, pose, segments = [], [], []
        start = 0
        for s in range(spec.n_skills):
            n = int(round(spec.segment_frames * rng.uniform(1 - spec.jitter, 1 + spec.jitter)))
            split = int(round(n * rng.uniform(0.3, 0.5)))
            sched = ModeSchedule(emissions[s], ((0, split), (1, n - split)))
            anomalies = ()
            if s == faulty:
                frame = int(rng.integers(int(0.3 * n), int(0.7 * n)))
                anomalies = (AnomalySpec("spike", frame, spec.spike_magnitude, channels=(0, 1, 2)),)
            seq = generate_synthetic(sched, n, rng, anomalies=anomalies, warmup=50)
            wrench.append(seq.data)
            if spec.include_pose:
                pose.append(_pose_track(n, rng, poses[s]))
            segments.append(Segment(spec.ids[s], start, start + n))
            start += n
        ts = np.arange(start) / spec.sample_rate
        trials.append(RawTrial(ts, np.vstack(wrench), np.vstack(pose) if spec.include_pose else None,
                               tuple(segments), f"trial_{i:03d}", outcome))
    return trials
