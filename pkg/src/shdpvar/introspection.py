"""Skill libraries, expected log-likelihood curves and online monitoring."""
import zlib
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import kernels
from .errors import ConfigurationError, DataError, InsufficientDataError, InvalidParameterError, ShapeError
from .inference import GibbsConfig, fit
from .model import ObservationSequence, SHDPVARModel, forward_cumulative_loglik
from .stats import rng_stream

DEFAULT_ANOMALY_K = 3.0


@dataclass(frozen=True, eq=False)
class LikelihoodCurve:
    """Per-frame mean and spread of cumulative log-likelihood over trials.

    Frame t (1-based, absolute within a skill execution) is stored at index
    t - 1. Lookups past ``support_length`` return the last stored values.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        if mu.ndim != 1 or mu.shape != sigma.shape or mu.size < 1:
            raise ShapeError("mu and sigma must be equal-length non-empty vectors")
        if np.any(sigma < 0):
            raise ValueError("sigma must be non-negative")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def support_length(self):
        return self.mu.shape[0]

    def at(self, t):
        i = min(max(int(t), 1), self.support_length) - 1
        return self.mu[i], self.sigma[i]

    def threshold(self, t, k):
        mu, sigma = self.at(t)
        return mu - k * sigma


@dataclass(frozen=True, eq=False)
class SkillModel:
    skill_id: str
    model: SHDPVARModel
    curve: LikelihoodCurve
    n_trials: int
    mean_duration: float


@dataclass(frozen=True, eq=False)
class SkillLibrary:
    skills: Tuple[SkillModel, ...]
    feature_config: Optional[dict] = None

    def __post_init__(self):
        skills = tuple(self.skills)
        ids = [s.skill_id for s in skills]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate skill ids in {ids}")
        if skills:
            d = skills[0].model.obs_dim
            if any(s.model.obs_dim != d for s in skills):
                raise ConfigurationError("all skills must share the observation dimension")
        object.__setattr__(self, "skills", skills)

    @property
    def skill_ids(self):
        return [s.skill_id for s in self.skills]

    @property
    def obs_dim(self):
        return self.skills[0].model.obs_dim

    def index(self, skill_id):
        for i, s in enumerate(self.skills):
            if s.skill_id == skill_id:
                return i
        raise ConfigurationError(f"skill {skill_id!r} is not in the library {self.skill_ids}")

    def __len__(self):
        return len(self.skills)

    def __getitem__(self, skill_id):
        return self.skills[self.index(skill_id)]


def cumulative_by_frame(model, seq):
    """Cumulative log-likelihood at every frame of ``seq``; the first r
    conditioning frames carry 0."""
    data = seq.data if isinstance(seq, ObservationSequence) else np.asarray(seq, dtype=float)
    out = np.zeros(data.shape[0])
    out[model.order:] = forward_cumulative_loglik(model, data)
    return out


def curve_from_values(values):
    """Curve from per-trial cumulative curves of possibly unequal length.

    Statistics at frame t use only trials still running at t; the support
    ends at the last frame with at least two such trials. The spread is the
    sample standard deviation.
    """
    values = [np.asarray(v, dtype=float) for v in values]
    if len(values) < 2:
        raise InsufficientDataError("a likelihood curve needs at least two trials")
    lengths = sorted((len(v) for v in values), reverse=True)
    support = lengths[1]
    mu = np.empty(support)
    sigma = np.empty(support)
    for t in range(support):
        col = np.array([v[t] for v in values if len(v) > t])
        mu[t] = col.mean()
        sigma[t] = col.std(ddof=1)
    return LikelihoodCurve(mu, sigma)


def build_curve(model, trials):
    return curve_from_values([cumulative_by_frame(model, t) for t in trials])


def _stream_id(name):
    return zlib.crc32(str(name).encode("utf-8"))


def train_skill(skill_id, trials, config, seed, *, leave_self_out=True, stream=()):
    """Fit one skill and its expected-likelihood curve.

    With ``leave_self_out`` each training trial is scored by a model fitted
    without it, so the curve's spread is not optimistic.
    """
    trials = list(trials)
    if len(trials) < 2:
        raise InsufficientDataError(f"skill {skill_id!r} has {len(trials)} training trials; need >= 2")
    sid = _stream_id(skill_id)
    model, diag = fit(trials, config, rng_stream(seed, *stream, sid, 0))
    if leave_self_out:
        values = []
        for i, held in enumerate(trials):
            rest = trials[:i] + trials[i + 1:]
            sub, _ = fit(rest, config, rng_stream(seed, *stream, sid, 1, i))
            values.append(cumulative_by_frame(sub, held))
        curve = curve_from_values(values)
    else:
        curve = build_curve(model, trials)
    mean_duration = float(np.mean([len(t) for t in trials]))
    return SkillModel(str(skill_id), model, curve, len(trials), mean_duration), diag


def build_library(training, config=None, seed=0, *, leave_self_out=True, feature_config=None, stream=()):
    """Train every skill in ``training`` (an ordered mapping skill id ->
    sequences). Returns the library and a dict of per-skill diagnostics."""
    config = config or GibbsConfig()
    skills = []
    diagnostics = {}
    for skill_id, trials in training.items():
        sm, diag = train_skill(skill_id, trials, config, seed, leave_self_out=leave_self_out, stream=stream)
        skills.append(sm)
        diagnostics[str(skill_id)] = diag
    return SkillLibrary(tuple(skills), feature_config), diagnostics


# ---------------------------------------------------------------------------
# online monitoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntrospectionReport:
    frame: int
    fsm_skill: Optional[str]
    logliks: Tuple[float, ...]
    argmax_skill: str
    tie: bool
    correct: Optional[bool]
    anomaly: bool
    threshold: float


def classify(library, logliks, fsm_skill=None):
    """Argmax skill (lowest index on ties), tie flag, correctness flag."""
    if len(library) == 0:
        raise ConfigurationError("empty skill library")
    values = np.asarray(logliks, dtype=float)
    best = int(np.argmax(values))
    tie = int(np.count_nonzero(values == values[best])) > 1
    winner = library.skills[best].skill_id
    correct = None if fsm_skill is None else winner == fsm_skill
    return winner, tie, correct


def detect_anomaly_step(skill, value, t, k=DEFAULT_ANOMALY_K):
    """Lower-bound test against mu(t) - k sigma(t) of the skill's curve."""
    threshold = skill.curve.threshold(t, k)
    return bool(value < threshold), float(threshold)


class _SkillTracker:
    __slots__ = ("W", "C", "logconst", "trans", "init", "order", "intercept", "dim",
                 "history", "filt", "cum", "seen")

    def __init__(self, model):
        self.W, self.C, self.logconst, self.trans, self.init = model.kernel_arrays
        self.order = model.order
        self.intercept = model.intercept
        self.dim = model.obs_dim
        self.reset()

    def reset(self):
        self.history = []
        self.filt = None
        self.cum = 0.0
        self.seen = 0

    def update(self, y):
        r = self.order
        if self.seen >= r:
            parts = self.history[::-1]
            if self.intercept:
                parts = parts + [np.ones(1)]
            x = np.concatenate(parts)[None, :] if parts else np.zeros((1, 0))
            loge = kernels.emission_loglik(y[None, :], x, self.W, self.C, self.logconst)[0]
            if self.filt is None:
                self.filt, inc = kernels.forward_init(self.init, loge)
                self.cum = inc
            else:
                self.filt, inc = kernels.forward_step(self.filt, self.trans, loge)
                self.cum = self.cum + inc
        if r:
            self.history.append(y)
            if len(self.history) > r:
                del self.history[0]
        self.seen += 1
        return self.cum


class MonitorState:
    """Per-stream state: one forward recursion per skill plus a frame
    counter. Call :meth:`reset` on every FSM transition.

    A library is shared read-only, so many states may run against it.
    """

    def __init__(self, library, anomaly_k=DEFAULT_ANOMALY_K):
        if len(library) == 0:
            raise ConfigurationError("empty skill library")
        self.library = library
        self.anomaly_k = float(anomaly_k)
        self._trackers = [_SkillTracker(s.model) for s in library.skills]
        self.frame = 0
        self.fsm_skill = None

    def reset(self):
        for tr in self._trackers:
            tr.reset()
        self.frame = 0

    @property
    def logliks(self):
        return tuple(tr.cum for tr in self._trackers)

    def advance(self, y):
        y = np.ascontiguousarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.library.obs_dim:
            raise ShapeError(f"frame has dimension {y.shape[0]}, library expects {self.library.obs_dim}")
        if not np.all(np.isfinite(y)):
            raise DataError(f"non-finite observation at frame {self.frame + 1}")
        self.frame += 1
        for tr in self._trackers:
            tr.update(y)

    def step(self, y, fsm_skill=None):
        """Advance by one frame and report. A change of ``fsm_skill`` from
        the previous call resets the state first."""
        if self.frame > 0 and fsm_skill != self.fsm_skill:
            self.reset()
        self.fsm_skill = fsm_skill
        self.advance(y)
        return classify_step(self.library, self, fsm_skill)


def classify_step(library, state, fsm_skill=None):
    """Report for the frame ``state`` was last advanced to."""
    values = state.logliks
    winner, tie, correct = classify(library, values, fsm_skill)
    anomaly, threshold = False, float("nan")
    if fsm_skill is not None:
        i = library.index(fsm_skill)
        anomaly, threshold = detect_anomaly_step(library.skills[i], values[i], state.frame, state.anomaly_k)
    return IntrospectionReport(state.frame, fsm_skill, values, winner, tie, correct, anomaly, threshold)


def monitor_stream(library, observations, fsm_skills=None, anomaly_k=DEFAULT_ANOMALY_K):
    """Yield one report per frame; a change of FSM skill restarts every
    recursion and the frame counter."""
    state = MonitorState(library, anomaly_k)
    if fsm_skills is None:
        for y in observations:
            yield state.step(y)
        return
    for y, fsm in zip(observations, fsm_skills):
        yield state.step(y, fsm)


def decision_time(reports):
    """Fraction of the execution before classification became correct and
    stayed correct; 1.0 if the last frame is wrong."""
    reports = list(reports)
    if not reports:
        raise InvalidParameterError("no reports")
    flags = [bool(r.correct) for r in reports]
    T = len(flags)
    if not flags[-1]:
        return 1.0
    last_wrong = max((i for i, f in enumerate(flags) if not f), default=-1)
    return (last_wrong + 2) / T


def first_correct_time(reports):
    reports = list(reports)
    if not reports:
        raise InvalidParameterError("no reports")
    for i, r in enumerate(reports):
        if r.correct:
            return (i + 1) / len(reports)
    return 1.0


__all__ = [
    "LikelihoodCurve",
    "SkillModel",
    "SkillLibrary",
    "IntrospectionReport",
    "MonitorState",
    "classify_step",
    "cumulative_by_frame",
    "curve_from_values",
    "build_curve",
    "train_skill",
    "build_library",
    "classify",
    "detect_anomaly_step",
    "monitor_stream",
    "decision_time",
    "first_correct_time",
]
