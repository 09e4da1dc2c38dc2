"""Leave-one-out skill classification, anomaly ROC and report files."""
import dataclasses
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Tuple

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConfigurationError
from .inference import GibbsConfig
from .introspection import build_library, cumulative_by_frame
from .model import ObservationSequence
from .stats import rng_stream

DEFAULT_K_GRID = tuple(np.round(np.arange(0.5, 10.0 + 1e-9, 0.25), 2).tolist())


@dataclass(frozen=True, eq=False)
class EvalTrial:
    """A trial in observation space: one sequence per skill segment, in
    execution order, each labelled with its skill."""

    trial_id: str
    segments: Tuple[ObservationSequence, ...]
    outcome: str = "nominal"

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if any(s.skill_label is None for s in self.segments):
            raise ConfigurationError(f"trial {self.trial_id!r} has a segment without a skill label")

    @property
    def skills(self):
        return [s.skill_label for s in self.segments]


def featurize_dataset(raw_trials, feature_config):
    from .data.features import featurize

    return [EvalTrial(t.trial_id, featurize(t, feature_config), t.outcome) for t in raw_trials]


def config_name(feature_set, order):
    return f"{feature_set}/r={order}"


def _crc(s):
    return zlib.crc32(str(s).encode("utf-8"))


# ---------------------------------------------------------------------------
# accuracy
# ---------------------------------------------------------------------------

@dataclass
class Cell:
    n_trials: int = 0
    n_correct: int = 0
    decision_times: List[float] = field(default_factory=list)

    @property
    def accuracy_pct(self):
        return 100.0 * self.n_correct / self.n_trials

    @property
    def mean_decision_time_pct(self):
        if not self.decision_times:
            return float("nan")
        return 100.0 * math.fsum(self.decision_times) / len(self.decision_times)


@dataclass
class AccuracyTable:
    """Rows are model configurations, columns skills. Decision time is
    averaged over correctly classified segments only."""

    configs: List[str] = field(default_factory=list)
    skills: List[str] = field(default_factory=list)
    cells: Dict[Tuple[str, str], Cell] = field(default_factory=dict)

    def add(self, config, skill, correct, dtime):
        if config not in self.configs:
            self.configs.append(config)
        if skill not in self.skills:
            self.skills.append(skill)
        cell = self.cells.setdefault((config, skill), Cell())
        cell.n_trials += 1
        if correct:
            cell.n_correct += 1
            cell.decision_times.append(dtime)

    def accuracy(self, config, skill):
        return self.cells[(config, skill)].accuracy_pct

    def mean_accuracy(self, config):
        vals = [self.cells[(config, s)].accuracy_pct for s in self.skills if (config, s) in self.cells]
        return float(np.mean(vals))

    def rows(self):
        for c in self.configs:
            for s in self.skills:
                cell = self.cells.get((c, s))
                if cell is not None:
                    yield c, s, cell.accuracy_pct, cell.mean_decision_time_pct, cell.n_trials


@dataclass(frozen=True, eq=False)
class FoldResult:
    config: str
    held_out: str
    library: object
    anomaly_tests: Tuple[EvalTrial, ...] = ()


@dataclass(frozen=True, eq=False)
class CrossValidation:
    table: AccuracyTable
    folds: Dict[str, List[FoldResult]]


def segment_scores(library, seq):
    """Per-frame cumulative log-likelihood of every skill (T x S)."""
    return np.column_stack([cumulative_by_frame(s.model, seq) for s in library.skills])


def classify_segment(library, seq):
    """End-of-segment correctness and stable decision time for one
    segment, using the same argmax and tie rule as the online monitor."""
    values = segment_scores(library, seq)
    truth = library.index(seq.skill_label)
    correct = np.argmax(values, axis=1) == truth
    T = len(correct)
    if not correct[-1]:
        return False, 1.0
    wrong = np.flatnonzero(~correct)
    t_star = wrong[-1] + 2 if wrong.size else 1
    return True, t_star / T


def _group_by_skill(trials):
    out = defaultdict(list)
    for t in trials:
        for seg in t.segments:
            out[seg.skill_label].append(seg)
    return out


def _check_nominal(trials, minimum=3):
    counts = defaultdict(int)
    for t in trials:
        for skill in set(t.skills):
            counts[skill] += 1
    short = {s: n for s, n in counts.items() if n < minimum}
    if not counts or short:
        raise ConfigurationError(f"need >= {minimum} nominal trials per skill, got {dict(counts)}")
    return sorted(counts)


def assign_anomalous(anomalous, n_folds, seed):
    """Random but order-independent assignment of anomalous test trials to
    folds."""
    anomalous = sorted(anomalous, key=lambda t: t.trial_id)
    perm = rng_stream(seed, _crc("anomalous")).permutation(len(anomalous))
    folds = [[] for _ in range(n_folds)]
    for pos, i in enumerate(perm):
        folds[pos % n_folds].append(anomalous[i])
    return folds


def cross_validate(datasets, orders=(0, 1, 2), gibbs_config=None, seed=0, *, leave_self_out=False):
    """Leave-one-nominal-trial-out classification accuracy.

    ``datasets`` maps a feature-set name to its trials (a plain list is
    named "features"). Each (feature set, order) pair is one configuration.
    Anomalous trials are not classified; they are spread over the folds
    for :func:`roc_sweep`.
    """
    if not isinstance(datasets, Mapping):
        datasets = {"features": datasets}
    gibbs_config = gibbs_config or GibbsConfig()
    table = AccuracyTable()
    folds = {}
    for feature_set, trials in datasets.items():
        trials = sorted(trials, key=lambda t: t.trial_id)
        nominal = [t for t in trials if t.outcome == "nominal"]
        skills = _check_nominal(nominal)
        anomalous_folds = assign_anomalous([t for t in trials if t.outcome != "nominal"], len(nominal), seed)
        for order in orders:
            name = config_name(feature_set, order)
            cfg = dataclasses.replace(gibbs_config, order=int(order))
            results = []
            for i, held in enumerate(nominal):
                training = _group_by_skill(nominal[:i] + nominal[i + 1:])
                training = {s: training[s] for s in skills}
                library, _ = build_library(training, cfg, seed, leave_self_out=leave_self_out,
                                           stream=(_crc(name), _crc(held.trial_id)))
                for seg in held.segments:
                    correct, dtime = classify_segment(library, seg)
                    table.add(name, seg.skill_label, correct, dtime)
                results.append(FoldResult(name, held.trial_id, library, (held,) + tuple(anomalous_folds[i])))
            folds[name] = results
    table.skills.sort()
    return CrossValidation(table, folds)


# ---------------------------------------------------------------------------
# anomaly ROC
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrialTrace:
    """Cumulative log-likelihood of the FSM-indexed skill with the curve
    values it is compared against, concatenated over segments."""

    trial_id: str
    positive: bool
    value: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def flagged(self, k):
        return bool(np.any(self.value < self.mu - k * self.sigma))

    def score(self):
        """Smallest k above which the trial stops flagging: max over frames
        of (mu - value) / sigma, with +-inf where sigma is 0."""
        gap = self.mu - self.value
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.sigma > 0, gap / np.where(self.sigma > 0, self.sigma, 1.0),
                         np.where(gap > 0, np.inf, -np.inf))
        return float(np.max(z))


def trial_trace(library, trial):
    values, mus, sigmas = [], [], []
    for seg in trial.segments:
        skill = library[seg.skill_label]
        v = cumulative_by_frame(skill.model, seg)
        t = np.minimum(np.arange(1, len(v) + 1), skill.curve.support_length) - 1
        values.append(v)
        mus.append(skill.curve.mu[t])
        sigmas.append(skill.curve.sigma[t])
    return TrialTrace(trial.trial_id, trial.outcome != "nominal",
                      np.concatenate(values), np.concatenate(mus), np.concatenate(sigmas))


@dataclass(frozen=True, eq=False)
class RocCurve:
    config: str
    k: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    scores: np.ndarray
    labels: np.ndarray

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_points(scores, labels):
    """Exact ROC of 'flag iff score > threshold' over every threshold,
    from (0, 0) to (1, 1), with tied scores moving diagonally."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    P, N = labels.sum(), (~labels).sum()
    fpr, tpr = [0.0], [0.0]
    for s in np.unique(scores)[::-1]:
        at = scores >= s
        tpr.append(np.count_nonzero(at & labels) / P)
        fpr.append(np.count_nonzero(at & ~labels) / N)
    return np.array(fpr), np.array(tpr)


def auc_trapezoid(scores, labels):
    fpr, tpr = roc_points(scores, labels)
    return float(trapezoid(tpr, fpr))


def auc_pairwise(scores, labels):
    """P(score_pos > score_neg) + 0.5 P(tie), by brute force over pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pos, neg = scores[labels], scores[~labels]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (pos.size * neg.size))


def roc_sweep(fold_libraries, fold_trials, k_grid=DEFAULT_K_GRID, config="features"):
    """Trial-level ROC over anomaly thresholds ``k``.

    ``fold_trials[i]`` are the test trials scored with ``fold_libraries[i]``.
    A trial is positive (detected) if any frame flags. The AUC is the
    trapezoid area of the exact ROC over all thresholds, not just ``k_grid``.
    """
    traces = [trial_trace(lib, t) for lib, trials in zip(fold_libraries, fold_trials) for t in trials]
    labels = np.array([tr.positive for tr in traces])
    if labels.all() or not labels.any():
        raise ConfigurationError("ROC needs both nominal and anomalous test trials")
    k = np.asarray(k_grid, dtype=float)
    flags = np.array([[tr.flagged(kk) for tr in traces] for kk in k])
    tpr = flags[:, labels].mean(axis=1)
    fpr = flags[:, ~labels].mean(axis=1)
    scores = np.array([tr.score() for tr in traces])
    return RocCurve(config, k, fpr, tpr, auc_trapezoid(scores, labels), scores, labels)


def roc_from_cv(cv, k_grid=DEFAULT_K_GRID):
    """One ROC per configuration, from the folds of a cross-validation run
    built with leave-self-out curves or not."""
    curves = []
    for name, results in cv.folds.items():
        libs = [r.library for r in results]
        tests = [r.anomaly_tests for r in results]
        curves.append(roc_sweep(libs, tests, k_grid, name))
    return curves


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def report(table, curves, outdir):
    """Write accuracy.csv, roc.csv and summary.txt; output depends only on
    the inputs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["config,skill,accuracy_pct,mean_decision_time_pct,n_trials"]
    for c, s, acc, dt, n in table.rows():
        lines.append(f"{c},{s},{_fmt(acc)},{_fmt(dt)},{n}")
    (outdir / "accuracy.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    lines = ["config,k,fpr,tpr"]
    for curve in curves:
        for k, f, t in zip(curve.k, curve.fpr, curve.tpr):
            lines.append(f"{curve.config},{_fmt(k)},{_fmt(f)},{_fmt(t)}")
    (outdir / "roc.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (outdir / "summary.txt").write_text(summary_text(table, curves), encoding="utf-8")


def summary_text(table, curves):
    out = ["Skill classification (leave-one-out)", ""]
    width = max([len(c) for c in table.configs] + [6])
    header = "config".ljust(width) + "".join(f"  {s:>14}" for s in table.skills) + "  mean"
    out.append(header)
    for c in table.configs:
        cells = [table.cells.get((c, s)) for s in table.skills]
        acc = "".join(f"  {cell.accuracy_pct:13.2f}%" if cell else f"  {'-':>14}" for cell in cells)
        out.append(c.ljust(width) + acc + f"  {table.mean_accuracy(c):.2f}%")
        dts = "".join(f"  {cell.mean_decision_time_pct:13.2f}%" if cell else f"  {'-':>14}" for cell in cells)
        out.append("  decision time".ljust(width) + dts)
    out.append("")
    if not curves:
        out.append("Anomaly detection: no anomaly evaluation")
    else:
        out.append("Anomaly detection ROC")
        for curve in curves:
            out.append(f"{curve.config.ljust(width)}  AUC {curve.auc:.4f}  "
                       f"({int(curve.labels.sum())} anomalous / {int((~curve.labels).sum())} nominal trials)")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# synthetic benchmarks in observation space
# ---------------------------------------------------------------------------

def dynamics_only_benchmark(seed, n_trials=6, T=30, *, d=2, radius=0.5, angle=np.pi / 2):
    """Two skills whose modes share the stationary law N(0, I) and differ
    only in dynamics: A = radius I versus radius R(angle), noise
    (1 - radius^2) I. Trials start in the stationary distribution, so
    per-frame means and covariances carry no skill information.

    Short trials with moderate autocorrelation leave an order-0 HMM little
    temporal structure to exploit, while a VAR(1) sees the lag-1 difference
    directly."""
    from .data.synthetic import generate_synthetic, ModeSchedule, rotation_blocks
    from .model import VAREmission

    q = 1.0 - radius ** 2
    emissions = {
        "skill_a": VAREmission((radius * np.eye(d))[None], q * np.eye(d)),
        "skill_b": VAREmission(rotation_blocks(d, [angle] * (d // 2), radius)[None], q * np.eye(d)),
    }
    trials = []
    for i in range(n_trials):
        segs = []
        for j, (skill, e) in enumerate(emissions.items()):
            rng = rng_stream(seed, i, j)
            seq = generate_synthetic(ModeSchedule((e,), ((0, T),)), T, rng, warmup=200)
            segs.append(seq.as_observation(skill_label=skill, trial_id=f"trial_{i:03d}"))
        trials.append(EvalTrial(f"trial_{i:03d}", segs))
    return trials


def spike_benchmark(seed, n_nominal=8, n_anomalous=8, T=150, *, d=3, magnitude=10.0):
    """Two well-separated VAR(1) skills; anomalous trials carry one spike
    of ``magnitude`` noise standard deviations in a random skill."""
    from .data.synthetic import AnomalySpec, ModeSchedule, generate_synthetic, rotation_blocks
    from .model import VAREmission

    dd = d + d % 2
    emissions = {
        "skill_a": VAREmission(rotation_blocks(dd, [0.3] * (dd // 2), 0.9)[None, :d, :d], 0.1 * np.eye(d)),
        "skill_b": VAREmission(rotation_blocks(dd, [1.4] * (dd // 2), 0.8)[None, :d, :d], 0.1 * np.eye(d)),
    }
    trials = []
    for i in range(n_nominal + n_anomalous):
        outcome = "nominal" if i < n_nominal else "anomalous"
        rng = rng_stream(seed, i)
        faulty = int(rng.integers(2)) if outcome == "anomalous" else -1
        segs = []
        for j, (skill, e) in enumerate(emissions.items()):
            anomalies = ()
            if j == faulty:
                anomalies = (AnomalySpec("spike", int(rng.integers(T // 4, 3 * T // 4)), magnitude),)
            seq = generate_synthetic(ModeSchedule((e,), ((0, T),)), T, rng, anomalies=anomalies, warmup=100)
            segs.append(seq.as_observation(skill_label=skill, trial_id=f"trial_{i:03d}"))
        trials.append(EvalTrial(f"trial_{i:03d}", segs, outcome))
    return trials
