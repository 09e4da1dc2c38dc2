"""Recorded trials: CSV ingestion, validation and writing."""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigurationError, DataError

WRENCH_COLUMNS = ("fx", "fy", "fz", "tx", "ty", "tz")
POSE_COLUMNS = ("px", "py", "pz", "qw", "qx", "qy", "qz")
SEGMENT_COLUMNS = ("trial_id", "skill_id", "start_frame", "end_frame", "outcome")
OUTCOMES = ("nominal", "anomalous")
QUAT_TOL = 1e-6


def trial_header(include_pose):
    cols = ("time_s",) + WRENCH_COLUMNS
    return cols + POSE_COLUMNS if include_pose else cols


@dataclass(frozen=True)
class Segment:
    """One skill execution: frames ``start`` (inclusive) to ``end``
    (exclusive), 0-based within the trial."""

    skill_id: str
    start: int
    end: int

    def __len__(self):
        return self.end - self.start


@dataclass(frozen=True, eq=False)
class RawTrial:
    timestamps: np.ndarray
    wrench: np.ndarray
    pose: Optional[np.ndarray] = None
    segments: Tuple[Segment, ...] = field(default_factory=tuple)
    trial_id: str = ""
    outcome: str = "nominal"

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        wrench = np.array(self.wrench, dtype=float)
        T = ts.shape[0]
        if wrench.shape != (T, 6):
            raise DataError(f"wrench must be {T} x 6, got {wrench.shape}")
        _check_finite(ts[:, None], "time_s")
        _check_finite(wrench, "wrench")
        bad = np.flatnonzero(np.diff(ts) <= 0)
        if bad.size:
            raise DataError(f"timestamps not strictly increasing at frame {bad[0] + 1}")
        pose = None
        if self.pose is not None:
            pose = np.array(self.pose, dtype=float)
            if pose.shape != (T, 7):
                raise DataError(f"pose must be {T} x 7, got {pose.shape}")
            _check_finite(pose, "pose")
            norms = np.linalg.norm(pose[:, 3:], axis=1)
            off = np.flatnonzero(np.abs(norms - 1.0) > QUAT_TOL)
            if off.size:
                raise DataError(f"quaternion at frame {off[0]} has norm {norms[off[0]]!r}")
            pose.setflags(write=False)
        segments = tuple(self.segments)
        prev_end = 0
        for seg in segments:
            if not (prev_end <= seg.start < seg.end <= T):
                raise DataError(f"segment {seg} overlaps, is unordered or exceeds the {T} frames of trial {self.trial_id!r}")
            prev_end = seg.end
        if self.outcome not in OUTCOMES:
            raise DataError(f"outcome must be one of {OUTCOMES}, got {self.outcome!r}")
        ts.setflags(write=False)
        wrench.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "wrench", wrench)
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "segments", segments)

    @property
    def T(self):
        return self.timestamps.shape[0]

    @property
    def has_pose(self):
        return self.pose is not None

    def with_segments(self, segments, outcome=None):
        return RawTrial(self.timestamps, self.wrench, self.pose, tuple(segments), self.trial_id,
                        outcome or self.outcome)


def _check_finite(a, name):
    bad = np.argwhere(~np.isfinite(a))
    if bad.size:
        raise DataError(f"non-finite {name} value at frame {bad[0, 0]}")


def _check_header(header, path, include_pose):
    """Return whether the header carries pose columns."""
    header = tuple(h.strip() for h in header)
    allowed = (False, True) if include_pose is None else (bool(include_pose),)
    for pose in allowed:
        if header == trial_header(pose):
            return pose
    expected = trial_header(allowed[-1])
    missing = [c for c in expected if c not in header]
    detail = f"missing column(s) {missing}" if missing else f"unexpected column layout {list(header)}"
    raise DataError(f"{path}: {detail}; expected {','.join(expected)}", row=1)


def parse_float_row(fields, row):
    """Floats from CSV fields; ``row`` is the 1-based file line number."""
    out = np.empty(len(fields))
    for i, f in enumerate(fields):
        try:
            out[i] = float(f)
        except ValueError:
            raise DataError(f"cannot parse {f!r} as a number", row=row) from None
        if not np.isfinite(out[i]):
            raise DataError(f"non-finite value {f!r}", row=row)
    return out


def ingest_csv(path, include_pose=None, trial_id=None):
    """Read one trial CSV.

    ``include_pose`` declares the schema: True or False require the
    matching header exactly; None accepts either. Errors carry the 1-based
    line number (the header is line 1).
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file", row=1)
        has_pose = _check_header(header, path, include_pose)
        width = len(trial_header(has_pose))
        rows = []
        prev_t = -np.inf
        for line_no, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != width:
                raise DataError(f"expected {width} fields, got {len(fields)}", row=line_no)
            vals = parse_float_row(fields, line_no)
            if vals[0] <= prev_t:
                raise DataError(f"time_s {vals[0]!r} does not increase (previous {prev_t!r})", row=line_no)
            if has_pose:
                norm = np.linalg.norm(vals[10:14])
                if abs(norm - 1.0) > QUAT_TOL:
                    raise DataError(f"quaternion norm {norm!r} is not 1", row=line_no)
            prev_t = vals[0]
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows", row=2)
    arr = np.vstack(rows)
    pose = arr[:, 7:14] if has_pose else None
    return RawTrial(arr[:, 0], arr[:, 1:7], pose, (), trial_id if trial_id is not None else path.stem)


def read_segments(path):
    """Parse a segments file into ``{trial_id: (outcome, [Segment, ...])}``."""
    path = Path(path)
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(h.strip() for h in next(reader, ()))
        if header != SEGMENT_COLUMNS:
            missing = [c for c in SEGMENT_COLUMNS if c not in header]
            raise DataError(f"{path}: bad header, missing {missing}; expected {','.join(SEGMENT_COLUMNS)}", row=1)
        for line_no, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != 5:
                raise DataError(f"expected 5 fields, got {len(fields)}", row=line_no)
            trial_id, skill_id, start, end, outcome = (f.strip() for f in fields)
            try:
                start, end = int(start), int(end)
            except ValueError:
                raise DataError("start_frame and end_frame must be integers", row=line_no) from None
            if outcome not in OUTCOMES:
                raise DataError(f"outcome must be one of {OUTCOMES}, got {outcome!r}", row=line_no)
            if not skill_id:
                raise DataError("empty skill_id", row=line_no)
            prev = out.setdefault(trial_id, (outcome, []))
            if prev[0] != outcome:
                raise DataError(f"trial {trial_id!r} has conflicting outcomes", row=line_no)
            prev[1].append(Segment(skill_id, start, end))
    return out


def load_dataset(data_dir, include_pose=None):
    """Trials listed in ``<data_dir>/segments.csv`` read from
    ``<data_dir>/trials/<trial_id>.csv``, sorted by trial id."""
    data_dir = Path(data_dir)
    seg_path = data_dir / "segments.csv"
    if not seg_path.is_file():
        raise ConfigurationError(f"no segments file at {seg_path}")
    table = read_segments(seg_path)
    trials = []
    for trial_id in sorted(table):
        outcome, segs = table[trial_id]
        tpath = data_dir / "trials" / f"{trial_id}.csv"
        if not tpath.is_file():
            raise ConfigurationError(f"segments file lists trial {trial_id!r} but {tpath} is missing")
        raw = ingest_csv(tpath, include_pose, trial_id)
        trials.append(raw.with_segments(sorted(segs, key=lambda s: s.start), outcome))
    return trials


def _fmt(x):
    return repr(float(x))


def write_trial_csv(trial, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trial_header(trial.has_pose))
        for t in range(trial.T):
            row = [trial.timestamps[t], *trial.wrench[t]]
            if trial.has_pose:
                row.extend(trial.pose[t])
            w.writerow([_fmt(v) for v in row])


def write_segments(trials, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEGMENT_COLUMNS)
        for trial in trials:
            for seg in trial.segments:
                w.writerow([trial.trial_id, seg.skill_id, seg.start, seg.end, trial.outcome])


def save_dataset(trials, data_dir):
    data_dir = Path(data_dir)
    for trial in trials:
        write_trial_csv(trial, data_dir / "trials" / f"{trial.trial_id}.csv")
    write_segments(trials, data_dir / "segments.csv")
