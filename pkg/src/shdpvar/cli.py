"""Command-line entry point: ``shdpvar {simulate,train,monitor,evaluate}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
import argparse
import csv
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import (
    ConfigurationError,
    DataError,
    InsufficientDataError,
    InsufficientHistoryError,
    InvalidParameterError,
    LibraryLoadError,
    NumericalError,
    ShapeError,
)
from .evaluation import DEFAULT_K_GRID, cross_validate, featurize_dataset, report, roc_from_cv
from .inference import GibbsConfig
from .introspection import DEFAULT_ANOMALY_K, MonitorState, build_library

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
REALTIME_FPS = 200.0

_GIBBS_TUPLES = ("gamma_prior", "alpha_kappa_prior", "rho_prior")
_GIBBS_ARRAYS = ("mniw_M", "mniw_K", "iw_scale")


class UsageError(ConfigurationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class RunConfig:
    """Everything a command needs, after merging the config file and flags."""

    command: str
    seed: Optional[int] = None
    data_dir: Optional[Path] = None
    output_dir: Optional[Path] = None
    library_path: Optional[Path] = None
    input_path: Optional[str] = None
    features: dict = field(default_factory=dict)
    gibbs: dict = field(default_factory=dict)
    anomaly_k: float = DEFAULT_ANOMALY_K
    train: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)

    def feature_config(self):
        from .data.features import FeatureConfig

        return FeatureConfig.from_dict(self.features)

    def gibbs_config(self):
        return gibbs_from_dict(self.gibbs)

    def resolved(self):
        """JSON-ready view with every default filled in."""
        gibbs = dataclasses.asdict(self.gibbs_config())
        for k in _GIBBS_ARRAYS:
            if gibbs[k] is not None:
                gibbs[k] = np.asarray(gibbs[k]).tolist()
        for k in _GIBBS_TUPLES:
            gibbs[k] = list(gibbs[k])
        return {
            "command": self.command,
            "seed": self.seed,
            "paths": {
                "data": None if self.data_dir is None else str(self.data_dir),
                "output": None if self.output_dir is None else str(self.output_dir),
                "library": None if self.library_path is None else str(self.library_path),
                "input": self.input_path,
            },
            "features": self.feature_config().to_dict(),
            "gibbs": gibbs,
            "anomaly_k": self.anomaly_k,
            "train": {"leave_self_out": bool(self.train.get("leave_self_out", True))},
            "simulate": self.simulate,
            "evaluate": self.evaluate,
        }


def gibbs_from_dict(d):
    d = dict(d)
    names = {f.name for f in dataclasses.fields(GibbsConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigurationError(f"unknown gibbs options {sorted(unknown)}")
    for k in _GIBBS_TUPLES:
        if k in d:
            d[k] = tuple(float(x) for x in d[k])
    for k in _GIBBS_ARRAYS:
        if d.get(k) is not None:
            d[k] = np.asarray(d[k], dtype=float)
    try:
        return GibbsConfig(**d)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


_TOP_KEYS = {"seed", "paths", "features", "gibbs", "anomaly_k", "train", "simulate", "evaluate"}


def load_run_config(args):
    raw = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} not found")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError("config file must hold a JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    paths = raw.get("paths", {})
    cfg = RunConfig(
        command=args.command,
        seed=raw.get("seed"),
        data_dir=_path(paths.get("data")),
        output_dir=_path(paths.get("output")),
        library_path=_path(paths.get("library")),
        input_path=paths.get("input"),
        features=dict(raw.get("features", {})),
        gibbs=dict(raw.get("gibbs", {})),
        anomaly_k=float(raw.get("anomaly_k", DEFAULT_ANOMALY_K)),
        train=dict(raw.get("train", {})),
        simulate=dict(raw.get("simulate", {})),
        evaluate=dict(raw.get("evaluate", {})),
    )
    # flags override the file
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output is not None:
        cfg.output_dir = Path(args.output)
    if args.library is not None:
        cfg.library_path = Path(args.library)
    if args.data is not None:
        cfg.data_dir = Path(args.data)
    if args.input is not None:
        cfg.input_path = args.input
    if args.k is not None:
        cfg.anomaly_k = args.k
    if args.order is not None:
        cfg.gibbs["order"] = args.order
    if args.pose:
        cfg.features["include_pose"] = True
        cfg.simulate["include_pose"] = True
    if cfg.seed is not None and (isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int)
                                 or not 0 <= cfg.seed < 2 ** 64):
        raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {cfg.seed!r}")
    if not np.isfinite(cfg.anomaly_k) or cfg.anomaly_k < 0:
        raise ConfigurationError(f"anomaly k must be a non-negative real, got {cfg.anomaly_k}")
    cfg.feature_config()
    cfg.gibbs_config()
    return cfg


def _path(p):
    return None if p is None else Path(p)


def _require(cfg, *names):
    for name in names:
        if getattr(cfg, name) is None:
            flag = {"seed": "--seed", "output_dir": "--output", "data_dir": "--data",
                    "library_path": "--library"}[name]
            raise ConfigurationError(f"{cfg.command} needs {flag} (or the matching config entry)")


def _echo_config(cfg):
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(cfg.resolved(), sort_keys=True, indent=1) + "\n"
    (cfg.output_dir / "run_config.json").write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg, stage):
    from .data.synthetic import TaskSpec, simulate_task_dataset
    from .data.trials import save_dataset

    _require(cfg, "seed", "output_dir")
    stage("simulate")
    opts = dict(cfg.simulate)
    if "skill_ids" in opts:
        opts["skill_ids"] = tuple(opts["skill_ids"])
    try:
        spec = TaskSpec(**opts)
    except TypeError as exc:
        raise ConfigurationError(f"simulate options: {exc}") from exc
    trials = simulate_task_dataset(spec, cfg.seed)
    stage("write dataset")
    save_dataset(trials, cfg.output_dir)
    _echo_config(cfg)
    return EXIT_OK


def _load_features(cfg, stage, feature_config):
    from .data.trials import load_dataset

    stage("load data")
    if not cfg.data_dir.is_dir():
        raise ConfigurationError(f"data directory {cfg.data_dir} not found")
    raw = load_dataset(cfg.data_dir)
    stage("featurize")
    return featurize_dataset(raw, feature_config)


def cmd_train(cfg, stage):
    from .data.persistence import save_library

    _require(cfg, "seed", "data_dir", "output_dir")
    fc = cfg.feature_config()
    gibbs = cfg.gibbs_config()
    trials = [t for t in _load_features(cfg, stage, fc) if t.outcome == "nominal"]
    training = {}
    for t in trials:
        for seg in t.segments:
            training.setdefault(seg.skill_label, []).append(seg)
    training = {s: training[s] for s in sorted(training)}
    if not training:
        raise InsufficientDataError("no nominal segments to train on")
    stage("train")
    library, diagnostics = build_library(training, gibbs, cfg.seed, feature_config=fc.to_dict(),
                                         leave_self_out=bool(cfg.train.get("leave_self_out", True)))
    stage("write outputs")
    path = cfg.library_path or cfg.output_dir / "library.json"
    save_library(library, path)
    for skill, diag in diagnostics.items():
        write_diagnostics(diag, cfg.output_dir / f"diagnostics_{skill}.csv")
    cfg.library_path = path
    _echo_config(cfg)
    return EXIT_OK


DIAGNOSTIC_COLUMNS = ("iteration", "joint_loglik", "active_modes", "alpha", "gamma", "kappa", "rho")


def write_diagnostics(diag, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_COLUMNS)
        for row in diag.rows():
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def cmd_evaluate(cfg, stage):
    from .data.features import FeatureConfig

    _require(cfg, "seed", "data_dir", "output_dir")
    opts = dict(cfg.evaluate)
    orders = [int(r) for r in opts.get("orders", [0, 1, 2])]
    if cfg.gibbs.get("order") is not None and "orders" not in opts:
        orders = [int(cfg.gibbs["order"])]
    base = cfg.feature_config()
    sets = opts.get("feature_sets")
    if sets is None:
        sets = {"wrench": dataclasses.replace(base, include_pose=False).to_dict()}
        if base.include_pose:
            sets["wrench+pose"] = base.to_dict()
    feature_sets = {name: FeatureConfig.from_dict(d) for name, d in sets.items()}
    datasets = {name: _load_features(cfg, stage, fc) for name, fc in feature_sets.items()}
    k_grid = opts.get("k_grid", list(DEFAULT_K_GRID))
    stage("cross-validate")
    cv = cross_validate(datasets, orders, cfg.gibbs_config(), cfg.seed,
                        leave_self_out=bool(opts.get("leave_self_out", True)))
    curves = []
    has_anomalous = any(t.outcome != "nominal" for ts in datasets.values() for t in ts)
    if has_anomalous:
        stage("anomaly ROC")
        curves = roc_from_cv(cv, k_grid)
    stage("write report")
    report(cv.table, curves, cfg.output_dir)
    _echo_config(cfg)
    return EXIT_OK


def _open_input(spec):
    if spec is None or spec == "-":
        return sys.stdin, False
    path = Path(spec)
    if not path.exists() or path.is_dir():
        raise ConfigurationError(f"input {path} not found")
    return open(path, newline="", encoding="utf-8"), True


def cmd_monitor(cfg, stage, stdout=None):
    from .data.features import FeatureConfig, StreamingFeaturizer
    from .data.persistence import load_library
    from .data.trials import parse_float_row, trial_header

    _require(cfg, "library_path")
    stage("load library")
    if not cfg.library_path.is_file():
        raise ConfigurationError(f"library {cfg.library_path} not found")
    library = load_library(cfg.library_path)
    fc = FeatureConfig.from_dict(library.feature_config or {})
    state = MonitorState(library, cfg.anomaly_k)
    featurizer = StreamingFeaturizer(fc)

    out_fh = stdout or sys.stdout
    close_out = False
    if cfg.output_dir is not None:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        out_fh = open(cfg.output_dir / "monitor.csv", "w", newline="", encoding="utf-8")
        close_out = True
    writer = csv.writer(out_fh, lineterminator="\n")
    writer.writerow(["frame", "fsm_skill", "argmax_skill", "correct"]
                    + [f"loglik_{s}" for s in library.skill_ids] + ["threshold", "anomaly"])

    stage("monitor")
    in_fh, close_in = _open_input(cfg.input_path)
    n_frames, n_anomalies = 0, 0
    started = time.perf_counter()
    try:
        reader = csv.reader(in_fh)
        header = next(reader, None)
        if header is not None:
            header = [h.strip() for h in header]
            expected = list(trial_header(fc.include_pose)) + ["fsm_skill"]
            if header != expected and not (not fc.include_pose and header == list(trial_header(True)) + ["fsm_skill"]):
                missing = [c for c in expected if c not in header]
                raise DataError(f"input header must be {','.join(expected)}"
                                + (f"; missing {missing}" if missing else ""), row=1)
            has_pose = len(header) == len(trial_header(True)) + 1
            n_num = len(header) - 1
            current = None
            for line_no, fields in enumerate(reader, start=2):
                if not fields:
                    continue
                if len(fields) != len(header):
                    raise DataError(f"expected {len(header)} fields, got {len(fields)}", row=line_no)
                vals = parse_float_row(fields[:n_num], line_no)
                fsm = fields[n_num].strip()
                if fsm not in library.skill_ids:
                    raise DataError(f"fsm_skill {fsm!r} is not in the library", row=line_no)
                if fsm != current:
                    featurizer.reset()
                    current = fsm
                pose = vals[7:14] if has_pose else None
                try:
                    y = featurizer.push(vals[0], vals[1:7], pose)
                    rep = state.step(y, fsm)
                except DataError as exc:
                    raise DataError(str(exc), row=line_no) from exc
                n_frames += 1
                n_anomalies += rep.anomaly
                writer.writerow([rep.frame, fsm, rep.argmax_skill, _bool(rep.correct)]
                                + [repr(float(v)) for v in rep.logliks]
                                + [repr(float(rep.threshold)), _bool(rep.anomaly)])
    finally:
        if close_in:
            in_fh.close()
        if close_out:
            out_fh.close()
        else:
            out_fh.flush()
    elapsed = time.perf_counter() - started
    fps = n_frames / elapsed if elapsed > 0 else float("inf")
    if n_frames >= 200 and fps < REALTIME_FPS:
        print(f"warning: monitor throughput {fps:.1f} frames/s is below {REALTIME_FPS:.0f} frames/s",
              file=sys.stderr)
    print(f"monitored {n_frames} frames, {n_anomalies} anomaly flags, {fps:.1f} frames/s", file=sys.stderr)
    return EXIT_OK


def _bool(x):
    return "true" if x else "false"


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "monitor": cmd_monitor,
    "evaluate": cmd_evaluate,
}


def build_parser():
    parser = _Parser(prog="shdpvar", description="Skill identification and anomaly detection with "
                     "sticky HDP switching-VAR models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    helps = {
        "simulate": "write a seeded synthetic multi-skill dataset",
        "train": "fit one model per skill and save the skill library",
        "monitor": "classify skills and flag anomalies frame by frame",
        "evaluate": "leave-one-out accuracy and anomaly ROC",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
        p.add_argument("--output", help="output directory")
        p.add_argument("--library", help="skill library file")
        p.add_argument("--data", help="dataset directory (segments.csv and trials/)")
        p.add_argument("--input", help="monitor input CSV, '-' for standard input")
        p.add_argument("--k", type=float, help="anomaly threshold multiplier")
        p.add_argument("--order", type=int, choices=(0, 1, 2), help="autoregressive order")
        p.add_argument("--pose", action="store_true", help="include pose features")
    return parser


def main(argv=None, stdout=None):
    stage_name = ["parse arguments"]

    def stage(name):
        stage_name[0] = name

    def fail(code, exc):
        print(f"shdpvar: error during {stage_name[0]}: {exc}", file=sys.stderr)
        return code

    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        stage("read configuration")
        cfg = load_run_config(args)
        if args.command == "monitor":
            return cmd_monitor(cfg, stage, stdout)
        return COMMANDS[args.command](cfg, stage)
    except (DataError, InsufficientDataError, InsufficientHistoryError, ShapeError, LibraryLoadError) as exc:
        return fail(EXIT_DATA, exc)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return fail(EXIT_NUMERICAL, exc)
    except (ConfigurationError, InvalidParameterError, OSError) as exc:
        return fail(EXIT_USAGE, exc)


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
