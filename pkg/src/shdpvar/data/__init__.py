"""Trial ingestion, features, synthetic data and library files."""
from .features import FeatureConfig, StreamingFeaturizer, canonical_quaternion, featurize, featurize_frames
from .persistence import FORMAT_VERSION, dumps_library, load_library, loads_library, save_library
from .synthetic import (
    AnomalySpec,
    ModeSchedule,
    SyntheticSequence,
    TaskSpec,
    generate_synthetic,
    rotation_blocks,
    simulate_task_dataset,
)
from .trials import (
    RawTrial,
    Segment,
    ingest_csv,
    load_dataset,
    read_segments,
    save_dataset,
    trial_header,
    write_segments,
    write_trial_csv,
)

__all__ = [
    "FeatureConfig",
    "StreamingFeaturizer",
    "canonical_quaternion",
    "featurize",
    "featurize_frames",
    "FORMAT_VERSION",
    "dumps_library",
    "loads_library",
    "save_library",
    "load_library",
    "AnomalySpec",
    "ModeSchedule",
    "SyntheticSequence",
    "TaskSpec",
    "generate_synthetic",
    "rotation_blocks",
    "simulate_task_dataset",
    "RawTrial",
    "Segment",
    "ingest_csv",
    "load_dataset",
    "read_segments",
    "save_dataset",
    "trial_header",
    "write_segments",
    "write_trial_csv",
]
