"""CAN-bus intrusion-detection workbench.

Parse and label automotive CAN logs, synthesize attack traffic over ambient
captures, build tabular features and windowed model inputs, train classical
detectors plus the leader-class confidence ensemble, and evaluate with
per-class precision/recall/F1.
"""

from canids.core import (
    NORMAL_LABEL,
    AttackClass,
    CanFrame,
    LabeledFrame,
    LabelSpace,
    TrafficLog,
    arbitration_winner,
    id_bits,
    id_bits_matrix,
    id_from_bits,
)
from canids.detectors import (
    DecisionTree,
    Detector,
    FrequencyDetector,
    GradientBoosting,
    NotFittedError,
    Prediction,
    RandomForest,
    fit_decision_tree,
    fit_frequency_detector,
    fit_gbdt,
    fit_random_forest,
    load_model,
    measure_latency,
    save_model,
)
from canids.evaluate import (
    ClassMetrics,
    EvalReport,
    compute_metrics,
    confusion_matrix,
    emit_report,
    evaluate_pipeline,
    write_report,
)
from canids.features import (
    SplitSpec,
    TabularDataset,
    frame_to_features,
    load_dataset_csv,
    log_to_dataset,
    save_dataset_csv,
    smote_oversample,
    split_train_test,
)
from canids.ingest import (
    AttackMetadata,
    apply_metadata_labels,
    hcrl_schema,
    load_labels,
    load_metadata,
    parse_candump_log,
    parse_csv_dataset,
    save_labels,
    save_metadata,
    serialize_candump,
)
from canids.lccde import (
    LccdeEnsemble,
    LeaderMap,
    arbitrate_one,
    lccde_predict,
    select_leaders,
)
from canids.synth import (
    AmbientModel,
    AttackScenario,
    generate_ambient,
    load_scenario,
    run_scenario,
    save_scenario,
    sidecar_metadata,
)
from canids.windows import (
    BitGridSet,
    IdSequenceSet,
    build_bit_grids,
    build_id_sequences,
    load_bit_grids,
    load_id_sequences,
    save_bit_grids,
    save_id_sequences,
    window_count,
)

__version__ = "0.1.0"

__all__ = [
    "NORMAL_LABEL",
    "AttackClass",
    "CanFrame",
    "LabeledFrame",
    "LabelSpace",
    "TrafficLog",
    "arbitration_winner",
    "id_bits",
    "id_bits_matrix",
    "id_from_bits",
    "DecisionTree",
    "Detector",
    "FrequencyDetector",
    "GradientBoosting",
    "NotFittedError",
    "Prediction",
    "RandomForest",
    "fit_decision_tree",
    "fit_frequency_detector",
    "fit_gbdt",
    "fit_random_forest",
    "load_model",
    "measure_latency",
    "save_model",
    "ClassMetrics",
    "EvalReport",
    "compute_metrics",
    "confusion_matrix",
    "emit_report",
    "evaluate_pipeline",
    "write_report",
    "SplitSpec",
    "TabularDataset",
    "frame_to_features",
    "load_dataset_csv",
    "log_to_dataset",
    "save_dataset_csv",
    "smote_oversample",
    "split_train_test",
    "AttackMetadata",
    "apply_metadata_labels",
    "hcrl_schema",
    "load_labels",
    "load_metadata",
    "parse_candump_log",
    "parse_csv_dataset",
    "save_labels",
    "save_metadata",
    "serialize_candump",
    "LccdeEnsemble",
    "LeaderMap",
    "arbitrate_one",
    "lccde_predict",
    "select_leaders",
    "AmbientModel",
    "AttackScenario",
    "generate_ambient",
    "load_scenario",
    "run_scenario",
    "save_scenario",
    "sidecar_metadata",
    "BitGridSet",
    "IdSequenceSet",
    "build_bit_grids",
    "build_id_sequences",
    "load_bit_grids",
    "load_id_sequences",
    "save_bit_grids",
    "save_id_sequences",
    "window_count",
]
