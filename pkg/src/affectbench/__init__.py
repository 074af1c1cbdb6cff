"""Personalized vs generalized emotion classification on windowed
multimodal physiological signals, on a self-contained reverse-mode
autodiff engine.

Public API re-exports the main types and operations of each module;
anything not listed here is internal.
"""

from affectbench.autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    conv1d,
    dropout,
    flatten,
    grad_check,
    matmul,
    maxpool1d,
    silu,
    softmax,
    softmax_cross_entropy,
)
from affectbench.datapipe import (
    CANONICAL_MODALITIES,
    SAMPLE_RATE_HZ,
    WINDOW_LEN,
    WINDOW_STRIDE,
    AffectClass,
    SplitTriple,
    SubjectRecording,
    Window,
    load_subject,
    make_windows,
    normalize,
    resample_linear,
    scan_windows,
    split_personalized,
    split_subject_exclusive,
    split_subject_inclusive,
    stack_windows,
    synth_generate,
    write_subject,
)
from affectbench.errors import (
    BadMagicError,
    ConfigMismatchError,
    FormatError,
    ModalityTableError,
    NumericsError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from affectbench.kernels import active_backend
from affectbench.model import (
    Checkpoint,
    CheckpointMeta,
    EmotionNet,
    ModelConfig,
    build_model,
    load_checkpoint,
    param_count,
    predict,
    predict_proba,
    read_checkpoint,
    save_checkpoint,
)
from affectbench.protocols import (
    ConfusionMatrix,
    ExperimentSummary,
    MetricsReport,
    accuracy,
    aggregate,
    emit_bar_chart_svg,
    emit_report,
    macro_f1,
    per_class_prf,
    run_experiment,
    run_personalized,
    run_subject_exclusive,
    run_subject_inclusive,
)
from affectbench.rng import ROLE_DROPOUT, ROLE_INIT, ROLE_SHUFFLE, Rng
from affectbench.training import (
    AdamWState,
    TrainConfig,
    TrainReport,
    adamw_step,
    evaluate,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
