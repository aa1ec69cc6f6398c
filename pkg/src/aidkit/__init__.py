"""aidkit: confidence-raising image perturbations and their analysis.

The toolkit searches pixel perturbations that *help* a classifier — raising
the true-class confidence and even correcting wrong predictions — at both
imperceptible ("weak") and content-destroying ("strong") budgets, finds
image-agnostic (universal) versions, trains models on PCA-modified data to
make universal help easier, and ships the measurement battery: manifold
distance, robustness under re-attack, cross-model transfer, and
attention-map overlap.
"""

__version__ = "0.1.0"

from .core import (
    AidResult,
    ClassifierHandle,
    EvalReport,
    Image,
    InvalidLabelError,
    InvalidRangeError,
    LabeledDataset,
    LabeledExample,
    ModelEvaluationError,
    Perturbation,
    PerturbationBudget,
    PredictionRecord,
    ShapeMismatchError,
    UnknownLayerError,
    boxed_delta,
    budgeted_image,
    clip_box,
    evaluate_accuracy,
    input_gradient,
    predict,
    project_budget,
)
from .aid import (
    AidConfig,
    aid_dataset,
    fgsm_aid,
    fgsm_attack,
    ifgsm_aid,
    ifgsm_attack,
    ifgsm_batch,
)
from .cw import CwConfig, cw_aid, cw_aid_batch, margin_f
from .universal import (
    SplitSpec,
    UniversalPerturbation,
    build_splits,
    epsilon_sweep,
    eval_universal,
    find_universal,
)
from .pca import (
    ModificationConfig,
    PcaModel,
    compare_universal,
    fit_pca,
    modify_dataset,
    modify_image,
    train_modified,
)
from .manifold import ManifoldApprox, distance_curve, local_chart, manifold_distance
from .analysis import (
    AttentionMap,
    TransferMatrix,
    attended_region,
    gradcam,
    gradcam_batch,
    iou,
    iou_distribution,
    robustness_report,
    transfer_matrix,
)
from .harness import (
    ExperimentConfig,
    ModelStore,
    TrainingSpec,
    run_experiment,
    train_baseline,
)
from .data import load_dataset, make_pattern_dataset, make_task
from .io import load_perturbation, save_perturbation
