"""Maximum-probability regularized training of energy-based classifiers."""

from .data import (
    Dataset,
    NoiseSpec,
    STANDARD_NOISE_LEVELS,
    dataset_from_config,
    load_idx,
    perturb,
    shift_dataset,
    split,
    synth_blobs,
    write_idx,
)
from .harness import (
    DEFAULT_ALPHA_GRID,
    GridResult,
    GridSpec,
    RunRecord,
    TrainConfig,
    aggregate_report,
    evaluate,
    grid_spec_from_dict,
    ood_aurocs,
    read_results_csv,
    render_report,
    robustness_curve,
    run_grid,
    train,
    train_config_from_dict,
    write_results_csv,
)
from .metrics import (
    RobustnessCurve,
    ScoreSample,
    accuracy,
    auroc,
    mean_auroc,
    robustness_auc,
)
from .netcore import (
    Conv2d,
    CRelu,
    Dense,
    Flatten,
    NetworkSpec,
    backward,
    crelu,
    forward,
    init_parameters,
    layer_output_shapes,
    load_checkpoint,
    param_count,
    save_checkpoint,
    spec_from_config,
    spec_to_config,
)
from .objectives import (
    DiscreteModelPair,
    DivergedError,
    LossValue,
    Objective,
    ObjectiveConfig,
    batch_loss,
    batch_loss_gradient,
    exact_objective_chain,
    logsumexp,
    mpt_bound_exact,
    p_alpha_exact,
    verify_exact_properties,
)
from .scores import ScoreKind, energy_score, max_energy_score, score_table, softmax_score

__version__ = "0.1.0"
