"""DP-SGD privacy auditing toolkit.

Accounting upper bounds on epsilon under four composition regimes,
loss-threshold membership inference against trained models, attack-derived
epsilon lower bounds, and the region of privacy between the two.
"""

__version__ = "0.1.0"

from .accountant import (
    AnalysisKind,
    CalibrationError,
    ClassicalGaussianBoundWarning,
    PrivacyBudget,
    RdpCurve,
    SgdConfig,
    account,
    amplify_by_sampling,
    calibrate_sigma,
    compose_advanced,
    compose_naive,
    gaussian_step_epsilon,
    rdp_compose_and_convert,
    rdp_sgm_curve,
    zcdp_epsilon,
)
from .attack import (
    AttackResult,
    RocCurve,
    averaged_attack,
    best_advantage,
    roc_curve,
    threshold_attack,
    tpr_at_fpr,
    yeom_attack,
)
from .bounds import (
    PrivacyRegionPoint,
    advantage_upper_bound,
    eps_lower_bound,
    privacy_region,
    tpr_upper_bound,
    yeom_advantage_bound,
)
from .experiment import (
    AuditReport,
    AuditRow,
    ExperimentConfig,
    emit_report,
    load_report,
    run_experiment,
)
from .mechanisms import clip, gaussian_noise, randomized_response
from .oracle import FiniteMechanism, exact_roc, run_suite, verify_prop1, verify_prop2
from .trainer import (
    Dataset,
    Model,
    SyntheticSpec,
    TrainTrace,
    accuracy,
    generate_synthetic,
    load_csv,
    load_model,
    per_example_losses,
    save_model,
    train_dpsgd,
)
