"""Double machine learning for contest-randomised flip effects with cluster-robust inference."""

__version__ = "0.1.0"

from .bootstrap import (  # noqa: E402
    GridSpec,
    multiplier_draws,
    sup_test_homogeneous,
    sup_test_zero,
    uniform_band,
    uniform_critical_value,
)
from .estimator import DmlFit, PolySpec, effect_at, fit_dml, treatment_residuals  # noqa: E402
from .inference import (  # noqa: E402
    build_scores,
    compare_fits,
    linear_combination_test,
    mistakes,
    pointwise_se,
    sandwich_variance,
    wald_test,
)
from .nuisance import FoldPlan, LearnerSpec, crossfit_outcome, make_folds  # noqa: E402
from .panel import PanelDataset, ingest_csv, split_by_party, to_csv, validate_design  # noqa: E402
from .pipeline import EstConfig, analyze  # noqa: E402
from .simgen import SimConfig, generate, monte_carlo  # noqa: E402
