"""Early detection of problematic short-form video use from
heterogeneous social graphs: synthetic cohort generation, statistical
screening, structure augmentation, and a graph neural detector."""

from .errors import (
    AugmentError,
    CalibrationError,
    ConfigError,
    DomainError,
    EarlySdError,
    EnhancerError,
    GraphLookupError,
    NumericError,
    ParseError,
    ProtocolError,
    ShapeError,
    TrainingError,
    ValidationError,
)
from .graph import (
    BinaryLabel,
    DatasetSplit,
    EdgeOrigin,
    HeteroSocialGraph,
    Label,
    Relation,
    TopicNode,
    TopicOrigin,
    UserRecord,
    UtEdge,
    UuEdge,
    build_graph,
    label_from_score,
    load_dataset,
    load_graph,
    save_dataset,
    save_graph,
    stratified_split,
)
from .stats import (
    AnovaResult,
    anova_oneway,
    feature_significance_report,
    jsd,
    kl_divergence,
    regularized_incomplete_beta,
)
from .enhancer import RemoteEnhancer, ResponseCache, StubEnhancer, TopicLexicon
from .synth import (
    CohortConfig,
    calibrate_topic_divergence,
    generate_cohort,
    load_cohort_config,
    plant_signal,
    save_cohort,
)
from .augment import (
    AugmentConfig,
    LinkPredictor,
    expand_topic_set,
    train_link_predictor,
    ut_augment,
    uu_augment,
)
from .detector import (
    EarlySdModel,
    MetricsReport,
    ModelConfig,
    evaluate,
    metrics_from_predictions,
    train_earlysd,
)
from .baselines import run_baseline
from .experiment import (
    ExperimentConfig,
    load_experiment_config,
    run_ablation,
    run_single,
)

__version__ = "0.1.0"
