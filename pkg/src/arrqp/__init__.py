"""Anomaly-resilient QoS prediction.

Graph-convolution matrix factorization over the bipartite user-service
invocation graph, trained with an outlier-resilient Cauchy loss, plus
dedicated detection and prediction paths for outliers, grey-sheep entities
and cold-start entities.
"""

from .data import (
    ContextTable,
    Dataset,
    DataFormatError,
    DimensionError,
    GenerationError,
    GroundTruth,
    QosMatrix,
    SplitSpec,
    generate_synthetic,
    load_matrix,
    load_synthetic,
    load_wsdream,
    save_matrix,
    save_synthetic,
    split,
    summarize,
)
from .features import (
    FeatureEmbedding,
    NmfFactors,
    StatFeatures,
    assemble_embedding,
    cosine_similarity,
    load_embedding,
    nmf_decompose,
    onehot_context,
    save_embedding,
    stat_feature_matrix,
    statistical_features,
)
from .autoencoder import (
    Autoencoder,
    AutoencoderConfig,
    scaled_autoencoder_config,
    service_context_autoencoder_config,
    train_autoencoder,
    user_context_autoencoder_config,
)
from .graph import Qig, build_adjacency, build_qig, export_adjacency, normalize
from .anomaly import (
    GaScores,
    GreysheepReport,
    IsolationForest,
    OutlierReport,
    ReliabilityScores,
    detect_greysheep,
    ga_scores,
    isolation_forest_scores,
    reliability_scores,
    remove_outliers,
    score_outliers,
)
from .metrics import (
    ConfidenceInterval,
    MetricError,
    MetricReport,
    confidence_interval,
    confidence_table,
    improvement,
    mae,
    metric_report,
    rmse,
)
from .mhgcmf import GraphConvUnit, MhGcmfConfig, MhGcmfModel, TrainedSorrqp, train_sorrqp
from .mhgat import GatHead, GatLayer, MhGatConfig, MhGatModel, TrainedMhGat, train_mhgat
from .heads import (
    MlpConfig,
    MlpHead,
    PairFeatureContext,
    RoutingError,
    build_crrqp_features,
    build_grrqp_features,
    train_crrqp,
    train_grrqp,
)
from .nn import TrainConfig, TrainingError
from .pipeline import (
    ArrqpBundle,
    ArrqpConfig,
    PipelineError,
    RoutingDecision,
    build_feature_embedding,
    global_mean_baseline,
    route,
    run_experiment,
    run_pipeline,
)
from .persist import load_bundle, save_bundle

__version__ = "0.1.0"
