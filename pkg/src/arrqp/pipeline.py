"""End-to-end prediction pipeline and its routing dispatcher.

One run executes: load/generate -> split -> outlier removal on the training
entries -> feature embedding -> graph -> base model training -> grey-sheep
detection -> grey-sheep heads -> cold-start heads -> evaluation.  Every
test pair is routed to exactly one predictor: cold-start pairs first (a
cold entity scores zero on the grey-sheep measure, so cold wins), then
grey-sheep pairs, then the base model.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import anomaly as anomaly_mod
from .anomaly import GaScores, GreysheepReport, OutlierReport
from .autoencoder import (
    scaled_autoencoder_config,
    service_context_autoencoder_config,
    train_autoencoder,
    user_context_autoencoder_config,
)
from .data import Dataset, GroundTruth, QosMatrix, SplitSpec, generate_synthetic, load_wsdream, split, summarize
from .features import (
    FeatureEmbedding,
    assemble_embedding,
    cosine_similarity,
    nmf_decompose,
    onehot_context,
    stat_feature_matrix,
)
from .graph import build_adjacency, normalize
from .heads import (
    CRRQP_CATEGORIES,
    GRRQP_CATEGORIES,
    MlpConfig,
    MlpHead,
    PairFeatureContext,
    build_crrqp_features,
    build_grrqp_features,
    crrqp_category,
    grrqp_category,
    train_crrqp,
    train_grrqp,
)
from .metrics import confidence_table, improvement, metric_report
from .mhgat import MhGatConfig, TrainedMhGat, train_mhgat
from .mhgcmf import MhGcmfConfig, TrainedSorrqp, train_sorrqp
from .nn import TrainConfig
from .nn.losses import default_gamma

ARTIFACT_DIR_ENV = "ARRQP_ARTIFACTS"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


@dataclass(frozen=True)
class ArrqpConfig:
    """Full experiment configuration with benchmark defaults."""

    # data: either a synthetic spec or dataset file paths
    synthetic: dict | None = None
    matrix_path: str | None = None
    user_list_path: str | None = None
    service_list_path: str | None = None
    parameter_kind: str = "RT"
    density: float = 10.0  # train percentage x
    seed: int = 0

    # features
    d_n: int = 50
    d_s: int = 50
    d_c: int = 50
    feature_mode: str = "combined"  # combined | qos | contextual
    nmf_max_iters: int = 300
    nmf_tol: float = 1e-7
    ae_max_epochs: int = 150
    ae_patience: int = 3
    ae_batch_size: int | None = None
    ae_dropout: tuple[float, float] = (0.6, 0.4)
    ae_learning_rate: float = 0.001

    # base model
    model: str = "mhgcmf"  # mhgcmf | mhgat
    n_heads: int = 1
    t: int = 2
    gamma: float | None = None  # None: 0.25 for RT, 10 for TP
    loss: str = "cauchy"
    learning_rate: float = 0.001
    max_epochs: int = 20000
    patience: int = 300

    # anomaly handling
    c: float = 2.0
    lam: float = 0.1
    outlier_trees: int = 100
    outlier_subsample: int = 256
    outlier_raw_features: bool = False
    greysheep_on_full_data: bool = False

    # cold-start designation: this fraction of users/services is stripped of
    # all training data (their observed entries move to the test set)
    csp_users: float = 0.0
    csp_services: float = 0.0

    # heads
    head_max_epochs: int = 500
    head_patience: int = 3
    head_batch_size: int = 32
    head_learning_rate: float = 0.001
    cold_collab_mode: str = "zeros"  # zeros | nmf_mean
    crrqp_max_pairs: int | None = 20000

    # experiment
    runs: int = 10
    evaluate_cleaned_test: bool = True

    def __post_init__(self):
        if not 1 <= self.n_heads <= 8:
            raise ValueError("head count must lie in 1..8")
        if self.model not in ("mhgcmf", "mhgat"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.feature_mode not in ("combined", "qos", "contextual"):
            raise ValueError(f"unknown feature mode {self.feature_mode!r}")
        if not 0 < self.density < 100:
            raise ValueError("density is a training percentage in (0, 100)")
        if not 0 <= self.lam < 1:
            raise ValueError("lambda must lie in [0, 1)")
        if not (0 <= self.csp_users < 1 and 0 <= self.csp_services < 1):
            raise ValueError("cold-start fractions must lie in [0, 1)")
        if self.runs < 1:
            raise ValueError("need at least one run")

    def effective_gamma(self) -> float:
        return self.gamma if self.gamma is not None else default_gamma(self.parameter_kind)

    def to_json(self) -> dict:
        out = asdict(self)
        out["ae_dropout"] = list(self.ae_dropout)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ArrqpConfig":
        obj = dict(obj)
        if "ae_dropout" in obj:
            obj["ae_dropout"] = tuple(obj["ae_dropout"])
        return cls(**obj)

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RoutingDecision:
    user: int
    service: int
    route: str  # sorrqp | grrqp | crrqp
    category: str | None = None


def route(
    user: int,
    service: int,
    greysheep: GreysheepReport,
    cold_users: frozenset[int] | set[int],
    cold_services: frozenset[int] | set[int],
    trained_heads: set[str] | None = None,
) -> RoutingDecision:
    """Pick the predictor for one pair: cold first, then grey sheep, else base.

    ``trained_heads`` lists the head categories that actually exist; a pair
    whose head is missing falls back to the base predictor with a warning.
    """
    def with_fallback(route_name: str, category: str) -> RoutingDecision:
        if trained_heads is not None and category not in trained_heads:
            warnings.warn(
                f"head {category!r} untrained; pair ({user}, {service}) "
                "falls back to the base predictor"
            )
            return RoutingDecision(user, service, "sorrqp", None)
        return RoutingDecision(user, service, route_name, category)

    user_cold = user in cold_users
    service_cold = service in cold_services
    if user_cold and service_cold:
        return with_fallback("crrqp", "csb")
    if user_cold:
        return with_fallback("crrqp", "csu")
    if service_cold:
        return with_fallback("crrqp", "css")

    gsu = user in greysheep.gsu
    gss = service in greysheep.gss
    if gsu and gss:
        return with_fallback("grrqp", "gsu_gss")
    if gsu:
        return with_fallback("grrqp", "gsu_regular")
    if gss:
        return with_fallback("grrqp", "regular_gss")
    return RoutingDecision(user, service, "sorrqp", None)


# ---------------------------------------------------------------------------
# feature embedding construction


def build_feature_embedding(
    train: QosMatrix,
    dataset: Dataset,
    config: ArrqpConfig,
    seed: int,
) -> FeatureEmbedding:
    """Assemble the initial node features from the training matrix."""
    seeds = np.random.SeedSequence(seed).generate_state(5)
    n, m = train.n_users, train.n_services

    stat = stat_feature_matrix(train)

    factors = nmf_decompose(
        train, config.d_n, max_iters=config.nmf_max_iters,
        tol=config.nmf_tol, seed=int(seeds[0]),
    )
    collaborative = np.vstack([factors.user_factors, factors.service_factors])

    def encode(inputs: np.ndarray, bottleneck: int, ae_seed: int, table: str | None) -> np.ndarray:
        dim = inputs.shape[1]
        if table == "user" and dim == 507:
            cfg = user_context_autoencoder_config(dim)
        elif table == "service" and dim == 8598:
            cfg = service_context_autoencoder_config(dim)
        else:
            cfg = scaled_autoencoder_config(dim, bottleneck)
        cfg = replace(
            cfg,
            dropout_rates=tuple(config.ae_dropout),
            max_epochs=config.ae_max_epochs,
            patience=config.ae_patience,
            batch_size=config.ae_batch_size,
            learning_rate=config.ae_learning_rate,
        )
        model = train_autoencoder(inputs, cfg, seed=ae_seed)
        return model.encode(inputs)

    similarity = np.vstack([
        encode(cosine_similarity(train, "user"), config.d_s, int(seeds[1]), None),
        encode(cosine_similarity(train, "service"), config.d_s, int(seeds[2]), None),
    ])

    contextual = np.vstack([
        encode(onehot_context(dataset.user_context), config.d_c, int(seeds[3]), "user"),
        encode(onehot_context(dataset.service_context), config.d_c, int(seeds[4]), "service"),
    ])

    if config.feature_mode == "qos":
        contextual = np.zeros_like(contextual)
    elif config.feature_mode == "contextual":
        stat = np.zeros_like(stat)
        collaborative = np.zeros_like(collaborative)
        similarity = np.zeros_like(similarity)

    return assemble_embedding(stat, collaborative, similarity, contextual, n_users=n)


# ---------------------------------------------------------------------------
# the bundle


@dataclass
class ArrqpBundle:
    config: ArrqpConfig
    dataset: Dataset
    ground_truth: GroundTruth | None
    train: QosMatrix  # outlier-cleaned training matrix
    val: QosMatrix
    test: QosMatrix
    outlier_report: OutlierReport
    greysheep_report: GreysheepReport
    embedding: FeatureEmbedding
    base: TrainedSorrqp | TrainedMhGat
    pair_context: PairFeatureContext
    grrqp_heads: dict[str, MlpHead | None]
    crrqp_heads: dict[str, MlpHead | None]
    report: dict = field(default_factory=dict)

    @property
    def trained_head_categories(self) -> set[str]:
        return {
            cat for cat, head in {**self.grrqp_heads, **self.crrqp_heads}.items()
            if head is not None
        }

    def decide(self, user: int, service: int) -> RoutingDecision:
        return route(
            user, service, self.greysheep_report,
            self.pair_context.cold_users, self.pair_context.cold_services,
            trained_heads=self.trained_head_categories,
        )

    def predict(self, user: int, service: int) -> tuple[float, RoutingDecision]:
        decision = self.decide(user, service)
        if decision.route == "sorrqp":
            return self.base.predict(user, service), decision
        if decision.route == "grrqp":
            x = build_grrqp_features(self.pair_context, user, service, decision.category)
            return float(self.grrqp_heads[decision.category].predict(x)[0]), decision
        x = build_crrqp_features(self.pair_context, user, service, decision.category)
        return float(self.crrqp_heads[decision.category].predict(x)[0]), decision

    def predict_pairs(self, users: np.ndarray, services: np.ndarray) -> np.ndarray:
        """Routed predictions for index arrays (batched per category)."""
        users = np.asarray(users, dtype=int)
        services = np.asarray(services, dtype=int)
        out = np.empty(users.size)
        decisions = [self.decide(int(i), int(j)) for i, j in zip(users, services)]
        base_idx = [k for k, d in enumerate(decisions) if d.route == "sorrqp"]
        if base_idx:
            idx = np.asarray(base_idx)
            out[idx] = self.base.predict_pairs(users[idx], services[idx])
        for cat, builder, heads in (
            *[(c, build_grrqp_features, self.grrqp_heads) for c in GRRQP_CATEGORIES],
            *[(c, build_crrqp_features, self.crrqp_heads) for c in CRRQP_CATEGORIES],
        ):
            picked = [k for k, d in enumerate(decisions) if d.category == cat]
            if not picked:
                continue
            x = np.vstack([
                builder(self.pair_context, int(users[k]), int(services[k]), cat)
                for k in picked
            ])
            out[np.asarray(picked)] = heads[cat].predict(x)
        return out


def _cold_sets(train: QosMatrix) -> tuple[frozenset[int], frozenset[int]]:
    cold_u = frozenset(int(i) for i in np.nonzero(~train.mask.any(axis=1))[0])
    cold_s = frozenset(int(j) for j in np.nonzero(~train.mask.any(axis=0))[0])
    return cold_u, cold_s


def designate_cold_start(
    train: QosMatrix,
    val: QosMatrix,
    test: QosMatrix,
    user_fraction: float,
    service_fraction: float,
    seed: int,
) -> tuple[QosMatrix, QosMatrix, QosMatrix]:
    """Strip a fraction of entities of all training data.

    Their observed train/validation entries move to the test set, which is
    how cold-start performance can be measured against known values.
    """
    if user_fraction == 0 and service_fraction == 0:
        return train, val, test
    rng = np.random.default_rng(seed)
    n, m = train.n_users, train.n_services
    users = (
        rng.choice(n, size=int(round(user_fraction * n)), replace=False)
        if user_fraction else np.empty(0, int)
    )
    services = (
        rng.choice(m, size=int(round(service_fraction * m)), replace=False)
        if service_fraction else np.empty(0, int)
    )
    strip = np.zeros_like(train.mask)
    strip[users, :] = True
    strip[:, services] = True

    new_train_mask = train.mask & ~strip
    new_val_mask = val.mask & ~strip
    moved = (train.mask | val.mask) & strip
    new_test_mask = test.mask | moved
    values = train.values + val.values + test.values  # masks are disjoint
    return (
        QosMatrix(values=np.where(new_train_mask, values, 0.0), mask=new_train_mask),
        QosMatrix(values=np.where(new_val_mask, values, 0.0), mask=new_val_mask),
        QosMatrix(values=np.where(new_test_mask, values, 0.0), mask=new_test_mask),
    )


def load_or_generate(config: ArrqpConfig) -> tuple[Dataset, GroundTruth | None]:
    if config.synthetic is not None:
        spec = dict(config.synthetic)
        spec.setdefault("seed", config.seed)
        spec.setdefault("parameter_kind", config.parameter_kind)
        return generate_synthetic(**spec)
    if not (config.matrix_path and config.user_list_path and config.service_list_path):
        raise ValueError("config needs either a synthetic spec or dataset paths")
    dataset = load_wsdream(
        config.matrix_path, config.user_list_path, config.service_list_path,
        parameter_kind=config.parameter_kind,
    )
    return dataset, None


def run_pipeline(config: ArrqpConfig, seed: int | None = None) -> ArrqpBundle:
    """Execute one full training run and evaluate on the held-out pairs."""
    seed = config.seed if seed is None else seed
    stage_seeds = np.random.SeedSequence(seed).generate_state(8)

    with _stage("dataset"):
        dataset, truth = load_or_generate(config)

    with _stage("split"):
        spec = SplitSpec(train_fraction=config.density, seed=int(stage_seeds[0]))
        train_raw, val, test = split(dataset, spec)
        train_raw, val, test = designate_cold_start(
            train_raw, val, test, config.csp_users, config.csp_services,
            seed=int(stage_seeds[7]),
        )

    with _stage("outlier_detection"):
        report = anomaly_mod.score_outliers(
            train_raw,
            n_trees=config.outlier_trees,
            subsample_size=config.outlier_subsample,
            seed=int(stage_seeds[1]),
            raw_only=config.outlier_raw_features,
        )
        train, outlier_report = anomaly_mod.remove_outliers(train_raw, report, config.lam)

    with _stage("features"):
        embedding = build_feature_embedding(train, dataset, config, int(stage_seeds[2]))

    with _stage("graph"):
        a_hat = normalize(build_adjacency(train))

    gamma = config.effective_gamma()
    with _stage("base_model"):
        train_cfg = TrainConfig(
            optimizer="adam",
            learning_rate=config.learning_rate,
            max_epochs=config.max_epochs,
            patience=config.patience,
            seed=int(stage_seeds[3]),
        )
        if config.model == "mhgcmf":
            model_cfg = MhGcmfConfig(
                in_dim=embedding.width, n_heads=config.n_heads,
                n_blocks=config.t, seed=int(stage_seeds[3]),
            )
            base = train_sorrqp(train, val, embedding.matrix, a_hat,
                                model_cfg, train_cfg, gamma, loss=config.loss)
        else:
            gat_cfg = MhGatConfig(
                in_dim=embedding.width, n_heads=config.n_heads, seed=int(stage_seeds[3]),
            )
            base = train_mhgat(train, val, embedding.matrix,
                               gat_cfg, train_cfg, gamma, loss=config.loss)

    with _stage("greysheep_detection"):
        gs_matrix = dataset.matrix if config.greysheep_on_full_data else train
        ga = anomaly_mod.ga_scores(gs_matrix)
        greysheep_report = anomaly_mod.detect_greysheep(ga, config.c)

    with _stage("pair_context"):
        cold_users, cold_services = _cold_sets(train)
        # a cold entity scores zero, so it can never be grey sheep; keep the
        # sets disjoint anyway in case detection ran on the full matrix
        gs_users = frozenset(greysheep_report.gsu) - cold_users
        gs_services = frozenset(greysheep_report.gss) - cold_services
        pair_context = PairFeatureContext(
            user_embeddings=base.user_embeddings,
            service_embeddings=base.service_embeddings,
            embedding=embedding,
            ga=GaScores(
                user_scores=greysheep_report.user_scores,
                service_scores=greysheep_report.service_scores,
            ),
            user_counts=train.mask.sum(axis=1).astype(float),
            service_counts=train.mask.sum(axis=0).astype(float),
            gs_users=gs_users,
            gs_services=gs_services,
            cold_users=cold_users,
            cold_services=cold_services,
            cold_collab_mode=config.cold_collab_mode,
        )

    head_cfg = MlpConfig(
        gamma=gamma,
        learning_rate=config.head_learning_rate,
        patience=config.head_patience,
        max_epochs=config.head_max_epochs,
        batch_size=config.head_batch_size,
        seed=int(stage_seeds[4]),
    )
    with _stage("grrqp"):
        grrqp_heads = train_grrqp(train, pair_context, head_cfg)
    with _stage("crrqp"):
        crrqp_heads = train_crrqp(
            train, pair_context, replace(head_cfg, seed=int(stage_seeds[5])),
            max_pairs=config.crrqp_max_pairs,
        )

    bundle = ArrqpBundle(
        config=config,
        dataset=dataset,
        ground_truth=truth,
        train=train,
        val=val,
        test=test,
        outlier_report=outlier_report,
        greysheep_report=greysheep_report,
        embedding=embedding,
        base=base,
        pair_context=pair_context,
        grrqp_heads=grrqp_heads,
        crrqp_heads=crrqp_heads,
    )

    with _stage("evaluation"):
        bundle.report = _evaluate(bundle, int(stage_seeds[6]))
    return bundle


def global_mean_baseline(train: QosMatrix) -> float:
    observed = train.values[train.mask]
    if observed.size == 0:
        raise ValueError("cannot take the mean of an empty training set")
    return float(observed.mean())


def _evaluate(bundle: ArrqpBundle, seed: int) -> dict:
    test = bundle.test
    rows, cols = test.observed_indices()
    actual = test.values[rows, cols]
    if actual.size == 0:
        return {"warning": "empty test set"}

    predicted = bundle.predict_pairs(rows, cols)
    overall = metric_report(actual, predicted)
    base_only = bundle.base.predict_pairs(rows, cols)
    baseline = global_mean_baseline(bundle.train)
    baseline_preds = np.full(actual.size, baseline)

    by_route: dict[str, dict] = {}
    decisions = [bundle.decide(int(i), int(j)) for i, j in zip(rows, cols)]
    for name in ("sorrqp", "grrqp", "crrqp"):
        picked = [k for k, d in enumerate(decisions) if d.route == name]
        if picked:
            idx = np.asarray(picked)
            rep = metric_report(actual[idx], predicted[idx])
            by_route[name] = {"mae": rep.mae, "rmse": rep.rmse, "n_pairs": rep.n_pairs}

    report = {
        "n_test_pairs": int(actual.size),
        "mae": overall.mae,
        "rmse": overall.rmse,
        "base_model_mae": metric_report(actual, base_only).mae,
        "base_model_rmse": metric_report(actual, base_only).rmse,
        "baseline_global_mean": baseline,
        "baseline_mae": metric_report(actual, baseline_preds).mae,
        "baseline_rmse": metric_report(actual, baseline_preds).rmse,
        "by_route": by_route,
        "greysheep": {
            "n_users": len(bundle.greysheep_report.gsu),
            "n_services": len(bundle.greysheep_report.gss),
            "c": bundle.config.c,
        },
        "outliers_removed": len(bundle.outlier_report.removed),
    }
    report["improvement_over_baseline"] = improvement(report["mae"], report["baseline_mae"])

    if bundle.config.evaluate_cleaned_test and bundle.config.lam > 0:
        # separate view: re-score with the test entries' own outliers removed
        test_report = anomaly_mod.score_outliers(
            test,
            n_trees=bundle.config.outlier_trees,
            subsample_size=bundle.config.outlier_subsample,
            seed=seed,
            raw_only=bundle.config.outlier_raw_features,
        )
        cleaned_test, _ = anomaly_mod.remove_outliers(test, test_report, bundle.config.lam)
        c_rows, c_cols = cleaned_test.observed_indices()
        if c_rows.size:
            c_actual = cleaned_test.values[c_rows, c_cols]
            c_pred = bundle.predict_pairs(c_rows, c_cols)
            rep = metric_report(c_actual, c_pred)
            report["cleaned_test"] = {
                "mae": rep.mae, "rmse": rep.rmse, "n_pairs": rep.n_pairs,
            }
    return report


# ---------------------------------------------------------------------------
# repeated runs


def run_experiment(config: ArrqpConfig) -> dict:
    """Run the pipeline ``config.runs`` times and aggregate the metrics."""
    run_seeds = np.random.SeedSequence(config.seed).generate_state(config.runs)
    runs = []
    bundles = []
    for k in range(config.runs):
        bundle = run_pipeline(config, seed=int(run_seeds[k]))
        bundles.append(bundle)
        runs.append(bundle.report)

    maes = [r["mae"] for r in runs]
    rmses = [r["rmse"] for r in runs]
    report = {
        "config_fingerprint": config.fingerprint(),
        "config": config.to_json(),
        "runs": runs,
        "mean_mae": float(np.mean(maes)),
        "mean_rmse": float(np.mean(rmses)),
    }
    if config.runs >= 2:
        report["confidence_intervals"] = {
            "mae": {
                str(level): [ci.lower, ci.upper]
                for level, ci in confidence_table(maes).items()
            },
            "rmse": {
                str(level): [ci.lower, ci.upper]
                for level, ci in confidence_table(rmses).items()
            },
        }
    report["last_bundle"] = bundles[-1]  # stripped before serialization
    return report


def artifact_dir() -> str:
    return os.environ.get(ARTIFACT_DIR_ENV, os.path.join(os.getcwd(), "arrqp_artifacts"))
