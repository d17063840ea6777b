"""Bundle persistence: every pipeline artifact under one directory.

Arrays go to .npz files, structured metadata to JSON manifests.  A saved
bundle can be reloaded to serve routed predictions or to re-evaluate.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import replace

import numpy as np

from .anomaly import GaScores, GreysheepReport, OutlierReport
from .data import ContextTable, Dataset, QosMatrix
from .features import load_embedding, save_embedding
from .heads import MlpConfig, MlpHead, PairFeatureContext
from .mhgat import MhGatConfig, MhGatModel, TrainedMhGat
from .mhgcmf import MhGcmfConfig, MhGcmfModel, TrainedSorrqp
from .nn import TrainResult
from .pipeline import ArrqpBundle, ArrqpConfig


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _save_matrix_npz(path, matrix: QosMatrix) -> None:
    np.savez_compressed(path, values=matrix.values, mask=matrix.mask)


def _load_matrix_npz(path) -> QosMatrix:
    with np.load(path) as data:
        return QosMatrix(values=data["values"], mask=data["mask"])


def _head_to_files(head: MlpHead, npz_path, json_path) -> None:
    arrays = {}
    for k, layer in enumerate(head.layers):
        arrays[f"layer{k}.w"] = layer.w.value
        arrays[f"layer{k}.b"] = layer.b.value
    np.savez_compressed(npz_path, **arrays)
    cfg = head.config
    _write_json(json_path, {
        "in_dim": head.layers[0].w.value.shape[0],
        "layer_sizes": list(cfg.layer_sizes),
        "activation": cfg.activation,
        "loss": cfg.loss,
        "gamma": cfg.gamma,
        "optimizer": cfg.optimizer,
        "learning_rate": cfg.learning_rate,
        "patience": cfg.patience,
        "max_epochs": cfg.max_epochs,
        "batch_size": cfg.batch_size,
        "validation_fraction": cfg.validation_fraction,
        "seed": cfg.seed,
        "target_lo": head.target_lo,
        "target_range": head.target_range,
    })


def _head_from_files(npz_path, json_path) -> MlpHead:
    meta = _read_json(json_path)
    cfg = MlpConfig(
        layer_sizes=tuple(meta["layer_sizes"]),
        activation=meta["activation"],
        loss=meta["loss"],
        gamma=meta["gamma"],
        optimizer=meta["optimizer"],
        learning_rate=meta["learning_rate"],
        patience=meta["patience"],
        max_epochs=meta["max_epochs"],
        batch_size=meta["batch_size"],
        validation_fraction=meta["validation_fraction"],
        seed=meta["seed"],
    )
    head = MlpHead(meta["in_dim"], cfg)
    with np.load(npz_path) as data:
        for k, layer in enumerate(head.layers):
            layer.w.value = data[f"layer{k}.w"].astype(float)
            layer.b.value = data[f"layer{k}.b"].astype(float)
    head.target_lo = meta["target_lo"]
    head.target_range = meta["target_range"]
    return head


def save_bundle(bundle: ArrqpBundle, out_dir) -> str:
    os.makedirs(out_dir, exist_ok=True)
    heads_dir = os.path.join(out_dir, "heads")
    os.makedirs(heads_dir, exist_ok=True)

    _write_json(os.path.join(out_dir, "manifest.json"), {
        "fingerprint": bundle.config.fingerprint(),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "model": bundle.config.model,
    })
    _write_json(os.path.join(out_dir, "config.json"), bundle.config.to_json())
    _write_json(os.path.join(out_dir, "report.json"), bundle.report)

    _save_matrix_npz(os.path.join(out_dir, "dataset.npz"), bundle.dataset.matrix)
    for name, matrix in (("train", bundle.train), ("val", bundle.val), ("test", bundle.test)):
        _save_matrix_npz(os.path.join(out_dir, f"split_{name}.npz"), matrix)

    def ctx_json(ctx: ContextTable) -> dict:
        return {
            "entity_kind": ctx.entity_kind,
            "ids": list(ctx.ids),
            "region": ctx.region.tolist(),
            "group": ctx.group.tolist(),
            "n_regions": ctx.n_regions,
            "n_groups": ctx.n_groups,
        }

    _write_json(os.path.join(out_dir, "contexts.json"), {
        "parameter_kind": bundle.dataset.parameter_kind,
        "user": ctx_json(bundle.dataset.user_context),
        "service": ctx_json(bundle.dataset.service_context),
    })

    save_embedding(
        bundle.embedding,
        os.path.join(out_dir, "embedding.bin"),
        os.path.join(out_dir, "embedding.json"),
    )

    base = bundle.base
    np.savez_compressed(
        os.path.join(out_dir, "base_model.npz"),
        user_embeddings=base.user_embeddings,
        service_embeddings=base.service_embeddings,
        train_losses=np.asarray(base.training.train_losses),
        val_losses=np.asarray(base.training.val_losses),
        **{f"param::{p.name}": p.value for p in base.model.params()},
    )
    model_meta = {
        "kind": bundle.config.model,
        "gamma": base.gamma,
        "best_epoch": base.training.best_epoch,
        "stopped_early": base.training.stopped_early,
    }
    if isinstance(base, TrainedSorrqp):
        cfg = base.model.config
        model_meta["config"] = {
            "in_dim": cfg.in_dim, "n_heads": cfg.n_heads, "n_blocks": cfg.n_blocks,
            "hidden_dim": cfg.hidden_dim, "embed_dim": cfg.embed_dim,
            "dense_mode": cfg.dense_mode, "seed": cfg.seed,
        }
        model_meta["loss"] = base.loss_name
    else:
        cfg = base.model.config
        model_meta["config"] = {
            "in_dim": cfg.in_dim, "n_heads": cfg.n_heads, "n_layers": cfg.n_layers,
            "head_dim": cfg.head_dim, "embed_dim": cfg.embed_dim,
            "leaky_slope": cfg.leaky_slope, "seed": cfg.seed,
        }
    _write_json(os.path.join(out_dir, "base_model.json"), model_meta)

    _write_json(os.path.join(out_dir, "greysheep.json"), bundle.greysheep_report.to_json())
    with open(os.path.join(out_dir, "greysheep.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity_kind", "index", "ga_score", "flagged"])
        rep = bundle.greysheep_report
        for i, s in enumerate(rep.user_scores):
            writer.writerow(["user", i, repr(float(s)), i in rep.gsu])
        for j, s in enumerate(rep.service_scores):
            writer.writerow(["service", j, repr(float(s)), j in rep.gss])

    _write_json(os.path.join(out_dir, "outliers.json"), bundle.outlier_report.to_json())
    removed = set(bundle.outlier_report.removed)
    with open(os.path.join(out_dir, "outliers.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "service", "score", "removed"])
        rep = bundle.outlier_report
        for i, j, s in zip(rep.rows, rep.cols, rep.scores):
            writer.writerow([int(i), int(j), repr(float(s)), (int(i), int(j)) in removed])

    pc = bundle.pair_context
    _write_json(os.path.join(out_dir, "pair_context.json"), {
        "user_counts": pc.user_counts.tolist(),
        "service_counts": pc.service_counts.tolist(),
        "gs_users": sorted(pc.gs_users),
        "gs_services": sorted(pc.gs_services),
        "cold_users": sorted(pc.cold_users),
        "cold_services": sorted(pc.cold_services),
        "cold_collab_mode": pc.cold_collab_mode,
    })

    trained = []
    for cat, head in {**bundle.grrqp_heads, **bundle.crrqp_heads}.items():
        if head is None:
            continue
        trained.append(cat)
        _head_to_files(
            head,
            os.path.join(heads_dir, f"{cat}.npz"),
            os.path.join(heads_dir, f"{cat}.json"),
        )
    _write_json(os.path.join(heads_dir, "index.json"), {"trained": sorted(trained)})

    export_predictions_csv(bundle, os.path.join(out_dir, "predictions.csv"))
    _metrics_csv(bundle.report, os.path.join(out_dir, "metrics.csv"))
    return out_dir


def export_predictions_csv(bundle: ArrqpBundle, path) -> None:
    rows, cols = bundle.test.observed_indices()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "service_id", "predicted", "actual"])
        if rows.size == 0:
            return
        preds = bundle.predict_pairs(rows, cols)
        for i, j, p in zip(rows, cols, preds):
            writer.writerow([int(i), int(j), repr(float(p)),
                             repr(float(bundle.test.values[i, j]))])


def _metrics_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key in ("mae", "rmse", "baseline_mae", "baseline_rmse",
                    "base_model_mae", "base_model_rmse", "n_test_pairs"):
            if key in report:
                writer.writerow([key, report[key]])


def load_bundle(out_dir) -> ArrqpBundle:
    config = ArrqpConfig.from_json(_read_json(os.path.join(out_dir, "config.json")))
    report = _read_json(os.path.join(out_dir, "report.json"))

    contexts = _read_json(os.path.join(out_dir, "contexts.json"))

    def ctx_from(obj) -> ContextTable:
        return ContextTable(
            entity_kind=obj["entity_kind"],
            ids=tuple(obj["ids"]),
            region=np.asarray(obj["region"], dtype=int),
            group=np.asarray(obj["group"], dtype=int),
            n_regions=obj["n_regions"],
            n_groups=obj["n_groups"],
        )

    dataset = Dataset(
        matrix=_load_matrix_npz(os.path.join(out_dir, "dataset.npz")),
        user_context=ctx_from(contexts["user"]),
        service_context=ctx_from(contexts["service"]),
        parameter_kind=contexts["parameter_kind"],
    )
    train = _load_matrix_npz(os.path.join(out_dir, "split_train.npz"))
    val = _load_matrix_npz(os.path.join(out_dir, "split_val.npz"))
    test = _load_matrix_npz(os.path.join(out_dir, "split_test.npz"))

    embedding = load_embedding(
        os.path.join(out_dir, "embedding.bin"), os.path.join(out_dir, "embedding.json")
    )

    model_meta = _read_json(os.path.join(out_dir, "base_model.json"))
    with np.load(os.path.join(out_dir, "base_model.npz")) as data:
        e_u = data["user_embeddings"].astype(float)
        e_s = data["service_embeddings"].astype(float)
        params = {
            key[len("param::"):]: data[key]
            for key in data.files if key.startswith("param::")
        }
        training = TrainResult(
            train_losses=data["train_losses"].tolist(),
            val_losses=data["val_losses"].tolist(),
            best_epoch=model_meta["best_epoch"],
            stopped_early=model_meta["stopped_early"],
        )
    if model_meta["kind"] == "mhgcmf":
        model = MhGcmfModel(MhGcmfConfig(**model_meta["config"]))
        model.load_state(params)
        base = TrainedSorrqp(
            model=model, user_embeddings=e_u, service_embeddings=e_s,
            gamma=model_meta["gamma"], loss_name=model_meta.get("loss", "cauchy"),
            training=training,
        )
    else:
        model = MhGatModel(MhGatConfig(**model_meta["config"]))
        for p in model.params():
            p.value = params[p.name].astype(float).reshape(p.value.shape)
        base = TrainedMhGat(
            model=model, user_embeddings=e_u, service_embeddings=e_s,
            gamma=model_meta["gamma"], training=training,
        )

    gs = _read_json(os.path.join(out_dir, "greysheep.json"))
    greysheep_report = GreysheepReport(
        c=gs["c"],
        user_threshold=gs["user_threshold"],
        service_threshold=gs["service_threshold"],
        gsu=tuple(gs["greysheep_users"]),
        gss=tuple(gs["greysheep_services"]),
        user_scores=np.asarray(gs["user_scores"], dtype=float),
        service_scores=np.asarray(gs["service_scores"], dtype=float),
    )
    ol = _read_json(os.path.join(out_dir, "outliers.json"))
    triples = ol["scores"]
    outlier_report = OutlierReport(
        rows=np.asarray([t[0] for t in triples], dtype=int),
        cols=np.asarray([t[1] for t in triples], dtype=int),
        scores=np.asarray([t[2] for t in triples], dtype=float),
        removed=tuple(tuple(c) for c in ol["removed"]),
        removed_fraction=ol["lambda"],
    )

    pc = _read_json(os.path.join(out_dir, "pair_context.json"))
    pair_context = PairFeatureContext(
        user_embeddings=e_u,
        service_embeddings=e_s,
        embedding=embedding,
        ga=GaScores(
            user_scores=greysheep_report.user_scores,
            service_scores=greysheep_report.service_scores,
        ),
        user_counts=np.asarray(pc["user_counts"], dtype=float),
        service_counts=np.asarray(pc["service_counts"], dtype=float),
        gs_users=frozenset(pc["gs_users"]),
        gs_services=frozenset(pc["gs_services"]),
        cold_users=frozenset(pc["cold_users"]),
        cold_services=frozenset(pc["cold_services"]),
        cold_collab_mode=pc["cold_collab_mode"],
    )

    heads_dir = os.path.join(out_dir, "heads")
    trained = set(_read_json(os.path.join(heads_dir, "index.json"))["trained"])
    from .heads import CRRQP_CATEGORIES, GRRQP_CATEGORIES

    def load_heads(categories):
        return {
            cat: (
                _head_from_files(
                    os.path.join(heads_dir, f"{cat}.npz"),
                    os.path.join(heads_dir, f"{cat}.json"),
                )
                if cat in trained else None
            )
            for cat in categories
        }

    return ArrqpBundle(
        config=config,
        dataset=dataset,
        ground_truth=None,
        train=train,
        val=val,
        test=test,
        outlier_report=outlier_report,
        greysheep_report=greysheep_report,
        embedding=embedding,
        base=base,
        pair_context=pair_context,
        grrqp_heads=load_heads(GRRQP_CATEGORIES),
        crrqp_heads=load_heads(CRRQP_CATEGORIES),
        report=report,
    )
