"""Full-graph training, autoregressive prediction, and checkpointing.

Training runs full-batch over the initialization + training graph with the
mean-absolute-error loss taken over training nodes only (initialization
nodes pass messages but are never scored). Prediction appends a query node
carrying spatial-temporal features only, wires its parents, and evaluates
the forward pass; a sequence of queries can feed observations back in, feed
predictions back in, or leave the graph untouched between queries.

Checkpoints are a JSON manifest followed by little-endian float64 sections
with per-section checksums; identical (config, seed, data) produce
byte-identical files.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ndgrad as ng
from .dataset import FeatureSchema, PreprocessStats, ProcessedNode, RawRecord, apply_preprocess
from .model import (GraphTensors, ModelConfig, attention_sum_deviation,
                    forward_values, init_params, loss_and_grads, prepare_tensors)
from .stgraph import GraphConfig, GraphNode, STGraph, combined_parents, expand

CHECKPOINT_MAGIC = b"PVCASTCK"
CHECKPOINT_VERSION = 1


class DivergenceError(ArithmeticError):
    """Training loss became non-finite."""


class QueryError(ValueError):
    """A prediction query violates the temporal or location contract."""


class StrategyError(ValueError):
    """A continuation strategy was misused."""


class CheckpointVersionError(ValueError):
    """Checkpoint written by an incompatible format version."""


class CheckpointIntegrityError(ValueError):
    """Checkpoint bytes fail a structural or checksum test."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 0.004
    seed: int = 0
    log_every: int = 0  # 0 silences progress lines
    track_attention: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr > 0")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    adam: ng.AdamState
    loss_trace: list[float]
    final_train_mae: float
    attention_max_dev: float | None


def train(gt: GraphTensors, model_config: ModelConfig, train_config: TrainConfig,
          loss_ids: np.ndarray, dim_full: int, dim_st: int,
          log=None) -> TrainResult:
    """Full-batch Adam on the MAE loss over the given node ids."""
    params = init_params(model_config, dim_full, dim_st, train_config.seed)
    adam = ng.adam_init(params, lr=train_config.lr)
    trace: list[float] = []
    max_dev = 0.0 if train_config.track_attention else None
    for epoch in range(train_config.epochs):
        probes = [] if train_config.track_attention else None
        loss, grads, _ = loss_and_grads(gt, params, model_config, loss_ids,
                                        probes=probes)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at epoch {epoch}")
        if probes is not None:
            max_dev = max(max_dev, attention_sum_deviation(probes))
        trace.append(loss)
        ng.adam_step(params, grads, adam)
        if log and train_config.log_every and epoch % train_config.log_every == 0:
            log(f"epoch {epoch}: train mae {loss:.6f}")
    final_probes = [] if train_config.track_attention else None
    yhat = forward_values(gt, params, model_config, probes=final_probes)
    if final_probes is not None:
        max_dev = max(max_dev, attention_sum_deviation(final_probes))
    final_mae = float(np.mean(np.abs(yhat[loss_ids] - gt.y[loss_ids])))
    return TrainResult(params=params, adam=adam, loss_trace=trace,
                       final_train_mae=final_mae, attention_max_dev=max_dev)


def train_on_graph(graph: STGraph, nodes: list[ProcessedNode],
                   model_config: ModelConfig, train_config: TrainConfig,
                   graph_config: GraphConfig, log=None) -> TrainResult:
    """Prepare tensors for an init+train graph and run the training loop.

    The loss covers exactly the non-initialization nodes; test nodes must
    not be in the graph at all.
    """
    gt = prepare_tensors(graph, nodes, l_res_m=graph_config.l_res_m)
    loss_ids = np.arange(graph.init_count, graph.n)
    dim_full = gt.x_full.shape[1]
    dim_st = gt.x_st.shape[1]
    return train(gt, model_config, train_config, loss_ids, dim_full, dim_st, log=log)


# ---------------------------------------------------------------------------
# Prediction


@dataclass(frozen=True)
class Query:
    location_id: int
    t_raw: float
    coords: tuple[float, float] | None = None  # overrides the location lookup


@dataclass
class InferenceContext:
    """Everything a frozen model needs to answer queries."""

    params: dict[str, np.ndarray]
    model_config: ModelConfig
    graph_config: GraphConfig
    stats: PreprocessStats
    schema: FeatureSchema


def _location_coords(nodes: list[ProcessedNode], location_id: int) -> tuple[float, float]:
    for node in nodes:
        if node.location_id == location_id:
            return node.coords
    raise QueryError(f"location {location_id} has no historical observations")


def query_node(ctx: InferenceContext, nodes: list[ProcessedNode], node_id: int,
               location_id: int, t_raw: float,
               coords: tuple[float, float] | None = None) -> ProcessedNode:
    """A feature-bearing node for a future query: spatial-temporal slots only."""
    lon, lat = coords if coords is not None else _location_coords(nodes, location_id)
    t_norm = ctx.stats.rescale_time(t_raw)
    x_full = np.zeros(ctx.schema.dim_full)
    x_st = np.array([ctx.stats.standardize("longitude_gcj", lon),
                     ctx.stats.standardize("latitude_gcj", lat),
                     t_norm])
    x_full[-3:] = x_st
    return ProcessedNode(node_id=node_id, location_id=location_id,
                         x_full=x_full, x_st=x_st, y=float("nan"),
                         t_norm=t_norm, t_raw=t_raw, coords=(lon, lat))


def predicted_node(ctx: InferenceContext, base: ProcessedNode,
                   yhat: float) -> ProcessedNode:
    """Commit-ready node carrying a prediction in the deterioration slot.

    Environmental, confidence and type slots stay zero, which is the
    training mean in standardized space.
    """
    x_full = base.x_full.copy()
    info_slot = len(ctx.schema.env_features)
    x_full[info_slot] = ctx.stats.standardize("detect_info", yhat)
    return ProcessedNode(node_id=base.node_id, location_id=base.location_id,
                         x_full=x_full, x_st=base.x_st.copy(), y=float(yhat),
                         t_norm=base.t_norm, t_raw=base.t_raw, coords=base.coords)


def predict_one(ctx: InferenceContext, graph: STGraph, nodes: list[ProcessedNode],
                location_id: int, t_raw: float, commit: bool = False,
                committed_node: ProcessedNode | None = None,
                coords: tuple[float, float] | None = None) -> float:
    """Predict one (location, future time) query.

    With commit=False the caller's graph and node list are untouched. With
    commit=True the query node joins the graph, carrying committed_node's
    features when supplied (observed or predicted feedback) and the bare
    spatial-temporal ones otherwise.
    """
    if graph.nodes and t_raw < max(nd.t_raw for nd in graph.nodes):
        raise QueryError(
            f"query time {t_raw} precedes the latest historical observation")
    node_id = graph.n
    qnode = query_node(ctx, nodes, node_id, location_id, t_raw, coords=coords)
    meta = GraphNode(node_id=node_id, lon=qnode.coords[0], lat=qnode.coords[1],
                     t_raw=t_raw, t_norm=qnode.t_norm, is_init=False)

    if committed_node is not None and committed_node.node_id != node_id:
        raise StrategyError("committed node id must match the query node id")
    target = graph if commit else graph.copy()
    expand(target, meta, ctx.graph_config)
    eval_nodes = nodes + [qnode]
    gt = prepare_tensors(target, eval_nodes, l_res_m=ctx.graph_config.l_res_m)
    yhat = float(forward_values(gt, ctx.params, ctx.model_config)[node_id])
    if commit:
        nodes.append(committed_node if committed_node is not None else qnode)
    return yhat


def predict_sequence(ctx: InferenceContext, graph: STGraph,
                     nodes: list[ProcessedNode], queries: list[Query],
                     strategy: str = "ignore",
                     observed: list[RawRecord] | None = None) -> list[float]:
    """Predict a time-sorted query list under one continuation strategy.

    "ignore" evaluates every query against the pristine graph; "true"
    commits each query with its observed record (caller-supplied);
    "predicted" commits each query with its own prediction filled in.
    """
    for earlier, later in zip(queries, queries[1:]):
        if later.t_raw < earlier.t_raw:
            raise QueryError("queries must be sorted by time")
    if strategy == "ignore":
        return [predict_one(ctx, graph, nodes, q.location_id, q.t_raw,
                            coords=q.coords)
                for q in queries]
    if strategy not in ("true", "predicted"):
        raise StrategyError(f"unknown strategy {strategy!r}")
    if strategy == "true" and (observed is None or len(observed) != len(queries)):
        raise StrategyError("true-feedback needs one observed record per query")

    work_graph = graph.copy()
    work_nodes = list(nodes)
    out = []
    for k, q in enumerate(queries):
        node_id = work_graph.n
        if strategy == "true":
            commit_node = apply_preprocess(observed[k], ctx.stats, ctx.schema,
                                           node_id=node_id)
            yhat = predict_one(ctx, work_graph, work_nodes, q.location_id, q.t_raw,
                               commit=True, committed_node=commit_node,
                               coords=q.coords)
        else:
            yhat = predict_one(ctx, work_graph, work_nodes, q.location_id, q.t_raw,
                               commit=True, coords=q.coords)
            work_nodes[node_id] = predicted_node(ctx, work_nodes[node_id], yhat)
        out.append(yhat)
    return out


def predict_batch_ignore(ctx: InferenceContext, graph: STGraph,
                         nodes: list[ProcessedNode], queries: list[Query],
                         allow_past: bool = False,
                         query_nodes: list[ProcessedNode] | None = None,
                         probes: list | None = None) -> np.ndarray:
    """All ignore-strategy queries in one forward pass.

    Each query's parents are wired against the pristine graph only, and
    historical representations cannot depend on query nodes, so this equals
    per-query evaluation exactly. allow_past admits queries timestamped
    inside the historical span (for generalization splits); parents are then
    restricted to strictly-no-later historical nodes.
    """
    base_n = graph.n
    eval_graph = graph.copy()
    eval_nodes = list(nodes)
    newest = max((nd.t_raw for nd in graph.nodes), default=-math.inf)
    for k, q in enumerate(queries):
        if not allow_past and q.t_raw < newest:
            raise QueryError(f"query {k} at t={q.t_raw} precedes history")
        node_id = base_n + k
        qnode = (query_nodes[k] if query_nodes is not None
                 else query_node(ctx, nodes, node_id, q.location_id, q.t_raw,
                                 coords=q.coords))
        meta = GraphNode(node_id=node_id, lon=qnode.coords[0], lat=qnode.coords[1],
                         t_raw=q.t_raw, t_norm=qnode.t_norm, is_init=False)
        candidates = [nd for nd in graph.nodes if nd.t_raw <= q.t_raw] \
            if allow_past else graph.nodes
        parents = combined_parents(meta, candidates, ctx.graph_config)
        eval_graph.nodes.append(meta)
        eval_graph.parents.append(parents)
        eval_nodes.append(qnode)
    gt = prepare_tensors(eval_graph, eval_nodes, l_res_m=ctx.graph_config.l_res_m)
    yhat = forward_values(gt, ctx.params, ctx.model_config, probes=probes)
    return yhat[base_n:]


# ---------------------------------------------------------------------------
# Checkpoint format: MAGIC | u32 version | u64 manifest bytes | manifest JSON
# | packed little-endian float64 sections (params, Adam m, Adam v)


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    graph_config: GraphConfig
    train_config: TrainConfig
    stats: PreprocessStats
    schema: FeatureSchema
    params: dict[str, np.ndarray]
    adam: ng.AdamState
    loss_trace: list[float]
    final_train_mae: float
    run_config: dict | None = None
    attention_max_dev: float | None = None


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    sections: list[tuple[str, np.ndarray]] = []
    for name in ckpt.params:
        sections.append((f"param:{name}", ckpt.params[name]))
    for name in ckpt.params:
        sections.append((f"adam_m:{name}", ckpt.adam.m[name]))
        sections.append((f"adam_v:{name}", ckpt.adam.v[name]))

    blobs, entries, offset = [], [], 0
    for name, arr in sections:
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(blob), "crc32": zlib.crc32(blob)})
        blobs.append(blob)
        offset += len(blob)

    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "graph_config": asdict(ckpt.graph_config),
        "train_config": asdict(ckpt.train_config),
        "stats": ckpt.stats.to_dict(),
        "feature_schema": {"env_features": list(ckpt.schema.env_features),
                           "include_type_onehot": ckpt.schema.include_type_onehot,
                           "include_conf": ckpt.schema.include_conf},
        "adam": {"lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1,
                 "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps, "t": ckpt.adam.t},
        "loss_trace": ckpt.loss_trace,
        "final_train_mae": ckpt.final_train_mae,
        "attention_max_dev": ckpt.attention_max_dev,
        "run_config": ckpt.run_config,
        "sections": entries,
    }
    mbytes = _canonical_json(manifest)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint64(len(mbytes)).tobytes())
        fh.write(mbytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointIntegrityError("bad magic: not a checkpoint file")
    version = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    mlen = int(np.frombuffer(raw[12:20], dtype="<u8")[0])
    try:
        manifest = json.loads(raw[20:20 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"manifest unreadable: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"manifest version {manifest.get('format_version')}, "
            f"this build reads {CHECKPOINT_VERSION}")

    body = raw[20 + mlen:]
    arrays = {}
    for entry in manifest["sections"]:
        blob = body[entry["offset"]: entry["offset"] + entry["nbytes"]]
        if len(blob) != entry["nbytes"]:
            raise CheckpointIntegrityError(f"section {entry['name']} truncated")
        if zlib.crc32(blob) != entry["crc32"]:
            raise CheckpointIntegrityError(f"section {entry['name']} failed checksum")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(
            entry["shape"]).astype(np.float64)

    params = {name.split(":", 1)[1]: arrays[name]
              for name in arrays if name.startswith("param:")}
    a = manifest["adam"]
    adam = ng.AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                        eps=a["eps"], t=a["t"])
    for name in params:
        adam.m[name] = arrays[f"adam_m:{name}"]
        adam.v[name] = arrays[f"adam_v:{name}"]

    fs = manifest["feature_schema"]
    return Checkpoint(
        model_config=ModelConfig.from_dict(manifest["model_config"]),
        graph_config=GraphConfig(**manifest["graph_config"]),
        train_config=TrainConfig(**manifest["train_config"]),
        stats=PreprocessStats.from_dict(manifest["stats"]),
        schema=FeatureSchema(env_features=tuple(fs["env_features"]),
                             include_type_onehot=fs["include_type_onehot"],
                             include_conf=fs["include_conf"]),
        params=params, adam=adam,
        loss_trace=list(manifest["loss_trace"]),
        final_train_mae=manifest["final_train_mae"],
        run_config=manifest.get("run_config"),
        attention_max_dev=manifest.get("attention_max_dev"))
