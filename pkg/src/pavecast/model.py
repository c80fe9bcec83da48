"""Graph forecasting models over the spatiotemporal graph.

The main model extracts two representations per node (one from the full
feature vector, one from the spatial-temporal-only vector), scores each
edge with per-head attention over the spatial-temporal representations plus
the edge's time difference, and aggregates: parents contribute their full
representation, the self loop contributes only the spatial-temporal one,
so a node's own deterioration reading can never reach its own prediction.

Baselines (pooled-neighbor MLP, fixed-weight graph convolution with and
without an MLP head, and feature-based attention without the time-difference
input) and ablations (no ranked edges, explicit exponential-decay attention,
no time-difference slot) share the same machinery; every variant keeps the
self channel spatial-temporal-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import ndgrad as ng
from .stgraph import STGraph

VARIANTS = ("stgan", "stgan_no_top", "stgan_eam", "stgan_no_td",
            "top_mlp", "gcn", "gcn_mlp", "gat")
ATTENTION_VARIANTS = ("stgan", "stgan_no_top", "stgan_eam", "stgan_no_td", "gat")


class ModelConfigError(ValueError):
    """Inconsistent model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "stgan"
    heads: int = 5
    layers: int = 1
    hidden: int = 256
    extractor_hidden: tuple[int, ...] = (128, 256)
    head_hidden: int = 256
    leaky_slope: float = 0.2
    eam_gamma: float = 1.0
    # stacked convolutions reuse the first layer's coefficients by default;
    # set False to re-score each layer from its incoming representations
    reuse_attention: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelConfigError(f"unknown variant {self.variant!r}")
        if self.heads < 1 or self.layers < 1 or self.hidden < 1:
            raise ModelConfigError("heads, layers and hidden must be >= 1")
        if self.extractor_hidden[-1] != self.hidden:
            raise ModelConfigError(
                f"extractor output width {self.extractor_hidden[-1]} "
                f"must equal hidden width {self.hidden}")

    @property
    def score_slot_width(self) -> int:
        # [self-rep || source-rep] plus the time-difference slot where used
        if self.variant in ("stgan", "stgan_no_top"):
            return 2 * self.hidden + 1
        return 2 * self.hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extractor_hidden"] = list(self.extractor_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["extractor_hidden"] = tuple(d["extractor_hidden"])
        return cls(**d)


@dataclass
class CoefficientProbe:
    """One head's normalized coefficients for one layer, for diagnostics."""

    layer: int
    head: int
    values: np.ndarray   # (m,)
    seg_ids: np.ndarray  # (m,) target node per edge
    n: int


@dataclass
class GraphTensors:
    """Edge-list arrays for one graph + node list, ready for the forward pass.

    Edges are ordered per target node: the self loop first, then parents in
    their stored order. dist_norm is meters over the proximity threshold, so
    decay-based scoring sees a dimensionless quantity.
    """

    x_full: np.ndarray    # (n, d)
    x_st: np.ndarray      # (n, d')
    y: np.ndarray         # (n,)
    src: np.ndarray       # (m,)
    dst: np.ndarray       # (m,)
    is_self: np.ndarray   # (m,) bool
    dt_norm: np.ndarray   # (m,)
    dist_norm: np.ndarray  # (m,)
    gcn_w: np.ndarray     # (m,) fixed symmetric-normalized weights
    top_pool: np.ndarray  # (n, d+1) mean over ranked parents of [x_full || y]

    @property
    def n(self) -> int:
        return len(self.y)


def prepare_tensors(graph: STGraph, nodes, l_res_m: float = 200.0) -> GraphTensors:
    """Flatten a graph plus processed nodes into forward-ready arrays."""
    n = graph.n
    if len(nodes) != n:
        raise ModelConfigError(f"{len(nodes)} nodes for a graph of {n}")
    x_full = np.stack([p.x_full for p in nodes])
    x_st = np.stack([p.x_st for p in nodes])
    y = np.array([p.y for p in nodes])
    t_norm = np.array([p.t_norm for p in nodes])

    src, dst, selfs, dts, dists = [], [], [], [], []
    degree = np.array([len(p) for p in graph.parents]) + 1.0  # parents + self
    gcn_w = []
    d_plus = x_full.shape[1] + 1
    top_pool = np.zeros((n, d_plus))
    for i in range(n):
        src.append(i)
        dst.append(i)
        selfs.append(True)
        dts.append(0.0)
        dists.append(0.0)
        gcn_w.append(1.0 / degree[i])
        top_rows = []
        for e in graph.parents[i]:
            b = e.parent
            src.append(b)
            dst.append(i)
            selfs.append(False)
            dts.append(abs(t_norm[i] - t_norm[b]))
            dists.append(e.dist_m / l_res_m)
            gcn_w.append(1.0 / np.sqrt(degree[b] * degree[i]))
            if e.origin == "top":
                top_rows.append(np.concatenate([x_full[b], [y[b]]]))
        if top_rows:
            top_pool[i] = np.mean(top_rows, axis=0)
    return GraphTensors(
        x_full=x_full, x_st=x_st, y=y,
        src=np.array(src, dtype=np.intp), dst=np.array(dst, dtype=np.intp),
        is_self=np.array(selfs, dtype=bool),
        dt_norm=np.array(dts), dist_norm=np.array(dists),
        gcn_w=np.array(gcn_w), top_pool=top_pool)


# ---------------------------------------------------------------------------
# Parameters


def _glorot_entry(params, rng, name, fan_in, fan_out, bias=True):
    params[name + "_w"] = ng.glorot_uniform(rng, fan_in, fan_out)
    if bias:
        params[name + "_b"] = np.zeros((1, fan_out))


def _attention_layers(config: ModelConfig) -> tuple[int, ...]:
    if config.variant not in ATTENTION_VARIANTS:
        return ()
    return (1,) if config.reuse_attention else tuple(range(1, config.layers + 1))


def init_params(config: ModelConfig, dim_full: int, dim_st: int,
                seed: int) -> dict[str, np.ndarray]:
    """Named parameter arrays in a fixed creation order (seeded)."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    h = config.hidden

    if config.variant == "top_mlp":
        widths = [dim_st + dim_full + 1, *config.extractor_hidden, 1]
        for k in range(len(widths) - 1):
            _glorot_entry(params, rng, f"mlp{k}", widths[k], widths[k + 1])
        return params

    for prefix, d_in in (("ext_full", dim_full), ("ext_st", dim_st)):
        widths = [d_in, *config.extractor_hidden]
        for k in range(len(widths) - 1):
            _glorot_entry(params, rng, f"{prefix}{k}", widths[k], widths[k + 1])

    for layer in _attention_layers(config):
        for k in range(config.heads):
            _glorot_entry(params, rng, f"attn_l{layer}_h{k}",
                          config.score_slot_width, 1, bias=False)

    conv_in = h * (config.heads if config.variant in ATTENTION_VARIANTS else 1)
    for layer in range(1, config.layers):
        _glorot_entry(params, rng, f"conv_l{layer}", conv_in, h)

    if config.variant == "gcn":
        _glorot_entry(params, rng, "head0", h, 1)
    elif config.variant == "gcn_mlp":
        _glorot_entry(params, rng, "head0", h, config.head_hidden)
        _glorot_entry(params, rng, "head1", config.head_hidden, 1)
    else:
        _glorot_entry(params, rng, "head0", conv_in, config.head_hidden)
        _glorot_entry(params, rng, "head1", config.head_hidden, 1)
    return params


def copy_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


# ---------------------------------------------------------------------------
# Forward pass


def _mlp(tape, x, pnodes, prefix, n_layers, slope_final=True):
    """Stacked x @ W + b with ELU after every layer (or all but the last)."""
    out = x
    for k in range(n_layers):
        out = ng.add_rowvec(ng.matmul(out, pnodes[f"{prefix}{k}_w"]),
                            pnodes[f"{prefix}{k}_b"])
        if slope_final or k < n_layers - 1:
            out = ng.elu(out)
    return out


def _attention_coefficients(tape, gt, pnodes, config, layer, rep_self,
                            src_nodes, src_edges, probes):
    """Per-head normalized coefficients for one layer's edge set.

    The head weight spans [self-slot || source-slot (|| time-slot)]; scoring
    projects each slot separately and sums, which equals the concatenated
    dot product without materializing per-edge concatenations. The source
    slot reads node-level representations (src_nodes) or the already
    gathered per-edge matrix (src_edges), whichever the variant uses.
    """
    h = rep_self.value.shape[1]
    use_time = config.variant in ("stgan", "stgan_no_top")
    t_col = tape.constant(gt.dt_norm.reshape(-1, 1)) if use_time else None
    decay = None
    if config.variant == "stgan_eam":
        g = config.eam_gamma
        decay = (np.exp(-g * gt.dist_norm) * np.exp(-g * gt.dt_norm)).reshape(-1, 1)
    coefs = []
    for k in range(config.heads):
        w = pnodes[f"attn_l{layer}_h{k}_w"]
        s = ng.gather_rows(ng.matmul(rep_self, ng.slice_rows(w, 0, h)), gt.dst)
        if src_edges is not None:
            s = ng.add(s, ng.matmul(src_edges, ng.slice_rows(w, h, 2 * h)))
        else:
            s = ng.add(s, ng.gather_rows(
                ng.matmul(src_nodes, ng.slice_rows(w, h, 2 * h)), gt.src))
        if use_time:
            s = ng.add(s, ng.matmul(t_col, ng.slice_rows(w, 2 * h, 2 * h + 1)))
        s = ng.leaky_relu(s, alpha=config.leaky_slope)
        if decay is not None:
            s = ng.mul_array(s, decay)
        coef = ng.segment_softmax(s, gt.dst, gt.n)
        if probes is not None:
            probes.append(CoefficientProbe(layer, k, coef.value[:, 0].copy(),
                                           gt.dst, gt.n))
        coefs.append(coef)
    return coefs


def forward_nodes(tape: ng.Tape, gt: GraphTensors, pnodes: dict[str, ng.Node],
                  config: ModelConfig, probes: list | None = None,
                  intermediates: dict | None = None) -> ng.Node:
    """Predictions for every node as an (n, 1) tape node."""
    if config.variant == "top_mlp":
        feats = tape.constant(np.concatenate([gt.x_st, gt.top_pool], axis=1))
        return _mlp(tape, feats, pnodes, "mlp",
                    len(config.extractor_hidden) + 1, slope_final=False)

    x = tape.constant(gt.x_full)
    x_st = tape.constant(gt.x_st)
    depth = len(config.extractor_hidden)
    z = _mlp(tape, x, pnodes, "ext_full", depth)
    z_st = _mlp(tape, x_st, pnodes, "ext_st", depth)

    # parent edges carry the full representation, the self loop only the
    # spatial-temporal one: this is the leakage barrier
    mixed = ng.gather_rows_mixed(z, z_st, gt.src, gt.is_self)
    attention = config.variant in ATTENTION_VARIANTS

    if attention:
        if config.variant in ("gat", "stgan_eam"):
            coefs = _attention_coefficients(tape, gt, pnodes, config, 1,
                                            z_st, None, mixed, probes)
        else:
            coefs = _attention_coefficients(tape, gt, pnodes, config, 1,
                                            z_st, z_st, None, probes)
        agg = ng.concat_cols([ng.weighted_segment_sum(mixed, c, gt.dst, gt.n)
                              for c in coefs])
    else:
        gcn_w = tape.constant(gt.gcn_w.reshape(-1, 1))
        coefs = None
        agg = ng.weighted_segment_sum(mixed, gcn_w, gt.dst, gt.n)

    for layer in range(2, config.layers + 1):
        z_l = ng.elu(ng.add_rowvec(ng.matmul(agg, pnodes[f"conv_l{layer - 1}_w"]),
                                   pnodes[f"conv_l{layer - 1}_b"]))
        gathered = ng.gather_rows(z_l, gt.src)
        if attention:
            if not config.reuse_attention:
                coefs = _attention_coefficients(tape, gt, pnodes, config, layer,
                                                z_l, z_l, None, probes)
            elif probes is not None:
                probes.extend(CoefficientProbe(layer, p.head, p.values, p.seg_ids, p.n)
                              for p in probes[:config.heads])
            agg = ng.concat_cols([ng.weighted_segment_sum(gathered, c, gt.dst, gt.n)
                                  for c in coefs])
        else:
            gcn_w = tape.constant(gt.gcn_w.reshape(-1, 1))
            agg = ng.weighted_segment_sum(gathered, gcn_w, gt.dst, gt.n)

    if intermediates is not None:
        intermediates["pre_head"] = agg.value.copy()
    if config.variant == "gcn":
        return ng.add_rowvec(ng.matmul(agg, pnodes["head0_w"]), pnodes["head0_b"])
    hidden = ng.elu(ng.add_rowvec(ng.matmul(agg, pnodes["head0_w"]),
                                  pnodes["head0_b"]))
    return ng.add_rowvec(ng.matmul(hidden, pnodes["head1_w"]), pnodes["head1_b"])


def make_param_nodes(tape: ng.Tape, params: dict[str, np.ndarray]) -> dict[str, ng.Node]:
    return {name: tape.leaf(value, kind=f"param:{name}") for name, value in params.items()}


def forward_values(gt: GraphTensors, params: dict[str, np.ndarray],
                   config: ModelConfig, probes: list | None = None) -> np.ndarray:
    """Plain predictions array (n,), no gradients."""
    tape = ng.Tape()
    pnodes = make_param_nodes(tape, params)
    out = forward_nodes(tape, gt, pnodes, config, probes=probes)
    return out.value[:, 0].copy()


def mae_loss_node(tape: ng.Tape, yhat: ng.Node, y: np.ndarray,
                  loss_ids: np.ndarray) -> ng.Node:
    """Mean absolute error of yhat over the given node ids."""
    if len(loss_ids) == 0:
        raise ModelConfigError("loss needs at least one node id")
    sel = ng.gather_rows(yhat, loss_ids)
    resid = ng.sub(sel, tape.constant(y[loss_ids].reshape(-1, 1)))
    return ng.scale(ng.sum_all(ng.absolute(resid)), 1.0 / len(loss_ids))


def loss_and_grads(gt: GraphTensors, params: dict[str, np.ndarray],
                   config: ModelConfig, loss_ids: np.ndarray,
                   probes: list | None = None):
    """One forward/backward sweep: (loss value, gradient dict, predictions)."""
    tape = ng.Tape()
    pnodes = make_param_nodes(tape, params)
    yhat = forward_nodes(tape, gt, pnodes, config, probes=probes)
    loss = mae_loss_node(tape, yhat, gt.y, loss_ids)
    ng.backward(tape, loss)
    grads = {name: (node.grad if node.grad is not None else np.zeros_like(node.value))
             for name, node in pnodes.items()}
    return float(loss.value[0, 0]), grads, yhat.value[:, 0].copy()


def attention_sum_deviation(probes: list["CoefficientProbe"]) -> float:
    """Max |sum of coefficients - 1| over every (target, head, layer)."""
    worst = 0.0
    for probe in probes:
        sums = np.zeros(probe.n)
        np.add.at(sums, probe.seg_ids, probe.values)
        worst = max(worst, float(np.max(np.abs(sums - 1.0))))
    return worst
