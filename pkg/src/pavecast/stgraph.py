"""Directed spatiotemporal graph over (location, time) observation nodes.

Edges point from older nodes to newer ones. Two mechanisms create them:
proximity edges when both the location and time gaps fall under configured
thresholds, and ranked compensation edges that force every node to connect
to its K closest predecessors under a joint space-time score, so sparse
series still receive information. An initialization block of the earliest
nodes is mutually visible (proximity edges in both directions) and seeds
the autoregressive expansion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6371000.0
_DEG = math.pi / 180.0


class TemporalOrderError(ValueError):
    """A node was inserted or queried out of temporal order."""


class DuplicateIdError(ValueError):
    """A node id was inserted twice."""


class ConstructionError(ValueError):
    """The graph cannot be built from the given inputs."""


@dataclass(frozen=True)
class GraphConfig:
    l_res_m: float = 200.0    # proximity threshold, meters
    t_res_days: float = 14.0  # proximity threshold, days
    top_k: int = 5
    top_mode: str = "merged"  # "merged": rank all predecessors; "additional": only non-proximity ones

    def __post_init__(self):
        if self.l_res_m <= 0 or self.t_res_days <= 0:
            raise ConstructionError("l_res_m and t_res_days must be positive")
        if self.top_k < 0:
            raise ConstructionError("top_k must be >= 0")
        if self.top_mode not in ("merged", "additional"):
            raise ConstructionError(f"unknown top_mode {self.top_mode!r}")


@dataclass(frozen=True)
class GraphNode:
    node_id: int
    lon: float
    lat: float
    t_raw: float
    t_norm: float
    is_init: bool


@dataclass(frozen=True)
class ParentEdge:
    parent: int
    dt_days: float
    dist_m: float
    origin: str  # "hard" | "top" | "init"


@dataclass
class STGraph:
    nodes: list[GraphNode] = field(default_factory=list)
    parents: list[list[ParentEdge]] = field(default_factory=list)
    init_count: int = 0
    max_non_init_t: float = -math.inf

    def copy(self) -> "STGraph":
        return STGraph(nodes=list(self.nodes),
                       parents=[list(p) for p in self.parents],
                       init_count=self.init_count,
                       max_non_init_t=self.max_non_init_t)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def edge_count(self) -> int:
        return sum(len(p) for p in self.parents)

    def index_of(self, node_id: int) -> int:
        # ids are list positions throughout the pipeline; fall back to scan
        if node_id < len(self.nodes) and self.nodes[node_id].node_id == node_id:
            return node_id
        for i, nd in enumerate(self.nodes):
            if nd.node_id == node_id:
                return i
        raise KeyError(node_id)

    def to_json_dict(self) -> dict:
        return {
            "nodes": [{"id": nd.node_id, "lon": nd.lon, "lat": nd.lat,
                       "t_raw": nd.t_raw, "t_norm": nd.t_norm, "is_init": nd.is_init}
                      for nd in self.nodes],
            "edges": [{"from": e.parent, "to": nd.node_id, "origin": e.origin,
                       "dt_norm": abs(nd.t_norm - self.nodes[self.index_of(e.parent)].t_norm),
                       "dist_m": e.dist_m}
                      for nd, plist in zip(self.nodes, self.parents) for e in plist],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "STGraph":
        nodes = [GraphNode(node_id=n["id"], lon=n["lon"], lat=n["lat"],
                           t_raw=n["t_raw"], t_norm=n["t_norm"], is_init=n["is_init"])
                 for n in d["nodes"]]
        graph = cls(nodes=nodes, parents=[[] for _ in nodes],
                    init_count=sum(1 for n in nodes if n.is_init))
        non_init = [n.t_raw for n in nodes if not n.is_init]
        graph.max_non_init_t = max(non_init) if non_init else -math.inf
        index = {n.node_id: i for i, n in enumerate(nodes)}
        for e in d["edges"]:
            dst = index[e["to"]]
            src = nodes[index[e["from"]]]
            graph.parents[dst].append(ParentEdge(
                parent=src.node_id, dt_days=abs(nodes[dst].t_raw - src.t_raw),
                dist_m=e["dist_m"], origin=e["origin"]))
        return graph


def location_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Equirectangular approximation, meters; a and b are (lon, lat) degrees."""
    lon_a, lat_a = a
    lon_b, lat_b = b
    if not all(map(math.isfinite, (lon_a, lat_a, lon_b, lat_b))):
        raise ArithmeticError("non-finite coordinates")
    dphi = (lat_b - lat_a) * _DEG
    dlam = (lon_b - lon_a) * _DEG
    cos_mid = math.cos(0.5 * (lat_a + lat_b) * _DEG)
    return EARTH_RADIUS_M * math.sqrt(dphi * dphi + (cos_mid * dlam) ** 2)


def _distances(node: GraphNode, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
    dphi = (lats - node.lat) * _DEG
    dlam = (lons - node.lon) * _DEG
    cos_mid = np.cos(0.5 * (lats + node.lat) * _DEG)
    return EARTH_RADIUS_M * np.sqrt(dphi * dphi + (cos_mid * dlam) ** 2)


def hard_edges(node: GraphNode, candidates: list[GraphNode],
               config: GraphConfig) -> list[ParentEdge]:
    """Every candidate within both the distance and time thresholds."""
    found = []
    for cand in candidates:
        dist = location_distance((node.lon, node.lat), (cand.lon, cand.lat))
        dt = abs(node.t_raw - cand.t_raw)
        if dist <= config.l_res_m and dt <= config.t_res_days:
            found.append(ParentEdge(parent=cand.node_id, dt_days=dt,
                                    dist_m=dist, origin="hard"))
    return found


def top_edges(node: GraphNode, candidates: list[GraphNode],
              config: GraphConfig) -> list[ParentEdge]:
    """K best candidates by threshold-normalized space+time score, ties by id."""
    scored = []
    for cand in candidates:
        dist = location_distance((node.lon, node.lat), (cand.lon, cand.lat))
        dt = abs(node.t_raw - cand.t_raw)
        score = dist / config.l_res_m + dt / config.t_res_days
        scored.append((score, cand.node_id, dist, dt))
    scored.sort(key=lambda s: (s[0], s[1]))
    return [ParentEdge(parent=node_id, dt_days=dt, dist_m=dist, origin="top")
            for _, node_id, dist, dt in scored[:config.top_k]]


def combined_parents(node: GraphNode, candidates: list[GraphNode],
                     config: GraphConfig) -> list[ParentEdge]:
    """Ranked edges first, then remaining proximity edges sorted by parent id.

    A parent picked by both mechanisms appears once, labelled "top".
    """
    if not candidates:
        return []
    ids = np.array([c.node_id for c in candidates])
    lons = np.array([c.lon for c in candidates])
    lats = np.array([c.lat for c in candidates])
    ts = np.array([c.t_raw for c in candidates])
    dist = _distances(node, lons, lats)
    dt = np.abs(node.t_raw - ts)
    hard_mask = (dist <= config.l_res_m) & (dt <= config.t_res_days)
    score = dist / config.l_res_m + dt / config.t_res_days
    if config.top_mode == "additional":
        pool = np.flatnonzero(~hard_mask)
    else:
        pool = np.arange(len(candidates))
    order = pool[np.lexsort((ids[pool], score[pool]))][: config.top_k]
    edges = [ParentEdge(parent=int(ids[k]), dt_days=float(dt[k]),
                        dist_m=float(dist[k]), origin="top") for k in order]
    chosen = set(order.tolist())
    extra = [k for k in np.flatnonzero(hard_mask) if k not in chosen]
    extra.sort(key=lambda k: ids[k])
    edges.extend(ParentEdge(parent=int(ids[k]), dt_days=float(dt[k]),
                            dist_m=float(dist[k]), origin="hard") for k in extra)
    return edges


def build_init_graph(init_nodes: list[GraphNode], config: GraphConfig) -> STGraph:
    """Mutually visible initialization block: proximity edges both directions."""
    if not init_nodes:
        raise ConstructionError("initialization block must be non-empty")
    graph = STGraph(nodes=list(init_nodes), parents=[[] for _ in init_nodes],
                    init_count=len(init_nodes))
    for i, nd in enumerate(init_nodes):
        others = [c for c in init_nodes if c.node_id != nd.node_id]
        graph.parents[i] = [ParentEdge(parent=e.parent, dt_days=e.dt_days,
                                       dist_m=e.dist_m, origin="init")
                            for e in hard_edges(nd, others, config)]
    return graph


def expand(graph: STGraph, new_node: GraphNode, config: GraphConfig) -> None:
    """Append one node in temporal order, wiring ranked + proximity parents."""
    if any(nd.node_id == new_node.node_id for nd in graph.nodes):
        raise DuplicateIdError(f"node id {new_node.node_id} already present")
    if new_node.t_raw < graph.max_non_init_t:
        raise TemporalOrderError(
            f"node at t={new_node.t_raw} arrives before the newest graph node "
            f"at t={graph.max_non_init_t}")
    parents = combined_parents(new_node, graph.nodes, config)
    graph.nodes.append(new_node)
    graph.parents.append(parents)
    if not new_node.is_init:
        graph.max_non_init_t = max(graph.max_non_init_t, new_node.t_raw)


def build_graph(nodes_meta: list[GraphNode], init_count: int,
                config: GraphConfig) -> STGraph:
    """Initialization block plus one-by-one temporal expansion of the rest."""
    if init_count <= 0 or init_count > len(nodes_meta):
        raise ConstructionError(f"bad init_count {init_count} for {len(nodes_meta)} nodes")
    graph = build_init_graph(nodes_meta[:init_count], config)
    for nd in nodes_meta[init_count:]:
        expand(graph, nd, config)
    return graph


def graph_nodes_from_processed(nodes, init_count: int = 0) -> list[GraphNode]:
    """GraphNode metadata from ProcessedNode objects (ids must be 0..n-1)."""
    return [GraphNode(node_id=p.node_id, lon=p.coords[0], lat=p.coords[1],
                      t_raw=p.t_raw, t_norm=p.t_norm, is_init=(i < init_count))
            for i, p in enumerate(nodes)]


def edge_annotations(graph: STGraph) -> list[tuple[int, int, float, float]]:
    """(parent, child, |dt_norm|, dist_m) per edge, aligned with parents lists."""
    out = []
    for nd, plist in zip(graph.nodes, graph.parents):
        for e in plist:
            out.append((e.parent, nd.node_id,
                        abs(nd.t_norm - graph.nodes[graph.index_of(e.parent)].t_norm),
                        e.dist_m))
    return out


def save_graph_json(graph: STGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph.to_json_dict(), fh, indent=1, sort_keys=True)


def load_graph_json(path) -> STGraph:
    with open(path, encoding="utf-8") as fh:
        return STGraph.from_json_dict(json.load(fh))
