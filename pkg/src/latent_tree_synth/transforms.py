"""Rewrites that bring a layered tree into synthesizable shape.

Two rewrites are provided. ``reorder_layers`` pushes one endpoint of every
same-layer edge into a new layer. ``insert_pseudo_nodes`` gives every
observable with several parents a latent stand-in one layer above those
parents. The stand-in takes over the observable's parent edges; the
observable then hangs from it by a unit "mirror" edge, so every
covariance among the original nodes is unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import networkx as nx

from .tree_model import (
    LATENT,
    Edge,
    GaussianTree,
    LayerDecomposition,
    Node,
)

PSEUDO_NODE = "pseudo_node"
LAYER_MOVE = "layer_move"


@dataclass(frozen=True)
class TransformRecord:
    kind: str
    affected: tuple[int, ...]
    created: tuple[int, ...] = ()
    mirrored: int | None = None
    edge: tuple[int, int] | None = None
    delta: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "affected": list(self.affected),
            "created": list(self.created),
            "mirrored": self.mirrored,
            "edge": None if self.edge is None else list(self.edge),
            "delta": list(self.delta),
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "TransformRecord":
        return cls(
            rec["kind"],
            tuple(rec["affected"]),
            tuple(rec.get("created", ())),
            rec.get("mirrored"),
            None if rec.get("edge") is None else tuple(rec["edge"]),
            tuple(rec.get("delta", ())),
        )


@dataclass(frozen=True)
class TransformLog:
    records: tuple[TransformRecord, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.records)

    def __add__(self, other: "TransformLog") -> "TransformLog":
        return TransformLog(self.records + other.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "TransformLog":
        return cls(tuple(TransformRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()))


def _decomp(tree: GaussianTree, layer_of: dict[int, int]) -> LayerDecomposition:
    low = min(layer_of.values())
    return LayerDecomposition({i: layer_of[i] - low for i in tree.ids}, frozenset(tree.latents))


def _mirror_edge(tree: GaussianTree, u: int, v: int) -> bool:
    a, b = tree.node_by_id[u], tree.node_by_id[v]
    return (a.pseudo and a.mirror_of == v) or (b.pseudo and b.mirror_of == u)


def _same_layer_edges(tree: GaussianTree, layer_of: dict[int, int]) -> list[tuple[int, int]]:
    """Same-layer edges below the top layer, highest layer first."""
    top = max(layer_of.values())
    found = []
    for e in tree.edges:
        l = layer_of[e.u]
        if l == layer_of[e.v] and l != top:
            found.append((-l, min(e.u, e.v), max(e.u, e.v)))
    return [(u, v) for _, u, v in sorted(found)]


def _side(tree: GaussianTree, cut: tuple[int, int], start: int) -> set[int]:
    g = tree.graph.copy()
    g.remove_edge(*cut)
    return nx.node_connected_component(g, start)


def reorder_layers(
    tree: GaussianTree, layers: LayerDecomposition
) -> tuple[GaussianTree, LayerDecomposition, TransformLog]:
    """Remove same-layer edges below the top layer, working top down.

    For each such edge the endpoint farther from the top layer moves, with
    everything on its side of the edge, one layer down. Ties go to the
    endpoint whose side holds fewer top-layer nodes, then to the larger id.
    Each move turns exactly one same-layer edge into a parent edge and keeps
    every other edge's span, so the loop ends.
    """
    layer_of = dict(layers.layer_of)
    records = []
    while True:
        edges = _same_layer_edges(tree, layer_of)
        if not edges:
            break
        a, b = edges[0]
        top = max(layer_of.values())
        tops = {i for i, l in layer_of.items() if l == top}
        dist = nx.multi_source_dijkstra_path_length(tree.graph, tops)
        sides = {a: _side(tree, (a, b), a), b: _side(tree, (a, b), b)}
        w = max((a, b), key=lambda x: (dist[x], -len(sides[x] & tops), x))
        u = b if w == a else a
        moved = sorted(sides[w])
        for x in moved:
            layer_of[x] -= 1
        low = min(layer_of.values())
        layer_of = {i: l - low for i, l in layer_of.items()}
        records.append(TransformRecord(LAYER_MOVE, tuple(moved), edge=(u, w), delta=(-1,) * len(moved)))
    return tree, _decomp(tree, layer_of), TransformLog(tuple(records))


def internal_observables(tree: GaussianTree, layers: LayerDecomposition) -> list[tuple[int, list[int]]]:
    """Observables with two or more neighbors exactly one layer above them."""
    out = []
    for x in tree.observables:
        up = [nb for nb in tree.neighbors(x) if layers.layer_of[nb] == layers.layer_of[x] + 1]
        if len(up) >= 2:
            out.append((x, up))
    return out


def _insert_one(
    tree: GaussianTree, layer_of: dict[int, int], x: int, parents: list[int], pseudo_id: int
) -> GaussianTree:
    nodes = list(tree.nodes) + [Node(pseudo_id, LATENT, pseudo=True, mirror_of=x)]
    parent_set = set(parents)
    edges = []
    for e in tree.edges:
        if {e.u, e.v} & {x} and ({e.u, e.v} - {x}) <= parent_set:
            other = e.v if e.u == x else e.u
            edges.append(Edge(pseudo_id, other, e.gamma))
        else:
            edges.append(e)
    edges.append(Edge(pseudo_id, x, 1.0))
    layer_of[pseudo_id] = layer_of[x] + 2
    return GaussianTree(tuple(nodes), tuple(edges))


def insert_pseudo_nodes(
    tree: GaussianTree, layers: LayerDecomposition
) -> tuple[GaussianTree, LayerDecomposition, TransformLog]:
    """Give each observable with several parents a pseudo latent above them.

    The pseudo node gets the next free id, sits two layers above the
    observable, inherits the observable's parent edges with the same
    magnitudes, and joins the observable through a unit mirror edge.
    """
    layer_of = dict(layers.layer_of)
    records = []
    for x, parents in internal_observables(tree, layers):
        pid = max(tree.ids) + 1
        tree = _insert_one(tree, layer_of, x, parents, pid)
        records.append(TransformRecord(PSEUDO_NODE, tuple(parents), (pid,), x))
    return tree, _decomp(tree, layer_of), TransformLog(tuple(records))


class NormalizationError(RuntimeError):
    pass


def normalize_for_synthesis(
    tree: GaussianTree, layers: LayerDecomposition
) -> tuple[GaussianTree, LayerDecomposition, TransformLog]:
    """Alternate reordering and pseudo-node insertion until neither applies."""
    log = TransformLog()
    cap = len(tree.ids)
    for _ in range(cap):
        tree, layers, moved = reorder_layers(tree, layers)
        tree, layers, added = insert_pseudo_nodes(tree, layers)
        log = log + moved + added
        if not moved and not added:
            return tree, layers, log
    raise NormalizationError(f"no fixpoint after {cap} rounds")


def replay(
    tree: GaussianTree, layers: LayerDecomposition, log: TransformLog
) -> tuple[GaussianTree, LayerDecomposition]:
    """Apply a recorded log to the tree it was produced from."""
    layer_of = dict(layers.layer_of)
    for rec in log.records:
        if rec.kind == LAYER_MOVE:
            for x, d in zip(rec.affected, rec.delta, strict=True):
                layer_of[x] += d
            low = min(layer_of.values())
            layer_of = {i: l - low for i, l in layer_of.items()}
        elif rec.kind == PSEUDO_NODE:
            tree = _insert_one(tree, layer_of, rec.mirrored, list(rec.affected), rec.created[0])
        else:
            raise ValueError(f"unknown record kind {rec.kind!r}")
    return tree, _decomp(tree, layer_of)


def structural_problems(tree: GaussianTree, layers: LayerDecomposition) -> list[str]:
    """Violations of the layered synthesis shape; empty when the tree is ready.

    Checked: no same-layer edge below the top layer, every other edge spans
    one layer, a pseudo node sits two layers above the observable it
    mirrors, and every parent of a node is exactly one layer up. A mirrored
    observable's parents are its pseudo node's other neighbors. Nodes
    without parents are allowed below the top.
    """
    lo = layers.layer_of
    top = layers.L
    problems = []
    for e in tree.edges:
        gap = abs(lo[e.u] - lo[e.v])
        if _mirror_edge(tree, e.u, e.v):
            pseudo, source = (e.u, e.v) if tree.node_by_id[e.u].pseudo else (e.v, e.u)
            if lo[pseudo] - lo[source] != 2:
                problems.append(f"pseudo node {pseudo} is not two layers above {source}")
        elif gap == 0 and lo[e.u] != top:
            problems.append(f"same-layer edge ({e.u}, {e.v}) at layer {lo[e.u]}")
        elif gap > 1:
            problems.append(f"edge ({e.u}, {e.v}) spans {gap} layers")
    mirrors = {nd.mirror_of: nd.id for nd in tree.nodes if nd.pseudo}
    for x in tree.ids:
        if lo[x] == top:
            continue
        if x in mirrors:
            parents = [nb for nb in tree.neighbors(mirrors[x]) if nb != x]
        else:
            parents = [nb for nb in tree.neighbors(x) if lo[nb] > lo[x]]
        if any(lo[p] != lo[x] + 1 for p in parents):
            problems.append(f"node {x} has a parent outside layer {lo[x] + 1}")
    for x, parents in internal_observables(tree, layers):
        problems.append(f"observable {x} has {len(parents)} parents")
    if layers.latents_at(0):
        problems.append("layer 0 holds latent nodes")
    return problems
