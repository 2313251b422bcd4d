"""Latent Gaussian trees with sign ambiguity.

A tree carries edge magnitudes only. Signs live in a separate
:class:`SignAssignment`, so one tree object stands for a whole class of
signed trees that share the same observable covariance.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

OBSERVABLE = "observable"
LATENT = "latent"
GAMMA_EPS = 1e-9


class TreeSpecError(ValueError):
    """Raised for malformed or invalid tree documents."""


class NonMinimalTreeError(ValueError):
    """Raised when an operation needs a minimal tree and gets another one."""


class NonMinimalTreeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    pseudo: bool = False
    mirror_of: int | None = None

    @property
    def is_latent(self) -> bool:
        return self.kind == LATENT


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    gamma: float


@dataclass(frozen=True)
class GaussianTree:
    """Unit-variance, zero-mean Gaussian tree.

    Construction validates the structure: unique ids, a connected acyclic
    edge set, and edge magnitudes inside ``(1e-9, 1 - 1e-9)``. The only
    exception to the magnitude range is the unit edge joining a pseudo node
    to the observable it mirrors.
    """

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        self._validate()

    def _validate(self) -> None:
        ids = [nd.id for nd in self.nodes]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise TreeSpecError(f"duplicate node ids: {dup}")
        if not ids:
            raise TreeSpecError("tree has no nodes")
        known = set(ids)
        for nd in self.nodes:
            if nd.kind not in (OBSERVABLE, LATENT):
                raise TreeSpecError(f"node {nd.id}: unknown kind {nd.kind!r}")
            if nd.pseudo and not nd.is_latent:
                raise TreeSpecError(f"node {nd.id}: pseudo nodes must be latent")
        seen = set()
        for e in self.edges:
            if e.u not in known or e.v not in known:
                raise TreeSpecError(f"edge ({e.u}, {e.v}) references an unknown node")
            if e.u == e.v:
                raise TreeSpecError(f"self loop on node {e.u}")
            key = frozenset((e.u, e.v))
            if key in seen:
                raise TreeSpecError(f"duplicate edge ({e.u}, {e.v})")
            seen.add(key)
            g = e.gamma
            if not isinstance(g, (int, float)) or not math.isfinite(g):
                raise TreeSpecError(f"edge ({e.u}, {e.v}): gamma must be a finite number")
            if self._is_mirror_pair(e.u, e.v):
                if g != 1.0:
                    raise TreeSpecError(f"mirror edge ({e.u}, {e.v}) must carry gamma 1")
            elif not (GAMMA_EPS < g < 1.0 - GAMMA_EPS):
                raise TreeSpecError(
                    f"edge ({e.u}, {e.v}): gamma {g!r} outside ({GAMMA_EPS}, {1 - GAMMA_EPS})"
                )
        if not nx.is_tree(self.graph):
            if not nx.is_connected(self.graph):
                raise TreeSpecError("edge set is disconnected")
            raise TreeSpecError("edge set contains a cycle")

    def _is_mirror_pair(self, u: int, v: int) -> bool:
        by_id = {nd.id: nd for nd in self.nodes}
        a, b = by_id[u], by_id[v]
        return (a.pseudo and a.mirror_of == v) or (b.pseudo and b.mirror_of == u)

    # ----- structure queries -------------------------------------------------

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(nd.id for nd in self.nodes)
        for i, e in enumerate(self.edges):
            g.add_edge(e.u, e.v, gamma=e.gamma, index=i)
        return g

    @cached_property
    def node_by_id(self) -> dict[int, Node]:
        return {nd.id: nd for nd in self.nodes}

    @cached_property
    def ids(self) -> tuple[int, ...]:
        return tuple(nd.id for nd in self.nodes)

    @cached_property
    def observables(self) -> tuple[int, ...]:
        return tuple(nd.id for nd in self.nodes if not nd.is_latent)

    @cached_property
    def latents(self) -> tuple[int, ...]:
        return tuple(nd.id for nd in self.nodes if nd.is_latent)

    @property
    def n(self) -> int:
        return len(self.observables)

    @property
    def k(self) -> int:
        return len(self.latents)

    def is_latent(self, node_id: int) -> bool:
        return self.node_by_id[node_id].is_latent

    def degree(self, node_id: int) -> int:
        return self.graph.degree[node_id]

    def neighbors(self, node_id: int) -> list[int]:
        return sorted(self.graph.neighbors(node_id))

    def gamma(self, u: int, v: int) -> float:
        return self.graph.edges[u, v]["gamma"]

    def path(self, u: int, v: int) -> list[int]:
        return nx.shortest_path(self.graph, u, v)

    @cached_property
    def is_minimal(self) -> bool:
        return self.n >= 3 and all(self.degree(y) >= 3 for y in self.latents)

    @cached_property
    def all_observables_leaves(self) -> bool:
        return all(self.degree(x) == 1 for x in self.observables)

    @cached_property
    def _paths(self) -> dict[tuple[int, int], tuple[int, ...]]:
        """Edge indices along every path, in a canonical multiplication order.

        Sorting factors by magnitude makes each path product independent of
        traversal direction, so transforms that only relabel or splice unit
        edges reproduce covariances bit for bit.
        """
        out: dict[tuple[int, int], tuple[int, ...]] = {}
        gam = [abs(e.gamma) for e in self.edges]
        for src, paths in nx.all_pairs_shortest_path(self.graph):
            for dst, p in paths.items():
                idx = [self.graph.edges[a, b]["index"] for a, b in zip(p, p[1:])]
                out[(src, dst)] = tuple(sorted(idx, key=lambda i: (gam[i], i)))
        return out

    # ----- serialization ----------------------------------------------------

    def to_spec(self) -> dict:
        nodes = []
        for nd in self.nodes:
            rec: dict = {"id": nd.id, "kind": nd.kind}
            if nd.pseudo:
                rec["pseudo"] = True
                rec["mirror_of"] = nd.mirror_of
            nodes.append(rec)
        edges = [{"u": e.u, "v": e.v, "gamma": e.gamma} for e in self.edges]
        return {"nodes": nodes, "edges": edges}

    def to_json(self) -> str:
        return json.dumps(self.to_spec(), indent=2)


@dataclass(frozen=True)
class LayerDecomposition:
    """Layer index per node. ``layer_of`` keeps the tree's node order."""

    layer_of: Mapping[int, int]
    latent_ids: frozenset[int] = field(default_factory=frozenset)

    @property
    def L(self) -> int:
        return max(self.layer_of.values())

    def nodes_at(self, layer: int) -> tuple[int, ...]:
        return tuple(i for i, l in self.layer_of.items() if l == layer)

    def latents_at(self, layer: int) -> tuple[int, ...]:
        return tuple(i for i in self.nodes_at(layer) if i in self.latent_ids)

    def observables_at(self, layer: int) -> tuple[int, ...]:
        return tuple(i for i in self.nodes_at(layer) if i not in self.latent_ids)

    @property
    def k_l(self) -> tuple[int, ...]:
        return tuple(len(self.latents_at(l)) for l in range(self.L + 1))

    def to_dict(self) -> dict[str, int]:
        return {str(i): l for i, l in self.layer_of.items()}


def assign_layers(tree: GaussianTree) -> LayerDecomposition:
    """Layer of each node = shortest-path edge distance to the observables."""
    if not tree.observables:
        raise TreeSpecError("tree has no observables")
    dist = nx.multi_source_dijkstra_path_length(tree.graph, set(tree.observables))
    return LayerDecomposition({i: int(dist[i]) for i in tree.ids}, frozenset(tree.latents))


@dataclass(frozen=True)
class SignAssignment:
    """A sign in {-1, +1} for every latent node; observables read as +1."""

    b: Mapping[int, int]

    def __post_init__(self) -> None:
        for node, s in self.b.items():
            if s not in (-1, 1):
                raise ValueError(f"sign of node {node} must be +1 or -1, got {s!r}")

    def __getitem__(self, node_id: int) -> int:
        return self.b.get(node_id, 1)

    def vector(self, ids: Sequence[int]) -> np.ndarray:
        return np.array([self[i] for i in ids], dtype=float)

    @classmethod
    def all_plus(cls, tree: GaussianTree) -> "SignAssignment":
        return cls({y: 1 for y in tree.latents})

    @classmethod
    def for_tree(cls, tree: GaussianTree, signs: Mapping[int, int] | Sequence[int]) -> "SignAssignment":
        """Build an assignment and check its domain is exactly the latent set."""
        if not isinstance(signs, Mapping):
            signs = dict(zip(tree.latents, (int(s) for s in signs), strict=True))
        if set(signs) != set(tree.latents):
            raise ValueError("sign assignment must cover exactly the latent nodes")
        return cls(dict(signs))

    def flipped(self) -> "SignAssignment":
        return SignAssignment({i: -s for i, s in self.b.items()})


@dataclass(frozen=True)
class SignDistribution:
    """Independent Bernoulli sign probabilities ``pi[y] = P(b_y = +1)``.

    Endpoints 0 and 1 are accepted so deterministic signs can be expressed.
    """

    pi: Mapping[int, float]

    def __post_init__(self) -> None:
        for node, p in self.pi.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"pi for node {node} must lie in [0, 1], got {p!r}")

    @classmethod
    def uniform(cls, ids: Iterable[int]) -> "SignDistribution":
        return cls({i: 0.5 for i in ids})

    def vector(self, ids: Sequence[int]) -> np.ndarray:
        return np.array([self.pi[i] for i in ids], dtype=float)

    def weights(self, ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """All ``2**len(ids)`` sign vectors over ``ids`` and their joint weights."""
        signs = sign_realizations(len(ids))
        p = self.vector(ids)
        probs = np.where(signs > 0, p, 1.0 - p)
        return signs, np.prod(probs, axis=1)


def sign_realizations(k: int) -> np.ndarray:
    """Every vector in {-1,+1}^k as rows, ``+1`` first.

    Row index bit ``j`` (most significant first) is set when entry ``j`` is -1.
    """
    if k == 0:
        return np.ones((1, 0))
    return np.array(list(itertools.product((1.0, -1.0), repeat=k)))


def sign_index(signs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`sign_realizations` for the last axis of ``signs``."""
    signs = np.asarray(signs)
    k = signs.shape[-1]
    weights = 1 << np.arange(k - 1, -1, -1)
    return ((signs < 0).astype(np.int64) * weights).sum(axis=-1)


def marginal_covariance(
    tree: GaussianTree, sign: SignAssignment, subset: Sequence[int] | None = None
) -> np.ndarray:
    """Covariance of ``subset`` (default: every node) under a sign assignment.

    Each entry multiplies the signed edge weights ``gamma * b_u * b_v`` along
    the path joining the two nodes.
    """
    ids = tree.ids if subset is None else tuple(subset)
    unknown = set(ids) - set(tree.node_by_id)
    if unknown:
        raise KeyError(f"nodes not in tree: {sorted(unknown)}")
    signed = [e.gamma * sign[e.u] * sign[e.v] for e in tree.edges]
    paths = tree._paths
    m = len(ids)
    out = np.eye(m)
    for a in range(m):
        for c in range(a + 1, m):
            val = 1.0
            for idx in paths[(ids[a], ids[c])]:
                val *= signed[idx]
            out[a, c] = out[c, a] = val
    return out


def observable_covariance(tree: GaussianTree, sign: SignAssignment | None = None) -> np.ndarray:
    return marginal_covariance(tree, sign or SignAssignment.all_plus(tree), tree.observables)


@dataclass(frozen=True)
class CorrelationSpaceReport:
    ok: bool
    violations: tuple[tuple[int, int, int, str], ...]


def validate_correlation_space(sigma: np.ndarray, rtol: float = 1e-12) -> CorrelationSpaceReport:
    """Check the triplet conditions a tree-representable covariance obeys.

    For every triplet: each ``|rho_ij| >= |rho_ik rho_jk|`` and the product of
    the three correlations is positive. Violations list ``(i, j, k, reason)``.
    """
    sigma = np.asarray(sigma, dtype=float)
    d = np.sqrt(np.diag(sigma))
    rho = sigma / np.outer(d, d)
    bad = []
    for i, j, k in itertools.combinations(range(rho.shape[0]), 3):
        rij, rik, rjk = rho[i, j], rho[i, k], rho[j, k]
        if not rij * rik * rjk > 0:
            bad.append((i, j, k, "triple product not positive"))
            continue
        for a, b, c in ((rij, rik, rjk), (rik, rij, rjk), (rjk, rij, rik)):
            if abs(a) < abs(b * c) * (1.0 - rtol):
                bad.append((i, j, k, "magnitude condition fails"))
                break
    return CorrelationSpaceReport(not bad, tuple(bad))


def enumerate_sign_equivalents(tree: GaussianTree) -> list[SignAssignment]:
    """All ``2**k`` sign assignments of a minimal tree, all-plus first."""
    if not tree.is_minimal:
        raise NonMinimalTreeError("sign-class enumeration needs a minimal tree")
    return [
        SignAssignment(dict(zip(tree.latents, (int(s) for s in row))))
        for row in sign_realizations(tree.k)
    ]


# ----- parsing ---------------------------------------------------------------


def _require_int(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TreeSpecError(f"{what} must be an integer, got {value!r}")
    return value


def tree_from_spec(doc: Mapping) -> GaussianTree:
    """Build a tree from a tree-spec document without computing layers."""
    if not isinstance(doc, Mapping) or "nodes" not in doc or "edges" not in doc:
        raise TreeSpecError("document needs 'nodes' and 'edges'")
    nodes = []
    for rec in doc["nodes"]:
        if not isinstance(rec, Mapping) or "id" not in rec or "kind" not in rec:
            raise TreeSpecError(f"malformed node record {rec!r}")
        mirror = rec.get("mirror_of")
        nodes.append(
            Node(
                _require_int(rec["id"], "node id"),
                rec["kind"],
                bool(rec.get("pseudo", False)),
                None if mirror is None else _require_int(mirror, "mirror_of"),
            )
        )
    edges = []
    for rec in doc["edges"]:
        if not isinstance(rec, Mapping) or not {"u", "v", "gamma"} <= set(rec):
            raise TreeSpecError(f"malformed edge record {rec!r}")
        g = rec["gamma"]
        if isinstance(g, bool) or not isinstance(g, (int, float)):
            raise TreeSpecError(f"gamma must be a number, got {g!r}")
        edges.append(Edge(_require_int(rec["u"], "edge endpoint"), _require_int(rec["v"], "edge endpoint"), float(g)))
    return GaussianTree(tuple(nodes), tuple(edges))


def parse_tree(doc: Mapping | str) -> tuple[GaussianTree, LayerDecomposition]:
    """Parse a tree-spec document (mapping or JSON text) and assign layers.

    Non-minimal trees are accepted with a :class:`NonMinimalTreeWarning`.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise TreeSpecError(f"invalid JSON: {exc}") from exc
    tree = tree_from_spec(doc)
    if not tree.is_minimal:
        warnings.warn("tree is not minimal", NonMinimalTreeWarning, stacklevel=2)
    return tree, assign_layers(tree)


def load_tree(path: str | Path) -> tuple[GaussianTree, LayerDecomposition]:
    return parse_tree(Path(path).read_text())


def covariance_to_csv(sigma: np.ndarray, ids: Sequence[int]) -> str:
    lines = [",".join(str(i) for i in ids)]
    lines += [",".join(repr(float(v)) for v in row) for row in np.asarray(sigma)]
    return "\n".join(lines) + "\n"


# ----- builders --------------------------------------------------------------


def make_tree(observables: Iterable[int], latents: Iterable[int], edges: Iterable[tuple[int, int, float]]) -> GaussianTree:
    nodes = [Node(i, OBSERVABLE) for i in observables] + [Node(i, LATENT) for i in latents]
    return GaussianTree(tuple(nodes), tuple(Edge(u, v, float(g)) for u, v, g in edges))


def star_tree(gammas: Sequence[float] = (0.6, 0.6, 0.6)) -> GaussianTree:
    """One latent (id 0) joined to observables ``1..len(gammas)``."""
    obs = range(1, len(gammas) + 1)
    return make_tree(obs, [0], [(0, i, g) for i, g in zip(obs, gammas)])


def random_latent_tree(
    rng: np.random.Generator,
    k: int,
    gamma_range: tuple[float, float] = (0.2, 0.9),
    max_observables: int | None = None,
    internal_observables: bool = False,
) -> GaussianTree:
    """Random minimal tree with ``k`` latents.

    Latents are joined by random attachment, then topped up with leaf
    observables until every latent has degree three. Extra leaves are added
    at random while ``max_observables`` allows. With ``internal_observables``
    some latent-latent edges are subdivided by an observable.
    """
    lo, hi = gamma_range
    latents = list(range(k))
    links = [(int(rng.integers(i)), i) for i in range(1, k)]
    deg = {y: 0 for y in latents}
    for a, b in links:
        deg[a] += 1
        deg[b] += 1
    next_id = k
    edges: list[tuple[int, int]] = []
    observables: list[int] = []
    for a, b in links:
        if internal_observables and rng.random() < 0.5:
            edges += [(a, next_id), (next_id, b)]
            observables.append(next_id)
            next_id += 1
        else:
            edges.append((a, b))
    for y in latents:
        for _ in range(max(0, 3 - deg[y])):
            edges.append((y, next_id))
            observables.append(next_id)
            next_id += 1
    cap = max_observables if max_observables is not None else len(observables) + k
    while len(observables) < cap and rng.random() < 0.6:
        y = int(rng.integers(k))
        edges.append((y, next_id))
        observables.append(next_id)
        next_id += 1
    weighted = [(u, v, float(rng.uniform(lo, hi))) for u, v in edges]
    return make_tree(observables, latents, weighted)


@dataclass(frozen=True)
class LayerChannel:
    """Affine Gaussian map from the nodes of layer ``l + 1`` to layer ``l``.

    ``lower = A @ upper + z`` with ``z ~ N(0, noise_cov)``. Arrays are for the
    all-plus sign assignment; :meth:`signed` applies sign vectors, using
    ``A(b) = D_lower A D_upper`` and ``noise(b) = D_lower noise D_lower``.
    """

    layer: int
    lower: tuple[int, ...]
    upper: tuple[int, ...]
    A: np.ndarray
    noise_cov: np.ndarray

    def signed(self, lower_signs: np.ndarray, upper_signs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dl = np.asarray(lower_signs, dtype=float)
        du = np.asarray(upper_signs, dtype=float)
        return dl[:, None] * self.A * du[None, :], dl[:, None] * self.noise_cov * dl[None, :]


def layer_channel(
    tree: GaussianTree, layers: LayerDecomposition, layer: int, sign: SignAssignment | None = None
) -> LayerChannel:
    """Gaussian conditional of layer ``layer`` given layer ``layer + 1``."""
    if not 0 <= layer < layers.L:
        raise ValueError(f"layer must lie in [0, {layers.L - 1}], got {layer}")
    sign = sign or SignAssignment.all_plus(tree)
    lower, upper = layers.nodes_at(layer), layers.nodes_at(layer + 1)
    full = marginal_covariance(tree, sign, lower + upper)
    d = len(lower)
    s_ll, s_lu, s_uu = full[:d, :d], full[:d, d:], full[d:, d:]
    A = np.linalg.solve(s_uu, s_lu.T).T
    noise = s_ll - A @ s_lu.T
    noise = 0.5 * (noise + noise.T)
    return LayerChannel(layer, lower, upper, A, noise)
