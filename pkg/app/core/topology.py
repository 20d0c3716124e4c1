"""Random scale-free edge network synthesis.

Builds a Barabasi-Albert topology, derives AP-to-EN shortest-path delays and
turns them into a complete :class:`~app.models.Instance`.
"""

from collections.abc import Sequence

from loguru import logger
import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict

from app.exceptions import SynthesisError, UsageError
from app.models import Instance, SynthesisParams

ROLE_RETRIES = 100


class Graph(BaseModel):
    """Undirected topology with per-link delays aligned to ``edges``."""

    model_config = ConfigDict(frozen=True)

    node_count: int
    edges: list[tuple[int, int]]
    delays: list[float]

    def link_delay(self) -> dict[tuple[int, int], float]:
        return dict(zip(self.edges, self.delays, strict=True))

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.node_count))
        graph.add_weighted_edges_from(
            ((u, v, w) for (u, v), w in zip(self.edges, self.delays, strict=True)),
            weight="delay",
        )
        return graph


def expected_edge_count(n_nodes: int, attachment_rate: int) -> int:
    """Edge count of the growth process seeded with a complete graph.

    The seed clique on ``attachment_rate + 1`` nodes contributes
    ``m(m+1)/2`` edges and each of the remaining nodes adds ``m``.
    """
    m = attachment_rate
    return m * (m + 1) // 2 + m * (n_nodes - m - 1)


def generate_ba_topology(params: SynthesisParams) -> Graph:
    """Grow a Barabasi-Albert graph and sample link delays.

    New nodes attach ``attachment_rate`` edges to distinct existing nodes
    chosen proportionally to degree, starting from a complete graph on
    ``attachment_rate + 1`` nodes. Delays are uniform on ``delay_range``.

    Returns:
        Graph: deterministic for a fixed seed.

    """
    m = params.attachment_rate
    seed_graph = nx.complete_graph(m + 1)
    if params.n_nodes == m + 1:
        graph = seed_graph
    else:
        graph = nx.barabasi_albert_graph(
            params.n_nodes, m, seed=params.seed, initial_graph=seed_graph
        )
    edges = sorted((min(u, v), max(u, v)) for u, v in graph.edges())
    rng = np.random.default_rng([params.seed, 0])
    low, high = params.delay_range
    delays = rng.uniform(low, high, size=len(edges)).tolist()
    logger.debug(f"Generated BA topology: {params.n_nodes} nodes, {len(edges)} edges")
    return Graph(node_count=params.n_nodes, edges=edges, delays=delays)


def all_pairs_delay(
    graph: Graph, ap_nodes: Sequence[int], en_nodes: Sequence[int]
) -> np.ndarray:
    """Shortest-path delay from every AP node to every EN node.

    Returns:
        np.ndarray: ``len(ap_nodes) x len(en_nodes)`` matrix in ms.

    Raises:
        UsageError: If some AP cannot reach some EN.

    """
    g = graph.to_networkx()
    d = np.empty((len(ap_nodes), len(en_nodes)))
    for row, ap in enumerate(ap_nodes):
        lengths = nx.single_source_dijkstra_path_length(g, ap, weight="delay")
        for col, en in enumerate(en_nodes):
            if en not in lengths:
                msg = f"graph is disconnected: node {en} unreachable from node {ap}"
                raise UsageError(msg)
            d[row, col] = lengths[en]
    return d


def _draw_roles(
    rng: np.random.Generator, params: SynthesisParams
) -> tuple[list[int], list[int]]:
    """Pick AP and EN host nodes, disjoint when both role sets fit.

    Otherwise each set is drawn on its own without replacement, so a node
    may host an AP and an EN at delay 0.
    """
    if params.n_aps + params.n_ens <= params.n_nodes:
        order = rng.permutation(params.n_nodes)
        ap = order[: params.n_aps]
        en = order[params.n_aps : params.n_aps + params.n_ens]
    else:
        ap = rng.choice(params.n_nodes, size=params.n_aps, replace=False)
        en = rng.choice(params.n_nodes, size=params.n_ens, replace=False)
    return sorted(int(v) for v in ap), sorted(int(v) for v in en)


def synthesize_instance(params: SynthesisParams) -> Instance:
    """Draw AP/EN roles, capacities and demands on a fresh BA topology.

    Roles are resampled until every area has at least one eligible EN.

    Returns:
        Instance: deterministic for a fixed seed.

    Raises:
        SynthesisError: If the role retry budget is exhausted.

    """
    graph = generate_ba_topology(params)
    rng = np.random.default_rng([params.seed, 1])
    for attempt in range(ROLE_RETRIES):
        ap_nodes, en_nodes = _draw_roles(rng, params)
        d = all_pairs_delay(graph, ap_nodes, en_nodes)
        a = (d < params.eligibility_threshold).astype(int)
        if a.any(axis=1).all():
            break
        logger.debug(f"Role draw {attempt} left an area without eligible EN, resampling")
    else:
        msg = (
            f"no role assignment gives every area an eligible EN after {ROLE_RETRIES} "
            f"draws (threshold {params.eligibility_threshold} ms)"
        )
        raise SynthesisError(msg)

    capacities = rng.choice(np.asarray(params.capacity_choices, dtype=float), size=params.n_ens)
    low, high = params.demand_range
    demands = rng.uniform(low, high, size=params.n_aps)
    logger.info(
        f"Synthesised instance: M={params.n_aps}, N={params.n_ens}, "
        f"{int(a.sum())} eligible pairs, seed={params.seed}"
    )
    return Instance(
        m=params.n_aps,
        n=params.n_ens,
        lambda_=demands.tolist(),
        c=capacities.tolist(),
        phi=[params.unmet_penalty] * params.n_aps,
        d=d.tolist(),
        a=a.tolist(),
        gamma=params.gamma,
        theta=params.theta,
        beta=params.beta,
        meta={
            "seed": params.seed,
            "params": params.model_dump(mode="json"),
            "ap_nodes": ap_nodes,
            "en_nodes": en_nodes,
        },
    )
