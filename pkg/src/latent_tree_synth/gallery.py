"""Small named trees used by tests, demos and the acceptance suite."""

from __future__ import annotations

from .tree_model import GaussianTree, make_tree, star_tree


def symmetric_star(gamma: float = 0.6) -> GaussianTree:
    """Three leaves on one latent, all edges ``gamma``."""
    return star_tree((gamma, gamma, gamma))


def two_hub_tree(leaf_gamma: float = 0.6, hub_gamma: float = 0.5) -> GaussianTree:
    """Two adjacent latents (ids 11, 12) with two leaves each (ids 1..4)."""
    g = leaf_gamma
    return make_tree(
        [1, 2, 3, 4],
        [11, 12],
        [(11, 1, g), (11, 2, g), (12, 3, g), (12, 4, g), (11, 12, hub_gamma)],
    )


def two_layer_tree() -> GaussianTree:
    """Four first-layer latents (11..14) paired under two adjacent tops (21, 22).

    Each first-layer latent carries two leaves; observables are ids 1..8.
    """
    edges = []
    leaf_gammas = [0.8, 0.7, 0.75, 0.65, 0.7, 0.85, 0.6, 0.8]
    for j, y in enumerate([11, 12, 13, 14]):
        edges += [(y, 2 * j + 1, leaf_gammas[2 * j]), (y, 2 * j + 2, leaf_gammas[2 * j + 1])]
    edges += [(21, 11, 0.7), (21, 12, 0.65), (22, 13, 0.75), (22, 14, 0.6), (21, 22, 0.55)]
    return make_tree(range(1, 9), [11, 12, 13, 14, 21, 22], edges)


def internal_observable_tree() -> GaussianTree:
    """Observable 6 is internal, joined to latents 12, 13 and 14.

    Latents 11, 12 and 15 hang under the second-layer latent 21, so after
    peeling the leaves, 12..14 would form a clique through observable 6.
    """
    edges = [
        (11, 1, 0.7), (11, 2, 0.8), (11, 21, 0.6),
        (12, 3, 0.75), (12, 6, 0.7), (12, 21, 0.65),
        (13, 4, 0.8), (13, 5, 0.7), (13, 6, 0.6),
        (14, 7, 0.65), (14, 8, 0.75), (14, 6, 0.8),
        (15, 9, 0.7), (15, 10, 0.6), (15, 21, 0.7),
    ]
    return make_tree(range(1, 11), [11, 12, 13, 14, 15, 21], edges)


def adjacent_latent_tree() -> GaussianTree:
    """First-layer latents 13 and 14 are adjacent; 14 carries leaves 6 and 7.

    Latents 11, 12, 13 hang under the top latent 21 and carry leaves 1..5.
    """
    edges = [
        (11, 1, 0.7), (11, 2, 0.8),
        (12, 3, 0.75), (12, 4, 0.65),
        (13, 5, 0.8), (13, 14, 0.6),
        (14, 6, 0.7), (14, 7, 0.75),
        (21, 11, 0.6), (21, 12, 0.7), (21, 13, 0.65),
    ]
    return make_tree(range(1, 8), [11, 12, 13, 14, 21], edges)


NAMED_TREES = {
    "star": symmetric_star,
    "two_hub": two_hub_tree,
    "two_layer": two_layer_tree,
    "internal_observable": internal_observable_tree,
    "adjacent_latent": adjacent_latent_tree,
}
