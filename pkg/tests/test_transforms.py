import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from latent_tree_synth.gallery import (
    adjacent_latent_tree,
    internal_observable_tree,
    symmetric_star,
    two_layer_tree,
)
from latent_tree_synth.info_quantities import all_rate_bounds
from latent_tree_synth.transforms import (
    LAYER_MOVE,
    PSEUDO_NODE,
    TransformLog,
    insert_pseudo_nodes,
    internal_observables,
    normalize_for_synthesis,
    reorder_layers,
    replay,
    structural_problems,
)
from latent_tree_synth.tree_model import (
    SignAssignment,
    SignDistribution,
    assign_layers,
    marginal_covariance,
    observable_covariance,
    parse_tree,
    random_latent_tree,
)

shaped_trees = st.builds(
    lambda seed, k: random_latent_tree(np.random.default_rng(seed), k, internal_observables=True),
    st.integers(0, 2**32 - 1),
    st.integers(1, 7),
)


def observables_after(original, transformed):
    return marginal_covariance(transformed, SignAssignment.all_plus(transformed), original.observables)


def test_pseudo_node_breaks_the_internal_observable_clique():
    tree = internal_observable_tree()
    layers = assign_layers(tree)
    assert internal_observables(tree, layers) == [(6, [12, 13, 14])]
    new, new_layers, log = insert_pseudo_nodes(tree, layers)
    (rec,) = log.records
    assert (rec.kind, rec.mirrored, rec.affected) == (PSEUDO_NODE, 6, (12, 13, 14))
    pseudo = new.node_by_id[rec.created[0]]
    assert pseudo.pseudo and pseudo.mirror_of == 6
    assert new_layers.latents_at(2) == (21, pseudo.id)
    for parent in (12, 13, 14):
        assert new.gamma(pseudo.id, parent) == tree.gamma(6, parent)
    assert np.array_equal(observables_after(tree, new), observable_covariance(tree))


def test_reorder_moves_the_farther_adjacent_latent_down():
    tree = adjacent_latent_tree()
    new, layers, log = reorder_layers(tree, assign_layers(tree))
    (rec,) = log.records
    assert rec.kind == LAYER_MOVE and rec.edge == (13, 14)
    assert layers.nodes_at(3) == (21,)
    assert layers.nodes_at(2) == (11, 12, 13)
    assert layers.nodes_at(1) == (1, 2, 3, 4, 5, 14)
    assert layers.nodes_at(0) == (6, 7)
    full = marginal_covariance(tree, SignAssignment.all_plus(tree))
    assert np.array_equal(marginal_covariance(new, SignAssignment.all_plus(new)), full)


def test_basic_trees_are_left_alone():
    for tree in (symmetric_star(), two_layer_tree()):
        layers = assign_layers(tree)
        new, new_layers, log = normalize_for_synthesis(tree, layers)
        assert len(log) == 0 and new == tree and new_layers == layers
        assert structural_problems(tree, layers) == []


def test_gallery_trees_need_exactly_one_rewrite():
    for tree in (internal_observable_tree(), adjacent_latent_tree()):
        layers = assign_layers(tree)
        assert structural_problems(tree, layers)
        new, new_layers, log = normalize_for_synthesis(tree, layers)
        assert len(log) == 1
        assert structural_problems(new, new_layers) == []


def test_pseudo_node_rate_bounds_are_finite():
    tree = internal_observable_tree()
    new, layers, _ = normalize_for_synthesis(tree, assign_layers(tree))
    for b in all_rate_bounds(new, layers, SignDistribution.uniform(new.latents), 2000, 0):
        assert math.isfinite(b.sum_bound) and math.isfinite(b.y_bound)


def test_normalized_tree_exports_and_parses():
    tree = internal_observable_tree()
    new, _, _ = normalize_for_synthesis(tree, assign_layers(tree))
    again, _ = parse_tree(new.to_json())
    assert again == new


@given(shaped_trees)
def test_normalize_preserves_observables_and_reaches_the_layered_shape(tree):
    new, layers, log = normalize_for_synthesis(tree, assign_layers(tree))
    assert structural_problems(new, layers) == []
    assert np.array_equal(observables_after(tree, new), observable_covariance(tree))
    assert set(tree.ids) <= set(new.ids)


@given(shaped_trees)
def test_logs_replay_and_serialize(tree):
    layers = assign_layers(tree)
    new, new_layers, log = normalize_for_synthesis(tree, layers)
    parsed = TransformLog.from_jsonl(log.to_jsonl())
    assert parsed == log
    assert replay(tree, layers, parsed) == (new, new_layers)


@given(shaped_trees)
def test_normalize_is_idempotent(tree):
    new, layers, _ = normalize_for_synthesis(tree, assign_layers(tree))
    again, again_layers, log = normalize_for_synthesis(new, layers)
    assert len(log) == 0 and again == new and again_layers == layers


def test_synthesis_on_a_normalized_tree_reproduces_the_original_covariance():
    from latent_tree_synth.codebook import build_all_codebooks, scaled_rates
    from latent_tree_synth.synthesis import synthesize_batch

    tree = random_latent_tree(np.random.default_rng(3), 5, internal_observables=True)
    new, layers, log = normalize_for_synthesis(tree, assign_layers(tree))
    assert len(log) > 0
    pi = SignDistribution.uniform(new.latents)
    rates = scaled_rates(all_rate_bounds(new, layers, pi, 5000, 0), 1.5)
    pooled = synthesize_batch(build_all_codebooks(new, layers, 128, rates, pi, 0), new, layers, 200, 0).pooled
    assert np.abs(np.cov(pooled, rowvar=False) - observable_covariance(tree)).max() < 0.05
