import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latent_tree_synth.codebook import (
    RateTuple,
    SignCodebook,
    TopCodebook,
    build_all_codebooks,
    codebook_size,
    export_codebooks,
    index_bits,
    propagate_layer,
    read_container,
    scaled_rates,
    write_container,
)
from latent_tree_synth.common import ResourceCapError
from latent_tree_synth.gallery import symmetric_star, two_layer_tree
from latent_tree_synth.info_quantities import RateBounds
from latent_tree_synth.tree_model import (
    SignAssignment,
    SignDistribution,
    assign_layers,
    layer_channel,
    make_tree,
    sign_realizations,
)
from oracles import tree_sem_covariance


def rate_for(N, M):
    """Rate in nats whose codebook holds about ``M`` words at length ``N``."""
    return math.log(M) / N


def test_codebook_size_small_cases():
    assert codebook_size(4, 0.5) == 8  # ceil(e^2)
    assert codebook_size(4, 0.0) == 1
    assert codebook_size(1, math.log(3)) in (3, 4)


@given(st.integers(1, 4096), st.floats(0.0, 3.0))
def test_codebook_size_matches_high_precision_exponential(N, rate):
    M = codebook_size(N, rate)
    exact = mpmath.exp(mpmath.mpf(N) * mpmath.mpf(rate))
    assert M >= 1
    # Float exponent: exact to about 1e-13 relative, then rounded up.
    assert abs(mpmath.mpf(M) - exact) <= 1 + exact * mpmath.mpf("1e-12")


def test_index_bits_is_nats_over_ln2():
    assert index_bits(100, 0.2) == pytest.approx(20 / math.log(2))


def test_materializing_beyond_thirty_bits_hits_the_cap():
    pi = SignDistribution({0: 0.5})
    big = SignCodebook(1, 64, 1.0, [0], pi, 0)
    assert big.M > 2**63
    assert big.codeword(big.M - 1).shape == (64, 1)
    with pytest.raises(ResourceCapError):
        big.materialize()


def test_eleven_latents_in_one_layer_hits_the_cap():
    latents = list(range(100, 111))
    edges = [(200, y, 0.6) for y in latents]
    obs, i = [], 1
    for y in latents:
        edges += [(y, i, 0.7), (y, i + 1, 0.7)]
        obs += [i, i + 1]
        i += 2
    tree = make_tree(obs, latents + [200], edges)
    layers = assign_layers(tree)
    rates = [RateTuple(0.1, 0.1)] * layers.L
    with pytest.raises(ResourceCapError):
        build_all_codebooks(tree, layers, 8, rates, SignDistribution.uniform(tree.latents), 0)


def test_sign_codewords_follow_pi_and_are_deterministic():
    pi = SignDistribution({1: 0.8, 2: 0.3})
    cb = SignCodebook(1, 20_000, 0.0, [1, 2], pi, 7)
    word = cb.codeword(0)
    np.testing.assert_allclose((word > 0).mean(axis=0), [0.8, 0.3], atol=0.015)
    again = SignCodebook(1, 20_000, 0.0, [1, 2], pi, 7)
    assert np.array_equal(again.codeword(0), word)
    other = SignCodebook(1, 20_000, 0.0, [1, 2], pi, 8)
    assert not np.array_equal(other.codeword(0), word)
    with pytest.raises(IndexError):
        cb.codeword(1)


def test_top_codewords_have_the_signed_top_covariance():
    tree = two_layer_tree()
    layers = assign_layers(tree)
    N, M = 64, 300
    top = TopCodebook(tree, layers, N, rate_for(N, M), 3)
    words = np.concatenate([top.codeword(i) for i in range(top.M)], axis=0)
    for r, row in enumerate(sign_realizations(2)):
        signs = dict(zip(top.latents, row))
        oracle = tree_sem_covariance(tree, signs, ids=top.nodes)
        np.testing.assert_allclose(np.cov(words[:, r, :], rowvar=False), oracle, atol=0.05)


def test_noise_free_propagation_is_the_signed_channel_mean():
    tree = two_layer_tree()
    layers = assign_layers(tree)
    N = 16
    pi = SignDistribution.uniform(tree.latents)
    top = TopCodebook(tree, layers, N, rate_for(N, 50), 1)
    top_signs = SignCodebook(2, N, rate_for(N, 50), layers.latents_at(2), pi, 1)
    low = propagate_layer(top, top_signs, tree, layers, 1, rate_for(N, 50), 1, noise_scale=0.0)
    y_idx, b_idx = low.provenance(4)
    assert 0 <= y_idx < top.M and 0 <= b_idx < top_signs.M
    up_sign_words = top_signs.codeword(b_idx)
    y_up = top.resolve(y_idx, top_signs.realization_indices(b_idx))
    base = layer_channel(tree, layers, 1)
    word = low.codeword(4)
    for t in range(N):
        up = SignAssignment(dict(zip(layers.latents_at(2), up_sign_words[t].astype(int))))
        for r, row in enumerate(sign_realizations(4)):
            lowsign = SignAssignment(dict(zip(layers.latents_at(1), row.astype(int))))
            A, _ = base.signed(lowsign.vector(base.lower), up.vector(base.upper))
            np.testing.assert_allclose(word[t, r], A @ y_up[t], atol=1e-12)


def test_propagated_codewords_have_the_signed_layer_covariance():
    tree = two_layer_tree()
    layers = assign_layers(tree)
    pi = SignDistribution.uniform(tree.latents)
    N = 64
    rates = [RateTuple(rate_for(N, 400), rate_for(N, 400)), RateTuple(rate_for(N, 400), rate_for(N, 400))]
    books = build_all_codebooks(tree, layers, N, rates, pi, 11)
    cb = books[1].codebook
    words = np.concatenate([cb.codeword(i) for i in range(cb.M)], axis=0)
    for r in (0, 5, 15):
        signs = dict(zip(cb.latents, sign_realizations(4)[r]))
        oracle = tree_sem_covariance(tree, signs, ids=cb.nodes)
        np.testing.assert_allclose(np.cov(words[:, r, :], rowvar=False), oracle, atol=0.05)


def test_builds_are_bit_identical_for_a_seed():
    tree = symmetric_star()
    layers = assign_layers(tree)
    pi = SignDistribution.uniform(tree.latents)
    rates = [RateTuple(0.3, 0.2)]
    a = build_all_codebooks(tree, layers, 8, rates, pi, 5)
    b = build_all_codebooks(tree, layers, 8, rates, pi, 5)
    assert np.array_equal(a[1].codebook.materialize(), b[1].codebook.materialize())
    assert np.array_equal(a[1].signs.materialize(), b[1].signs.materialize())


def test_build_needs_one_rate_pair_per_layer():
    tree = two_layer_tree()
    with pytest.raises(ValueError):
        build_all_codebooks(tree, assign_layers(tree), 8, [RateTuple(0.1, 0.1)], SignDistribution.uniform(tree.latents), 0)


def test_rates_must_be_nonnegative():
    with pytest.raises(ValueError):
        RateTuple(-0.1, 0.0)


def test_scaled_rates_split_the_sum_bound():
    bounds = [RateBounds(0, 0.5, 0.2, 0.01, 100, 0), RateBounds(1, 0.3, -0.01, 0.01, 100, 0)]
    r = scaled_rates(bounds, 2.0)
    assert (r[0].R_Y, r[0].R_B) == (pytest.approx(0.4), pytest.approx(0.6))
    assert r[1] == RateTuple(0.0, 0.6)
    assert scaled_rates(bounds, 0.0) == [RateTuple(0.0, 0.0)] * 2
    with pytest.raises(ValueError):
        scaled_rates(bounds, -1.0)


def test_container_round_trip(tmp_path):
    arr = np.random.default_rng(0).standard_normal((3, 4, 2))
    write_container(tmp_path / "a.bin", arr)
    assert np.array_equal(read_container(tmp_path / "a.bin"), arr)
    (tmp_path / "b.bin").write_bytes(b"garbage!" + bytes(16))
    with pytest.raises(ValueError):
        read_container(tmp_path / "b.bin")


def test_export_writes_codewords_provenance_and_manifest(tmp_path):
    tree = two_layer_tree()
    layers = assign_layers(tree)
    pi = SignDistribution.uniform(tree.latents)
    rates = [RateTuple(0.3, 0.2), RateTuple(0.3, 0.1)]
    books = build_all_codebooks(tree, layers, 6, rates, pi, 2)
    files = export_codebooks(books, tmp_path)
    names = {f.name for f in files}
    assert "layer1_provenance.bin" in names and "layer2_provenance.bin" not in names
    words = read_container(tmp_path / "layer1_codewords.bin")
    assert np.array_equal(words, books[1].codebook.materialize())
    manifest = json.loads((tmp_path / "layer1_manifest.json").read_text())
    assert manifest["M_Y"] == books[1].codebook.M
    prov = read_container(tmp_path / "layer1_provenance.bin").astype(int)
    assert all(0 <= y < books[2].codebook.M for y, _ in prov)
