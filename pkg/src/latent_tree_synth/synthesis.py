"""Bottom-up synthesis: pick layer-1 codewords, follow provenance upward,
and pass the resolved sequence through the observable channel."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .codebook import LayerBooks, _psd_cholesky, _sign_vectors
from .common import STREAM_SYNTH, substream, uniform_index
from .tree_model import GaussianTree, LayerDecomposition, layer_channel


class ProvenanceError(RuntimeError):
    pass


def channel_apply(
    A: np.ndarray,
    y: np.ndarray,
    sigma_z: np.ndarray,
    rng: np.random.Generator | None,
    noise_scale: float = 1.0,
) -> np.ndarray:
    """``A @ y + z`` with ``z ~ N(0, sigma_z)``.

    ``sigma_z`` is a vector of variances or a full covariance matrix. With
    ``noise_scale == 0`` no randomness is drawn and ``rng`` may be ``None``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.asarray(y, dtype=float)
    if A.shape[1] != y.shape[-1]:
        raise ValueError(f"A has {A.shape[1]} columns but y has length {y.shape[-1]}")
    sigma_z = np.asarray(sigma_z, dtype=float)
    cov = np.diag(sigma_z) if sigma_z.ndim == 1 else sigma_z
    if cov.shape != (A.shape[0], A.shape[0]):
        raise ValueError("noise covariance does not match the output dimension")
    out = y @ A.T
    if noise_scale != 0.0:
        z = rng.standard_normal(out.shape) @ _psd_cholesky(cov).T
        out = out + noise_scale * z
    return out


@dataclass(frozen=True)
class ChainLink:
    layer: int
    y_index: int
    b_index: int


@dataclass
class SynthesisOutput:
    """One synthesized block: ``x_seq`` is ``(N, n)`` in ``observables`` order."""

    draw: int
    x_seq: np.ndarray
    chain: tuple[ChainLink, ...]
    sequences: dict[int, np.ndarray]
    signs: dict[int, np.ndarray]
    observables: tuple[int, ...]

    def chain_record(self) -> dict:
        return {
            "draw": self.draw,
            "chain": [
                {"layer": c.layer, "y_index": str(c.y_index), "b_index": str(c.b_index)} for c in self.chain
            ],
        }


class Synthesizer:
    """Holds the codebooks and the fixed observable channel for repeated draws."""

    def __init__(
        self,
        books: dict[int, LayerBooks],
        tree: GaussianTree,
        layers: LayerDecomposition,
        noise_scale: float = 1.0,
    ):
        if sorted(books) != list(range(1, layers.L + 1)):
            raise ValueError("codebooks must cover layers 1..L")
        self.books, self.tree, self.layers = books, tree, layers
        self.noise_scale = float(noise_scale)
        self.channel = layer_channel(tree, layers, 0)
        self._up_signs = _sign_vectors(books[1].codebook.nodes, books[1].codebook.latents)
        self._noise_chol = _psd_cholesky(self.channel.noise_cov)
        col = {}
        for l in range(layers.L + 1):
            for pos, node in enumerate(layers.nodes_at(l)):
                col[node] = (l, pos)
        self._where = [col[x] for x in tree.observables]

    def resolve_chain(self, chain: Sequence[ChainLink]) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
        """Sign-resolved sequences and sign codewords for every link of a chain."""
        seqs, signs = {}, {}
        for link in chain:
            lb = self.books[link.layer]
            rows = lb.signs.realization_indices(link.b_index)
            seqs[link.layer] = lb.codebook.resolve(link.y_index, rows)
            signs[link.layer] = lb.signs.codeword(link.b_index)
        return seqs, signs

    def walk(self, y_index: int, b_index: int) -> tuple[ChainLink, ...]:
        chain = [ChainLink(1, y_index, b_index)]
        for l in range(1, self.layers.L):
            prov = self.books[l].codebook.provenance(chain[-1].y_index)
            if prov is None:
                raise ProvenanceError(f"layer {l} codeword has no provenance")
            y_up, b_up = prov
            up = self.books[l + 1]
            if not (0 <= y_up < up.codebook.M and 0 <= b_up < up.signs.M):
                raise ProvenanceError(f"provenance of layer {l} points outside layer {l + 1}")
            chain.append(ChainLink(l + 1, y_up, b_up))
        return tuple(chain)

    def draw(self, seed: int, draw: int = 0) -> SynthesisOutput:
        rng = substream(seed, STREAM_SYNTH, draw)
        first = self.books[1]
        chain = self.walk(uniform_index(rng, first.codebook.M), uniform_index(rng, first.signs.M))
        seqs, signs = self.resolve_chain(chain)
        rows = first.signs.realization_indices(chain[0].b_index)
        canon = (self._up_signs[rows] * seqs[1]) @ self.channel.A.T
        noise = rng.standard_normal(canon.shape) @ self._noise_chol.T
        bottom = canon + self.noise_scale * noise
        layer_values = {0: bottom, **seqs}
        x = np.column_stack([layer_values[l][:, pos] for l, pos in self._where])
        return SynthesisOutput(draw, x, chain, seqs, signs, self.tree.observables)

    def channel_residuals(self, out: SynthesisOutput) -> np.ndarray:
        """Layer-0 outputs minus their channel mean, whitened by the noise factor.

        For a correct channel pass these are i.i.d. standard normal; columns
        follow ``layers.nodes_at(0)``. Noise-free coordinates are dropped.
        """
        first = self.books[1]
        rows = first.signs.realization_indices(out.chain[0].b_index)
        mean = (self._up_signs[rows] * out.sequences[1]) @ self.channel.A.T
        col = {x: c for c, x in enumerate(out.observables)}
        bottom = out.x_seq[:, [col[x] for x in self.layers.nodes_at(0)]]
        keep = np.diag(self._noise_chol) > 0
        chol = self._noise_chol[np.ix_(keep, keep)]
        resid = (bottom - mean)[:, keep]
        return solve_triangular(chol, resid.T, lower=True).T / self.noise_scale


def synthesize_one(
    books: dict[int, LayerBooks],
    tree: GaussianTree,
    layers: LayerDecomposition,
    seed: int,
    draw: int = 0,
    noise_scale: float = 1.0,
) -> SynthesisOutput:
    return Synthesizer(books, tree, layers, noise_scale).draw(seed, draw)


@dataclass
class BatchResult:
    outputs: list[SynthesisOutput]
    pooled: np.ndarray
    observables: tuple[int, ...]


def synthesize_batch(
    books: dict[int, LayerBooks],
    tree: GaussianTree,
    layers: LayerDecomposition,
    draws: int,
    seed: int,
    noise_scale: float = 1.0,
) -> BatchResult:
    """Independent draws over fixed codebooks; draw ``d`` uses substream ``(seed, d)``."""
    if draws < 1:
        raise ValueError("draws must be at least 1")
    synth = Synthesizer(books, tree, layers, noise_scale)
    outputs = [synth.draw(seed, d) for d in range(draws)]
    pooled = np.concatenate([o.x_seq for o in outputs], axis=0)
    return BatchResult(outputs, pooled, tree.observables)


def samples_to_csv(batch: BatchResult) -> str:
    """One row per (draw, t) in draw-major order; columns are the observable ids."""
    lines = [",".join(str(i) for i in batch.observables)]
    lines += [",".join(repr(float(v)) for v in row) for row in batch.pooled]
    return "\n".join(lines) + "\n"


def chain_log_jsonl(batch: BatchResult) -> str:
    return "".join(json.dumps(o.chain_record()) + "\n" for o in batch.outputs)
