"""Layered random codebooks for Gaussian tree synthesis.

Codebooks are implicit: codeword ``i`` is a pure function of
``(seed, layer, i)`` and is regenerated on demand from its own Philox
substream. A codebook with astronomically many codewords therefore costs no
memory, and two codebooks built from the same inputs are bit-identical.
Materializing a codebook into an array, which is what export does, is
subject to the hard size caps.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .common import (
    LN2,
    STREAM_PROPAGATE,
    STREAM_SIGN,
    STREAM_TOP,
    ResourceCapError,
    substream,
    uniform_index,
)
from .tree_model import (
    GaussianTree,
    LayerChannel,
    LayerDecomposition,
    SignAssignment,
    SignDistribution,
    layer_channel,
    marginal_covariance,
    sign_index,
    sign_realizations,
)

MAX_MATERIALIZED_BITS = 30
MAX_LAYER_LATENTS = 10
_CACHE = 512
_MAGIC = b"LTSYNCB1"


def index_bits(N: int, rate: float) -> float:
    """Bits needed to index a codebook of block length ``N`` at ``rate`` nats."""
    if N < 1:
        raise ValueError("block length must be positive")
    if rate < 0 or not math.isfinite(rate):
        raise ValueError(f"rate must be finite and nonnegative, got {rate!r}")
    return N * rate / LN2


def codebook_size(N: int, rate: float) -> int:
    """``ceil(2 ** (N * rate / ln 2))`` as an exact Python integer."""
    bits = index_bits(N, rate)
    whole = math.floor(bits)
    frac = 2.0 ** (bits - whole)
    return math.ceil(Fraction(frac) * (1 << whole))


@dataclass(frozen=True)
class RateTuple:
    """Codebook rates for one layer, in nats per symbol."""

    R_Y: float
    R_B: float

    def __post_init__(self) -> None:
        if self.R_Y < 0 or self.R_B < 0:
            raise ValueError("rates must be nonnegative")


def scaled_rates(bounds: Sequence, multiplier: float) -> list[RateTuple]:
    """Per-layer rates ``multiplier`` times the bounds, clipped at zero.

    ``bounds[l]`` describes the codebooks of layer ``l + 1``; the sign rate
    is what the sum bound leaves after the codeword rate.
    """
    if multiplier < 0:
        raise ValueError("rate multiplier must be nonnegative")
    out = []
    for b in bounds:
        y = max(b.y_bound, 0.0)
        out.append(RateTuple(multiplier * y, multiplier * max(b.sum_bound - y, 0.0)))
    return out


def _check_layer_width(k: int) -> None:
    if k > MAX_LAYER_LATENTS:
        raise ResourceCapError(f"{k} latents in one layer exceeds the cap of {MAX_LAYER_LATENTS}")


def _check_materializable(N: int, rate: float) -> None:
    bits = index_bits(N, rate)
    if bits > MAX_MATERIALIZED_BITS:
        raise ResourceCapError(
            f"N*R = {bits:.2f} bits exceeds the materialization cap of {MAX_MATERIALIZED_BITS} bits"
        )


class SignCodebook:
    """``M`` sign codewords, each ``N`` i.i.d. sign vectors over the layer's latents."""

    def __init__(self, layer: int, N: int, rate: float, latents: Sequence[int], pi: SignDistribution, seed: int):
        _check_layer_width(len(latents))
        self.layer, self.N, self.rate, self.seed = layer, N, float(rate), int(seed)
        self.latents = tuple(latents)
        self.M = codebook_size(N, rate)
        self._p = pi.vector(self.latents)
        self.codeword = lru_cache(maxsize=_CACHE)(self._codeword)

    def _codeword(self, j: int) -> np.ndarray:
        if not 0 <= j < self.M:
            raise IndexError(f"sign codeword {j} out of range")
        rng = substream(self.seed, STREAM_SIGN, self.layer, j)
        u = rng.random((self.N, len(self.latents)))
        out = np.where(u < self._p, 1.0, -1.0)
        out.setflags(write=False)
        return out

    def realization_indices(self, j: int) -> np.ndarray:
        """Per-time index into the ``2**k_l`` sign realizations."""
        return sign_index(self.codeword(j))

    def materialize(self) -> np.ndarray:
        _check_materializable(self.N, self.rate)
        return np.stack([self.codeword(j) for j in range(self.M)])


def generate_sign_codebook(
    layer: int, N: int, rate: float, pi: SignDistribution, seed: int, latents: Sequence[int] | None = None
) -> SignCodebook:
    latents = tuple(pi.pi) if latents is None else latents
    return SignCodebook(layer, N, rate, latents, pi, seed)


class Codebook:
    """Gaussian codewords of one layer.

    ``codeword(i)`` has shape ``(N, 2**k_l, d_l)``: for every time step and
    every sign realization of the layer's latents, a vector over all nodes
    of the layer. ``provenance(i)`` is the ``(y_index, b_index)`` pair in
    the layer above, or ``None`` at the top.
    """

    layer: int
    N: int
    M: int
    rate: float
    seed: int
    nodes: tuple[int, ...]
    latents: tuple[int, ...]

    def __init__(self) -> None:
        self.codeword = lru_cache(maxsize=_CACHE)(self._codeword)

    def _codeword(self, i: int) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def provenance(self, i: int) -> tuple[int, int] | None:
        return None

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.M:
            raise IndexError(f"codeword {i} out of range for layer {self.layer}")

    @property
    def realizations(self) -> np.ndarray:
        return sign_realizations(len(self.latents))

    def resolve(self, i: int, sign_rows: np.ndarray) -> np.ndarray:
        """Codeword ``i`` read at the realization index given for each time step."""
        return self.codeword(i)[np.arange(self.N), sign_rows]

    def materialize(self) -> np.ndarray:
        _check_materializable(self.N, self.rate)
        return np.stack([self.codeword(i) for i in range(self.M)])

    def materialize_provenance(self) -> np.ndarray | None:
        if self.provenance(0) is None:
            return None
        _check_materializable(self.N, self.rate)
        return np.array([self.provenance(i) for i in range(self.M)], dtype=np.int64)


def _sign_vectors(nodes: Sequence[int], latents: Sequence[int]) -> np.ndarray:
    """Sign realizations over ``latents`` widened to all ``nodes`` (observables +1)."""
    real = sign_realizations(len(latents))
    pos = [nodes.index(y) for y in latents]
    out = np.ones((real.shape[0], len(nodes)))
    out[:, pos] = real
    return out


class TopCodebook(Codebook):
    def __init__(self, tree: GaussianTree, layers: LayerDecomposition, N: int, rate: float, seed: int):
        super().__init__()
        self.layer = layers.L
        self.N, self.rate, self.seed = N, float(rate), int(seed)
        self.nodes = layers.nodes_at(self.layer)
        self.latents = layers.latents_at(self.layer)
        _check_layer_width(len(self.latents))
        self.M = codebook_size(N, rate)
        self._chols = []
        for row in _sign_vectors(self.nodes, self.latents):
            sign = SignAssignment(
                {y: int(s) for y, s in zip(self.nodes, row) if y in self.latents}
            )
            self._chols.append(np.linalg.cholesky(marginal_covariance(tree, sign, self.nodes)))

    def _codeword(self, i: int) -> np.ndarray:
        self._check_index(i)
        rng = substream(self.seed, STREAM_TOP, self.layer, i)
        z = rng.standard_normal((self.N, len(self._chols), len(self.nodes)))
        out = np.empty_like(z)
        for r, chol in enumerate(self._chols):
            out[:, r, :] = z[:, r, :] @ chol.T
        out.setflags(write=False)
        return out


def generate_top_codebook(
    tree: GaussianTree, layers: LayerDecomposition, N: int, rate: float, seed: int
) -> TopCodebook:
    return TopCodebook(tree, layers, N, rate, seed)


class PropagatedCodebook(Codebook):
    """Codewords made by passing random upper codewords through the layer channel.

    ``noise_scale`` multiplies the channel noise; zero makes the layer a
    deterministic function of the chosen upper codeword (a test hook).
    """

    def __init__(
        self,
        upper: Codebook,
        upper_signs: SignCodebook,
        channel: LayerChannel,
        latents: Sequence[int],
        N: int,
        rate: float,
        seed: int,
        noise_scale: float = 1.0,
    ):
        super().__init__()
        if channel.layer != upper.layer - 1 or upper_signs.layer != upper.layer:
            raise ValueError("layer mismatch between channel and upper codebooks")
        if channel.upper != upper.nodes or N != upper.N or N != upper_signs.N:
            raise ValueError("upper codebook does not match the channel")
        self.layer = channel.layer
        self.N, self.rate, self.seed = N, float(rate), int(seed)
        self.upper, self.upper_signs, self.channel = upper, upper_signs, channel
        self.nodes = channel.lower
        self.latents = tuple(latents)
        if not set(self.latents) <= set(self.nodes):
            raise ValueError("latents must belong to the lower layer")
        _check_layer_width(len(self.latents))
        self.M = codebook_size(N, rate)
        self.noise_scale = float(noise_scale)
        self._low_signs = _sign_vectors(self.nodes, self.latents)
        self._up_signs = _sign_vectors(upper.nodes, upper.latents)
        self._noise_chol = _psd_cholesky(channel.noise_cov)

    def _picks(self, i: int) -> tuple[np.random.Generator, int, int]:
        self._check_index(i)
        rng = substream(self.seed, STREAM_PROPAGATE, self.layer, i)
        y_idx = uniform_index(rng, self.upper.M)
        b_idx = uniform_index(rng, self.upper_signs.M)
        return rng, y_idx, b_idx

    def provenance(self, i: int) -> tuple[int, int]:
        _, y_idx, b_idx = self._picks(i)
        return y_idx, b_idx

    def _codeword(self, i: int) -> np.ndarray:
        rng, y_idx, b_idx = self._picks(i)
        rows = self.upper_signs.realization_indices(b_idx)
        y_up = self.upper.resolve(y_idx, rows)
        canon = (self._up_signs[rows] * y_up) @ self.channel.A.T
        R, d = self._low_signs.shape
        noise = rng.standard_normal((self.N, R, d)) @ self._noise_chol.T
        out = self._low_signs[None, :, :] * (canon[:, None, :] + self.noise_scale * noise)
        out.setflags(write=False)
        return out


def _psd_cholesky(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor that tolerates exactly-zero noise rows (mirror edges)."""
    d = cov.shape[0]
    if d == 0:
        return np.zeros((0, 0))
    keep = np.diag(cov) > 1e-14
    out = np.zeros_like(cov)
    if keep.any():
        sub = cov[np.ix_(keep, keep)]
        out[np.ix_(keep, keep)] = np.linalg.cholesky(sub)
    return out


def propagate_layer(
    cb_upper: Codebook,
    scb_upper: SignCodebook,
    tree: GaussianTree,
    layers: LayerDecomposition,
    layer: int,
    rate: float,
    seed: int,
    noise_scale: float = 1.0,
) -> PropagatedCodebook:
    if cb_upper.layer != layer + 1:
        raise ValueError(f"upper codebook is at layer {cb_upper.layer}, expected {layer + 1}")
    channel = layer_channel(tree, layers, layer)
    return PropagatedCodebook(
        cb_upper, scb_upper, channel, layers.latents_at(layer), cb_upper.N, rate, seed, noise_scale
    )


@dataclass(frozen=True)
class LayerBooks:
    layer: int
    codebook: Codebook
    signs: SignCodebook
    rates: RateTuple


def build_all_codebooks(
    tree: GaussianTree,
    layers: LayerDecomposition,
    N: int,
    rates: Sequence[RateTuple],
    pi: SignDistribution,
    seed: int,
    noise_scale: float = 1.0,
) -> dict[int, LayerBooks]:
    """Codebooks for layers ``1..L``, generated top down.

    ``rates[l - 1]`` holds the rates of layer ``l``.
    """
    L = layers.L
    if len(rates) != L:
        raise ValueError(f"need rates for {L} layers, got {len(rates)}")
    for l in range(1, L + 1):
        _check_layer_width(len(layers.latents_at(l)))
    books: dict[int, LayerBooks] = {}
    cb: Codebook = generate_top_codebook(tree, layers, N, rates[L - 1].R_Y, seed)
    for l in range(L, 0, -1):
        if l < L:
            up = books[l + 1]
            cb = propagate_layer(up.codebook, up.signs, tree, layers, l, rates[l - 1].R_Y, seed, noise_scale)
        scb = SignCodebook(l, N, rates[l - 1].R_B, layers.latents_at(l), pi, seed)
        books[l] = LayerBooks(l, cb, scb, rates[l - 1])
    return books


# ----- binary container --------------------------------------------------------


def write_container(path: str | Path, array: np.ndarray) -> None:
    """Little-endian float64 payload behind a magic tag and a dimension header."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = _MAGIC + struct.pack("<Q", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_container(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not a codebook container")
    (ndim,) = struct.unpack_from("<Q", raw, 8)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 16)
    offset = 16 + 8 * ndim
    return np.frombuffer(raw, dtype="<f8", offset=offset).reshape(shape).copy()


def export_codebooks(books: dict[int, LayerBooks], directory: str | Path) -> list[Path]:
    """Write every layer's codewords, sign codewords and provenance plus a manifest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for l, lb in sorted(books.items()):
        cb, scb = lb.codebook, lb.signs
        write_container(out / f"layer{l}_codewords.bin", cb.materialize())
        write_container(out / f"layer{l}_signs.bin", scb.materialize())
        files = [out / f"layer{l}_codewords.bin", out / f"layer{l}_signs.bin"]
        prov = cb.materialize_provenance()
        if prov is not None:
            write_container(out / f"layer{l}_provenance.bin", prov.astype(float))
            files.append(out / f"layer{l}_provenance.bin")
        manifest = {
            "layer": l,
            "N": cb.N,
            "M_Y": cb.M,
            "M_B": scb.M,
            "seed": cb.seed,
            "rates": {"R_Y": lb.rates.R_Y, "R_B": lb.rates.R_B},
            "nodes": list(cb.nodes),
            "latents": list(cb.latents),
        }
        (out / f"layer{l}_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        written += files + [out / f"layer{l}_manifest.json"]
    return written
