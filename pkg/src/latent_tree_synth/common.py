"""Shared helpers: resource caps, PRNG substreams and Gaussian log densities."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

LN2 = float(np.log(2.0))

# Stream domains keep substreams of different consumers disjoint.
STREAM_MIXTURE = 1
STREAM_RATE = 2
STREAM_TOP = 3
STREAM_SIGN = 4
STREAM_PROPAGATE = 5
STREAM_SYNTH = 6
STREAM_SWEEP = 7


class ResourceCapError(RuntimeError):
    """A requested size exceeds a hard resource cap."""


def substream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and a tuple of nonnegative integers.

    Each key component is encoded as its 32-bit word count followed by the
    words, so arbitrarily large indices map to distinct streams.
    """
    words: list[int] = []
    for part in key:
        part = int(part)
        if part < 0:
            raise ValueError("substream key components must be nonnegative")
        chunk = [part & 0xFFFFFFFF]
        part >>= 32
        while part:
            chunk.append(part & 0xFFFFFFFF)
            part >>= 32
        words += [len(chunk), *chunk]
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(words))
    return np.random.Generator(np.random.Philox(seq))


def uniform_index(rng: np.random.Generator, m: int) -> int:
    """Uniform integer in ``[0, m)`` for any positive Python int ``m``."""
    if m <= 0:
        raise ValueError("m must be positive")
    if m <= 2**63:
        return int(rng.integers(m))
    nbytes = (m.bit_length() + 7) // 8
    excess = nbytes * 8 - m.bit_length()
    while True:
        cand = int.from_bytes(rng.bytes(nbytes), "little") >> excess
        if cand < m:
            return cand


def logdet(sigma: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return float(val)


def gaussian_entropy(sigma: np.ndarray) -> float:
    d = sigma.shape[0]
    return 0.5 * (d * np.log(2 * np.pi * np.e) + logdet(sigma))


class GaussianKernel:
    """Zero-mean Gaussian log density with a fixed covariance."""

    def __init__(self, sigma: np.ndarray):
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        self.dim = sigma.shape[0]
        if self.dim:
            self.chol = np.linalg.cholesky(sigma)
            self.half_logdet = float(np.log(np.diag(self.chol)).sum())
        else:
            self.chol = np.zeros((0, 0))
            self.half_logdet = 0.0
        self.const = -0.5 * self.dim * np.log(2 * np.pi) - self.half_logdet

    def logpdf(self, resid: np.ndarray) -> np.ndarray:
        """Log density at residuals; the last axis is the dimension."""
        if self.dim == 0:
            return np.zeros(resid.shape[:-1])
        flat = resid.reshape(-1, self.dim)
        white = solve_triangular(self.chol, flat.T, lower=True)
        quad = np.einsum("ij,ij->j", white, white)
        return (self.const - 0.5 * quad).reshape(resid.shape[:-1])
