"""Mutual information of latent Gaussian trees and per-layer rate bounds.

Everything is in nats. Closed forms use log-determinants; quantities that
involve the sign mixture are Monte Carlo estimates with a reported standard
error.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import networkx as nx
import numpy as np
from scipy.special import logsumexp

from .common import (
    LN2,
    STREAM_MIXTURE,
    STREAM_RATE,
    GaussianKernel,
    ResourceCapError,
    gaussian_entropy,
    logdet,
    substream,
)
from .tree_model import (
    GaussianTree,
    LayerDecomposition,
    SignAssignment,
    SignDistribution,
    layer_channel,
    marginal_covariance,
)

CLOSED_FORM = "closed_form"
MONTE_CARLO = "monte_carlo"
DEFAULT_MC_SAMPLES = 100_000
MIN_MC_SAMPLES = 100
_CHUNK = 8192


@dataclass(frozen=True)
class MIEstimate:
    value: float
    stderr: float
    method: str

    def __post_init__(self) -> None:
        if self.method not in (CLOSED_FORM, MONTE_CARLO):
            raise ValueError(f"unknown method {self.method!r}")
        if (self.stderr == 0.0) != (self.method == CLOSED_FORM):
            raise ValueError("stderr must be zero exactly for closed-form values")


@dataclass(frozen=True)
class RateBounds:
    """Lower bounds on the rates of the codebooks one layer above ``layer``."""

    layer: int
    sum_bound: float
    y_bound: float
    y_bound_stderr: float
    samples: int
    seed: int

    def to_record(self, bits: bool = False) -> dict:
        scale = 1.0 / LN2 if bits else 1.0
        unit = "bits" if bits else "nats"
        return {
            "layer": self.layer,
            f"sum_bound_{unit}": self.sum_bound * scale,
            f"y_bound_{unit}": self.y_bound * scale,
            "stderr": self.y_bound_stderr * scale,
            "method": MONTE_CARLO,
            "seed": self.seed,
            "samples": self.samples,
        }


class TripleError(ValueError):
    """No usable observable triple, or a triple that is not tree-representable."""


def edge_corr_squared(sigma_x: np.ndarray, i: int, j: int, k: int) -> float:
    """Squared correlation between observable ``i`` and its latent parent.

    Computed from three observable correlations as ``r_ij * r_ik / r_jk``.
    """
    if len({i, j, k}) != 3:
        raise TripleError("indices must be distinct")
    denom = sigma_x[j, k]
    if denom == 0.0:
        raise TripleError(f"zero correlation between {j} and {k}")
    val = float(sigma_x[i, j] * sigma_x[i, k] / denom)
    if not 0.0 < val < 1.0:
        raise TripleError(f"value {val} outside (0, 1): input is not tree-representable")
    return val


def valid_triples(tree: GaussianTree, i: int) -> list[tuple[int, int]]:
    """Index pairs ``(j, k)`` whose paths to observable ``i`` meet at its parent.

    Indices refer to positions in ``tree.observables``. Requires observable
    ``i`` to be a leaf.
    """
    obs = tree.observables
    xi = obs[i]
    if tree.degree(xi) != 1:
        raise TripleError(f"observable {xi} is not a leaf")
    (parent,) = tree.neighbors(xi)
    g = tree.graph.copy()
    g.remove_node(parent)
    branch = {}
    for comp_id, comp in enumerate(nx.connected_components(g)):
        for node in comp:
            branch[node] = comp_id
    others = [m for m in range(len(obs)) if m != i]
    return [
        (j, k)
        for j, k in itertools.combinations(others, 2)
        if len({branch[xi], branch[obs[j]], branch[obs[k]]}) == 3
    ]


def mutual_info_leaf(sigma_x: np.ndarray, tree: GaussianTree) -> MIEstimate:
    """Closed-form I(X; Y) for trees whose observables are all leaves.

    Uses the first valid triple in index order for every observable.
    """
    if not tree.all_observables_leaves:
        raise TripleError("every observable must be a leaf")
    denom = 0.0
    for i in range(tree.n):
        triples = valid_triples(tree, i)
        if not triples:
            raise TripleError(f"no valid triple for observable {tree.observables[i]}")
        j, k = triples[0]
        denom += np.log1p(-edge_corr_squared(sigma_x, i, j, k))
    return MIEstimate(float(0.5 * (logdet(sigma_x) - denom)), 0.0, CLOSED_FORM)


def mutual_info_direct(tree: GaussianTree, sign: SignAssignment | None = None) -> MIEstimate:
    """Closed-form I(X; Y) from the joint and marginal determinants."""
    sign = sign or SignAssignment.all_plus(tree)
    order = tree.observables + tree.latents
    full = marginal_covariance(tree, sign, order)
    n = tree.n
    val = 0.5 * (logdet(full[:n, :n]) + logdet(full[n:, n:]) - logdet(full))
    return MIEstimate(val, 0.0, CLOSED_FORM)


def _sample_signs(rng: np.random.Generator, p: np.ndarray, size: int) -> np.ndarray:
    u = rng.random((size, p.size))
    return np.where(u < p, 1.0, -1.0)


def _log_weights(eta: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(eta)


def _chunks(total: int):
    start = 0
    while start < total:
        stop = min(total, start + _CHUNK)
        yield start, stop
        start = stop


def _posterior_mixture_logpdf(
    upper: np.ndarray,
    target: np.ndarray,
    realizations: np.ndarray,
    log_eta: np.ndarray,
    prior: GaussianKernel,
    mean_map: np.ndarray,
    noise: GaussianKernel,
) -> np.ndarray:
    """log sum_r P(r | upper) N(target; mean_map @ (D_r upper), noise).

    ``P(r | upper)`` is proportional to ``eta_r N(D_r upper; 0, prior)``.
    """
    flipped = upper[:, None, :] * realizations[None, :, :]
    log_prior = log_eta[None, :] + prior.logpdf(flipped)
    log_post = log_prior - logsumexp(log_prior, axis=1, keepdims=True)
    means = flipped @ mean_map.T
    log_lik = noise.logpdf(target[:, None, :] - means)
    return logsumexp(log_post + log_lik, axis=1)


def mixture_mi(
    tree: GaussianTree,
    pi: SignDistribution,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> MIEstimate:
    """Monte Carlo estimate of I(X; Y) when the latent signs are random.

    Samples ``(x, y, b)`` from the joint and averages ``log p(x|y) - log p(x)``.
    The random stream depends only on ``seed``, so estimates at different
    ``pi`` share common random numbers.
    """
    if mc_samples < MIN_MC_SAMPLES:
        raise ValueError(f"mc_samples must be at least {MIN_MC_SAMPLES}")
    obs, lat = tree.observables, tree.latents
    full = marginal_covariance(tree, SignAssignment.all_plus(tree), obs + lat)
    n = len(obs)
    s_xx, s_xy, s_yy = full[:n, :n], full[:n, n:], full[n:, n:]
    reg = np.linalg.solve(s_yy, s_xy.T).T
    cond = s_xx - reg @ s_xy.T
    cond = 0.5 * (cond + cond.T)
    prior, noise, marg = GaussianKernel(s_yy), GaussianKernel(cond), GaussianKernel(s_xx)
    realizations, eta = pi.weights(lat)
    log_eta = _log_weights(eta)
    p = pi.vector(lat)

    rng = substream(seed, STREAM_MIXTURE)
    terms = np.empty(mc_samples)
    for lo, hi in _chunks(mc_samples):
        m = hi - lo
        b = _sample_signs(rng, p, m)
        y = b * (rng.standard_normal((m, len(lat))) @ prior.chol.T)
        x = (b * y) @ reg.T + rng.standard_normal((m, n)) @ noise.chol.T
        log_cond = _posterior_mixture_logpdf(y, x, realizations, log_eta, prior, reg, noise)
        terms[lo:hi] = log_cond - marg.logpdf(x)
    return MIEstimate(float(terms.mean()), float(terms.std(ddof=1) / np.sqrt(mc_samples)), MONTE_CARLO)


def layer_sum_bound(
    tree: GaussianTree, layers: LayerDecomposition, layer: int, sign: SignAssignment | None = None
) -> float:
    """I(Y^(l+1), B^(l+1); Y^(l) | B^(l) = b) in closed form."""
    ch = layer_channel(tree, layers, layer, sign)
    sigma = marginal_covariance(tree, sign or SignAssignment.all_plus(tree), ch.lower)
    return 0.5 * (logdet(sigma) - logdet(ch.noise_cov))


def layer_rate_bounds(
    tree: GaussianTree,
    layers: LayerDecomposition,
    layer: int,
    pi: SignDistribution,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> RateBounds:
    """Rate bounds for the codebooks at ``layer + 1``.

    ``sum_bound`` is closed form. ``y_bound`` is ``h(Y^l | B^l)`` (Gaussian,
    exact) minus a plug-in Monte Carlo estimate of ``h(Y^l | Y^(l+1), B^l)``,
    whose density is a mixture over the upper-layer signs.
    """
    if mc_samples < MIN_MC_SAMPLES:
        raise ValueError(f"mc_samples must be at least {MIN_MC_SAMPLES}")
    ch = layer_channel(tree, layers, layer)
    sum_bound = layer_sum_bound(tree, layers, layer)
    plus = SignAssignment.all_plus(tree)
    sigma_low = marginal_covariance(tree, plus, ch.lower)
    sigma_up = marginal_covariance(tree, plus, ch.upper)

    up_lat = [i for i, node in enumerate(ch.upper) if tree.is_latent(node)]
    p_up = pi.vector([ch.upper[i] for i in up_lat])
    real_up, eta_up = pi.weights([ch.upper[i] for i in up_lat])
    full_real = np.ones((len(real_up), len(ch.upper)))
    full_real[:, up_lat] = real_up
    log_eta = _log_weights(eta_up)

    prior, noise = GaussianKernel(sigma_up), GaussianKernel(ch.noise_cov)
    rng = substream(seed, STREAM_RATE, layer)
    terms = np.empty(mc_samples)
    for lo, hi in _chunks(mc_samples):
        m = hi - lo
        s_up = np.ones((m, len(ch.upper)))
        s_up[:, up_lat] = _sample_signs(rng, p_up, m)
        y_up = s_up * (rng.standard_normal((m, len(ch.upper))) @ prior.chol.T)
        # Lower signs only flip coordinates; in the frame D_low y_low the
        # conditional density no longer depends on them.
        canon = (s_up * y_up) @ ch.A.T + rng.standard_normal((m, len(ch.lower))) @ noise.chol.T
        terms[lo:hi] = _posterior_mixture_logpdf(y_up, canon, full_real, log_eta, prior, ch.A, noise)
    cond_entropy = -terms.mean()
    y_bound = gaussian_entropy(sigma_low) - cond_entropy
    stderr = float(terms.std(ddof=1) / np.sqrt(mc_samples))
    return RateBounds(layer, float(sum_bound), float(y_bound), stderr, mc_samples, seed)


def all_rate_bounds(
    tree: GaussianTree,
    layers: LayerDecomposition,
    pi: SignDistribution,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> list[RateBounds]:
    return [layer_rate_bounds(tree, layers, l, pi, mc_samples, seed) for l in range(layers.L)]


@dataclass(frozen=True)
class GridPoint:
    pi: tuple[float, ...]
    value: float
    stderr: float


@dataclass(frozen=True)
class SignOptimalityReport:
    grid: tuple[GridPoint, ...]
    argmin: tuple[float, ...]
    minimum: float
    uniform_value: float
    uniform_stderr: float
    uniform_within_2se: bool
    max_flip_asymmetry_se: float
    mc_samples: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


MAX_GRID_LATENTS = 3


def uniform_sign_optimality_check(
    tree: GaussianTree,
    resolution: int = 9,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> SignOptimalityReport:
    """Evaluate :func:`mixture_mi` on a grid over pi and locate the minimum.

    The grid uses ``resolution`` interior points per latent,
    ``i / (resolution + 1)``. The uniform point passes when its estimate is
    within two of its standard errors of the grid minimum. The report also
    gives the largest gap between ``pi`` and ``1 - pi`` in standard errors.
    """
    if tree.k > MAX_GRID_LATENTS:
        raise ResourceCapError(f"grid over {tree.k} latents exceeds the cap of {MAX_GRID_LATENTS}")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    axis = [(i + 1) / (resolution + 1) for i in range(resolution)]
    cache: dict[tuple[float, ...], MIEstimate] = {}

    def evaluate(point: tuple[float, ...]) -> MIEstimate:
        key = tuple(round(v, 12) for v in point)
        if key not in cache:
            cache[key] = mixture_mi(tree, SignDistribution(dict(zip(tree.latents, point))), mc_samples, seed)
        return cache[key]

    grid = []
    for point in itertools.product(axis, repeat=tree.k):
        est = evaluate(point)
        grid.append(GridPoint(tuple(point), est.value, est.stderr))
    best = min(grid, key=lambda g: g.value)
    uni = evaluate(tuple(0.5 for _ in tree.latents))
    asym = 0.0
    for g in grid:
        mirror = evaluate(tuple(1.0 - v for v in g.pi))
        se = max(g.stderr, mirror.stderr)
        asym = max(asym, abs(g.value - mirror.value) / se)
    return SignOptimalityReport(
        tuple(grid),
        best.pi,
        best.value,
        uni.value,
        uni.stderr,
        bool(uni.value - best.value <= 2.0 * uni.stderr),
        float(asym),
        mc_samples,
        seed,
    )
