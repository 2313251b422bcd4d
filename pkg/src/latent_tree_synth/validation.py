"""Empirical checks on synthesized samples and on sign invariance."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .codebook import build_all_codebooks, index_bits, scaled_rates
from .common import ResourceCapError
from .info_quantities import DEFAULT_MC_SAMPLES, all_rate_bounds, mutual_info_direct
from .synthesis import synthesize_batch
from .transforms import normalize_for_synthesis
from .tree_model import (
    GaussianTree,
    LayerDecomposition,
    SignAssignment,
    SignDistribution,
    assign_layers,
    observable_covariance,
    sign_realizations,
)

DEFAULT_BINS = 50
DEFAULT_RANGE = (-4.5, 4.5)
MIN_BINS = 10
MIN_RANGE_SDS = 4.0
NEGATIVE_ARM_MAX = 0.25
MAX_SUITE_LATENTS = 16
_QUAD_NODES = 16


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma_hat: np.ndarray
    samples: int
    frobenius_error: float | None = None
    max_abs_error: float | None = None


def empirical_covariance(samples: np.ndarray, target: np.ndarray | None = None) -> CovarianceEstimate:
    """Unbiased sample covariance of the rows, with errors against ``target``."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-D array of rows")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    sigma_hat = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    if target is None:
        return CovarianceEstimate(sigma_hat, x.shape[0])
    diff = sigma_hat - np.asarray(target, dtype=float)
    return CovarianceEstimate(
        sigma_hat, x.shape[0], float(np.linalg.norm(diff, "fro")), float(np.abs(diff).max())
    )


def _cell_masses_1d(edges: np.ndarray, sd: float) -> np.ndarray:
    return np.diff(norm.cdf(edges / sd))


def _cell_masses_2d(edges: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Bivariate Gaussian mass of each square cell.

    The first coordinate is integrated by Gauss-Legendre inside each bin;
    the second uses the exact conditional normal CDF.
    """
    sx = np.sqrt(cov[0, 0])
    slope = cov[0, 1] / cov[0, 0]
    cond_sd = np.sqrt(max(cov[1, 1] - slope * cov[0, 1], 0.0))
    t, w = np.polynomial.legendre.leggauss(_QUAD_NODES)
    lo, hi = edges[:-1, None], edges[1:, None]
    xs = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
    wx = 0.5 * (hi - lo) * w * norm.pdf(xs, scale=sx)
    mean_y = slope * xs
    if cond_sd == 0.0:
        cdf = (edges[None, None, :] >= mean_y[..., None]).astype(float)
    else:
        cdf = norm.cdf((edges[None, None, :] - mean_y[..., None]) / cond_sd)
    strip = np.diff(cdf, axis=-1)
    return np.einsum("iq,iqj->ij", wx, strip)


def histogram_tv(
    samples: np.ndarray,
    target: np.ndarray,
    dims: Sequence[int],
    bins: int = DEFAULT_BINS,
    value_range: tuple[float, float] = DEFAULT_RANGE,
) -> float:
    """Binned total variation between samples and a zero-mean Gaussian target.

    ``dims`` picks one or two columns of ``samples`` and the matching block of
    ``target``. Mass outside ``value_range`` counts as one extra cell.
    """
    dims = list(dims)
    if len(dims) not in (1, 2):
        raise ValueError("dims must name 1 or 2 columns")
    if bins < MIN_BINS:
        raise ValueError(f"bins must be at least {MIN_BINS}")
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("empty sample set")
    cov = np.asarray(target, dtype=float)[np.ix_(dims, dims)]
    lo, hi = value_range
    sds = np.sqrt(np.diag(cov))
    if lo > -MIN_RANGE_SDS * sds.max() or hi < MIN_RANGE_SDS * sds.max():
        raise ValueError(f"range must cover at least {MIN_RANGE_SDS:g} standard deviations")
    edges = np.linspace(lo, hi, bins + 1)
    sub = x[:, dims]
    if len(dims) == 1:
        p = _cell_masses_1d(edges, sds[0])
        counts, _ = np.histogram(sub[:, 0], bins=edges)
    else:
        p = _cell_masses_2d(edges, cov)
        counts, _, _ = np.histogram2d(sub[:, 0], sub[:, 1], bins=[edges, edges])
    q = counts / sub.shape[0]
    outside = abs((1.0 - q.sum()) - max(1.0 - p.sum(), 0.0))
    return float(min(0.5 * (np.abs(q - p).sum() + outside), 1.0))


@dataclass(frozen=True)
class SignInvarianceReport:
    ok: bool
    assignments: int
    max_covariance_deviation: float
    max_mi_deviation: float
    failures: tuple[str, ...] = ()


def sign_invariance_suite(tree: GaussianTree, atol: float = 1e-12) -> SignInvarianceReport:
    """Check every sign assignment of the latents against the magnitude model.

    The reference covariance is the entrywise magnitude of the all-plus
    covariance, which a tree with valid edge magnitudes reproduces exactly.
    """
    k = tree.k
    if k > MAX_SUITE_LATENTS:
        raise ResourceCapError(f"{k} latents exceeds the enumeration cap of {MAX_SUITE_LATENTS}")
    plus = SignAssignment.all_plus(tree)
    reference = np.abs(observable_covariance(tree, plus))
    mi_ref = mutual_info_direct(tree, plus).value
    cov_dev = mi_dev = 0.0
    failures = []
    for row in sign_realizations(k):
        sign = SignAssignment.for_tree(tree, row)
        sigma = observable_covariance(tree, sign)
        dev = float(np.abs(sigma - reference).max())
        mdev = abs(mutual_info_direct(tree, sign).value - mi_ref)
        cov_dev, mi_dev = max(cov_dev, dev), max(mi_dev, mdev)
        if dev > atol or mdev > atol:
            failures.append("".join("+" if s > 0 else "-" for s in row))
    return SignInvarianceReport(not failures, 2**k, cov_dev, mi_dev, tuple(failures))


@dataclass
class SweepPoint:
    multiplier: float
    N: int
    draws: int
    samples: int
    frobenius_error: float
    max_abs_entry_error: float
    tv_1d: dict[str, float]
    tv_2d: dict[str, float]
    index_bits: list[dict[str, float]]


@dataclass
class ConvergenceReport:
    observables: list[int]
    seed: int
    mc_samples: int
    bins: int
    value_range: list[float]
    rate_bounds: list[dict]
    points: list[SweepPoint] = field(default_factory=list)

    def arm(self, multiplier: float) -> list[SweepPoint]:
        return [p for p in self.points if p.multiplier == multiplier]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """Tidy rows: multiplier, N, draws, metric, value."""
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["multiplier", "N", "draws", "metric", "value"])
        for p in self.points:
            rows = [("samples", p.samples), ("frobenius_error", p.frobenius_error),
                    ("max_abs_entry_error", p.max_abs_entry_error)]
            rows += [(f"tv_1d:{k}", v) for k, v in p.tv_1d.items()]
            rows += [(f"tv_2d:{k}", v) for k, v in p.tv_2d.items()]
            for rec in p.index_bits:
                rows += [(f"bits_Y:layer{rec['layer']}", rec["Y"]), (f"bits_B:layer{rec['layer']}", rec["B"])]
            for metric, value in rows:
                out.writerow([repr(p.multiplier), p.N, p.draws, metric, repr(value)])
        return buf.getvalue()


def sweep_multipliers(multipliers: Sequence[float]) -> list[float]:
    """The requested multipliers plus a zero-rate arm when none is low enough."""
    mults = [float(m) for m in multipliers]
    if not any(m <= NEGATIVE_ARM_MAX for m in mults):
        mults.append(0.0)
    return mults


def convergence_sweep(
    tree: GaussianTree,
    multipliers: Sequence[float] = (1.2,),
    ns: Sequence[int] = (64, 256, 1024),
    draws: int = 200,
    seed: int = 0,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    bins: int = DEFAULT_BINS,
    value_range: tuple[float, float] = DEFAULT_RANGE,
    layers: LayerDecomposition | None = None,
) -> ConvergenceReport:
    """Synthesize at every (multiplier, N) point and score the pooled samples.

    Rate bounds are estimated once. Every grid point reuses ``seed`` for both
    its codebooks and its draws.
    """
    ns = [int(n) for n in ns]
    if any(b <= a for a, b in zip(ns, ns[1:])) or not ns or ns[0] < 1:
        raise ValueError("N grid must be positive and strictly increasing")
    if draws < 1:
        raise ValueError("draws must be at least 1")
    target = observable_covariance(tree)
    norm_tree, norm_layers, _ = normalize_for_synthesis(tree, layers or assign_layers(tree))
    pi = SignDistribution.uniform(norm_tree.latents)
    bounds = all_rate_bounds(norm_tree, norm_layers, pi, mc_samples, seed)
    obs = list(tree.observables)
    report = ConvergenceReport(obs, seed, mc_samples, bins, list(value_range), [b.to_record() for b in bounds])
    for mult in sweep_multipliers(multipliers):
        rates = scaled_rates(bounds, mult)
        for N in ns:
            books = build_all_codebooks(norm_tree, norm_layers, N, rates, pi, seed)
            batch = synthesize_batch(books, norm_tree, norm_layers, draws, seed)
            # Pseudo nodes never mirror into observables, so columns match.
            est = empirical_covariance(batch.pooled, target)
            tv1 = {str(i): histogram_tv(batch.pooled, target, [c], bins, value_range) for c, i in enumerate(obs)}
            tv2 = {
                f"{obs[c]}-{obs[c + 1]}": histogram_tv(batch.pooled, target, [c, c + 1], bins, value_range)
                for c in range(len(obs) - 1)
            }
            bits = [
                {"layer": l, "Y": index_bits(N, r.R_Y), "B": index_bits(N, r.R_B)}
                for l, r in enumerate(rates, start=1)
            ]
            report.points.append(
                SweepPoint(mult, N, draws, batch.pooled.shape[0], est.frobenius_error, est.max_abs_error, tv1, tv2, bits)
            )
    return report
