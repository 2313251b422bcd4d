"""Command-line driver: ``latent-tree-synth <command> --tree tree.json ...``.

Machine-readable results go to files under ``--out`` or to stdout; short
summaries go to stderr. Exit codes: 0 success, 1 validation failure or bad
tree, 2 usage error, 3 resource cap exceeded.
"""

from __future__ import annotations

import functools
import json
import sys
import warnings
from pathlib import Path

import click
import numpy as np

from .codebook import build_all_codebooks, scaled_rates
from .common import LN2, ResourceCapError
from .info_quantities import DEFAULT_MC_SAMPLES, all_rate_bounds, uniform_sign_optimality_check
from .synthesis import chain_log_jsonl, samples_to_csv, synthesize_batch
from .transforms import normalize_for_synthesis
from .tree_model import (
    NonMinimalTreeWarning,
    SignDistribution,
    TreeSpecError,
    load_tree,
    observable_covariance,
    validate_correlation_space,
)
from .validation import DEFAULT_BINS, convergence_sweep, sign_invariance_suite

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3


def _note(msg: str) -> None:
    click.echo(msg, err=True)


def _guarded(fn):
    """Map library errors onto exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            code = fn(*args, **kwargs)
        except ResourceCapError as exc:
            _note(f"resource cap: {exc}")
            sys.exit(EXIT_CAP)
        except TreeSpecError as exc:
            _note(f"invalid tree: {exc}")
            sys.exit(EXIT_FAILED)
        sys.exit(code or EXIT_OK)

    return wrapper


def _load(path: str):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonMinimalTreeWarning)
        tree, layers = load_tree(path)
    minimal = not any(issubclass(w.category, NonMinimalTreeWarning) for w in caught)
    if not minimal:
        _note("warning: tree is not minimal")
    return tree, layers, minimal


def _emit(text: str, out: str | None, name: str) -> None:
    if out is None:
        click.echo(text, nl=False)
        return
    directory = Path(out)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / name).write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


tree_option = click.option("--tree", "tree_path", required=True, type=click.Path(exists=True, dir_okay=False))
seed_option = click.option("--seed", required=True, type=click.IntRange(min=0, max=2**64 - 1))
mc_option = click.option("--mc-samples", default=DEFAULT_MC_SAMPLES, show_default=True, type=click.IntRange(min=100))
out_option = click.option("--out", type=click.Path(file_okay=False), default=None)


@click.group()
def main() -> None:
    """Synthesize and check Gaussian vectors structured by a latent tree."""


@main.command()
@tree_option
@click.option("--covariance", "cov_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="CSV covariance (id header row) to check instead of the tree's own.")
@out_option
@_guarded
def validate(tree_path, cov_path, out):
    """Correlation-space, minimality and sign-invariance checks."""
    tree, layers, minimal = _load(tree_path)
    if cov_path is None:
        sigma = observable_covariance(tree)
    else:
        sigma = np.loadtxt(cov_path, delimiter=",", skiprows=1, ndmin=2)
    space = validate_correlation_space(sigma)
    suite = sign_invariance_suite(tree)
    report = {
        "n": tree.n,
        "k": tree.k,
        "layers": layers.L,
        "minimal": minimal,
        "correlation_space": {"ok": space.ok, "violations": [list(v) for v in space.violations]},
        "sign_invariance": {
            "ok": suite.ok,
            "assignments": suite.assignments,
            "max_covariance_deviation": suite.max_covariance_deviation,
            "max_mi_deviation": suite.max_mi_deviation,
        },
    }
    _emit(_dumps(report), out, "validate.json")
    ok = space.ok and suite.ok
    for v in space.violations:
        _note(f"violated triple {v}")
    _note("validate: pass" if ok else "validate: FAIL")
    return EXIT_OK if ok else EXIT_FAILED


@main.command()
@tree_option
@seed_option
@mc_option
@click.option("--pi", default=0.5, show_default=True, type=click.FloatRange(0.0, 1.0),
              help="Probability of a plus sign, shared by all latents.")
@click.option("--bits", is_flag=True, help="Report bits instead of nats.")
@out_option
@_guarded
def rates(tree_path, seed, mc_samples, pi, bits, out):
    """Per-layer rate bounds of the normalized tree."""
    tree, layers, _ = _load(tree_path)
    tree, layers, _ = normalize_for_synthesis(tree, layers)
    dist = SignDistribution({i: pi for i in tree.latents})
    bounds = all_rate_bounds(tree, layers, dist, mc_samples, seed)
    _emit(_dumps([b.to_record(bits) for b in bounds]), out, "rates.json")
    unit = "bits" if bits else "nats"
    for b in bounds:
        scale = 1 / LN2 if bits else 1.0
        _note(f"layer {b.layer}: sum {b.sum_bound * scale:.4f} {unit}, codeword {b.y_bound * scale:.4f} {unit}")
    return EXIT_OK


@main.command()
@tree_option
@seed_option
@click.option("--n", "N", default=256, show_default=True, type=click.IntRange(min=1))
@click.option("--rate-mult", default=1.2, show_default=True, type=click.FloatRange(min=0.0))
@click.option("--draws", default=100, show_default=True, type=click.IntRange(min=1))
@mc_option
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def synth(tree_path, seed, N, rate_mult, draws, mc_samples, out):
    """Synthesize ``draws`` blocks of length N and write samples and logs."""
    tree, layers, _ = _load(tree_path)
    norm_tree, norm_layers, log = normalize_for_synthesis(tree, layers)
    pi = SignDistribution.uniform(norm_tree.latents)
    bounds = all_rate_bounds(norm_tree, norm_layers, pi, mc_samples, seed)
    layer_rates = scaled_rates(bounds, rate_mult)
    books = build_all_codebooks(norm_tree, norm_layers, N, layer_rates, pi, seed)
    batch = synthesize_batch(books, norm_tree, norm_layers, draws, seed)
    _emit(samples_to_csv(batch), out, "samples.csv")
    _emit(chain_log_jsonl(batch), out, "chain.jsonl")
    _emit(log.to_jsonl(), out, "transform_log.jsonl")
    rate_doc = {
        "rate_mult": rate_mult,
        "bounds": [b.to_record() for b in bounds],
        "rates": [{"layer": l, "R_Y": r.R_Y, "R_B": r.R_B} for l, r in enumerate(layer_rates, start=1)],
    }
    _emit(_dumps(rate_doc), out, "rates.json")
    _emit(norm_tree.to_json(), out, "normalized_tree.json")
    _note(f"synth: {batch.pooled.shape[0]} rows x {batch.pooled.shape[1]} observables, {len(log)} rewrites")
    return EXIT_OK


@main.command()
@tree_option
@seed_option
@click.option("--n", "ns", multiple=True, type=click.IntRange(min=1), help="Block length; repeat for a grid.")
@click.option("--rate-mult", "mults", multiple=True, type=click.FloatRange(min=0.0), help="Repeatable.")
@click.option("--draws", default=200, show_default=True, type=click.IntRange(min=1))
@mc_option
@click.option("--bins", default=DEFAULT_BINS, show_default=True, type=click.IntRange(min=10))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def sweep(tree_path, seed, ns, mults, draws, mc_samples, bins, out):
    """Convergence sweep over N and rate multipliers."""
    tree, layers, _ = _load(tree_path)
    ns = sorted(set(ns or (64, 256, 1024)))
    report = convergence_sweep(tree, mults or (1.2,), ns, draws, seed, mc_samples, bins, layers=layers)
    _emit(report.to_json(), out, "sweep.json")
    _emit(report.to_csv(), out, "sweep.csv")
    for p in report.points:
        _note(f"mult {p.multiplier:g} N {p.N}: frobenius {p.frobenius_error:.4f}")
    return EXIT_OK


@main.command()
@tree_option
@seed_option
@click.option("--grid", default=9, show_default=True, type=click.IntRange(min=1), help="Points per latent axis.")
@mc_option
@out_option
@_guarded
def signopt(tree_path, seed, grid, mc_samples, out):
    """Check that uniform signs minimize the mixture mutual information."""
    tree, _, _ = _load(tree_path)
    report = uniform_sign_optimality_check(tree, grid, mc_samples, seed)
    _emit(_dumps(report.to_dict()), out, "signopt.json")
    _note(
        f"signopt: uniform {report.uniform_value:.4f} +/- {report.uniform_stderr:.4f}, "
        f"grid minimum {report.minimum:.4f} at {report.argmin}"
    )
    return EXIT_OK if report.uniform_within_2se else EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    main()
