"""Reference computations that avoid the library's own code paths."""

from __future__ import annotations

import numpy as np
from scipy.stats import multivariate_normal, norm


def sem_covariance(nodes, edges, signs=None):
    """Covariance of all nodes from the rooted linear model.

    Each non-root node is ``w * parent + sqrt(1 - w^2) * noise`` with the
    signed weight ``w = gamma * s_u * s_v``; the root is standard normal.
    Returns the matrix in ``nodes`` order.
    """
    signs = signs or {}
    adj = {v: [] for v in nodes}
    for u, v, g in edges:
        adj[u].append((v, g))
        adj[v].append((u, g))
    index = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    B = np.zeros((n, n))
    D = np.zeros(n)
    root = nodes[0]
    D[index[root]] = 1.0
    stack, seen = [root], {root}
    while stack:
        u = stack.pop()
        for v, g in adj[u]:
            if v in seen:
                continue
            seen.add(v)
            w = g * signs.get(u, 1) * signs.get(v, 1)
            B[index[v], index[u]] = w
            D[index[v]] = 1.0 - w * w
            stack.append(v)
    T = np.linalg.inv(np.eye(n) - B)
    return T @ np.diag(D) @ T.T


def tree_sem_covariance(tree, sign_map=None, ids=None):
    nodes = list(tree.ids)
    edges = [(e.u, e.v, e.gamma) for e in tree.edges]
    full = sem_covariance(nodes, edges, sign_map)
    ids = list(ids if ids is not None else tree.observables)
    pos = [nodes.index(i) for i in ids]
    return full[np.ix_(pos, pos)]


def gaussian_mi_conditional(sigma, x_idx, y_idx):
    """I(X; Y) as h(X) - h(X | Y) through the conditional covariance."""
    sxx = sigma[np.ix_(x_idx, x_idx)]
    sxy = sigma[np.ix_(x_idx, y_idx)]
    syy = sigma[np.ix_(y_idx, y_idx)]
    cond = sxx - sxy @ np.linalg.inv(syy) @ sxy.T
    return 0.5 * (np.log(np.linalg.det(sxx)) - np.log(np.linalg.det(cond)))


def star_mixture_mi(gamma, n, pi, grid=4001, hermite=80):
    """I(X; Y) for an equal-weight star whose latent sign is +1 w.p. ``pi``.

    Uses h(X) - h(X | Y); given Y = y only the projection on the all-ones
    direction is a two-component mixture, so h(X | Y) reduces to a 2-D
    integral done by Gauss-Hermite in y and a fine grid in the projection.
    """
    var = 1.0 - gamma**2
    sigma_x = var * np.eye(n) + gamma**2 * np.ones((n, n))
    h_x = 0.5 * np.log((2 * np.pi * np.e) ** n * np.linalg.det(sigma_x))
    nodes, weights = np.polynomial.hermite_e.hermegauss(hermite)
    weights = weights / weights.sum()
    sd = np.sqrt(var)
    t = np.linspace(-12, 12, grid)
    dt = t[1] - t[0]
    h_mix = 0.0
    for y, w in zip(nodes, weights):
        m = gamma * np.sqrt(n) * y
        f = pi * norm.pdf(t, m, sd) + (1 - pi) * norm.pdf(t, -m, sd)
        with np.errstate(divide="ignore", invalid="ignore"):
            integrand = np.where(f > 0, -f * np.log(f), 0.0)
        h_mix += w * integrand.sum() * dt
    h_cond = h_mix + (n - 1) * 0.5 * np.log(2 * np.pi * np.e * var)
    return h_x - h_cond


def bivariate_tv(cov_a, cov_b, half_width=8.0, grid=1601):
    """Total variation between two zero-mean bivariate Gaussians on a grid."""
    t = np.linspace(-half_width, half_width, grid)
    X, Y = np.meshgrid(t, t, indexing="ij")
    pts = np.dstack([X, Y])
    diff = np.abs(multivariate_normal(cov=cov_a).pdf(pts) - multivariate_normal(cov=cov_b).pdf(pts))
    return 0.5 * diff.sum() * (t[1] - t[0]) ** 2
