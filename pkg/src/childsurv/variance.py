"""Design-based variance: linearization, delta method and bootstrap weights."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import SurveyDesign

__all__ = [
    "design_variance",
    "sandwich_covariance",
    "delta_gradient",
    "delta_method",
    "BootstrapPlan",
    "make_bootstrap_plan",
    "export_replicate_weights",
    "read_replicate_weights",
]


def design_variance(influence, weights, design: SurveyDesign) -> np.ndarray:
    """Variance of a weighted total under a stratified cluster design.

    Computes ``sum_h n_h / (n_h - 1) sum_c (z_hc - zbar_h)(z_hc - zbar_h)^T``
    where ``z_hc`` is the weighted total of the rows of ``influence`` over
    cluster ``c`` of stratum ``h``.

    Parameters
    ----------
    influence : array of shape (n,) or (n, d)
    weights : array of shape (n,)
    design : SurveyDesign

    Returns
    -------
    ndarray of shape (d, d)
    """
    design.check_variance_estimable()
    infl = np.asarray(influence, dtype=float)
    if infl.ndim == 1:
        infl = infl[:, None]
    w = np.asarray(weights, dtype=float)
    n_cl = int(design.n_clusters.sum())
    z = np.zeros((n_cl, infl.shape[1]))
    np.add.at(z, design.child_cluster, w[:, None] * infl)
    cs = design.cluster_stratum
    nh = design.n_clusters.astype(float)
    zbar = np.zeros((len(nh), infl.shape[1]))
    np.add.at(zbar, cs, z)
    zbar /= nh[:, None]
    dev = z - zbar[cs]
    scale = (nh / (nh - 1.0))[cs]
    return (dev * scale[:, None]).T @ dev


def sandwich_covariance(scores, hessian, weights, design: SurveyDesign, free=None):
    """Linearization covariance of a weighted pseudo-maximum-likelihood estimate.

    Parameters
    ----------
    scores : array of shape (n, d)
        Per-record score vectors (unweighted).
    hessian : array of shape (d, d)
        Hessian of the weighted log pseudo-likelihood.
    weights : array of shape (n,)
    design : SurveyDesign
    free : boolean mask of shape (d,), optional
        Coordinates to treat as estimated; the others get zero variance.

    Returns
    -------
    cov : ndarray of shape (d, d)
    influence : ndarray of shape (n, d)
        Per-record influence values ``-H^{-1} s_i``.
    """
    scores = np.asarray(scores, dtype=float)
    H = np.asarray(hessian, dtype=float)
    d = H.shape[0]
    free = np.ones(d, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    infl = np.zeros_like(scores)
    if free.any():
        Hf = H[np.ix_(free, free)]
        infl[:, free] = -np.linalg.solve(Hf, scores[:, free].T).T
    cov = design_variance(infl, weights, design)
    cov[~free, :] = 0.0
    cov[:, ~free] = 0.0
    return cov, infl


def delta_gradient(func: Callable, theta, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient with step ``step * (1 + |theta_j|)``."""
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for j in range(theta.size):
        h = step * (1.0 + abs(theta[j]))
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (func(theta + e) - func(theta - e)) / (2.0 * h)
    return g


def delta_method(func: Callable, theta, cov, step: float = 1e-5, gradient=None):
    """Value and standard error of a smooth scalar function of the parameters.

    Parameters
    ----------
    func : callable
        Maps the parameter vector to a scalar.
    theta : array of shape (d,)
    cov : array of shape (d, d)
    gradient : array of shape (d,), optional
        Analytic gradient; finite differences are used when omitted.

    Returns
    -------
    value, se : float
    """
    theta = np.asarray(theta, dtype=float)
    g = delta_gradient(func, theta, step) if gradient is None else np.asarray(gradient, float)
    var = float(g @ np.asarray(cov, dtype=float) @ g)
    return float(func(theta)), float(np.sqrt(max(var, 0.0)))


@dataclass(frozen=True)
class BootstrapPlan:
    """Rao-Wu rescaling bootstrap replicates of a stratified cluster design.

    In each replicate and stratum, ``n_h - 1`` clusters are drawn with
    replacement.  A child in a cluster drawn ``m`` times receives weight
    ``w * m * n_h / (n_h - 1)``.

    Attributes
    ----------
    design : SurveyDesign
    seed : int
    counts : ndarray of shape (n_replicates, n_clusters)
        Number of times each cluster is drawn.
    """

    design: SurveyDesign
    seed: int
    counts: np.ndarray

    @property
    def n_replicates(self) -> int:
        return self.counts.shape[0]

    def cluster_factors(self) -> np.ndarray:
        """Weight multipliers, shape (n_replicates, n_clusters)."""
        nh = self.design.n_clusters.astype(float)[self.design.cluster_stratum]
        return self.counts * (nh / (nh - 1.0))[None, :]

    def child_factors(self, child_cluster: Optional[np.ndarray] = None) -> np.ndarray:
        """Weight multipliers per child, shape (n_children, n_replicates)."""
        cc = self.design.child_cluster if child_cluster is None else child_cluster
        return self.cluster_factors()[:, cc].T

    def replicate_weights(self, weights) -> np.ndarray:
        """Replicate weights, shape (n_children, n_replicates)."""
        w = np.asarray(weights, dtype=float)
        return w[:, None] * self.child_factors()


def make_bootstrap_plan(design: SurveyDesign, n_replicates: int, seed: int) -> BootstrapPlan:
    """Draw Rao-Wu replicates.

    Each replicate uses its own random substream spawned from ``seed``, so a
    replicate does not depend on how many others are drawn or in which order
    they are processed.
    """
    if seed is None:
        raise ValueError("a seed is required for bootstrap replicates")
    n_replicates = int(n_replicates)
    if n_replicates < 1:
        raise ValueError("n_replicates must be positive")
    design.check_variance_estimable()
    nh = design.n_clusters
    offsets = np.concatenate([[0], np.cumsum(nh)])
    counts = np.zeros((n_replicates, int(nh.sum())), dtype=np.int64)
    streams = np.random.SeedSequence(int(seed)).spawn(n_replicates)
    for k, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        for h, n in enumerate(nh):
            draws = rng.integers(0, n, size=n - 1)
            counts[k, offsets[h]:offsets[h + 1]] = np.bincount(draws, minlength=n)
    return BootstrapPlan(design, int(seed), counts)


def export_replicate_weights(plan: BootstrapPlan, child_ids, weights, path, header_lines=()):
    """Write replicate weights as ``child_id,rep_0001,...``."""
    rw = plan.replicate_weights(weights)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["child_id"] + [f"rep_{k + 1:04d}" for k in range(plan.n_replicates)])
        for cid, row in zip(child_ids, rw):
            w.writerow([cid] + [repr(float(v)) for v in row])


def read_replicate_weights(path):
    """Read a replicate-weight file; returns ``(child_ids, matrix)``."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        r = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(r)
        if not header or header[0] != "child_id":
            raise ValueError("replicate weight file must start with a child_id column")
        ids, rows = [], []
        for line in r:
            ids.append(line[0])
            rows.append([float(v) for v in line[1:]])
    return ids, np.asarray(rows)
