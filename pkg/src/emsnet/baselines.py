"""Unsupervised comparison methods: change vector analysis and iterative SFA.

Both produce a per-pixel change intensity that is binarised with Otsu's
threshold. ISFA solves the weighted generalized eigenproblem
``A phi = lambda B phi`` (``A``: covariance of the centred difference,
``B``: mean covariance of the two epochs) and reweights pixels by their
chi-square probability of being unchanged until the weights settle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import gammaincc

from .errors import ThresholdError
from .hsi import ScenePair

NO_CHANGE_NOTE = "constant magnitude: no changes detected"


@dataclass
class BaselineResult:
    magnitude: np.ndarray
    threshold: float
    binary: np.ndarray
    method: str
    converged: bool | None = None
    iterations: int | None = None
    flags: list = field(default_factory=list)
    eigenvalues: np.ndarray | None = None

    def summary(self) -> dict:
        out = {"method": self.method, "threshold": self.threshold, "flags": list(self.flags)}
        if self.converged is not None:
            out["converged"] = self.converged
            out["iterations"] = self.iterations
        return out


def otsu_threshold(values, bins: int = 256) -> float:
    """Threshold maximising the between-class variance of a ``bins``-bin histogram.

    Returned as the upper edge of the last bin in the lower class, so
    ``values >= threshold`` selects the upper class.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0 or v.min() == v.max():
        raise ThresholdError("Otsu threshold needs at least two distinct values")
    counts, edges = np.histogram(v, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)[:-1].astype(np.float64)
    w1 = v.size - w0
    s0 = np.cumsum(counts * centers)[:-1]
    s1 = np.sum(counts * centers) - s0
    valid = (w0 > 0) & (w1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        between = np.where(valid, w0 * w1 * (s0 / w0 - s1 / w1) ** 2, -1.0)
    # splits inside a run of empty bins give the same partition; score them
    # identically so the lowest such edge wins instead of a rounding artefact
    first_of_run = np.maximum.accumulate(np.where(np.r_[True, w0[1:] != w0[:-1]], np.arange(len(w0)), 0))
    between = between[first_of_run]
    return float(edges[int(np.argmax(between)) + 1])


def _binarise(magnitude: np.ndarray, flags: list) -> tuple[float, np.ndarray]:
    try:
        thr = otsu_threshold(magnitude)
    except ThresholdError:
        flags.append(NO_CHANGE_NOTE)
        return float("inf"), np.zeros(magnitude.shape, dtype=np.int64)
    return thr, (magnitude >= thr).astype(np.int64)


def cva(pair: ScenePair) -> BaselineResult:
    """Euclidean norm of the per-pixel spectral difference, Otsu-thresholded."""
    magnitude = np.sqrt(np.sum((pair.t2.values - pair.t1.values) ** 2, axis=-1))
    flags: list = []
    thr, binary = _binarise(magnitude, flags)
    return BaselineResult(magnitude, thr, binary, "cva", flags=flags)


@dataclass
class SfaSolution:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    A: np.ndarray
    B: np.ndarray
    diff: np.ndarray
    regularized: bool


def sfa_eigen(x: np.ndarray, y: np.ndarray, weights: np.ndarray) -> SfaSolution:
    """One weighted SFA solve on ``(n_pixels, bands)`` data.

    Eigenvectors are B-orthonormal and eigenvalues ascending.
    """
    w = np.asarray(weights, dtype=np.float64)
    sw = w.sum()
    xc = x - (w @ x) / sw
    yc = y - (w @ y) / sw
    d = xc - yc
    A = (d * w[:, None]).T @ d / sw
    B = 0.5 * ((xc * w[:, None]).T @ xc + (yc * w[:, None]).T @ yc) / sw
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    regularized = False
    try:
        if np.linalg.cond(B) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned B")
        lam, phi = scipy.linalg.eigh(A, B)
    except np.linalg.LinAlgError:
        c = B.shape[0]
        B = B + 1e-6 * np.trace(B) / c * np.eye(c)
        lam, phi = scipy.linalg.eigh(A, B)
        regularized = True
    return SfaSolution(lam, phi, A, B, d, regularized)


def chi2_statistic(diff: np.ndarray, eigenvalues: np.ndarray, eigenvectors: np.ndarray) -> np.ndarray:
    proj = diff @ eigenvectors
    floor = max(1e-12 * float(np.max(np.abs(eigenvalues))), 1e-300)
    return np.sum(proj ** 2 / np.maximum(eigenvalues, floor), axis=1)


def isfa(pair: ScenePair, max_iters: int = 50, tol: float = 1e-6) -> BaselineResult:
    """Iteratively reweighted slow feature analysis.

    Each pass solves the weighted SFA problem, forms the chi-square change
    statistic over all slow features and sets each pixel's weight to its
    chi-square survival probability. The final statistic is Otsu-thresholded.
    """
    h, w_, c = pair.t1.values.shape
    x = pair.t1.values.reshape(-1, c)
    y = pair.t2.values.reshape(-1, c)
    weights = np.ones(x.shape[0])
    flags: list = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        sol = sfa_eigen(x, y, weights)
        if sol.regularized and "regularized" not in flags:
            flags.append("regularized")
            warnings.warn("ISFA: singular epoch covariance, regularised", RuntimeWarning, stacklevel=2)
        stat = chi2_statistic(sol.diff, sol.eigenvalues, sol.eigenvectors)
        new_weights = gammaincc(c / 2.0, stat / 2.0)
        delta = np.max(np.abs(new_weights - weights))
        weights = new_weights
        if delta < tol:
            converged = True
            break
    magnitude = stat.reshape(h, w_)
    thr, binary = _binarise(magnitude, flags)
    return BaselineResult(
        magnitude, thr, binary, "isfa", converged=converged, iterations=it, flags=flags, eigenvalues=sol.eigenvalues
    )


def run_baseline(pair: ScenePair, method: str, **kw) -> BaselineResult:
    methods = {"cva": cva, "isfa": isfa}
    if method not in methods:
        raise ValueError(f"unknown baseline method {method!r}; valid: {', '.join(sorted(methods))}")
    return methods[method](pair, **kw)
