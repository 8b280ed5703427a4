"""Linear map from padded fMRI vectors into the condition-feature space.

A single ridge-regularized least-squares model is fit jointly over all
subjects, projecting their (zero-padded) voxel vectors onto the feature
vectors the generator consumes. The bias is never penalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass
class LinearAligner:
    weights: np.ndarray  # (input_length, feature_dim)
    bias: np.ndarray  # (feature_dim,)
    ridge_lambda: float
    input_length: int

    def validate(self) -> "LinearAligner":
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weights must be 2-D and bias 1-D")
        if self.weights.shape != (self.input_length, self.bias.shape[0]):
            raise ValueError("aligner shape mismatch")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("aligner parameters must be finite")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")
        return self


def fit_alignment(fmri: np.ndarray, features: np.ndarray, ridge_lambda: float = 1.0) -> LinearAligner:
    """Solve min_W,b ||fmri @ W + b - features||^2 + ridge_lambda * ||W||^2.

    With ridge_lambda > 0 the solution is unique; with ridge_lambda = 0
    the (centered) design matrix must have full column rank, otherwise a
    ValueError advises turning the penalty on.
    """
    x = np.asarray(fmri, dtype=np.float64)
    y = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("fmri and features must both be 2-D matrices")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"row mismatch: {x.shape[0]} fMRI rows vs {y.shape[0]} feature rows")
    if x.shape[0] < 1:
        raise ValueError("need at least one sample")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")

    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    n_features = x.shape[1]

    if ridge_lambda > 0:
        gram = xc.T @ xc + ridge_lambda * np.eye(n_features)
        weights = scipy.linalg.solve(gram, xc.T @ yc, assume_a="pos")
    else:
        weights, _, rank, _ = np.linalg.lstsq(xc, yc, rcond=None)
        if rank < n_features:
            raise ValueError(
                "normal equations are singular with ridge_lambda = 0; "
                "refit with ridge_lambda > 0"
            )
    bias = y_mean - x_mean @ weights
    return LinearAligner(weights, bias, float(ridge_lambda), n_features).validate()


def align(aligner: LinearAligner, fmri_vector: np.ndarray) -> np.ndarray:
    """Map one voxel vector (or a stack of them) to feature space.

    Vectors shorter than the fit-time length are zero-padded on the right;
    longer vectors are an error.
    """
    v = np.asarray(fmri_vector, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[None, :]
    if v.ndim != 2:
        raise ValueError("expected a vector or a matrix of row vectors")
    if v.shape[1] > aligner.input_length:
        raise ValueError(
            f"vector length {v.shape[1]} exceeds aligner input_length {aligner.input_length}"
        )
    if v.shape[1] < aligner.input_length:
        pad = np.zeros((v.shape[0], aligner.input_length - v.shape[1]))
        v = np.concatenate([v, pad], axis=1)
    out = v @ aligner.weights + aligner.bias
    return out[0] if squeeze else out


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Variance-weighted coefficient of determination over all outputs."""
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.shape != yp.shape:
        raise ValueError("shape mismatch")
    ss_res = float(np.sum((yt - yp) ** 2))
    ss_tot = float(np.sum((yt - yt.mean(axis=0)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -np.inf
    return 1.0 - ss_res / ss_tot
