"""Global eigenbases learned by minibatch reconstruction descent."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Tensor, backward, eigh_sym, matmul, sgd_step, sq_norm, transpose
from ..rng import stream

LR_SCALE = 0.1  # auto step: LR_SCALE / top eigenvalue of the first batch scatter


@dataclass
class EigenBasis:
    w: np.ndarray     # (c_e, C)
    mean: np.ndarray  # (C,) global feature mean, frozen
    losses: list = None

    @property
    def c_e(self):
        return self.w.shape[0]

    def project(self, f):
        """W (F - mean) for an (C, P) feature matrix."""
        return self.w @ (f - self.mean[:, None])


def center_features(f):
    """Subtract each channel's spatial mean from a (C, P) feature matrix."""
    if isinstance(f, Tensor):
        if f.ndim != 2:
            raise ValueError("center_features expects a 2-D (C, P) matrix")
        return f - f.mean(axis=1, keepdims=True)
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError("center_features expects a 2-D (C, P) matrix")
    return f - f.mean(axis=1, keepdims=True)


def reconstruction_loss(w, fbar):
    """||W^T W F - F||^2 for one centred (C, P) feature matrix."""
    w = w if isinstance(w, Tensor) else Tensor(w)
    fbar = fbar if isinstance(fbar, Tensor) else Tensor(fbar)
    if w.shape[1] != fbar.shape[0]:
        raise ValueError(f"basis width {w.shape[1]} != feature channels {fbar.shape[0]}")
    return sq_norm(matmul(transpose(w), matmul(w, fbar)) - fbar)


def global_mean(features):
    total = sum(f.sum(axis=1) for f in features)
    count = sum(f.shape[1] for f in features)
    return total / count


def random_orthonormal_rows(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((cols, rows)))
    return (q * np.sign(np.diag(r))).T


def sketch_rows(rng, batch, c_e, power_iters=4):
    """Orthonormal rows from a randomised range finder with a few power iterations."""
    y = batch @ (batch.T @ rng.standard_normal((batch.shape[0], c_e)))
    for _ in range(power_iters):
        y = batch @ (batch.T @ np.linalg.qr(y)[0])
    q, r = np.linalg.qr(y)
    return (q * np.where(np.diag(r) < 0, -1.0, 1.0)).T


def derive_eigenbasis(features, c_e, batch_size=8, epochs=5, lr="auto", init="sketch",
                      seed=0, label="eigenbasis"):
    """Fit W (c_e x C) to a list of (C, P) feature matrices by minibatch SGD.

    Loss per batch is the mean over its images of ``||W^T W F - F||^2`` with
    F centred by the frozen global mean. ``init="sketch"`` starts from a
    randomised range finder on the first batch, ``"random"`` from random
    orthonormal rows. ``lr="auto"`` uses LR_SCALE / lambda_max of the first batch's
    mean scatter, which keeps the step scale-free.
    """
    if not features:
        raise ValueError("empty dataset")
    c = features[0].shape[0]
    if c_e > c:
        raise ValueError(f"c_e={c_e} exceeds feature channels C={c}")
    mu = global_mean(features)
    centred = [f - mu[:, None] for f in features]
    rng = stream(seed, label)
    order = rng.permutation(len(centred))
    first = np.concatenate([centred[i] for i in order[:batch_size]], axis=1)
    if lr == "auto":
        top = top_eigenpairs(first, 1)[0][0] / min(batch_size, len(centred))
        lr = LR_SCALE / top if top > 0 else 1e-3
    if init == "sketch":
        w0 = sketch_rows(rng, first, c_e)
    elif init == "random":
        w0 = random_orthonormal_rows(rng, c_e, c)
    else:
        raise ValueError(f"unknown init {init!r}")
    w = Tensor(w0, requires_grad=True)
    losses = []
    for epoch in range(epochs):
        if epoch:
            order = rng.permutation(len(centred))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            batch = Tensor(np.concatenate([centred[i] for i in idx], axis=1))
            loss = reconstruction_loss(w, batch) * (1.0 / len(idx))
            backward(loss)
            losses.append(loss.item())
            if not np.isfinite(losses[-1]):
                raise FloatingPointError(f"eigenbasis loss diverged at step {len(losses)} (lr={lr:g})")
            sgd_step([w], lr)
    return EigenBasis(w=w.data.copy(), mean=mu, losses=losses)


def pooled_covariance(features, mean=None):
    mu = global_mean(features) if mean is None else mean
    s = sum((f - mu[:, None]) @ (f - mu[:, None]).T for f in features)
    return s / len(features)


def top_eigenpairs(a, k):
    """Top-k eigenvalues and eigenvectors (columns) of ``a @ a.T`` for a (C, N) matrix.

    With fewer columns than rows the N x N Gram matrix ``a.T @ a`` has the same
    nonzero spectrum, and its eigenvectors map back through ``a``. Directions
    past the rank have eigenvalue zero; any orthonormal completion serves.
    """
    c, n = a.shape
    if n >= c:
        spec = eigh_sym(a @ a.T)
        return spec.eigenvalues[:k], spec.eigenvectors[:, :k]
    spec = eigh_sym(a.T @ a)
    lam = spec.eigenvalues
    r = min(k, int(np.sum(lam > 1e-10 * max(lam[0], 1e-300))))
    u = (a @ spec.eigenvectors[:, :r]) / np.sqrt(lam[:r])
    if r == k:
        return lam[:k], u
    q, rr = np.linalg.qr(np.concatenate([u, np.eye(c)], axis=1))
    q = q[:, :k] * np.where(np.diag(rr)[:k] < 0, -1.0, 1.0)
    return np.concatenate([lam[:r], np.zeros(k - r)]), q


def exact_pca_basis(features, c_e):
    """Top-c_e eigenvectors of the pooled scatter, as rows."""
    mu = global_mean(features)
    a = np.concatenate([f - mu[:, None] for f in features], axis=1)
    return top_eigenpairs(a, c_e)[1].T


def mean_reconstruction_loss(w, features, mean):
    return float(np.mean([reconstruction_loss(w, f - mean[:, None]).item() for f in features]))


def orthonormality_error(w):
    w = np.asarray(w)
    return float(np.abs(w @ w.T - np.eye(w.shape[0])).max())


def subspace_angle_deg(a, b):
    """Largest principal angle between the row spaces of ``a`` and ``b``."""
    qa, _ = np.linalg.qr(np.asarray(a).T)
    qb, _ = np.linalg.qr(np.asarray(b).T)
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return float(np.degrees(np.arccos(np.clip(s.min(), -1.0, 1.0))))
