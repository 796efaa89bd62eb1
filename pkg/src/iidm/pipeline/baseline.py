"""Per-pixel ordinary least squares from band values to density."""
from __future__ import annotations

import numpy as np

RIDGE = 1e-8


def design(bands):
    """(n, k) band values -> (n, k+1) with a trailing intercept column."""
    x = np.asarray(bands, dtype=np.float64)
    return np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)


def ols_fit(bands, target, ridge=RIDGE):
    """Normal equations (A^T A + ridge I) beta = A^T y; the last entry is the intercept."""
    a = design(bands)
    y = np.asarray(target, dtype=np.float64).ravel()
    if a.shape[0] < a.shape[1]:
        raise ValueError(f"need at least {a.shape[1]} training pixels, got {a.shape[0]}")
    m = a.T @ a + ridge * np.eye(a.shape[1])
    if not np.all(np.isfinite(m)) or np.linalg.cond(m) > 1.0 / np.finfo(np.float64).eps:
        raise np.linalg.LinAlgError("design matrix is singular even with ridge")
    return np.linalg.solve(m, a.T @ y)


def ols_predict(coef, bands):
    return design(bands) @ coef


def fit_scenes(images, densities, masks=None):
    """Fit on pixels of several (H, W, C) scenes; ``masks`` restricts to included pixels."""
    xs, ys = [], []
    for i, (im, d) in enumerate(zip(images, densities)):
        im = np.asarray(im, dtype=np.float64)
        sel = np.ones(im.shape[:2], bool) if masks is None else np.asarray(masks[i], bool)
        xs.append(im[sel])
        ys.append(np.asarray(d, dtype=np.float64)[sel])
    return ols_fit(np.concatenate(xs), np.concatenate(ys))


def predict_scene(coef, image, mask=None):
    im = np.asarray(image, dtype=np.float64)
    pred = ols_predict(coef, im.reshape(-1, im.shape[-1])).reshape(im.shape[:2])
    return pred if mask is None else np.where(np.asarray(mask, bool), pred, 0.0)
