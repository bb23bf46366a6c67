"""Independent oracles used by the tests: finite differences, grid searches,
closed-form classifiers. These deliberately avoid the package's own gradient
and selection code paths."""

from __future__ import annotations

import numpy as np


def finite_difference(fn, arrays, h=1e-5):
    """Central-difference gradients of a scalar function of in-place arrays.

    fn() must recompute the scalar from the current contents of `arrays`.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            f_plus = fn()
            a[idx] = orig - h
            f_minus = fn()
            a[idx] = orig
            g[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-6, atol=1e-8, label=""):
    for i, (ga, gn) in enumerate(zip(analytic, numeric)):
        err = np.abs(ga - gn)
        tol = rtol * np.maximum(np.abs(ga), np.abs(gn)) + atol
        if not np.all(err <= tol):
            worst = float((err - tol).max())
            raise AssertionError(
                f"gradient mismatch {label} (input {i}): worst excess {worst:.3e}, "
                f"max abs err {err.max():.3e}")


def procrustes_grid(a: np.ndarray, b: np.ndarray, n_angles: int = 200_000) -> float:
    """Brute-force residual: dense rotation-angle grid with per-angle optimal scale."""
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    ac = ac / np.linalg.norm(ac)
    bc = bc / np.linalg.norm(bc)
    thetas = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    c, s = np.cos(thetas), np.sin(thetas)
    # inner product <A, B R(theta)> expands to c * tr(B^T A diag-part) + s * cross-part
    m = bc.T @ ac
    inner = c * (m[0, 0] + m[1, 1]) + s * (m[0, 1] - m[1, 0])
    best = np.maximum(inner, 0.0).max()
    return float(1.0 - best * best)


def procrustes_grid_explicit(a: np.ndarray, b: np.ndarray, n_angles: int = 20_000) -> float:
    """Slower literal version: rotate points, fit scale, measure the residual."""
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    ac = ac / np.linalg.norm(ac)
    bc = bc / np.linalg.norm(bc)
    best = np.inf
    for theta in np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False):
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        rotated = bc @ rot
        scale = max(0.0, float(np.sum(ac * rotated)))
        best = min(best, float(np.sum((ac - scale * rotated) ** 2)))
    return best


def least_squares_classifier(x: np.ndarray, y: np.ndarray, n_classes: int):
    """One-hot least-squares fit; returns a predict(x) -> labels callable."""
    ones = np.ones((x.shape[0], 1))
    design = np.concatenate([x, ones], axis=1)
    onehot = np.zeros((len(y), n_classes))
    onehot[np.arange(len(y)), y] = 1.0
    coef, *_ = np.linalg.lstsq(design, onehot, rcond=None)

    def predict(xq: np.ndarray) -> np.ndarray:
        dq = np.concatenate([xq, np.ones((xq.shape[0], 1))], axis=1)
        return np.argmax(dq @ coef, axis=1)

    return predict


def softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def kl_direct(p_logits: np.ndarray, q_logits: np.ndarray) -> float:
    """Direct-summation KL over explicit probabilities, batch mean."""
    p = softmax(p_logits)
    q = softmax(q_logits)
    return float(np.mean(np.sum(p * (np.log(p) - np.log(q)), axis=-1)))
