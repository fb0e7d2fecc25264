"""Smallest enclosing ball of a point cloud.

``welzl_ball`` is exact (move-to-front Welzl, intended for d <= 3).
``yildirim_ball`` is the iterative Frank-Wolfe scheme with away steps on
the dual simplex problem; it works in any dimension.
"""

from __future__ import annotations

import numpy as np


def _circumball(pts: np.ndarray):
    """Smallest ball with all of ``pts`` (affinely independent) on its boundary."""
    p0 = pts[0]
    if len(pts) == 1:
        return p0.copy(), 0.0
    a = pts[1:] - p0
    b = 0.5 * np.sum(a * a, axis=1)
    # centre = p0 + a.T @ lam with (a a^T) lam = b
    lam = np.linalg.lstsq(a @ a.T, b, rcond=None)[0]
    c = p0 + a.T @ lam
    return c, float(np.linalg.norm(pts[0] - c))


def _inside(c, r, p, tol):
    return np.linalg.norm(p - c) <= r + tol


def welzl_ball(points, tol: float = 1e-12):
    """Exact minimal enclosing ball; returns ``(center, radius)``.

    The processing order is a fixed pseudo-random permutation, so the result
    is deterministic.
    """
    pts = np.unique(np.atleast_2d(np.asarray(points, dtype=float)), axis=0)
    # sorted input is the worst case for the incremental scheme
    pts = pts[np.random.default_rng(0).permutation(len(pts))]
    scale = max(1.0, float(np.max(np.abs(pts))))
    eps = tol * scale
    dim = pts.shape[1]

    def ball_with(support, upto):
        if support:
            c, r = _circumball(np.array(support))
        else:
            c, r = pts[0].copy(), 0.0
        if len(support) == dim + 1:
            return c, r
        for i in range(upto):
            if not _inside(c, r, pts[i], eps):
                c, r = ball_with(support + [pts[i]], i)
        return c, r

    return ball_with([], len(pts))


def yildirim_ball(points, tol: float = 1e-9, max_iter: int = 1_000_000):
    """Iterative minimal enclosing ball with relative radius accuracy ``tol``."""
    raw = np.unique(np.atleast_2d(np.asarray(points, dtype=float)), axis=0)
    m = len(raw)
    if m == 1:
        return raw[0].copy(), 0.0
    # centre and scale so tiny or huge coordinates do not under/overflow
    shift = raw.mean(axis=0)
    scale = float(np.max(np.abs(raw - shift)))
    if scale == 0.0:
        return raw[0].copy(), 0.0
    pts = (raw - shift) / scale
    # start from the two mutually far points
    a = int(np.argmax(np.sum((pts - pts[0]) ** 2, axis=1)))
    b = int(np.argmax(np.sum((pts - pts[a]) ** 2, axis=1)))
    u = np.zeros(m)
    u[a] = u[b] = 0.5
    for _ in range(max_iter):
        c = u @ pts
        d2 = np.sum((pts - c) ** 2, axis=1)
        r2 = float(u @ d2)
        j = int(np.argmax(d2))
        eps_plus = d2[j] / r2 - 1.0
        support = np.nonzero(u > 0)[0]
        k = support[int(np.argmin(d2[support]))]
        eps_minus = 1.0 - d2[k] / r2
        if eps_plus <= tol and eps_minus <= tol:
            break
        if eps_plus > eps_minus:
            lam = eps_plus / (2.0 * (1.0 + eps_plus))
            u *= 1.0 - lam
            u[j] += lam
        else:
            lam = min(eps_minus / (2.0 * (1.0 - eps_minus)), u[k] / (1.0 - u[k]))
            u *= 1.0 + lam
            u[k] -= lam
            u[u < 0] = 0.0
    c = shift + scale * (u @ pts)
    return c, float(np.sqrt(np.max(np.sum((raw - c) ** 2, axis=1))))


def enclosing_ball(points):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] <= 3:
        return welzl_ball(pts)
    return yildirim_ball(pts)
