"""Quadrature helpers: adaptive bisection Simpson and Gauss-Legendre panels."""

from __future__ import annotations

import numpy as np

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10,
                     max_depth: int = 48) -> float:
    """Integrate f over [a, b] by recursive interval bisection.

    The error control is absolute: a subinterval is accepted once the
    two-panel Simpson refinement changes the estimate by less than its
    share of ``tol``.  Kinks (e.g. |q - a| around sign changes) just cost
    extra splits.
    """
    if a == b:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth)


def _simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return (_simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + _simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1))


def gauss_panels(a: float, b: float, n_panels: int,
                 edges: np.ndarray | None = None):
    """Nodes and weights of composite 16-point Gauss-Legendre panels.

    ``edges`` overrides the uniform panel split (must start at a, end at b,
    strictly increasing).  Returns (nodes, weights) as flat arrays.
    """
    if edges is None:
        edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def geometric_edges(a: float, b: float, n_panels: int, ratio: float = 0.7,
                    cluster: str = "both") -> np.ndarray:
    """Panel edges refined geometrically toward one or both endpoints."""
    if cluster == "left":
        w = ratio ** np.arange(n_panels)[::-1]
    elif cluster == "right":
        w = ratio ** np.arange(n_panels)
    else:
        half = n_panels // 2
        w_left = ratio ** np.arange(half)[::-1]
        w_right = ratio ** np.arange(n_panels - half)
        w = np.concatenate([w_left, w_right])
    cuts = np.concatenate([[0.0], np.cumsum(w)])
    return a + (b - a) * cuts / cuts[-1]


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    """Composite trapezoid weights on a uniform n-point grid of step h."""
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w
