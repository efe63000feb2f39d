"""Jost solutions of l(y) = -y'' + q y = mu y for step-like potentials.

Channel wavenumbers use the principal square root,

    lambda_j(mu; a) = (-1)^(j-1) sqrt(mu - a),   j = 1, 2,

so Im lambda_1 >= 0 and Im lambda_2 <= 0.  The Jost solution of a channel is
normalized to a pure exponential on its own side:

    y(x, mu) ~ e^{i lambda x},   y'(x, mu) ~ i lambda e^{i lambda x}

as x -> +inf (side "plus") or x -> -inf (side "minus").  Channels with
Im lambda >= 0 on their own side decay or oscillate and are computed by
backward/forward integration of the reduced equation

    u'' + 2 i lambda u' = (q - a_side) u,        y = e^{i lambda x} u,

started from u = 1, u' = 0 beyond the deviation support.  The substitution
removes both the fast oscillation and the exponential scale, so adaptive
stepping resolves only the potential profile.  The equivalent Volterra
integral equation solved by successive approximations is kept as a
lower-resolution cross-check (``jost_picard``), and growing channels are
available only through ``growing_via_variation`` / ``growing_picard`` for
completeness tests; the scattering pipeline never needs them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import BandEdge, GrowingChannel, NoConvergence
from .potentials import Potential, SquareBump
from .quadrature import trapezoid_weights

DEFAULT_EDGE_EPS = 1e-12
DEFAULT_RTOL = 1e-11
DEFAULT_ATOL = 1e-12
X_FAR_MARGIN = 10.0


def lambda_channel(mu: complex, a: float, j: int, eps: float = DEFAULT_EDGE_EPS) -> complex:
    """Channel wavenumber (-1)^(j-1) sqrt(mu - a), principal branch."""
    if j not in (1, 2):
        raise ValueError(f"channel index j must be 1 or 2, got {j}")
    if abs(mu - a) < eps:
        raise BandEdge(f"mu = {mu} within {eps} of the band edge a = {a}")
    root = np.sqrt(np.complex128(mu - a))
    return complex(root if j == 1 else -root)


def half_root_count(mu: float, a: float, eps: float = DEFAULT_EDGE_EPS) -> int:
    """1 if the channel is open (mu > a), 0 if closed (mu < a)."""
    if abs(mu - a) < eps:
        raise BandEdge(f"mu = {mu} within {eps} of the band edge a = {a}")
    return 1 if mu > a else 0


def bracket(y: complex, y_prime: complex, z: complex, z_prime: complex) -> complex:
    """Sesquilinear form [y, z] = i (y conj(z') - y' conj(z))."""
    return 1j * (y * np.conj(z_prime) - y_prime * np.conj(z))


def wronskian(y: complex, y_prime: complex, z: complex, z_prime: complex) -> complex:
    """Bilinear Wronskian y z' - y' z (constant in x for solutions of l(y)=mu y)."""
    return y * z_prime - y_prime * z


@dataclass(frozen=True)
class Channel:
    mu: float
    side: str          # "plus" | "minus"
    j: int             # 1 | 2
    lam: complex

    @property
    def decays_on_own_side(self) -> bool:
        im = self.lam.imag
        return (im > 0 and self.side == "plus" and self.j == 1) or \
               (im < 0 and self.side == "minus" and self.j == 2)


@dataclass(frozen=True)
class JostSample:
    channel: Channel
    x_grid: np.ndarray
    y: np.ndarray
    y_prime: np.ndarray
    residual: float


def make_channel(p: Potential, mu: float, side: str, j: int,
                 eps: float = DEFAULT_EDGE_EPS) -> Channel:
    if side not in ("plus", "minus"):
        raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")
    a_side = p.a_plus if side == "plus" else p.a_minus
    lam = lambda_channel(mu, a_side, j, eps)
    return Channel(mu=float(mu), side=side, j=j, lam=lam)


def default_x_far(p: Potential, side: str, margin: float = X_FAR_MARGIN) -> float:
    lo, hi = p.support(1e-14)
    if side == "plus":
        return max(hi, 0.0) + margin
    return min(lo, 0.0) - margin


def _segment_rhs(p: Potential, a_side: float, lo: float, hi: float):
    """q - a_side on the open segment (lo, hi), branch fixed by the midpoint.

    Segments never straddle a breakpoint, so the piecewise branch is
    constant inside and endpoint evaluations cannot pick the wrong side.
    """
    mid = 0.5 * (lo + hi)
    base = p.a_minus if mid < 0.0 else p.a_plus
    dev = p.deviation
    if isinstance(dev, SquareBump):
        inside = dev.x0 <= mid <= dev.x0 + dev.width
        c = base + (dev.height if inside else 0.0) - a_side
        return lambda x: c
    return lambda x: base + float(dev(np.asarray(x))) - a_side


def solve_jost(p: Potential, mu: float, side: str, j: int, x_grid,
               x_far: float | None = None, rtol: float = DEFAULT_RTOL,
               atol: float = DEFAULT_ATOL, eps: float = DEFAULT_EDGE_EPS,
               cross_check: bool = False, cross_check_tol: float = 1e-3) -> JostSample:
    """Jost solution sampled on x_grid (strictly increasing).

    Only channels bounded on their own side are integrated directly:
    (plus, 1) and (minus, 2) always, the other two only when lambda is
    real.  Growing channels raise GrowingChannel.
    """
    ch = make_channel(p, mu, side, j, eps)
    lam = ch.lam
    growing = (side == "plus" and j == 2 and lam.imag < 0) or \
              (side == "minus" and j == 1 and lam.imag > 0)
    if growing:
        raise GrowingChannel(
            f"channel (side={side}, j={j}) grows at its own infinity for mu={mu}; "
            "use growing_via_variation for diagnostics")

    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid.ndim != 1 or x_grid.size == 0 or np.any(np.diff(x_grid) <= 0):
        raise ValueError("x_grid must be a nonempty strictly increasing 1-d array")
    a_side = p.a_plus if side == "plus" else p.a_minus

    if x_far is None:
        x_far = default_x_far(p, side)
    if side == "plus":
        start = max(x_far, x_grid[-1])
        inner_end = x_grid[0]
    else:
        start = min(x_far, x_grid[0])
        inner_end = x_grid[-1]

    u = np.empty(x_grid.size, dtype=complex)
    up = np.empty(x_grid.size, dtype=complex)
    # beyond the start the reduced solution is exactly (1, 0)
    if side == "plus":
        outside = x_grid >= start
    else:
        outside = x_grid <= start
    u[outside] = 1.0
    up[outside] = 0.0

    if not outside.all():
        cuts = [b for b in p.breakpoints() if min(start, inner_end) < b < max(start, inner_end)]
        stops = sorted({start, inner_end, *cuts}, reverse=(side == "plus"))
        state = np.array([1.0 + 0.0j, 0.0 + 0.0j])
        pos = {float(x): i for i, x in enumerate(x_grid)}
        for seg_a, seg_b in zip(stops[:-1], stops[1:]):
            qm = _segment_rhs(p, a_side, min(seg_a, seg_b), max(seg_a, seg_b))

            def rhs(x, w, qm=qm):
                return [w[1], qm(x) * w[0] - 2j * lam * w[1]]

            lo, hi = min(seg_a, seg_b), max(seg_a, seg_b)
            pts = x_grid[(x_grid > lo) & (x_grid < hi)]
            t_eval = np.unique(np.concatenate([pts, [seg_b]]))
            if side == "plus":
                t_eval = t_eval[::-1]
            sol = solve_ivp(rhs, (seg_a, seg_b), state, method="DOP853",
                            rtol=rtol, atol=atol, t_eval=t_eval)
            if not sol.success:
                raise NoConvergence(f"ODE integration failed on [{seg_a}, {seg_b}]: {sol.message}")
            for k, t in enumerate(sol.t):
                i = pos.get(float(t))
                if i is not None:
                    u[i] = sol.y[0, k]
                    up[i] = sol.y[1, k]
            state = sol.y[:, -1]

    phase = np.exp(1j * lam * x_grid)
    y = phase * u
    y_prime = phase * (1j * lam * u + up)

    sample = JostSample(channel=ch, x_grid=x_grid, y=y, y_prime=y_prime, residual=np.nan)
    res = ode_residual(p, sample, mu) if x_grid.size >= 5 else np.nan
    sample = JostSample(channel=ch, x_grid=x_grid, y=y, y_prime=y_prime, residual=res)

    if cross_check:
        xg, yg = jost_picard(p, mu, side, j, inner_end=float(x_grid[0] if side == "plus"
                                                             else x_grid[-1]))
        yi = np.interp(x_grid, xg, yg.real) + 1j * np.interp(x_grid, xg, yg.imag)
        scale = max(np.abs(y).max(), 1.0)
        mask = (x_grid >= xg[0]) & (x_grid <= xg[-1])
        defect = np.abs(y[mask] - yi[mask]).max() / scale if mask.any() else 0.0
        if defect > cross_check_tol:
            raise NoConvergence(
                f"ODE and successive-approximation routes disagree by {defect:.3e}")
    return sample


def _breakpoint_aligned_grid(p: Potential, a_side: float, lo: float, hi: float,
                             n: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature grid with potential breakpoints on nodes.

    Returns (xs, q(xs) - a_side) with jump nodes carrying the mean of the
    one-sided limits, which keeps the composite trapezoid second order.
    """
    stops = sorted({lo, hi, *(b for b in p.breakpoints() if lo < b < hi)})
    h_target = (hi - lo) / max(n - 1, 1)
    xs_parts: list[np.ndarray] = []
    q_parts: list[np.ndarray] = []
    for a, b in zip(stops[:-1], stops[1:]):
        m = max(int(np.ceil((b - a) / h_target)), 2)
        seg = np.linspace(a, b, m + 1)
        qfun = _segment_rhs(p, a_side, a, b)
        qs = np.array([qfun(x) for x in seg], dtype=float)
        xs_parts.append(seg)
        q_parts.append(qs)
    xs = xs_parts[0]
    qd = q_parts[0]
    for seg, qs in zip(xs_parts[1:], q_parts[1:]):
        qd = np.concatenate([qd[:-1], [0.5 * (qd[-1] + qs[0])], qs[1:]])
        xs = np.concatenate([xs, seg[1:]])
    return xs, qd


def ode_residual(p: Potential, s: JostSample, mu: float) -> float:
    """Max scaled defect |-y'' + (q - mu) y| on interior grid points.

    Uses the fourth-order five-point second difference on uniform grids
    (the three-point stencil cannot resolve oscillatory solutions to the
    advertised level), a three-point one otherwise, and skips points
    adjacent to potential breakpoints where q jumps.
    """
    x = s.x_grid
    if x.size < 3:
        raise ValueError("ode_residual needs a grid with at least 3 points")
    y = s.y
    h = np.diff(x)
    uniform = np.allclose(h, h[0], rtol=1e-9, atol=0.0)
    qv = p(x)
    scale = max(float(np.abs(y).max()), 1e-300)
    breaks = np.asarray(p.breakpoints())

    if uniform and x.size >= 5:
        hh = h[0]
        ypp = (-y[:-4] + 16 * y[1:-3] - 30 * y[2:-2] + 16 * y[3:-1] - y[4:]) / (12 * hh * hh)
        idx = np.arange(2, x.size - 2)
        guard = 2.5 * hh
    else:
        ypp = (y[:-2] - 2 * y[1:-1] + y[2:]) / (h[:-1] * h[1:])
        idx = np.arange(1, x.size - 1)
        guard = 1.5 * float(h.max())

    defect = np.abs(-ypp + (qv[idx] - mu) * y[idx]) / scale
    if breaks.size:
        near = np.min(np.abs(x[idx][:, None] - breaks[None, :]), axis=1) < guard
        defect = defect[~near]
    return float(defect.max()) if defect.size else 0.0


def jost_picard(p: Potential, mu: float, side: str, j: int,
                inner_end: float | None = None, x_far: float | None = None,
                n: int = 1601, tol: float = 1e-12, maxiter: int = 80,
                eps: float = DEFAULT_EDGE_EPS):
    """Successive approximations for the Volterra equation of a Jost channel.

    plus side:   y(x) = e^{i lam x} + (1/lam) int_x^X  sin(lam (t-x)) (q - a+) y(t) dt
    minus side:  y(x) = e^{i lam x} + (1/lam) int_{-X}^x sin(lam (x-t)) (q - a-) y(t) dt

    Returns (x_grid, y).  Raises NoConvergence if the iteration fails to
    contract within ``maxiter``.
    """
    ch = make_channel(p, mu, side, j, eps)
    lam = ch.lam
    if (side == "plus" and j == 2 and lam.imag < 0) or \
       (side == "minus" and j == 1 and lam.imag > 0):
        raise GrowingChannel("successive approximations only cover Im lambda >= 0 "
                             "on the channel's own side")
    a_side = p.a_plus if side == "plus" else p.a_minus
    if x_far is None:
        x_far = default_x_far(p, side)
    if inner_end is None:
        inner_end = -x_far
    lo = min(inner_end, x_far)
    hi = max(inner_end, x_far)
    xs, qd = _breakpoint_aligned_grid(p, a_side, lo, hi, n)
    free = np.exp(1j * lam * xs)

    # row-dependent trapezoid weights: row i integrates over [x_i, X] (plus)
    # or [-X, x_i] (minus); half cells at both moving endpoints
    nn = xs.size
    ii = np.arange(nn)
    cell = np.zeros(nn)
    cell[1:-1] = 0.5 * (xs[2:] - xs[:-2])
    cell[0] = 0.5 * (xs[1] - xs[0])
    cell[-1] = 0.5 * (xs[-1] - xs[-2])
    w = np.broadcast_to(cell, (nn, nn)).copy()
    if side == "plus":
        w[np.tril_indices(nn, k=-1)] = 0.0
        w[ii[:-1], ii[:-1]] = 0.5 * (xs[1:] - xs[:-1])
        w[-1, -1] = 0.0
    else:
        w[np.triu_indices(nn, k=1)] = 0.0
        w[ii[1:], ii[1:]] = 0.5 * (xs[1:] - xs[:-1])
        w[0, 0] = 0.0

    diffs = xs[None, :] - xs[:, None] if side == "plus" else xs[:, None] - xs[None, :]
    kernel = np.sin(lam * diffs) / lam * (qd[None, :] * w)

    y = free.copy()
    for _ in range(maxiter):
        y_new = free + kernel @ y
        change = np.abs(y_new - y).max() / max(np.abs(y_new).max(), 1e-300)
        y = y_new
        if change < tol:
            return xs, y
    raise NoConvergence(f"successive approximations did not contract below {tol} "
                        f"within {maxiter} iterations (last change {change:.3e})")


def growing_via_variation(p: Potential, mu: float, side: str, x_grid,
                          rtol: float = DEFAULT_RTOL) -> JostSample:
    """Growing partner of the decaying channel via variation of constants.

    With y_d the decaying Jost solution (j = 1 on plus, j = 2 on minus) the
    second solution  w(x) = y_d(x) * int y_d(s)^{-2} ds  is combined so that
    w ~ e^{i lam_g x} at the channel's infinity.  Only meaningful off the
    continuous spectrum of the side (Im lam_d > 0); diagnostics only.
    """
    j_dec = 1 if side == "plus" else 2
    j_gro = 2 if side == "plus" else 1
    x_grid = np.asarray(x_grid, dtype=float)
    x_far = default_x_far(p, side)
    # dense grid for the quadrature, anchored at x_far
    if side == "plus":
        dense = np.linspace(x_grid[0], max(x_far, x_grid[-1]), 4001)
    else:
        dense = np.linspace(min(x_far, x_grid[0]), x_grid[-1], 4001)
    dec = solve_jost(p, mu, side, j_dec, dense, rtol=rtol)
    lam_d = dec.channel.lam
    lam_g = -lam_d
    if abs(lam_d.imag) < 1e-12:
        raise GrowingChannel("variation-of-constants route needs a decaying channel")
    inv2 = 1.0 / dec.y ** 2
    anchor = dense.size - 1 if side == "plus" else 0
    seg = np.concatenate([[0.0], np.cumsum(0.5 * (inv2[1:] + inv2[:-1]) * np.diff(dense))])
    integral = seg - seg[anchor]
    w = dec.y * integral * (-2j * lam_d)
    # add alpha * y_d so the value at the anchor matches e^{i lam_g x_far}
    alpha = np.exp(1j * lam_g * dense[anchor]) / dec.y[anchor]
    y_full = w + alpha * dec.y
    yp_full = dec.y_prime * (integral * (-2j * lam_d) + alpha) + dec.y * inv2 * (-2j * lam_d)
    y = np.interp(x_grid, dense, y_full.real) + 1j * np.interp(x_grid, dense, y_full.imag)
    yp = np.interp(x_grid, dense, yp_full.real) + 1j * np.interp(x_grid, dense, yp_full.imag)
    ch = Channel(mu=float(mu), side=side, j=j_gro, lam=complex(lam_g))
    sample = JostSample(channel=ch, x_grid=x_grid, y=y, y_prime=yp, residual=np.nan)
    return sample


def growing_picard(p: Potential, mu: float, anchor: float, x_far: float | None = None,
                   n: int = 2001, tol: float = 1e-11, maxiter: int = 120):
    """Second integral equation for a growing plus-side channel (Im lam < 0).

    y(x) = e^{i lam x} - (1/(2 i lam)) [ int_anchor^x e^{-i lam (x-t)} (q - a+) y dt
                                        + int_x^X    e^{-i lam (t-x)} (q - a+) y dt ]

    The anchor must sit left of the deviation support ("large enough" in
    the sense that the contraction constant is < 1).  Completeness check
    only; returns (x_grid, y).
    """
    lam = lambda_channel(mu, p.a_plus, 2)
    if lam.imag >= 0:
        raise GrowingChannel("growing_picard expects Im lambda < 0 (closed plus channel)")
    if x_far is None:
        x_far = default_x_far(p, "plus")
    xs = np.linspace(anchor, x_far, n)
    h = xs[1] - xs[0]
    qd = p(xs) - p.a_plus
    free = np.exp(1j * lam * xs)
    ii = np.arange(n)
    lower = xs[:, None] - xs[None, :]   # x - t for t <= x
    k_low = np.where(lower >= 0, np.exp(-1j * lam * lower), 0.0)
    k_up = np.where(lower < 0, np.exp(-1j * lam * (-lower)), 0.0)
    w = np.full((n, n), h)
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    wl = np.tril(w)
    wl[ii, ii] = np.where(ii == 0, 0.0, 0.5 * h)
    wu = np.triu(w)
    wu[ii, ii] = np.where(ii == n - 1, 0.0, 0.5 * h)
    kernel = -(k_low * wl + k_up * wu) * qd[None, :] / (2j * lam)
    y = free.copy()
    for _ in range(maxiter):
        y_new = free + kernel @ y
        change = np.abs(y_new - y).max() / max(np.abs(y_new).max(), 1e-300)
        y = y_new
        if change < tol:
            return xs, y
    raise NoConvergence(f"second-equation iteration stalled (last change {change:.3e})")
