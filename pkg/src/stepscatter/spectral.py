"""Bounded eigenfunctions, connection matrices, and the right scattering data.

The essential spectrum splits at mu1 = min(a-, a+) and mu2 = max(a-, a+).
On (mu1, mu2) there is one bounded solution per mu, on (mu2, inf) two.
Expanding the bounded solutions in the Jost bases of each side,

    phi_j ~ (2 pi)^{-1/2} sum_nu sqrt|lam'_nu| A_{j nu} e^{i x lam_nu},

defines the coefficient matrices A+- whose open-channel block packings B, C
satisfy B B* = C C* and are made unitary here by the left polar factor of B
(any choice related by a unitary mixing gives the same scattering matrix).
The right scattering data consist of the bound states with their norming
constants and the Gram-type matrix

    S+_{j nu} = sum_l sqrt|lam'_nu| sqrt|lam'_j| A+_{l nu} conj(A+_{l j})

of order 1 + r^+(mu) on each band.  S+ is Hermitian, positive
semidefinite, of rank at most the band channel count, and whenever the
plus channel is open its corner entry is pinned by unitarity:
S11 = 1/(2 sqrt(mu - a^+)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from .errors import (BandEdge, DegenerateConnection, NotABoundState,
                     NotUnitary, ScanTooCoarse)
from .jost import JostSample, lambda_channel, solve_jost, wronskian
from .potentials import Potential

TWO_PI = 2.0 * np.pi
MATCH_GRID = np.linspace(-0.02, 0.02, 5)


def band_edge_eps(p: Potential) -> float:
    return 1e-4 * (1.0 + (p.mu2 - p.mu1))


def band_index(p: Potential, mu: float, eps: float | None = None) -> int:
    """1 for (mu1, mu2), 2 for (mu2, inf); BandEdge off the open bands."""
    eps = band_edge_eps(p) if eps is None else eps
    if mu > p.mu2 + eps:
        return 2
    if p.mu1 + eps < mu < p.mu2 - eps:
        return 1
    raise BandEdge(f"mu = {mu} not inside an open band of ({p.a_minus}, {p.a_plus}) "
                   f"with edge margin {eps:.3g}")


def abs_lambda_prime(mu: float, a: float) -> float:
    """|d lambda_1 / d mu| = 1 / (2 sqrt|mu - a|)."""
    return 1.0 / (2.0 * np.sqrt(abs(mu - a)))


# ---------------------------------------------------------------------------
# connection matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConnectionMatrices:
    mu: float
    k: int
    r_plus: int
    r_minus: int
    A_plus: np.ndarray    # k x (1 + r_plus), columns nu = 1 .. 1+r_plus
    A_minus: np.ndarray   # k x (1 + r_minus), columns nu = 2-r_minus .. 2
    B: np.ndarray
    C: np.ndarray


def _pack_B_C(A_plus, A_minus, k, r_plus, r_minus):
    """Open-channel packings; A- columns are stored with nu ascending."""
    def a_minus_col(nu):
        return A_minus[:, nu - (2 - r_minus)]

    B = np.empty((k, k), dtype=complex)
    C = np.empty((k, k), dtype=complex)
    for col in range(1, k + 1):
        B[:, col - 1] = (A_plus[:, col - 1] if col <= r_plus
                         else a_minus_col(col - r_plus + r_minus))
        C[:, col - 1] = (a_minus_col(col) if col <= r_minus
                         else A_plus[:, col + r_plus - r_minus - 1])
    return B, C


def _coeffs_at_zero(y, yp, b1, b1p, b2, b2p) -> tuple[complex, complex]:
    """Solve y = c1*b1 + c2*b2 matching value and derivative at one point."""
    det = b1 * b2p - b1p * b2
    c1 = (y * b2p - yp * b2) / det
    c2 = (b1 * yp - b1p * y) / det
    return c1, c2


def _jost_at_zero(p: Potential, mu: float, side: str, j: int, **kw):
    s = solve_jost(p, mu, side, j, MATCH_GRID, **kw)
    mid = MATCH_GRID.size // 2
    return s.y[mid], s.y_prime[mid]


def _raw_connection(p: Potential, mu: float, eps: float | None = None,
                    rtol: float = 1e-11):
    """Raw (unnormalized) coefficient matrices from Jost matching at x = 0.

    For real mu and real q the conjugate of a Jost solution is the other
    channel of the same side, so one ODE solve per side suffices.
    """
    k = band_index(p, mu, eps)
    r_plus = 1 if mu > p.a_plus else 0
    r_minus = 1 if mu > p.a_minus else 0

    dlp = abs_lambda_prime(mu, p.a_plus)
    dlm = abs_lambda_prime(mu, p.a_minus)

    if k == 2:
        y1p_0, y1p_d = _jost_at_zero(p, mu, "plus", 1, rtol=rtol)
        y2m_0, y2m_d = _jost_at_zero(p, mu, "minus", 2, rtol=rtol)
        y2p_0, y2p_d = np.conj(y1p_0), np.conj(y1p_d)
        y1m_0, y1m_d = np.conj(y2m_0), np.conj(y2m_d)
        # raw basis phi_l = y_l^+; expand each in the minus Jost basis
        A_plus = np.diag([np.sqrt(TWO_PI / dlp)] * 2).astype(complex)
        A_minus = np.empty((2, 2), dtype=complex)
        for row, (y0, yd) in enumerate(((y1p_0, y1p_d), (y2p_0, y2p_d))):
            c1, c2 = _coeffs_at_zero(y0, yd, y1m_0, y1m_d, y2m_0, y2m_d)
            A_minus[row, 0] = np.sqrt(TWO_PI / dlm) * c1
            A_minus[row, 1] = np.sqrt(TWO_PI / dlm) * c2
        return ConnectionMatrices(mu, k, r_plus, r_minus, A_plus, A_minus,
                                  *_pack_B_C(A_plus, A_minus, k, r_plus, r_minus))

    if r_plus == 0:
        # plus side closed: the bounded solution is y_1^+, oscillating on the left
        y0, yd = _jost_at_zero(p, mu, "plus", 1, rtol=rtol)
        y1m_0, y1m_d = _jost_at_zero(p, mu, "minus", 1, rtol=rtol)
        y2m_0, y2m_d = np.conj(y1m_0), np.conj(y1m_d)
        c1, c2 = _coeffs_at_zero(y0, yd, y1m_0, y1m_d, y2m_0, y2m_d)
        A_plus = np.array([[np.sqrt(TWO_PI / dlp)]], dtype=complex)
        A_minus = np.array([[np.sqrt(TWO_PI / dlm) * c1,
                             np.sqrt(TWO_PI / dlm) * c2]])
    else:
        # minus side closed: the bounded solution is y_2^-, oscillating on the right
        y0, yd = _jost_at_zero(p, mu, "minus", 2, rtol=rtol)
        y1p_0, y1p_d = _jost_at_zero(p, mu, "plus", 1, rtol=rtol)
        y2p_0, y2p_d = np.conj(y1p_0), np.conj(y1p_d)
        c1, c2 = _coeffs_at_zero(y0, yd, y1p_0, y1p_d, y2p_0, y2p_d)
        A_plus = np.array([[np.sqrt(TWO_PI / dlp) * c1,
                            np.sqrt(TWO_PI / dlp) * c2]])
        A_minus = np.array([[np.sqrt(TWO_PI / dlm)]], dtype=complex)
    return ConnectionMatrices(mu, k, r_plus, r_minus, A_plus, A_minus,
                              *_pack_B_C(A_plus, A_minus, k, r_plus, r_minus))


def _inv_sqrt_hermitian(G: np.ndarray, cond_limit: float = 1e10) -> np.ndarray:
    w, V = np.linalg.eigh(G)
    if w.min() <= 0 or w.max() / w.min() > cond_limit:
        raise DegenerateConnection(
            f"raw connection Gram matrix has eigenvalues {w}; Jost solves are suspect")
    return (V * (1.0 / np.sqrt(w))) @ V.conj().T


def connection_matrices(p: Potential, mu: float, eps: float | None = None,
                        rtol: float = 1e-11, unitary_tol: float = 1e-8) -> ConnectionMatrices:
    """Normalized connection matrices at mu: B unitary via its left polar factor.

    The normalization freedom is a unitary mixing of the bounded system, so
    the scattering matrix downstream does not depend on this choice; C comes
    out unitary automatically (it is checked, as a solver diagnostic).
    """
    raw = _raw_connection(p, mu, eps, rtol)
    M = _inv_sqrt_hermitian(raw.B @ raw.B.conj().T)
    A_plus = M @ raw.A_plus
    A_minus = M @ raw.A_minus
    B = M @ raw.B
    C = M @ raw.C
    eye = np.eye(raw.k)
    db = np.abs(B @ B.conj().T - eye).max()
    dc = np.abs(C @ C.conj().T - eye).max()
    if db > unitary_tol or dc > unitary_tol:
        raise DegenerateConnection(
            f"normalized packings fail unitarity at mu={mu}: |BB*-I|={db:.2e}, "
            f"|CC*-I|={dc:.2e}")
    return ConnectionMatrices(raw.mu, raw.k, raw.r_plus, raw.r_minus,
                              A_plus, A_minus, B, C)


def unitary_mix(c: ConnectionMatrices, U: np.ndarray,
                tol: float = 1e-10) -> ConnectionMatrices:
    """Replace the bounded system by U * phi; all matrices mix on the left."""
    U = np.asarray(U, dtype=complex)
    if U.shape != (c.k, c.k):
        raise NotUnitary(f"mixing matrix must be {c.k}x{c.k}, got {U.shape}")
    defect = np.abs(U @ U.conj().T - np.eye(c.k)).max()
    if defect > tol:
        raise NotUnitary(f"|U U* - I| = {defect:.3e} exceeds {tol}")
    return ConnectionMatrices(c.mu, c.k, c.r_plus, c.r_minus,
                              U @ c.A_plus, U @ c.A_minus, U @ c.B, U @ c.C)


def scattering_matrix_from_connection(p: Potential, c: ConnectionMatrices) -> np.ndarray:
    """S+ = M* M with M_{l nu} = sqrt|lam'_nu+| A+_{l nu}; Hermitian PSD."""
    dl = abs_lambda_prime(c.mu, p.a_plus)
    M = np.sqrt(dl) * c.A_plus
    return M.conj().T @ M


def scattering_matrix(p: Potential, mu: float, eps: float | None = None,
                      rtol: float = 1e-11) -> np.ndarray:
    return scattering_matrix_from_connection(p, connection_matrices(p, mu, eps, rtol))


# ---------------------------------------------------------------------------
# point spectrum
# ---------------------------------------------------------------------------

def _decay_wronskian(p: Potential, mu: float, rtol: float = 1e-11) -> float:
    """W(mu) = y1+ (y2-)' - (y1+)' y2- at x = 0; real below mu1, zero at eigenvalues."""
    y1, y1d = _jost_at_zero(p, mu, "plus", 1, rtol=rtol)
    y2, y2d = _jost_at_zero(p, mu, "minus", 2, rtol=rtol)
    w = wronskian(y1, y1d, y2, y2d)
    return float(w.real)


def default_mu_floor(p: Potential) -> float:
    lo, hi = p.support(1e-12)
    xs = np.linspace(min(lo, -1.0), max(hi, 1.0), 2001)
    return float(p(xs).min()) - 1.0


def find_bound_states(p: Potential, mu_floor: float | None = None,
                      scan_step: float | None = None, rtol: float = 1e-11,
                      refine_tol: float = 1e-12) -> list[float]:
    """Eigenvalues of L below mu1 by Wronskian sign scan plus bisection.

    The scan must be fine enough to separate neighboring eigenvalues; two
    roots inside one step raise ScanTooCoarse.
    """
    eps = band_edge_eps(p)
    if mu_floor is None:
        mu_floor = default_mu_floor(p)
    top = p.mu1 - eps
    if mu_floor >= top:
        return []
    if scan_step is None:
        scan_step = (top - mu_floor) / 160.0
    n = max(int(np.ceil((top - mu_floor) / scan_step)) + 1, 2)
    mus = np.linspace(mu_floor, top, n)
    vals = np.array([_decay_wronskian(p, float(m), rtol) for m in mus])
    roots: list[float] = []
    for i in range(n - 1):
        if vals[i] == 0.0:
            roots.append(float(mus[i]))
        elif vals[i] * vals[i + 1] < 0.0:
            roots.append(float(brentq(lambda m: _decay_wronskian(p, m, rtol),
                                      mus[i], mus[i + 1], xtol=refine_tol)))
    roots.sort()
    for a, b in zip(roots[:-1], roots[1:]):
        if b - a < scan_step:
            raise ScanTooCoarse(
                f"eigenvalues {a} and {b} closer than the scan step {scan_step}; "
                "shrink scan_step")
    return roots


def norming_constant(p: Potential, mu: float, rtol: float = 1e-11,
                     wronskian_tol: float = 1e-6, n_grid: int = 4001) -> float:
    """N+ = 1 / ||y1+(., mu)||^2 for an eigenvalue mu < mu1.

    The L2 norm runs over a wide sampled window plus the exact exponential
    tails of both asymptotics.
    """
    if mu >= p.mu1:
        raise NotABoundState(f"mu = {mu} is not below mu1 = {p.mu1}")
    if abs(_decay_wronskian(p, mu, rtol)) > wronskian_tol:
        raise NotABoundState(f"Wronskian at mu = {mu} exceeds {wronskian_tol}")
    lo, hi = p.support(1e-14)
    x_r = max(hi, 0.0) + 10.0
    x_l = min(lo, 0.0) - 10.0
    grid = np.linspace(x_l, x_r, n_grid)
    s = solve_jost(p, mu, "plus", 1, grid, rtol=rtol)
    y2 = np.abs(s.y) ** 2
    core = float(simpson(y2, x=grid))
    kp = np.sqrt(p.a_plus - mu)
    km = np.sqrt(p.a_minus - mu)
    tail_r = y2[-1] / (2.0 * kp)
    tail_l = y2[0] / (2.0 * km)
    return 1.0 / (core + tail_r + tail_l)


# ---------------------------------------------------------------------------
# scattering data container and serialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandSamples:
    interval: tuple[float, float]
    mu: np.ndarray                 # sorted ascending, strictly inside interval
    S: np.ndarray                  # (n, m, m) complex, m = 1 + r_plus on the band

    @property
    def order(self) -> int:
        return self.S.shape[1] if self.S.size else 0


@dataclass(frozen=True)
class ScatteringData:
    a_minus: float
    a_plus: float
    bound_states: tuple[tuple[float, float], ...]   # (mu, N_plus)
    bands: tuple[BandSamples, BandSamples]

    @property
    def mu1(self) -> float:
        return min(self.a_minus, self.a_plus)

    @property
    def mu2(self) -> float:
        return max(self.a_minus, self.a_plus)

    @property
    def mu_last(self) -> float:
        return float(self.bands[1].mu[-1]) if self.bands[1].mu.size else self.mu2


def default_band_grids(p: Potential, band_samples: int = 200,
                       mu_max: float | None = None,
                       eps: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample grids clustered toward the band edges.

    Band 1 uses mu = mu1 + (mu2 - mu1) sin^2(pi t / 2) on a uniform t-grid,
    which makes both local momenta trigonometric in t; band 2 uses
    mu = mu2 + v^2 on a uniform v-grid (quadratic clustering at mu2 plus a
    plain tail out to mu_max).
    """
    eps = band_edge_eps(p) if eps is None else eps
    margin = 2.0 * eps          # keep samples strictly inside the edge guard
    mu1, mu2 = p.mu1, p.mu2
    if mu_max is None:
        mu_max = mu2 + 100.0
    width = mu2 - mu1
    if width > 4.0 * eps:
        t_lo = (2.0 / np.pi) * np.arcsin(np.sqrt(margin / width))
        t = np.linspace(t_lo, 1.0 - t_lo, band_samples)
        band1 = mu1 + width * np.sin(0.5 * np.pi * t) ** 2
    else:
        band1 = np.empty(0)
    v_lo = np.sqrt(margin)
    v_hi = np.sqrt(mu_max - mu2)
    band2 = mu2 + np.linspace(v_lo, v_hi, band_samples) ** 2
    return band1, band2


def forward_scatter(p: Potential, band_grids=None, mu_floor: float | None = None,
                    band_samples: int = 200, mu_max: float | None = None,
                    rtol: float = 1e-11, scan_step: float | None = None) -> ScatteringData:
    """Right scattering data: bound states with norming constants plus S+ samples."""
    if band_grids is None:
        band_grids = default_band_grids(p, band_samples, mu_max)
    band1_mu, band2_mu = (np.asarray(g, dtype=float) for g in band_grids)

    bound = []
    for mu_b in find_bound_states(p, mu_floor, scan_step, rtol):
        bound.append((mu_b, norming_constant(p, mu_b, rtol)))

    out_bands = []
    for grid, interval in ((band1_mu, (p.mu1, p.mu2)),
                           (band2_mu, (p.mu2, float(band2_mu[-1]) if band2_mu.size
                                       else p.mu2))):
        mats = [scattering_matrix(p, float(m), rtol=rtol) for m in grid]
        if mats:
            order = mats[0].shape[0]
            S = np.stack(mats)
        else:
            order = 0
            S = np.empty((0, 0, 0), dtype=complex)
        out_bands.append(BandSamples(interval=interval, mu=grid, S=S))
    return ScatteringData(a_minus=p.a_minus, a_plus=p.a_plus,
                          bound_states=tuple(bound),
                          bands=(out_bands[0], out_bands[1]))


def scattering_data_to_dict(d: ScatteringData) -> dict:
    return {
        "a_minus": d.a_minus,
        "a_plus": d.a_plus,
        "bound_states": [{"mu": mu, "N": n} for mu, n in d.bound_states],
        "bands": [
            {
                "interval": [band.interval[0], band.interval[1]],
                "samples": [
                    {
                        "mu": float(mu),
                        "S_re": band.S[i].real.tolist(),
                        "S_im": band.S[i].imag.tolist(),
                    }
                    for i, mu in enumerate(band.mu)
                ],
            }
            for band in d.bands
        ],
    }


def scattering_data_from_dict(obj: dict) -> ScatteringData:
    bands = []
    for band in obj["bands"]:
        mus = np.array([s["mu"] for s in band["samples"]], dtype=float)
        mats = [np.array(s["S_re"]) + 1j * np.array(s["S_im"]) for s in band["samples"]]
        S = np.stack(mats) if mats else np.empty((0, 0, 0), dtype=complex)
        bands.append(BandSamples(interval=(float(band["interval"][0]),
                                           float(band["interval"][1])),
                                 mu=mus, S=S))
    return ScatteringData(
        a_minus=float(obj["a_minus"]),
        a_plus=float(obj["a_plus"]),
        bound_states=tuple((float(b["mu"]), float(b["N"])) for b in obj["bound_states"]),
        bands=(bands[0], bands[1]),
    )


def save_scattering_data(d: ScatteringData, path) -> None:
    with open(path, "w") as fh:
        json.dump(scattering_data_to_dict(d), fh, indent=1)
        fh.write("\n")


def load_scattering_data(path) -> ScatteringData:
    with open(path) as fh:
        return scattering_data_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# generalized eigenfunctions and the Parseval validator
# ---------------------------------------------------------------------------

def bounded_eigenfunctions(p: Potential, mu: float, x_grid,
                           rtol: float = 1e-11) -> np.ndarray:
    """Normalized bounded solutions phi_j(x, mu) sampled on x_grid, shape (k, n)."""
    x_grid = np.asarray(x_grid, dtype=float)
    k = band_index(p, mu)
    if k == 2:
        s1 = solve_jost(p, mu, "plus", 1, x_grid, rtol=rtol)
        raw = np.stack([s1.y, np.conj(s1.y)])
    elif p.a_plus > p.a_minus:
        raw = solve_jost(p, mu, "plus", 1, x_grid, rtol=rtol).y[None, :]
    else:
        raw = solve_jost(p, mu, "minus", 2, x_grid, rtol=rtol).y[None, :]
    conn = _raw_connection(p, mu, rtol=rtol)
    M = _inv_sqrt_hermitian(conn.B @ conn.B.conj().T)
    return M @ raw


def bound_eigenfunction(p: Potential, mu: float, x_grid,
                        rtol: float = 1e-11) -> np.ndarray:
    """L2-normalized eigenfunction psi(., mu) = sqrt(N+) y1+ on x_grid."""
    n_plus = norming_constant(p, mu, rtol)
    s = solve_jost(p, mu, "plus", 1, np.asarray(x_grid, dtype=float), rtol=rtol)
    return np.sqrt(n_plus) * s.y.real


def parseval_residual(p: Potential, d: ScatteringData, x_grid, f_values,
                      rtol: float = 1e-10) -> float:
    """Relative defect of the generalized Parseval equality for one probe f.

    |  ||f||^2 - sum_j |<f, psi_j>|^2 - sum_bands int sum_j |F_j(mu)|^2 dmu  |
    normalized by ||f||^2.  All inner products by trapezoid on f's grid; the
    mu-integrals by trapezoid in the band's clustered coordinate.
    """
    x = np.asarray(x_grid, dtype=float)
    f = np.asarray(f_values, dtype=float)
    norm2 = float(np.trapezoid(f * f, x))
    if norm2 == 0.0:
        return 0.0
    total = discrete_parseval_part(p, d, x, f, rtol)
    total += continuous_parseval_part(p, d, x, f, rtol)
    return abs(norm2 - total) / norm2


def discrete_parseval_part(p: Potential, d: ScatteringData, x, f,
                           rtol: float = 1e-10) -> float:
    part = 0.0
    for mu_b, _ in d.bound_states:
        psi = bound_eigenfunction(p, mu_b, x, rtol)
        part += float(np.trapezoid(f * psi, x)) ** 2
    return part


def continuous_parseval_part(p: Potential, d: ScatteringData, x, f,
                             rtol: float = 1e-10) -> float:
    total = 0.0
    width = d.mu2 - d.mu1
    for band_no, band in enumerate(d.bands, start=1):
        if band.mu.size < 2:
            continue
        dens = np.empty(band.mu.size)
        for i, mu in enumerate(band.mu):
            phi = bounded_eigenfunctions(p, float(mu), x, rtol)
            coeff = np.trapezoid(f[None, :] * np.conj(phi), x, axis=1)
            dens[i] = float(np.sum(np.abs(coeff) ** 2))
        if band_no == 1:
            t = (2.0 / np.pi) * np.arcsin(np.sqrt((band.mu - d.mu1) / width))
            jac = width * 0.5 * np.pi * np.sin(np.pi * t)
            total += float(np.trapezoid(dens * jac, t))
        else:
            v = np.sqrt(band.mu - d.mu2)
            total += float(np.trapezoid(dens * 2.0 * v, v))
    return total
