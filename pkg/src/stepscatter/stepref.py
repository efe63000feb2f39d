"""Closed-form right scattering matrix of the pure two-sided step.

For q = a^- (x < 0), a^+ (x >= 0) the Jost solutions are plane waves glued
at x = 0, so the whole scattering picture reduces to 2x2 algebra in the
local momenta

    kp = sqrt(mu - a^+),   km = sqrt(mu - a^-),

real or positive-imaginary depending on the band.  With the unitary
normalization the matrix entries come out as

  both channels open (mu > mu2):
      S11 = S22 = 1/(2 kp),      S12 = S21 = -rho/(2 kp),
      rho = (km - kp)/(km + kp)
  plus channel closed (a^- < mu < a^+):
      S11 = 2 km / (a^+ - a^-)                     (order 1)
  minus channel closed (a^+ < mu < a^-):
      S11 = S22 = 1/(2 kp),  S12 = conj(g)/g / (2 kp),  g = (1 - i kappa/kp)/2,
      kappa = sqrt(a^- - mu)                        (order 2, rank 1)

These formulas serve as the analytic background subtracted from sampled
scattering data in the kernel builder, and as a reference in diagnostics.
"""

from __future__ import annotations

import numpy as np


def rho_band2(k: np.ndarray, a_minus: float, a_plus: float) -> np.ndarray:
    """Step reflection weight rho = (km - kp)/(km + kp) with kp = k (real band)."""
    k = np.asarray(k, dtype=float)
    km = np.sqrt(k * k + (a_plus - a_minus))
    return (km - k) / (km + k)


def s11_band1_closed_plus(mu: np.ndarray, a_minus: float, a_plus: float) -> np.ndarray:
    """Order-1 S entry for a^- < mu < a^+ (plus channel closed)."""
    km = np.sqrt(np.asarray(mu, dtype=float) - a_minus)
    return 2.0 * km / (a_plus - a_minus)


def s12_band1_closed_minus(mu: np.ndarray, a_minus: float, a_plus: float) -> np.ndarray:
    """Off-diagonal S entry for a^+ < mu < a^- (minus channel closed)."""
    mu = np.asarray(mu, dtype=float)
    kp = np.sqrt(mu - a_plus)
    kappa = np.sqrt(a_minus - mu)
    g = 0.5 * (1.0 - 1j * kappa / kp)
    return np.conj(g) / g / (2.0 * kp)


def step_scattering_matrix(mu: float, a_minus: float, a_plus: float) -> np.ndarray:
    """S^+(mu) of the pure step, order 1 + r^+(mu)."""
    mu1, mu2 = min(a_minus, a_plus), max(a_minus, a_plus)
    if mu <= mu1 or mu == mu2:
        raise ValueError(f"mu = {mu} outside the open bands of ({a_minus}, {a_plus})")
    if mu > mu2:
        kp = np.sqrt(mu - a_plus)
        km = np.sqrt(mu - a_minus)
        r = (km - kp) / (km + kp)
        return np.array([[1.0, -r], [-r, 1.0]], dtype=complex) / (2.0 * kp)
    if a_plus > a_minus:
        return np.array([[s11_band1_closed_plus(mu, a_minus, a_plus)]], dtype=complex)
    kp = np.sqrt(mu - a_plus)
    s12 = complex(s12_band1_closed_minus(mu, a_minus, a_plus))
    return np.array([[1.0 / (2.0 * kp), s12],
                     [np.conj(s12), 1.0 / (2.0 * kp)]], dtype=complex)
