"""Step-like potentials q(x) -> a^- (x -> -inf), a^+ (x -> +inf).

A potential is a piecewise-constant background (a^-, a^+) plus one deviation
profile.  Admissibility means the two moment integrals are finite:

    m1 = int_{-inf}^0 |q - a^-| dx + int_0^inf |q - a^+| dx
    m2 = int_{-inf}^0 (1 - x) |q - a^-| dx + int_0^inf (1 + x) |q - a^+| dx

and this toolkit always requires the second one (it controls the transform
kernel estimates and keeps the point spectrum finite).  The decay profiles

    h_plus(x)  = int_x^inf |q(t) - a^+| dt
    h1_plus(x) = int_x^inf h_plus(t) dt

feed the kernel bound checks downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NonIntegrableDeviation
from .quadrature import adaptive_simpson

MOMENT_TOL = 1e-10
# quadrature of a tail diverging past this bound signals an inadmissible profile
TAIL_DIVERGENCE_BOUND = 1e12


# ---------------------------------------------------------------------------
# deviation profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoDeviation:
    kind: str = field(default="none", init=False)

    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def support(self, eps: float = 1e-14) -> tuple[float, float]:
        return (0.0, 0.0)

    def breakpoints(self) -> tuple[float, ...]:
        return ()


@dataclass(frozen=True)
class SquareBump:
    """Constant bump of the given height on [x0, x0 + width]."""
    x0: float
    width: float
    height: float
    kind: str = field(default="square", init=False)

    def __post_init__(self):
        if self.width <= 0:
            raise ConfigError("square deviation needs width > 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.x0) & (x <= self.x0 + self.width)
        return np.where(inside, self.height, 0.0)

    def support(self, eps: float = 1e-14) -> tuple[float, float]:
        return (self.x0, self.x0 + self.width)

    def breakpoints(self) -> tuple[float, ...]:
        return (self.x0, self.x0 + self.width)


@dataclass(frozen=True)
class GaussianBump:
    """amplitude * exp(-((x - center) / width)^2 / 2)."""
    amplitude: float
    center: float
    width: float
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        if self.width <= 0:
            raise ConfigError("gaussian deviation needs width > 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.center) / self.width
        return self.amplitude * np.exp(-0.5 * z * z)

    def support(self, eps: float = 1e-14) -> tuple[float, float]:
        if self.amplitude == 0.0:
            return (self.center, self.center)
        # |dev| < eps outside center +- r
        r = self.width * np.sqrt(2.0 * max(np.log(abs(self.amplitude) / eps), 1.0))
        return (self.center - r, self.center + r)

    def breakpoints(self) -> tuple[float, ...]:
        return ()


@dataclass(frozen=True)
class ExpTail:
    """amplitude * exp(-rate * |x|), two-sided exponential deviation."""
    amplitude: float
    rate: float
    kind: str = field(default="exp_tail", init=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.exp(-self.rate * np.abs(x))

    def support(self, eps: float = 1e-14) -> tuple[float, float]:
        if self.amplitude == 0.0:
            return (0.0, 0.0)
        if self.rate <= 0.0:
            # no decay: report a huge nominal support; moment_report rejects it
            return (-np.inf, np.inf)
        r = max(np.log(abs(self.amplitude) / eps), 1.0) / self.rate
        return (-r, r)

    def breakpoints(self) -> tuple[float, ...]:
        return (0.0,)


@dataclass(frozen=True)
class Tabulated:
    """Piecewise-linear profile on a strictly increasing grid, zero outside."""
    x: tuple[float, ...]
    values: tuple[float, ...]
    kind: str = field(default="tabulated", init=False)

    def __post_init__(self):
        xs = np.asarray(self.x, dtype=float)
        vs = np.asarray(self.values, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.size != vs.size:
            raise ConfigError("tabulated deviation needs matching 1-d x/values, >= 2 points")
        if not np.all(np.diff(xs) > 0):
            raise ConfigError("tabulated abscissae must be strictly increasing")
        if not np.all(np.isfinite(vs)):
            raise ConfigError("tabulated values must be finite")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xs = np.asarray(self.x)
        vs = np.asarray(self.values)
        out = np.interp(x, xs, vs, left=0.0, right=0.0)
        # np.interp clamps; force zero outside the compact support
        return np.where((x < xs[0]) | (x > xs[-1]), 0.0, out)

    def support(self, eps: float = 1e-14) -> tuple[float, float]:
        return (self.x[0], self.x[-1])

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(self.x)


Deviation = NoDeviation | SquareBump | GaussianBump | ExpTail | Tabulated


# ---------------------------------------------------------------------------
# the potential itself
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Potential:
    """q(x) = a_minus + dev(x) for x < 0, a_plus + dev(x) for x >= 0.

    Immutable after construction; safe to share across worker threads.
    """
    a_minus: float
    a_plus: float
    deviation: Deviation = NoDeviation()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        base = np.where(x < 0.0, self.a_minus, self.a_plus)
        return base + self.deviation(x)

    @property
    def mu1(self) -> float:
        return min(self.a_plus, self.a_minus)

    @property
    def mu2(self) -> float:
        return max(self.a_plus, self.a_minus)

    def breakpoints(self) -> tuple[float, ...]:
        """Points where q or its derivative may jump (always includes 0)."""
        pts = set(self.deviation.breakpoints())
        pts.add(0.0)
        return tuple(sorted(pts))

    def support(self, eps: float = 1e-14) -> tuple[float, float]:
        """Interval outside which the deviation magnitude is below eps."""
        return self.deviation.support(eps)


def eval_q(p: Potential, x: float) -> float:
    """Pointwise potential value; outside tabulated support this is the asymptote."""
    return float(p(np.asarray(x, dtype=float)))


def step_reference(p: Potential) -> Potential:
    """The pure step with the same asymptotes and no deviation."""
    return Potential(p.a_minus, p.a_plus, NoDeviation())


# ---------------------------------------------------------------------------
# moment report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    m1: float
    m2: float
    h_plus_at: dict[float, float]
    h1_plus_at: dict[float, float]


def _check_integrable(p: Potential) -> tuple[float, float]:
    """Return the deviation support, rejecting non-decaying tails."""
    dev = p.deviation
    if isinstance(dev, ExpTail) and dev.rate <= 0.0 and dev.amplitude != 0.0:
        raise NonIntegrableDeviation(
            f"exp_tail rate {dev.rate} does not decay; moment integrals diverge")
    lo, hi = dev.support(1e-15)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NonIntegrableDeviation("deviation support is unbounded")
    # crude divergence guard for pathological tabulated/exp profiles
    probe = abs(dev(np.array([lo, 0.5 * (lo + hi), hi]))).max() * (hi - lo + 1.0)
    if probe > TAIL_DIVERGENCE_BOUND:
        raise NonIntegrableDeviation("tail quadrature exceeds the divergence bound")
    return lo, hi


def _segments(p: Potential, lo: float, hi: float) -> list[tuple[float, float]]:
    cuts = sorted({lo, hi, *(b for b in p.breakpoints() if lo < b < hi)})
    return [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1) if cuts[i + 1] > cuts[i]]


def moment_report(p: Potential, probe_points: list[float] | None = None,
                  tol: float = MOMENT_TOL) -> MomentReport:
    """Evaluate the admissibility integrals and the decay profiles h+, h1+.

    Raises NonIntegrableDeviation when the deviation tail cannot be
    integrated (non-decaying exp_tail, unbounded support).
    """
    lo, hi = _check_integrable(p)
    probe_points = list(probe_points or [])
    dev = p.deviation

    def absdev(x):
        return abs(float(dev(np.asarray(x))))

    m1 = 0.0
    m2 = 0.0
    for a, b in _segments(p, min(lo, 0.0), max(hi, 0.0)):
        m1 += adaptive_simpson(absdev, a, b, tol)
        mid = 0.5 * (a + b)
        weight = (lambda x: (1.0 - x)) if mid < 0.0 else (lambda x: (1.0 + x))
        m2 += adaptive_simpson(lambda x: weight(x) * absdev(x), a, b, tol)

    hp = h_plus_fn(p, tol)
    h1p = h1_plus_fn(p, tol)
    return MomentReport(
        m1=m1,
        m2=m2,
        h_plus_at={float(x): hp(float(x)) for x in probe_points},
        h1_plus_at={float(x): h1p(float(x)) for x in probe_points},
    )


def h_plus_fn(p: Potential, tol: float = MOMENT_TOL) -> Callable[[float], float]:
    """h+(x) = int_x^inf |q(t) - a^+| dt as a callable.

    Piecewise: zero beyond the right edge R of {deviation support, 0};
    adaptive quadrature on the middle; exact linear step contribution
    |a^- - a^+| * (L - x) to the left of L.
    """
    lo, hi = _check_integrable(p)
    L = min(lo, 0.0)
    R = max(hi, 0.0)
    da = abs(p.a_minus - p.a_plus)

    def gplus(t):
        return abs(float(p(np.asarray(t))) - p.a_plus)

    segs = _segments(p, L, R)
    seg_ints = [adaptive_simpson(gplus, a, b, tol) for a, b in segs]
    # cumulative integral from segment start to R
    cum = np.concatenate([np.cumsum(seg_ints[::-1])[::-1], [0.0]])

    def hp(x: float) -> float:
        if x >= R:
            return 0.0
        if x <= L:
            return da * (L - x) + float(cum[0])
        for i, (a, b) in enumerate(segs):
            if x < b:
                return adaptive_simpson(gplus, x, b, tol) + float(cum[i + 1])
        return 0.0

    return hp


def h1_plus_fn(p: Potential, tol: float = MOMENT_TOL,
               grid_step: float = 0.05) -> Callable[[float], float]:
    """h1+(x) = int_x^inf h+(t) dt via a dense table of h+ plus exact tails."""
    lo, hi = _check_integrable(p)
    L = min(lo, 0.0)
    R = max(hi, 0.0)
    da = abs(p.a_minus - p.a_plus)
    hp = h_plus_fn(p, tol)
    n = max(int(np.ceil((R - L) / grid_step)), 8) + 1
    xs = np.linspace(L, R, n)
    vals = np.array([hp(float(x)) for x in xs])
    # int_x^R h+ on the table, trapezoid accumulated from the right
    inc = 0.5 * (vals[1:] + vals[:-1]) * np.diff(xs)
    tail_from = np.zeros(n)
    tail_from[:-1] = np.cumsum(inc[::-1])[::-1]
    h1_at_L = float(tail_from[0])
    hp_L = float(vals[0])

    def h1(x: float) -> float:
        if x >= R:
            return 0.0
        if x <= L:
            # h+(t) = hp(L) + da*(L - t) for t <= L
            d = L - x
            return h1_at_L + hp_L * d + 0.5 * da * d * d
        val = float(np.interp(x, xs, tail_from))
        return val

    return h1


# ---------------------------------------------------------------------------
# JSON spec (shared with the CLI config format)
# ---------------------------------------------------------------------------

def potential_from_dict(spec: dict) -> Potential:
    """Build a Potential from {"a_minus": r, "a_plus": r, "deviation": {...}}."""
    try:
        am = float(spec["a_minus"])
        ap = float(spec["a_plus"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"potential spec needs numeric a_minus/a_plus: {exc}") from exc
    dev_spec = spec.get("deviation", {"kind": "none"}) or {"kind": "none"}
    kind = dev_spec.get("kind", "none")
    try:
        if kind == "none":
            dev: Deviation = NoDeviation()
        elif kind == "square":
            dev = SquareBump(float(dev_spec["x0"]), float(dev_spec["width"]),
                             float(dev_spec["height"]))
        elif kind == "gaussian":
            dev = GaussianBump(float(dev_spec["amplitude"]), float(dev_spec["center"]),
                               float(dev_spec["width"]))
        elif kind == "exp_tail":
            dev = ExpTail(float(dev_spec["amplitude"]), float(dev_spec["rate"]))
        elif kind == "tabulated":
            dev = Tabulated(tuple(float(v) for v in dev_spec["x"]),
                            tuple(float(v) for v in dev_spec["values"]))
        else:
            raise ConfigError(f"unknown deviation kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad deviation spec for kind {kind!r}: {exc}") from exc
    return Potential(am, ap, dev)


def potential_to_dict(p: Potential) -> dict:
    d = p.deviation
    if isinstance(d, NoDeviation):
        dev = {"kind": "none"}
    elif isinstance(d, SquareBump):
        dev = {"kind": "square", "x0": d.x0, "width": d.width, "height": d.height}
    elif isinstance(d, GaussianBump):
        dev = {"kind": "gaussian", "amplitude": d.amplitude, "center": d.center,
               "width": d.width}
    elif isinstance(d, ExpTail):
        dev = {"kind": "exp_tail", "amplitude": d.amplitude, "rate": d.rate}
    else:
        dev = {"kind": "tabulated", "x": list(d.x), "values": list(d.values)}
    return {"a_minus": p.a_minus, "a_plus": p.a_plus, "deviation": dev}
