"""Exception types shared across the toolkit.

All numerical failure modes raise a subclass of ``StepScatterError`` so
callers (and the CLI) can distinguish "bad input" from "solver gave up".
"""


class StepScatterError(Exception):
    """Base class for all toolkit errors."""


class BandEdge(StepScatterError):
    """Spectral parameter too close to a band edge a^- or a^+."""


class NoConvergence(StepScatterError):
    """Successive approximations failed to contract within the iteration cap."""


class GrowingChannel(StepScatterError):
    """Requested a Jost channel that grows on its own side (Im lambda < 0)."""


class DegenerateConnection(StepScatterError):
    """Raw connection matrix numerically singular; Jost solves are suspect."""


class NotUnitary(StepScatterError):
    """Mixing matrix fails the unitarity tolerance."""


class NotABoundState(StepScatterError):
    """Norming constant requested at a mu that is not an eigenvalue."""


class ScanTooCoarse(StepScatterError):
    """Eigenvalue scan step too large: adjacent sign changes unresolved."""


class NonIntegrableDeviation(StepScatterError):
    """Deviation profile violates the first/second moment conditions."""


class TailTooShort(StepScatterError):
    """Estimated spectral truncation tail exceeds tolerance; raise mu_max."""


class IllConditioned(StepScatterError):
    """Discretized Marchenko system condition estimate above the cap."""


class MethodMismatch(StepScatterError):
    """Two independent kernel builds disagree beyond tolerance."""


class ConfigError(StepScatterError):
    """Run configuration missing, malformed, or inconsistent."""
