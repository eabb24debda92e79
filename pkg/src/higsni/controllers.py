"""Controller constructions on top of negative-imaginary plants.

Covers the linear integral resonant controller Gamma/(s - Gamma D), its
PII^2 generalization (k_p + k1/s + k2/s^2 closed around feedthrough D),
and the hybrid variant that replaces the proportional-integral channels by
three HIGS elements H1, H2, H3 with H2->H3 in series, all sharing the loop
error e except H3, whose input is H2's output.

Both linear controllers arise from C(s)/(1 - C(s) D) and are strictly
negative imaginary for admissible gains; their DC gain is -1/D.  Stability
of the positive-feedback interconnection with an NI plant comes down to
DC conditions: kappa_tilde * G(0) < 1 for the single-element loop and
D < -G(0) for the PII^2 family.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Tuple

import numpy as np

from .higs import HigsMode, HigsParams, determine_mode_base, MODE_BOUNDARY_RTOL
from .lti import RationalTF, StateSpace, dc_gain


class CascadeAssumptionViolated(ValueError):
    """The series pair needs k_h2 = k_h3 and omega_h2 < omega_h3."""


class UnsolvableLoop(RuntimeError):
    """The algebraic error equation degenerated (should not happen for D < 0)."""


class InvalidParameters(ValueError):
    """Parameter combination outside the admissible set."""


@dataclass(frozen=True)
class IrcParams:
    """Integral resonant controller Gamma/s closed around feedthrough D."""

    Gamma: float
    D: float

    def __post_init__(self):
        object.__setattr__(self, "Gamma", float(self.Gamma))
        object.__setattr__(self, "D", float(self.D))
        if not (self.Gamma > 0.0 and np.isfinite(self.Gamma)):
            raise InvalidParameters(f"Gamma must be finite and > 0, got {self.Gamma}")
        if not (self.D < 0.0 and np.isfinite(self.D)):
            raise InvalidParameters(f"D must be finite and < 0, got {self.D}")


@dataclass(frozen=True)
class Pii2Params:
    """PII^2 gains k_p, k1, k2 > 0 and feedthrough D < 0."""

    k_p: float
    k1: float
    k2: float
    D: float

    def __post_init__(self):
        for name in ("k_p", "k1", "k2", "D"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("k_p", "k1", "k2"):
            v = getattr(self, name)
            if not (v > 0.0 and np.isfinite(v)):
                raise InvalidParameters(f"{name} must be finite and > 0, got {v}")
        if not (self.D < 0.0 and np.isfinite(self.D)):
            raise InvalidParameters(f"D must be finite and < 0, got {self.D}")


@dataclass(frozen=True)
class HigsPii2Params:
    """Hybrid PII^2: proportional gain k_p, feedthrough D, elements h1..h3.

    gamma = 1/(1 - D k_p) > 0 is derived.  The series pair must satisfy
    k_h2 = k_h3 and omega_h2 < omega_h3 or the joint storage argument for
    H2->H3 breaks down.
    """

    k_p: float
    D: float
    h1: HigsParams
    h2: HigsParams
    h3: HigsParams
    gamma: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "k_p", float(self.k_p))
        object.__setattr__(self, "D", float(self.D))
        if not (self.k_p > 0.0 and np.isfinite(self.k_p)):
            raise InvalidParameters(f"k_p must be finite and > 0, got {self.k_p}")
        if not (self.D < 0.0 and np.isfinite(self.D)):
            raise InvalidParameters(f"D must be finite and < 0, got {self.D}")
        for name in ("h1", "h2", "h3"):
            if not isinstance(getattr(self, name), HigsParams):
                raise InvalidParameters(f"{name} must be a HigsParams instance")
        if self.h2.k_h != self.h3.k_h:
            raise CascadeAssumptionViolated(
                f"k_h2 = {self.h2.k_h} must equal k_h3 = {self.h3.k_h}"
            )
        if not (self.h2.omega_h < self.h3.omega_h):
            raise CascadeAssumptionViolated(
                f"omega_h2 = {self.h2.omega_h} must be < omega_h3 = {self.h3.omega_h}"
            )
        object.__setattr__(self, "gamma", 1.0 / (1.0 - self.D * self.k_p))

    def gain_sum(self) -> float:
        return self.h1.k_h + self.h2.k_h ** 2 + self.k_p


class ModeTriple(NamedTuple):
    h1: HigsMode
    h2: HigsMode
    h3: HigsMode


def irc_tf(p: IrcParams) -> RationalTF:
    """K(s) = Gamma / (s - Gamma D)."""
    return RationalTF((p.Gamma,), (1.0, -p.Gamma * p.D))


def pii2rc_tf(p: Pii2Params) -> RationalTF:
    """K(s) = (k_p s^2 + k1 s + k2) / ((1 - k_p D) s^2 - k1 D s - k2 D)."""
    return RationalTF((p.k_p, p.k1, p.k2), (1.0 - p.k_p * p.D, -p.k1 * p.D, -p.k2 * p.D))


def pii2rc_sni_value(omega: float, p: Pii2Params) -> float:
    """Closed form of j*(K(jw) - conj K(jw)) for the PII^2 controller.

    Equals 2 k1 w^3 / (((1 - k_p D) w^2 + k2 D)^2 + (k1 D w)^2), strictly
    positive for all w > 0, which is the strict-NI frequency condition.
    Evaluated in exact rational arithmetic with one final rounding: the
    two terms of the first square cancel near the denominator resonance,
    where plain double evaluation loses seven digits.
    """
    w = Fraction(float(omega))
    k_p, k1, k2, D = (Fraction(v) for v in (p.k_p, p.k1, p.k2, p.D))
    a = (1 - k_p * D) * w * w + k2 * D
    b = k1 * D * w
    return float(2 * k1 * w ** 3 / (a * a + b * b))


@dataclass(frozen=True)
class StabilityVerdict:
    """DC-gain stability condition outcome; margin > 0 means strictly met."""

    passed: bool
    margin: float
    condition: str
    plant_dc: float


def check_irc_stability(plant: StateSpace, kappa_tilde: float) -> StabilityVerdict:
    """Strict condition kappa_tilde * G(0) < 1 for the single-element loop."""
    g0 = dc_gain(plant)
    margin = 1.0 - float(kappa_tilde) * g0
    return StabilityVerdict(
        passed=margin > 0.0,
        margin=margin,
        condition="kappa_tilde * G(0) < 1",
        plant_dc=g0,
    )


def check_pii2_stability(plant: StateSpace, D: float) -> StabilityVerdict:
    """Strict condition D < -G(0) shared by the PII^2 family."""
    g0 = dc_gain(plant)
    margin = -g0 - float(D)
    return StabilityVerdict(
        passed=margin > 0.0,
        margin=margin,
        condition="D < -G(0)",
        plant_dc=g0,
    )


def gain_sum_admissible(p: HigsPii2Params, plant_dc: float, tol: float = 1e-9) -> bool:
    """k_h1 + k_h2^2 + k_p must avoid 1/(G(0) + D) (no finite exclusion if
    G(0) + D = 0)."""
    denom = plant_dc + p.D
    if abs(denom) <= tol:
        return True
    target = 1.0 / denom
    return abs(p.gain_sum() - target) > tol * max(1.0, abs(target))


def pii2_effective_states(
    e: float,
    states: Tuple[float, float, float],
    modes: ModeTriple,
    p: HigsPii2Params,
) -> Tuple[float, float, float]:
    """Element outputs with gain-mode algebraic substitutions applied."""
    x1, x2, x3 = states
    x1e = p.h1.k_h * e if modes.h1 == HigsMode.GAIN else x1
    x2e = p.h2.k_h * e if modes.h2 == HigsMode.GAIN else x2
    x3e = p.h3.k_h * x2e if modes.h3 == HigsMode.GAIN else x3
    return x1e, x2e, x3e


def resolve_pii2_error_signal(
    y: float,
    x_h1: float,
    x_h2: float,
    x_h3: float,
    modes: ModeTriple,
    p: HigsPii2Params,
    tol: float = 1e-12,
) -> Tuple[float, float]:
    """Solve the algebraic loop e = gamma*y + gamma*D*(x_h1 + x_h3) for e.

    Gain-mode elements are substituted (x_h1 -> k_h1 e, x_h2 -> k_h2 e,
    x_h3 -> k_h3 * input of H3), making the equation linear in e with a
    denominator 1 - gamma*D*(...) >= 1 for D < 0.  Returns (e, u) with
    u = x_h1 + x_h3 + k_p e evaluated on the substituted values.
    """
    g1, g2, g3 = modes.h1 == HigsMode.GAIN, modes.h2 == HigsMode.GAIN, modes.h3 == HigsMode.GAIN
    a = 0.0
    b = 0.0
    if g1:
        a += p.h1.k_h
    else:
        b += x_h1
    if g3:
        if g2:
            a += p.h3.k_h * p.h2.k_h
        else:
            b += p.h3.k_h * x_h2
    else:
        b += x_h3
    denom = 1.0 - p.gamma * p.D * a
    if abs(denom) <= tol:
        raise UnsolvableLoop(f"degenerate error equation, denominator {denom}")
    e = p.gamma * (y + p.D * b) / denom
    x1e, _, x3e = pii2_effective_states(e, (x_h1, x_h2, x_h3), modes, p)
    u = x1e + x3e + p.k_p * e
    return e, u


def resolve_pii2_error_rate(
    y_dot: float,
    e: float,
    states: Tuple[float, float, float],
    modes: ModeTriple,
    p: HigsPii2Params,
    tol: float = 1e-12,
) -> float:
    """de/dt consistent with the active modes.

    Differentiating the error equation couples de/dt back through gain-mode
    elements (their rates are k_h * de/dt), so the rate solves a linear
    equation of the same shape as the error itself.  Integrator-mode rates
    contribute omega_h terms evaluated at the current e.
    """
    g1, g2, g3 = modes.h1 == HigsMode.GAIN, modes.h2 == HigsMode.GAIN, modes.h3 == HigsMode.GAIN
    _, x2e, _ = pii2_effective_states(e, states, modes, p)
    a = 0.0
    beta = 0.0
    if g1:
        a += p.h1.k_h
    else:
        beta += p.h1.omega_h * e
    if g3:
        if g2:
            a += p.h3.k_h * p.h2.k_h
        else:
            beta += p.h3.k_h * p.h2.omega_h * e
    else:
        beta += p.h3.omega_h * x2e
    denom = 1.0 - p.gamma * p.D * a
    if abs(denom) <= tol:
        raise UnsolvableLoop(f"degenerate error-rate equation, denominator {denom}")
    return p.gamma * (y_dot + p.D * beta) / denom


def higs_pii2_mode_update(
    e: float,
    e_dot: float,
    states: Tuple[float, float, float],
    p: HigsPii2Params,
    tol: float = MODE_BOUNDARY_RTOL,
) -> ModeTriple:
    """Per-element mode decisions with H3 driven by H2's output.

    H1 and H2 see (e, de/dt).  H3's input is x_h2, whose rate depends on
    H2's mode decided in this same call: omega_h2 * e when integrating,
    k_h2 * de/dt in gain mode.
    """
    x1, x2, x3 = states
    m1 = determine_mode_base(e, e_dot, x1, p.h1, tol)
    m2 = determine_mode_base(e, e_dot, x2, p.h2, tol)
    if m2 == HigsMode.GAIN:
        e3, e3_dot = p.h2.k_h * e, p.h2.k_h * e_dot
    else:
        e3, e3_dot = x2, p.h2.omega_h * e
    m3 = determine_mode_base(e3, e3_dot, x3, p.h3, tol)
    return ModeTriple(m1, m2, m3)
