"""Linear time-invariant core.

State-space and rational transfer-function models for SISO plants, plus the
numerical checks this package leans on everywhere else: frequency response,
DC gain, minimality, and negative-imaginary (NI) certificates of the form

    Y = Y^T > 0,   A Y + Y A^T <= 0,   B + A Y C^T = 0.

A system that passes the certificate check (together with det A != 0 and
minimality, which are reported alongside) is NI with DC gain C Y C^T.
Frequency-domain tests evaluate m(w) = j*(G(jw) - conj(G(jw))), which is
real for SISO systems; NI requires m >= 0 for w > 0 and no poles in the
open right half plane, strict NI additionally requires strictly stable
poles and m > 0 on the tested grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize

RANK_RTOL = 1e-8          # relative singular-value cutoff for rank decisions
POLE_EXCLUSION = 1e-6     # |jw - pole| below this counts as "on a pole"


class SingularA(ValueError):
    """A is singular (beyond tolerance) where an inverse is required."""


class SingularAtFrequency(ValueError):
    """Requested frequency coincides with a system pole."""


class DimensionMismatch(ValueError):
    """Operands have incompatible dimensions."""


def _as_state_vector(v, n: int, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise DimensionMismatch(f"{what} must have {n} entries, got shape {np.shape(v)}")
    return arr


def _smallest_sv_ok(M: np.ndarray, rtol: float = RANK_RTOL) -> bool:
    """True when M is invertible at the working rank tolerance."""
    sv = np.linalg.svd(M, compute_uv=False)
    return bool(sv[-1] > rtol * max(sv[0], 1e-300))


@dataclass(frozen=True)
class StateSpace:
    """SISO realization  dx/dt = A x + B u,  y = C x + D_ff u.

    B and C are accepted as flat vectors or as n x 1 / 1 x n arrays and are
    stored flat.  Arrays are copied and frozen, so instances are safe to
    share across threads and worker processes.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D_ff: float = 0.0

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise DimensionMismatch(f"A must be square with n >= 1, got shape {A.shape}")
        n = A.shape[0]
        B = _as_state_vector(self.B, n, "B")
        C = _as_state_vector(self.C, n, "C")
        for arr in (A, B, C):
            arr.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D_ff", float(self.D_ff))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)


@dataclass(frozen=True)
class RationalTF:
    """Rational transfer function; coefficients in descending powers of s.

    Must be proper (deg num <= deg den) with a nonzero leading denominator
    coefficient.  Leading zeros of the numerator are stripped.
    """

    num: tuple
    den: tuple

    def __post_init__(self):
        num = [float(c) for c in self.num]
        den = [float(c) for c in self.den]
        if not den:
            raise ValueError("denominator must be nonempty")
        if den[0] == 0.0:
            raise ValueError("leading denominator coefficient must be nonzero")
        while len(num) > 1 and num[0] == 0.0:
            num.pop(0)
        if not num:
            num = [0.0]
        if len(num) > len(den):
            raise ValueError("transfer function must be proper (deg num <= deg den)")
        object.__setattr__(self, "num", tuple(num))
        object.__setattr__(self, "den", tuple(den))

    @property
    def order(self) -> int:
        return len(self.den) - 1

    def poles(self) -> np.ndarray:
        if self.order == 0:
            return np.array([], dtype=complex)
        return np.roots(self.den)

    def __call__(self, s: complex) -> complex:
        return complex(np.polyval(self.num, s) / np.polyval(self.den, s))


LinearSystem = Union[StateSpace, RationalTF]


def _poles_of(sys: LinearSystem) -> np.ndarray:
    return sys.poles()


def freq_response(sys: LinearSystem, omega: float, *, pole_tol: float = POLE_EXCLUSION) -> complex:
    """Evaluate the transfer function at s = j*omega.

    Raises SingularAtFrequency when j*omega lies within pole_tol of a pole;
    evaluating there would return garbage dominated by rounding.
    """
    s = 1j * float(omega)
    poles = _poles_of(sys)
    if poles.size and np.min(np.abs(s - poles)) <= pole_tol:
        raise SingularAtFrequency(f"omega={omega} is within {pole_tol} of a pole")
    if isinstance(sys, RationalTF):
        return sys(s)
    rhs = np.linalg.solve(s * np.eye(sys.n) - sys.A, sys.B.astype(complex))
    return complex(sys.C @ rhs + sys.D_ff)


def dc_gain(sys: StateSpace) -> float:
    """G(0) = D_ff - C A^{-1} B.  Raises SingularA when A is not invertible."""
    if not _smallest_sv_ok(sys.A):
        raise SingularA("A is singular; DC gain undefined")
    return float(sys.D_ff - sys.C @ np.linalg.solve(sys.A, sys.B))


def _rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def is_minimal(sys: StateSpace, rtol: float = RANK_RTOL) -> bool:
    """Controllability and observability via staircase-free rank tests."""
    n = sys.n
    ctrb = np.empty((n, n))
    obsv = np.empty((n, n))
    v = sys.B.copy()
    w = sys.C.copy()
    for k in range(n):
        ctrb[:, k] = v
        obsv[k, :] = w
        v = sys.A @ v
        w = w @ sys.A
    return _rank(ctrb, rtol) == n and _rank(obsv, rtol) == n


@dataclass(frozen=True)
class NICertificate:
    """Symmetric candidate Y for the NI conditions of a given realization."""

    Y: np.ndarray

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
            raise DimensionMismatch(f"Y must be square, got shape {Y.shape}")
        if not np.allclose(Y, Y.T, rtol=0.0, atol=1e-9 * max(1.0, float(np.abs(Y).max()))):
            raise ValueError("Y must be symmetric")
        Y = 0.5 * (Y + Y.T)
        Y.flags.writeable = False
        object.__setattr__(self, "Y", Y)


@dataclass(frozen=True)
class CertReport:
    """Outcome of checking one NICertificate against one realization.

    passed is True iff y_min_eig > 0, lyap_max_eig <= tol and
    residual_norm <= tol.  Minimality and det A != 0 are informational;
    together with passed they make the NI conclusion rigorous.
    """

    y_min_eig: float
    lyap_max_eig: float
    residual_norm: float
    y_positive: bool
    lyap_nonpositive: bool
    residual_zero: bool
    minimal: bool
    det_a_nonzero: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.y_positive and self.lyap_nonpositive and self.residual_zero


def verify_ni_certificate(sys: StateSpace, cert: NICertificate, tol: float = 1e-8) -> CertReport:
    """Check Y > 0, A Y + Y A^T <= tol and ||B + A Y C^T|| <= tol."""
    Y = cert.Y
    if Y.shape != (sys.n, sys.n):
        raise DimensionMismatch(f"Y has shape {Y.shape}, expected {(sys.n, sys.n)}")
    y_min = float(np.linalg.eigvalsh(Y)[0])
    S = sys.A @ Y + Y @ sys.A.T
    lyap_max = float(np.linalg.eigvalsh(S)[-1])
    residual = float(np.linalg.norm(sys.B + sys.A @ (Y @ sys.C)))
    return CertReport(
        y_min_eig=y_min,
        lyap_max_eig=lyap_max,
        residual_norm=residual,
        y_positive=y_min > 0.0,
        lyap_nonpositive=lyap_max <= tol,
        residual_zero=residual <= tol,
        minimal=is_minimal(sys),
        det_a_nonzero=_smallest_sv_ok(sys.A),
        tol=float(tol),
    )


def _sym_basis(n: int):
    """Orthogonal-ish basis of symmetric n x n matrices (unit entries)."""
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = 1.0
            E[j, i] = 1.0
            basis.append(E)
    return basis


def search_ni_certificate(
    sys: StateSpace,
    *,
    tol: float = 1e-8,
    margin: float = 1e-6,
    restarts: int = 4,
    seed: int = 0,
    max_dim: int = 10,
    maxiter: int = 4000,
) -> Optional[NICertificate]:
    """Look for a certificate Y on the affine set solving B + A Y C^T = 0.

    The equality constraint is linear in the entries of symmetric Y, so the
    search parameterizes its solution set (particular solution plus null
    space) and runs Nelder-Mead on

        f = max(lambda_max(A Y + Y A^T),  margin - lambda_min(Y)),

    restarting from seeded random points.  Returns the first Y that passes
    verify_ni_certificate, or None when the budget is exhausted.  None is
    inconclusive: it does not prove the system is not NI.
    """
    n = sys.n
    if n > max_dim:
        raise ValueError(f"certificate search supports n <= {max_dim}, got n = {n}")
    if not _smallest_sv_ok(sys.A):
        raise SingularA("A is singular; NI conditions require det A != 0")

    basis = _sym_basis(n)
    m = len(basis)
    # Row i of (A Y C^T + B) = 0 gives a linear system M theta = -B.
    M = np.empty((n, m))
    for k, E in enumerate(basis):
        M[:, k] = sys.A @ (E @ sys.C)
    theta0 = np.linalg.lstsq(M, -sys.B, rcond=None)[0]
    if np.linalg.norm(M @ theta0 + sys.B) > 1e-9 * max(1.0, float(np.linalg.norm(sys.B))):
        return None  # constraint infeasible: no Y satisfies B + A Y C^T = 0

    _, s_full, Vt = np.linalg.svd(M)
    cutoff = RANK_RTOL * (s_full[0] if s_full.size else 1.0)
    null = Vt[np.sum(s_full > cutoff):].T  # m x q

    def assemble(theta: np.ndarray) -> np.ndarray:
        Y = np.zeros((n, n))
        for coef, E in zip(theta, basis):
            Y += coef * E
        return Y

    def objective(xi: np.ndarray) -> float:
        Y = assemble(theta0 + null @ xi)
        lyap = float(np.linalg.eigvalsh(sys.A @ Y + Y @ sys.A.T)[-1])
        ymin = float(np.linalg.eigvalsh(Y)[0])
        return max(lyap, margin - ymin)

    q = null.shape[1]
    rng = np.random.default_rng(seed)
    starts = [np.zeros(q)]
    for _ in range(restarts):
        starts.append(rng.normal(scale=1.0, size=q))
    for xi0 in starts:
        if q == 0:
            xi = xi0
        else:
            res = minimize(
                objective,
                xi0,
                method="Nelder-Mead",
                options={"xatol": 1e-13, "fatol": 1e-13, "maxiter": maxiter, "maxfev": maxiter},
            )
            xi = res.x
        Y = assemble(theta0 + (null @ xi if q else 0.0))
        Y = 0.5 * (Y + Y.T)
        if np.linalg.eigvalsh(Y)[0] <= 0.0:
            continue
        cert = NICertificate(Y)
        if verify_ni_certificate(sys, cert, tol).passed:
            return cert
        if q == 0:
            break
    return None


@dataclass(frozen=True)
class NiFrequencyReport:
    """Grid test of m(w) = j*(G(jw) - conj G(jw)) plus a pole-location check."""

    passed: bool
    min_value: float
    worst_omega: float
    flagged_omegas: tuple
    max_pole_real: float
    has_unstable_pole: bool
    tol: float


@dataclass(frozen=True)
class SniFrequencyReport:
    passed: bool
    min_value: float
    worst_omega: float
    max_pole_real: float
    poles_strictly_stable: bool
    tol: float


def _validate_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0 or not np.all(np.isfinite(g)) or np.any(g <= 0.0):
        raise ValueError("grid must be a nonempty 1-D array of positive finite frequencies")
    return g


def default_grid(lo: float = 1e-3, hi: float = 1e3, n: int = 121) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n)


def ni_frequency_test(
    sys: LinearSystem,
    grid: Optional[Sequence[float]] = None,
    tol: float = 1e-8,
    *,
    pole_tol: float = POLE_EXCLUSION,
) -> NiFrequencyReport:
    """Sampled NI test: no open-RHP poles and m(w) >= -tol on the grid.

    Grid points within pole_tol of a pole are excluded from the minimum and
    reported in flagged_omegas (imaginary-axis poles do not defeat the NI
    property, but m is not evaluable there).
    """
    g = _validate_grid(default_grid() if grid is None else grid)
    poles = _poles_of(sys)
    max_re = float(np.max(poles.real)) if poles.size else -np.inf
    has_rhp = bool(max_re > tol)
    flagged = []
    min_m = np.inf
    worst = float("nan")
    for w in g:
        try:
            G = freq_response(sys, w, pole_tol=pole_tol)
        except SingularAtFrequency:
            flagged.append(float(w))
            continue
        m = float((1j * (G - G.conjugate())).real)
        if m < min_m:
            min_m = m
            worst = float(w)
    passed = (not has_rhp) and (min_m >= -tol or not np.isfinite(min_m))
    return NiFrequencyReport(
        passed=bool(passed),
        min_value=float(min_m),
        worst_omega=worst,
        flagged_omegas=tuple(flagged),
        max_pole_real=max_re,
        has_unstable_pole=has_rhp,
        tol=float(tol),
    )


def sni_frequency_test(
    sys: LinearSystem,
    grid: Optional[Sequence[float]] = None,
    tol: float = 1e-12,
) -> SniFrequencyReport:
    """Sampled strict-NI test: Re[poles] < -tol and m(w) > tol on the grid."""
    g = _validate_grid(default_grid() if grid is None else grid)
    poles = _poles_of(sys)
    max_re = float(np.max(poles.real)) if poles.size else -np.inf
    stable = bool(max_re < -tol)
    min_m = np.inf
    worst = float("nan")
    if stable:
        for w in g:
            try:
                G = freq_response(sys, w)
            except SingularAtFrequency:
                # pole hugging the axis: cannot certify strictness there
                min_m = -np.inf
                worst = float(w)
                break
            m = float((1j * (G - G.conjugate())).real)
            if m < min_m:
                min_m = m
                worst = float(w)
    passed = stable and np.isfinite(min_m) and min_m > tol
    return SniFrequencyReport(
        passed=bool(passed),
        min_value=float(min_m),
        worst_omega=worst,
        max_pole_real=max_re,
        poles_strictly_stable=stable,
        tol=float(tol),
    )


def tf_to_ss(tf: RationalTF) -> StateSpace:
    """Controllable canonical realization of a proper SISO transfer function.

    Requires order >= 1; a static gain has no state and is handled where it
    occurs (closed-loop assembly) rather than here.
    """
    n = tf.order
    if n < 1:
        raise ValueError("static transfer function has no state-space realization here")
    den = np.asarray(tf.den, dtype=float)
    num = np.zeros(n + 1)
    num[n + 1 - len(tf.num):] = tf.num
    a = den[1:] / den[0]
    b = num / den[0]
    A = np.zeros((n, n))
    A[0, :] = -a
    if n > 1:
        A[1:, :-1] = np.eye(n - 1)
    B = np.zeros(n)
    B[0] = 1.0
    C = b[1:] - b[0] * a
    return StateSpace(A, B, C, float(b[0]))


def ss_to_tf(sys: StateSpace) -> RationalTF:
    """Transfer function via det(sI - A + B C) = det(sI - A) (1 + C (sI-A)^{-1} B)."""
    den = np.poly(sys.A)
    num_sp = np.poly(sys.A - np.outer(sys.B, sys.C)) - den
    num = num_sp + sys.D_ff * den
    scale = max(1.0, float(np.abs(num).max()))
    lead = 0
    while lead < len(num) - 1 and abs(num[lead]) <= 1e-12 * scale:
        lead += 1
    return RationalTF(tuple(num[lead:]), tuple(den))


@dataclass(frozen=True)
class NiAssessment:
    """Combined NI verification: certificate search first, grid test second."""

    verified: bool
    method: Optional[str]          # "certificate" | "frequency" | None
    certificate: Optional[NICertificate]
    cert_report: Optional[CertReport]
    freq_report: NiFrequencyReport


def assess_ni(sys: LinearSystem, grid: Optional[Sequence[float]] = None, tol: float = 1e-8) -> NiAssessment:
    """Try the Lyapunov certificate route, fall back to the frequency test.

    Either route passing counts as NI verified; the report records which one
    succeeded so downstream consumers can cite it.
    """
    ss = sys if isinstance(sys, StateSpace) else tf_to_ss(sys)
    cert = None
    cert_report = None
    try:
        cert = search_ni_certificate(ss, tol=tol)
    except (ValueError, SingularA):
        cert = None
    if cert is not None:
        cert_report = verify_ni_certificate(ss, cert, tol)
    freq = ni_frequency_test(sys, grid, tol)
    if cert_report is not None and cert_report.passed:
        return NiAssessment(True, "certificate", cert, cert_report, freq)
    if freq.passed:
        return NiAssessment(True, "frequency", cert, cert_report, freq)
    return NiAssessment(False, None, cert, cert_report, freq)
