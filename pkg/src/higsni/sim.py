"""Closed-loop simulation and Lyapunov bookkeeping.

All loops use positive feedback (e = r + y) against a SISO plant given as a
StateSpace.  Hybrid loops advance on a fixed grid with element modes frozen
per chunk; frozen-mode dynamics are affine, so chunks advance by precomputed
RK4 maps.  Mode switches are handled where the loop algebra demands it: the
single-element loop switches on the recording grid (its sector boundary does
not depend on the element state), while the three-element loop localizes
sector exits by bisection inside the step and switches on the boundary
itself.  Recorded samples satisfy the sector inequalities by construction up
to rounding.

Lyapunov certificates pair a plant NI certificate Y with controller storage
into one quadratic form; their positive definiteness reduces to scalar DC
conditions via Schur complements, and the failing stage is reported when
they are rejected.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import expm

from .controllers import (
    HigsPii2Params,
    InvalidParameters,
    ModeTriple,
    UnsolvableLoop,
    gain_sum_admissible,
    higs_pii2_mode_update,
    pii2_effective_states,
    resolve_pii2_error_rate,
    resolve_pii2_error_signal,
)
from .higs import (
    HigsIrcParams,
    HigsMode,
    MODE_BOUNDARY_RTOL,
    determine_mode_irc,
    project_to_sector,
    storage_V1,
    storage_V2_cascade,
    storage_V_h,
)
from .lti import RationalTF, SingularA, StateSpace, _smallest_sv_ok, tf_to_ss


class NonFiniteState(RuntimeError):
    """State left the admissible region (non-finite or beyond the guard)."""


class IllPosedLoop(ValueError):
    """Algebraic feedthrough loop has no solution (1 - Dk * Dp = 0)."""


class CertificateNotPD(ValueError):
    """Lyapunov certificate is not positive definite."""

    def __init__(self, stage: str, margin: float):
        super().__init__(f"certificate not positive definite, failing stage: {stage} (margin {margin})")
        self.stage = stage
        self.margin = margin


@dataclass(frozen=True)
class Tolerances:
    """Numeric guards shared by the simulators."""

    mode_boundary: float = MODE_BOUNDARY_RTOL
    sector: float = 1e-12
    divergence: float = 1e9


@dataclass
class SimConfig:
    dt: float
    t_end: float
    x0: np.ndarray
    controller_x0: object = 0.0
    r: float = 0.0
    record_every: int = 1
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        self.dt = float(self.dt)
        self.t_end = float(self.t_end)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        self.r = float(self.r)
        self.record_every = int(self.record_every)
        if self.dt <= 0.0 or not np.isfinite(self.dt):
            raise ValueError(f"dt must be finite and > 0, got {self.dt}")
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least one step")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    """Sampled closed-loop run.  All present arrays share the same length.

    modes holds integer mode codes (0 integrator, 1 gain) per element; V is
    controller storage, W the Lyapunov function when a certificate was
    supplied; aux carries named extra series (e.g. storage components).
    """

    times: np.ndarray
    plant_states: np.ndarray
    controller_states: np.ndarray
    e: np.ndarray
    u: np.ndarray
    y: np.ndarray
    modes: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None
    aux: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = len(self.times)
        series = [self.plant_states, self.controller_states, self.e, self.u, self.y]
        series += [s for s in (self.modes, self.V, self.W) if s is not None]
        series += list(self.aux.values())
        if any(len(s) != N for s in series):
            raise ValueError("all recorded series must have equal length")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def column_names(self) -> list:
        n = self.plant_states.shape[1]
        names = ["t"] + [f"x{i+1}" for i in range(n)]
        names += list(self.meta.get("controller_state_names",
                                    [f"xc{i+1}" for i in range(self.controller_states.shape[1])]))
        if self.modes is not None:
            q = self.modes.shape[1]
            names += ["mode"] if q == 1 else [f"mode{i+1}" for i in range(q)]
        names += ["e", "u", "y"]
        if self.V is not None:
            names.append("V")
        names += sorted(self.aux.keys())
        if self.W is not None:
            names.append("W")
        return names

    def to_csv_text(self) -> str:
        def fmt(v) -> str:
            return repr(float(v))

        out = io.StringIO()
        out.write(",".join(self.column_names()) + "\n")
        aux_keys = sorted(self.aux.keys())
        for i in range(len(self)):
            cells = [fmt(self.times[i])]
            cells += [fmt(v) for v in self.plant_states[i]]
            cells += [fmt(v) for v in self.controller_states[i]]
            if self.modes is not None:
                cells += [str(int(v)) for v in self.modes[i]]
            cells += [fmt(self.e[i]), fmt(self.u[i]), fmt(self.y[i])]
            if self.V is not None:
                cells.append(fmt(self.V[i]))
            cells += [fmt(self.aux[k][i]) for k in aux_keys]
            if self.W is not None:
                cells.append(fmt(self.W[i]))
            out.write(",".join(cells) + "\n")
        return out.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())


# ---------------------------------------------------------------------------
# Lyapunov certificates


@dataclass(frozen=True)
class LyapunovIrcCertificate:
    """W(x, x_h) = 1/2 [x; x_h]^T [[Y^-1, -C^T], [-C, 1/kt]] [x; x_h].

    Positive definite (given Y > 0) iff kappa_tilde * C Y C^T < 1, the same
    DC condition that certifies closed-loop stability.
    """

    Y: np.ndarray
    C: np.ndarray
    kappa_tilde: float
    P: np.ndarray = field(init=False)
    y_min_eig: float = field(init=False)
    schur_margin: float = field(init=False)
    positive_definite: bool = field(init=False)
    failed_stage: Optional[str] = field(init=False)

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        C = np.asarray(self.C, dtype=float).reshape(-1)
        n = C.shape[0]
        if Y.shape != (n, n):
            raise ValueError(f"Y must be {n} x {n}, got {Y.shape}")
        kt = float(self.kappa_tilde)
        if kt <= 0.0:
            raise ValueError("kappa_tilde must be > 0")
        Yinv = np.linalg.inv(Y)
        P = np.empty((n + 1, n + 1))
        P[:n, :n] = 0.5 * (Yinv + Yinv.T)
        P[:n, n] = -C
        P[n, :n] = -C
        P[n, n] = 1.0 / kt
        y_min = float(np.linalg.eigvalsh(0.5 * (Y + Y.T))[0])
        schur = 1.0 / kt - float(C @ Y @ C)
        if y_min <= 0.0:
            failed = "Y > 0"
        elif schur <= 0.0:
            failed = "1/kappa_tilde - C Y C^T > 0"
        else:
            failed = None
        for arr in (Y, C, P):
            arr.flags.writeable = False
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "kappa_tilde", kt)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "y_min_eig", y_min)
        object.__setattr__(self, "schur_margin", schur)
        object.__setattr__(self, "positive_definite", failed is None)
        object.__setattr__(self, "failed_stage", failed)


def lyapunov_W_irc(x, x_h: float, cert: LyapunovIrcCertificate) -> float:
    if not cert.positive_definite:
        margin = cert.y_min_eig if cert.failed_stage == "Y > 0" else cert.schur_margin
        raise CertificateNotPD(cert.failed_stage, margin)
    z = np.append(np.asarray(x, dtype=float).reshape(-1), float(x_h))
    return float(0.5 * z @ cert.P @ z)


@dataclass(frozen=True)
class LyapunovPii2Certificate:
    """Joint quadratic form for the hybrid PII^2 loop.

    M couples the plant energy 1/2 x^T Y^-1 x with the three element
    storages; a Schur-complement chain reduces M > 0 to -D - C Y C^T > 0,
    i.e. the DC condition D < -G(0).  Stages are evaluated in order and the
    first failure is recorded.
    """

    Y: np.ndarray
    C: np.ndarray
    params: HigsPii2Params
    M: np.ndarray = field(init=False)
    stages: tuple = field(init=False)
    positive_definite: bool = field(init=False)
    failed_stage: Optional[str] = field(init=False)
    failed_margin: float = field(init=False)

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        C = np.asarray(self.C, dtype=float).reshape(-1)
        n = C.shape[0]
        if Y.shape != (n, n):
            raise ValueError(f"Y must be {n} x {n}, got {Y.shape}")
        p = self.params
        g = p.gamma
        D = p.D
        Yinv = np.linalg.inv(Y)
        M = np.zeros((n + 3, n + 3))
        M[:n, :n] = 0.5 * (Yinv + Yinv.T) - p.k_p * g * np.outer(C, C)
        M[:n, n] = -g * C
        M[n, :n] = -g * C
        M[:n, n + 2] = -g * C
        M[n + 2, :n] = -g * C
        M[n, n] = 1.0 / p.h1.k_h - D * g
        M[n, n + 2] = -D * g
        M[n + 2, n] = -D * g
        M[n + 1, n + 1] = 1.0
        M[n + 2, n + 2] = -D * g
        y_min = float(np.linalg.eigvalsh(0.5 * (Y + Y.T))[0])
        cyc = float(C @ Y @ C)
        stages = (
            ("Y > 0", y_min),
            ("-D > 0", -D),
            ("-D - C Y C^T > 0", -D - cyc),
            ("M > 0", float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])),
        )
        failed = None
        failed_margin = np.inf
        for name, margin in stages:
            if margin <= 0.0:
                failed = name
                failed_margin = margin
                break
        for arr in (Y, C, M):
            arr.flags.writeable = False
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "positive_definite", failed is None)
        object.__setattr__(self, "failed_stage", failed)
        object.__setattr__(self, "failed_margin", float(failed_margin))


def lyapunov_W_pii2(
    x, x_h1: float, x_h2: float, x_h3: float, cert: LyapunovPii2Certificate
) -> float:
    if not cert.positive_definite:
        raise CertificateNotPD(cert.failed_stage, cert.failed_margin)
    z = np.concatenate([np.asarray(x, dtype=float).reshape(-1),
                        [float(x_h1), float(x_h2), float(x_h3)]])
    return float(0.5 * z @ cert.M @ z)


# ---------------------------------------------------------------------------
# Integration helpers


def _rk4_affine_map(J: np.ndarray, c: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Exact RK4 update z+ = R z + d for the affine system dz/dt = J z + c."""
    n = J.shape[0]
    I = np.eye(n)
    hJ = h * J
    hJ2 = hJ @ hJ
    hJ3 = hJ2 @ hJ
    hJ4 = hJ3 @ hJ
    R = I + hJ + hJ2 / 2.0 + hJ3 / 6.0 + hJ4 / 24.0
    Q = h * (I + hJ / 2.0 + hJ2 / 6.0 + hJ3 / 24.0)
    return R, Q @ c


def _guard_finite(t: float, arrays, limit: float) -> None:
    for a in arrays:
        v = np.abs(np.atleast_1d(a))
        if not np.all(np.isfinite(v)) or np.any(v > limit):
            raise NonFiniteState(f"state escaped at t = {t:.6g} (|state| > {limit:g} or non-finite)")


def _record_count(n_steps: int, every: int) -> int:
    count = n_steps // every + 1
    if n_steps % every:
        count += 1
    return count


# ---------------------------------------------------------------------------
# HIGS-IRC loop


def simulate_higs_irc_loop(
    plant: StateSpace,
    p: HigsIrcParams,
    cfg: SimConfig,
    cert: Optional[LyapunovIrcCertificate] = None,
) -> Trajectory:
    """Positive-feedback loop of an NI plant with one compensated element.

    Error signal e = r + C x; the element output u = x_h drives the plant.
    Per-mode dynamics are affine, so each RK4 step is a precomputed linear
    map.  When a certificate is supplied, W is traced alongside the element
    storage V.
    """
    if not _smallest_sv_ok(plant.A):
        raise SingularA("plant A must be invertible")
    if cert is not None and not cert.positive_definite:
        raise CertificateNotPD(cert.failed_stage,
                               cert.y_min_eig if cert.failed_stage == "Y > 0" else cert.schur_margin)
    n = plant.n
    if cfg.x0.shape != (n,):
        raise ValueError(f"x0 must have {n} entries")
    A, B, C = plant.A, plant.B, plant.C
    kt = p.kappa_tilde
    r = cfg.r
    tols = cfg.tolerances
    dt = cfg.dt

    CA = C @ A
    CB = float(C @ B)

    J_int = np.zeros((n + 1, n + 1))
    J_int[:n, :n] = A
    J_int[:n, n] = B
    J_int[n, :n] = p.omega_h * C
    J_int[n, n] = p.omega_h * p.D
    c_int = np.zeros(n + 1)
    c_int[n] = p.omega_h * r
    R_int, d_int = _rk4_affine_map(J_int, c_int, dt)

    J_gain = A + kt * np.outer(B, C)
    c_gain = kt * r * B
    R_gain, d_gain = _rk4_affine_map(J_gain, c_gain, dt)

    n_steps = cfg.n_steps
    every = cfg.record_every
    N = _record_count(n_steps, every)
    t_rec = np.empty(N)
    x_rec = np.empty((N, n))
    xh_rec = np.empty((N, 1))
    mode_rec = np.empty((N, 1), dtype=np.int64)
    e_rec = np.empty(N)
    y_rec = np.empty(N)
    V_rec = np.empty(N)
    W_rec = np.empty(N) if cert is not None else None

    x = cfg.x0.copy()
    xh = float(np.asarray(cfg.controller_x0, dtype=float).reshape(-1)[0])

    def error_and_rate(x, xh):
        y = float(C @ x)
        e = r + y
        e_dot = float(CA @ x) + CB * xh
        return y, e, e_dot

    y, e, e_dot = error_and_rate(x, xh)
    xh = project_to_sector(e, xh, kt, tols.sector)
    mode = determine_mode_irc(e, e_dot, xh, p, tols.mode_boundary)
    if mode == HigsMode.GAIN:
        xh = kt * e

    idx = 0

    def record(i, t, x, xh, mode, e, y):
        t_rec[i] = t
        x_rec[i] = x
        xh_rec[i, 0] = xh
        mode_rec[i, 0] = int(mode)
        e_rec[i] = e
        y_rec[i] = y
        V_rec[i] = storage_V_h(xh, p)
        if W_rec is not None:
            W_rec[i] = lyapunov_W_irc(x, xh, cert)

    record(idx, 0.0, x, xh, mode, e, y)
    idx += 1

    z = np.empty(n + 1)
    for k in range(1, n_steps + 1):
        if mode == HigsMode.INTEGRATOR:
            z[:n] = x
            z[n] = xh
            z = R_int @ z + d_int
            x = z[:n].copy()
            xh = float(z[n])
        else:
            x = R_gain @ x + d_gain
            xh = kt * (r + float(C @ x))
        t = k * dt
        _guard_finite(t, (x, xh), tols.divergence)
        y, e, e_dot = error_and_rate(x, xh)
        xh = project_to_sector(e, xh, kt, tols.sector)
        mode = determine_mode_irc(e, e_dot, xh, p, tols.mode_boundary)
        if mode == HigsMode.GAIN:
            xh = kt * e
        if k % every == 0 or k == n_steps:
            record(idx, t, x, xh, mode, e, y)
            idx += 1

    return Trajectory(
        times=t_rec,
        plant_states=x_rec,
        controller_states=xh_rec,
        e=e_rec,
        u=xh_rec[:, 0].copy(),
        y=y_rec,
        modes=mode_rec,
        V=V_rec,
        W=W_rec,
        meta={
            "controller": "higs_irc",
            "controller_state_names": ["xh"],
            "kappa_tilde": kt,
            "dt": dt,
            "record_every": every,
        },
    )


# ---------------------------------------------------------------------------
# Linear loop


def closed_loop_matrices(plant: StateSpace, ctrl: RationalTF, tol: float = 1e-12):
    """Joint (A_cl, B_cl) for the positive-feedback loop plus output rows.

    Returns (A_cl, B_cl, rows) where rows maps the joint state and the
    reference to (u, y): u = rows.u_x @ x + rows.u_k @ xk + rows.u_r * r and
    likewise for y.  Static controllers (order 0) contribute feedthrough
    only.  Raises IllPosedLoop when 1 - Dk * Dp vanishes.
    """
    if ctrl.order >= 1:
        k = tf_to_ss(ctrl)
        Ak, Bk, Ck, Dk = k.A, k.B, k.C, k.D_ff
    else:
        Ak = np.zeros((0, 0))
        Bk = np.zeros(0)
        Ck = np.zeros(0)
        Dk = ctrl.num[0] / ctrl.den[0]
    A, B, C, Dp = plant.A, plant.B, plant.C, plant.D_ff
    n, nk = plant.n, Ak.shape[0]
    delta = 1.0 - Dk * Dp
    if abs(delta) <= tol:
        raise IllPosedLoop(f"feedthrough product gives 1 - Dk*Dp = {delta}")
    u_x = (Dk / delta) * C
    u_k = Ck / delta
    u_r = Dk / delta
    y_x = C + Dp * u_x
    y_k = Dp * u_k
    y_r = Dp * u_r
    Acl = np.zeros((n + nk, n + nk))
    Acl[:n, :n] = A + np.outer(B, u_x)
    Acl[:n, n:] = np.outer(B, u_k)
    Acl[n:, :n] = np.outer(Bk, y_x)
    Acl[n:, n:] = Ak + np.outer(Bk, y_k)
    Bcl = np.concatenate([B * u_r, Bk * (1.0 + y_r)])

    @dataclass(frozen=True)
    class _Rows:
        u_x: np.ndarray
        u_k: np.ndarray
        u_r: float
        y_x: np.ndarray
        y_k: np.ndarray
        y_r: float
        n: int
        nk: int

    return Acl, Bcl, _Rows(u_x, u_k, float(u_r), y_x, y_k, float(y_r), n, nk)


def simulate_linear_loop(plant: StateSpace, ctrl: RationalTF, cfg: SimConfig) -> Trajectory:
    """Exact discretization (matrix exponential per step) of the LTI loop."""
    n = plant.n
    if cfg.x0.shape != (n,):
        raise ValueError(f"x0 must have {n} entries")
    Acl, Bcl, rows = closed_loop_matrices(plant, ctrl)
    nk = rows.nk
    xk0 = np.asarray(cfg.controller_x0, dtype=float).reshape(-1)
    if nk == 0:
        xk0 = np.zeros(0)
    elif xk0.shape == (1,) and nk > 1:
        xk0 = np.full(nk, xk0[0])
    elif xk0.shape != (nk,):
        raise ValueError(f"controller_x0 must have {nk} entries")
    nz = n + nk
    aug = np.zeros((nz + 1, nz + 1))
    aug[:nz, :nz] = Acl * cfg.dt
    aug[:nz, nz] = Bcl * cfg.dt
    Phi = expm(aug)
    E, F = Phi[:nz, :nz], Phi[:nz, nz]

    n_steps = cfg.n_steps
    every = cfg.record_every
    N = _record_count(n_steps, every)
    t_rec = np.empty(N)
    x_rec = np.empty((N, n))
    xk_rec = np.empty((N, nk))
    e_rec = np.empty(N)
    u_rec = np.empty(N)
    y_rec = np.empty(N)

    z = np.concatenate([cfg.x0, xk0])
    r = cfg.r

    def record(i, t, z):
        x, xk = z[:n], z[n:]
        u = float(rows.u_x @ x + rows.u_k @ xk + rows.u_r * r)
        y = float(rows.y_x @ x + rows.y_k @ xk + rows.y_r * r)
        t_rec[i] = t
        x_rec[i] = x
        xk_rec[i] = xk
        u_rec[i] = u
        y_rec[i] = y
        e_rec[i] = r + y

    idx = 0
    record(idx, 0.0, z)
    idx += 1
    for k in range(1, n_steps + 1):
        z = E @ z + F * r
        t = k * cfg.dt
        _guard_finite(t, (z,), cfg.tolerances.divergence)
        if k % every == 0 or k == n_steps:
            record(idx, t, z)
            idx += 1

    return Trajectory(
        times=t_rec,
        plant_states=x_rec,
        controller_states=xk_rec,
        e=e_rec,
        u=u_rec,
        y=y_rec,
        meta={
            "controller": "linear",
            "controller_state_names": [f"xc{i+1}" for i in range(nk)],
            "dt": cfg.dt,
            "record_every": every,
        },
    )


# ---------------------------------------------------------------------------
# HIGS-PII^2 loop

# Event localization inside one step: boundary eligibility and the sector-exit
# threshold during bisection, plus the smallest chunk worth resolving.  Much
# tighter than the recording-level tolerances so that switching a mode moves
# the state (and the Lyapunov value) by a negligible amount.  Both tests
# measure distance in state units scaled by max(1, |x_h|); the exit threshold
# sits strictly inside the eligibility band so that wherever a sector exit is
# detected, the mode update is allowed to act on it.
_EVENT_RTOL = 1e-12
_EVENT_GAP = 1e-13
_EVENT_MIN_FRAC = 1e-12


def simulate_higs_pii2_loop(
    plant: StateSpace,
    p: HigsPii2Params,
    cfg: SimConfig,
    cert: Optional[LyapunovPii2Certificate] = None,
) -> Trajectory:
    """Hybrid PII^2 loop: H1 and the H2->H3 chain in parallel with k_p.

    The loop error solves a per-sample algebraic equation (gain-mode
    elements feed through), so with the three modes frozen the joint
    dynamics are affine and every chunk advances by a precomputed RK4 map.
    Sector exits and mode switches are localized inside the step by
    bisection before the modes change: switching happens on the boundary
    itself, so element states stay continuous and the Lyapunov trace is
    free of projection jumps.  The error couples back through the element
    states (e = gamma*(r + y) + gamma*D*(x_h1 + x_h3)), which is why a
    plain project-after-step scheme would chatter against the boundary
    instead of entering gain mode.
    """
    if not _smallest_sv_ok(plant.A):
        raise SingularA("plant A must be invertible")
    from .lti import dc_gain  # local import to keep module load light

    if not gain_sum_admissible(p, dc_gain(plant)):
        raise InvalidParameters(
            "k_h1 + k_h2^2 + k_p coincides with 1/(G(0) + D); perturb the gains"
        )
    if cert is not None and not cert.positive_definite:
        raise CertificateNotPD(cert.failed_stage, cert.failed_margin)
    n = plant.n
    if cfg.x0.shape != (n,):
        raise ValueError(f"x0 must have {n} entries")
    A, B, C = plant.A, plant.B, plant.C
    CA = C @ A
    CB = float(C @ B)
    r = cfg.r
    dt = cfg.dt
    tols = cfg.tolerances
    ks = (p.h1.k_h, p.h2.k_h, p.h3.k_h)
    gam = p.gamma
    D = p.D
    nz = n + 3

    xh0 = np.asarray(cfg.controller_x0, dtype=float).reshape(-1)
    if xh0.shape == (1,):
        xh0 = np.full(3, xh0[0])
    elif xh0.shape != (3,):
        raise ValueError("controller_x0 must be a scalar or 3 entries")

    def mode_matrices(modes: ModeTriple):
        """Affine dz/dt = J z + c for one frozen mode combination.

        Gain-mode element states are carried as frozen slots (zero rows)
        and substituted algebraically wherever their outputs appear."""
        g1 = modes.h1 == HigsMode.GAIN
        g2 = modes.h2 == HigsMode.GAIN
        g3 = modes.h3 == HigsMode.GAIN
        a = (ks[0] if g1 else 0.0) + (ks[2] * ks[1] if (g3 and g2) else 0.0)
        den = 1.0 - gam * D * a
        if abs(den) <= 1e-12:
            raise UnsolvableLoop(f"degenerate error equation, denominator {den}")
        w_e = np.zeros(nz)
        w_e[:n] = (gam / den) * C
        if not g1:
            w_e[n] = gam * D / den
        if g3 and not g2:
            w_e[n + 1] = gam * D * ks[2] / den
        if not g3:
            w_e[n + 2] = gam * D / den
        c_e = gam * r / den
        w_u = p.k_p * w_e
        c_u = p.k_p * c_e
        if g1:
            w_u += ks[0] * w_e
            c_u += ks[0] * c_e
        else:
            w_u[n] += 1.0
        if g3:
            if g2:
                w_u += ks[2] * ks[1] * w_e
                c_u += ks[2] * ks[1] * c_e
            else:
                w_u[n + 1] += ks[2]
        else:
            w_u[n + 2] += 1.0
        J = np.zeros((nz, nz))
        c = np.zeros(nz)
        J[:n, :n] = A
        J[:n, :] += np.outer(B, w_u)
        c[:n] = B * c_u
        if not g1:
            J[n, :] = p.h1.omega_h * w_e
            c[n] = p.h1.omega_h * c_e
        if not g2:
            J[n + 1, :] = p.h2.omega_h * w_e
            c[n + 1] = p.h2.omega_h * c_e
        if not g3:
            if g2:
                J[n + 2, :] = p.h3.omega_h * ks[1] * w_e
                c[n + 2] = p.h3.omega_h * ks[1] * c_e
            else:
                J[n + 2, n + 1] = p.h3.omega_h
        return J, c

    map_cache: dict = {}

    def step_maps(modes: ModeTriple):
        got = map_cache.get(modes)
        if got is None:
            J, c = mode_matrices(modes)
            R, d = _rk4_affine_map(J, c, dt)
            got = (J, c, R, d)
            map_cache[modes] = got
        return got

    def advance(z, modes, h):
        J, c, R, d = step_maps(modes)
        if h != dt:
            R, d = _rk4_affine_map(J, c, h)
        return R @ z + d

    def resolve_z(z, modes):
        return resolve_pii2_error_signal(r + float(C @ z[:n]), z[n], z[n + 1], z[n + 2], modes, p)

    def probe(z, modes):
        """Settled-once modes and worst scaled sector exit at a state.

        The exit is measured as the projection distance in state units over
        max(1, |x_h|), the same scaling the boundary-eligibility test uses."""
        e, u = resolve_z(z, modes)
        slots = (z[n], z[n + 1], z[n + 2])
        x1e, x2e, x3e = pii2_effective_states(e, slots, modes, p)
        y_dot = float(CA @ z[:n]) + CB * u
        e_dot = resolve_pii2_error_rate(y_dot, e, slots, modes, p)
        new = higs_pii2_mode_update(e, e_dot, (x1e, x2e, x3e), p, _EVENT_RTOL)
        viol = 0.0
        pairs = []
        if modes.h1 == HigsMode.INTEGRATOR:
            pairs.append((e, z[n], ks[0]))
        if modes.h2 == HigsMode.INTEGRATOR:
            pairs.append((e, z[n + 1], ks[1]))
        if modes.h3 == HigsMode.INTEGRATOR:
            pairs.append((x2e, z[n + 2], ks[2]))
        for ei, xi, ki in pairs:
            gap = abs(project_to_sector(ei, xi, ki) - xi) / max(1.0, abs(xi))
            if gap > viol:
                viol = gap
        return new, viol

    def finalize(z, modes):
        """Refresh gain slots and clamp rounding dust off the sectors."""
        e, u = resolve_z(z, modes)
        x1e, x2e, x3e = pii2_effective_states(e, (z[n], z[n + 1], z[n + 2]), modes, p)
        if modes.h1 == HigsMode.GAIN:
            z[n] = x1e
        else:
            z[n] = project_to_sector(e, z[n], ks[0], tols.sector)
        if modes.h2 == HigsMode.GAIN:
            z[n + 1] = x2e
        else:
            z[n + 1] = project_to_sector(e, z[n + 1], ks[1], tols.sector)
        if modes.h3 == HigsMode.GAIN:
            z[n + 2] = x3e
        else:
            z[n + 2] = project_to_sector(x2e, z[n + 2], ks[2], tols.sector)
        return e, u

    def settle(z, modes):
        """Fixed point of (resolve error, update modes, refresh gain states)."""
        for _ in range(8):
            e, u = resolve_z(z, modes)
            slots = (z[n], z[n + 1], z[n + 2])
            x1e, x2e, x3e = pii2_effective_states(e, slots, modes, p)
            y_dot = float(CA @ z[:n]) + CB * u
            e_dot = resolve_pii2_error_rate(y_dot, e, slots, modes, p)
            new = higs_pii2_mode_update(e, e_dot, (x1e, x2e, x3e), p, _EVENT_RTOL)
            if new == modes:
                return e, u, modes
            modes = new
            e, u = finalize(z, modes)
        return e, u, modes

    z = np.concatenate([cfg.x0, xh0])
    modes = ModeTriple(HigsMode.INTEGRATOR, HigsMode.INTEGRATOR, HigsMode.INTEGRATOR)

    n_steps = cfg.n_steps
    every = cfg.record_every
    N = _record_count(n_steps, every)
    t_rec = np.empty(N)
    x_rec = np.empty((N, n))
    xh_rec = np.empty((N, 3))
    mode_rec = np.empty((N, 3), dtype=np.int64)
    e_rec = np.empty(N)
    u_rec = np.empty(N)
    y_rec = np.empty(N)
    V_rec = np.empty(N)
    V1_rec = np.empty(N)
    V2_rec = np.empty(N)
    W_rec = np.empty(N) if cert is not None else None

    def record(i, t, z, modes, e, u):
        x = z[:n]
        xh = z[n:]
        t_rec[i] = t
        x_rec[i] = x
        xh_rec[i] = xh
        mode_rec[i] = [int(modes.h1), int(modes.h2), int(modes.h3)]
        e_rec[i] = e
        u_rec[i] = u
        y_rec[i] = float(C @ x)
        V1 = storage_V1(xh[0], p.h1)
        V2 = storage_V2_cascade(xh[1], xh[2])
        V1_rec[i] = V1
        V2_rec[i] = V2
        V_rec[i] = V1 + V2
        if W_rec is not None:
            W_rec[i] = lyapunov_W_pii2(x, xh[0], xh[1], xh[2], cert)

    # Sanitize the initial state: clamp into the sectors against the resolved
    # error (a couple of passes, since clamping moves the error), then settle
    # the starting modes.
    for _ in range(3):
        e, u = finalize(z, modes)
    e, u, modes = settle(z, modes)
    e, u = finalize(z, modes)
    idx = 0
    record(idx, 0.0, z, modes, e, u)
    idx += 1

    h_min = _EVENT_MIN_FRAC * dt
    for k in range(1, n_steps + 1):
        remaining = dt
        events = 0
        while remaining > h_min:
            zc = advance(z, modes, remaining)
            new, viol = probe(zc, modes)
            if new == modes and viol <= _EVENT_GAP:
                z = zc
                finalize(z, modes)
                break
            # Earliest event in (0, remaining]: bisect on (mode change or
            # sector exit), land just past it, switch exactly there.
            lo, hi, ze = 0.0, remaining, zc
            while hi - lo > h_min:
                mid = 0.5 * (lo + hi)
                zm = advance(z, modes, mid)
                mnew, mviol = probe(zm, modes)
                if mnew != modes or mviol > _EVENT_GAP:
                    hi, ze = mid, zm
                else:
                    lo = mid
            z = ze
            finalize(z, modes)
            e, u, new_modes = settle(z, modes)
            stalled = new_modes == modes
            modes = new_modes
            remaining -= hi
            events += 1
            if stalled and hi <= 2.0 * h_min:
                # Grazing touch without a switch right at the chunk start:
                # take a small plain chunk so the loop cannot spin in place.
                nudge = min(remaining, 1e-6 * dt)
                z = advance(z, modes, nudge)
                finalize(z, modes)
                remaining -= nudge
            if events > 64:
                raise UnsolvableLoop(
                    f"mode switching failed to settle within the step ending at t = {k * dt:.6g}"
                )
        t = k * dt
        _guard_finite(t, (z,), tols.divergence)
        e, u = resolve_z(z, modes)
        if k % every == 0 or k == n_steps:
            record(idx, t, z, modes, e, u)
            idx += 1

    return Trajectory(
        times=t_rec,
        plant_states=x_rec,
        controller_states=xh_rec,
        e=e_rec,
        u=u_rec,
        y=y_rec,
        modes=mode_rec,
        V=V_rec,
        W=W_rec,
        aux={"V1": V1_rec, "V2": V2_rec},
        meta={
            "controller": "higs_pii2",
            "controller_state_names": ["xh1", "xh2", "xh3"],
            "sector_gains": [ks[0], ks[1], ks[2]],
            "dt": dt,
            "record_every": every,
        },
    )


# ---------------------------------------------------------------------------
# Trajectory checks


@dataclass(frozen=True)
class MonotoneReport:
    passed: bool
    worst_increase: float
    worst_time: float
    budget: float


def check_monotone(traj: Trajectory, budget: float = 1e-6) -> MonotoneReport:
    """W(t_{k+1}) <= W(t_k) + budget * (t_{k+1} - t_k) at every sample pair."""
    if traj.W is None:
        raise ValueError("trajectory has no Lyapunov series; supply a certificate when simulating")
    dW = np.diff(traj.W)
    allow = budget * np.diff(traj.times)
    excess = dW - allow
    worst = int(np.argmax(excess)) if len(excess) else 0
    passed = bool(len(excess) == 0 or excess[worst] <= 0.0)
    worst_increase = float(dW[worst]) if len(excess) else 0.0
    return MonotoneReport(
        passed=passed,
        worst_increase=worst_increase,
        worst_time=float(traj.times[worst + 1]) if len(excess) else float(traj.times[0]),
        budget=float(budget),
    )


@dataclass(frozen=True)
class SectorReport:
    passed: bool
    worst_margin: float     # min over samples of (e*u - u^2/k) / scale
    worst_time: float
    worst_element: int
    rtol: float


def _sector_pairs(traj: Trajectory):
    kind = traj.meta.get("controller")
    if kind == "higs_irc":
        kt = traj.meta["kappa_tilde"]
        return [(traj.e, traj.controller_states[:, 0], kt)]
    if kind == "higs_pii2":
        ks = traj.meta.get("sector_gains")
        if ks is None:
            raise ValueError("trajectory metadata lacks sector_gains")
        return [
            (traj.e, traj.controller_states[:, 0], ks[0]),
            (traj.e, traj.controller_states[:, 1], ks[1]),
            (traj.controller_states[:, 1], traj.controller_states[:, 2], ks[2]),
        ]
    raise ValueError(f"no sector constraint for controller kind {kind!r}")


def check_sector(traj: Trajectory, rtol: float = 1e-9) -> SectorReport:
    """Relative sector test e*u >= u^2/k at every recorded sample."""
    worst = np.inf
    worst_t = float(traj.times[0])
    worst_el = 0
    for idx, (e, u, k) in enumerate(_sector_pairs(traj)):
        lhs = e * u
        rhs = u * u / k
        scale = np.maximum(1.0, np.maximum(np.abs(lhs), rhs))
        margin = (lhs - rhs) / scale
        i = int(np.argmin(margin))
        if margin[i] < worst:
            worst = float(margin[i])
            worst_t = float(traj.times[i])
            worst_el = idx
    return SectorReport(
        passed=bool(worst >= -rtol),
        worst_margin=worst,
        worst_time=worst_t,
        worst_element=worst_el,
        rtol=float(rtol),
    )


@dataclass(frozen=True)
class DissipationReport:
    passed: bool
    worst_excess: float
    worst_time: float
    budget_coeff: float


def check_dissipation(traj: Trajectory, budget_coeff: float = 100.0) -> DissipationReport:
    """Trapezoid storage inequality dV <= mean(e) * dx_h + coeff * dt^2.

    Applies to the single-element loop (V against the supply e * dx_h/dt).
    The budget absorbs integration error; it shrinks quadratically with the
    recording step, so refining dt tightens the test.
    """
    if traj.meta.get("controller") != "higs_irc" or traj.V is None:
        raise ValueError("dissipation check needs a higs_irc trajectory with V recorded")
    e = traj.e
    xh = traj.controller_states[:, 0]
    dV = np.diff(traj.V)
    supply = 0.5 * (e[1:] + e[:-1]) * np.diff(xh)
    dts = np.diff(traj.times)
    excess = dV - supply - budget_coeff * dts * dts
    i = int(np.argmax(excess))
    return DissipationReport(
        passed=bool(excess[i] <= 0.0),
        worst_excess=float((dV - supply)[i]),
        worst_time=float(traj.times[i + 1]),
        budget_coeff=float(budget_coeff),
    )
