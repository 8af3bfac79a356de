"""Action-angle initialization and adiabatic-invariant extraction.

Before the transition (t << -1) every degree of freedom is a harmonic
oscillator with frequency w_k = sqrt(|t| + 2 eps e_k); a state of given
actions I_k and angles phi_k is

    X_k = sqrt(2 I_k / w_k) sin(phi_k),  P_k = sqrt(2 I_k w_k) cos(phi_k).

After the transition the condensate degree of freedom oscillates about the
moving minimum +-sqrt(s/2) with s = t - 2 eps e_1 and frequency sqrt(2 s);
the confined ones oscillate about zero with w_k = sqrt(2 eps (e_k - e_1)).

Two extraction methods are provided.  The loop method computes the phase
space loop area over detected oscillation periods of the centered
coordinate; it is insensitive to anharmonicity and is the primary method.
The harmonic method (I = E / w) is the cross-check.  For the condensate
degree of freedom the slow motion of the well is removed before forming
the loop: the center sqrt(s/2) is subtracted from X and its time
derivative 1/(2 sqrt(2 s)) from P.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, PhaseState
from .pathintegrate import TrajectoryRecord

__all__ = [
    "ExtractionError",
    "InvariantEstimate",
    "harmonic_frequencies",
    "init_from_action_angle",
    "extract_invariant_harmonic",
    "extract_invariant_loop",
    "loop_action",
    "delta_invariants",
    "final_invariants",
    "condensate_center",
    "condensate_frequency",
    "confined_frequency",
    "dominant_frequency",
]

QUARTIC_WARN_THRESHOLD = 1e-3


class ExtractionError(RuntimeError):
    """No usable oscillation found in the requested window."""


@dataclass(frozen=True)
class InvariantEstimate:
    """Per-degree-of-freedom adiabatic invariants with provenance."""

    i_value: np.ndarray
    method: str                      # "harmonic_energy" or "loop_area"
    branch: np.ndarray               # condensate branch signs (+-1; 0 = confined)
    uncertainty: np.ndarray

    def __post_init__(self):
        iv = np.atleast_1d(np.asarray(self.i_value, float))
        un = np.atleast_1d(np.asarray(self.uncertainty, float))
        br = np.atleast_1d(np.asarray(self.branch, float))
        if np.any(iv < 0):
            raise ValueError("actions must be non-negative")
        if np.any(un < 0):
            raise ValueError("uncertainties must be non-negative")
        for name, v in (("i_value", iv), ("uncertainty", un), ("branch", br)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def harmonic_frequencies(params: ModelParams, t: float, eps: float | None = None):
    """Pre-transition normal frequencies w_k = sqrt(-t + 2 eps e_k)."""
    eps = params.epsilon if eps is None else eps
    w2 = -t + 2.0 * eps * params.e_arr
    if np.any(w2 <= 0):
        raise ValueError(
            f"not in the harmonic regime at t = {t}: w^2 = {w2} must all be > 0")
    return np.sqrt(w2)


def init_from_action_angle(params: ModelParams, t0: float, i0, phi,
                           eps: float | None = None) -> PhaseState:
    """State of prescribed actions and angles in the pre-transition wells.

    Warns when the quartic term is not negligible at the implied amplitude
    (relative correction (2 I / w) * 3 / w^2 above 1e-3), which means |t0|
    is too small for the requested actions.
    """
    eps = params.epsilon if eps is None else eps
    i0 = np.asarray(i0, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if i0.shape[-1] != params.n_dof or phi.shape[-1] != params.n_dof:
        raise ValueError("i0 and phi must have n_dof entries")
    if np.any(i0 < 0):
        raise ValueError("actions must be non-negative")
    w = harmonic_frequencies(params, t0, eps)
    corr = (2.0 * i0 / w) * 3.0 / w ** 2
    if np.any(corr >= QUARTIC_WARN_THRESHOLD):
        warnings.warn(
            f"quartic correction {np.max(corr):.2e} exceeds "
            f"{QUARTIC_WARN_THRESHOLD:g}; |t0| too small for the requested "
            "actions to start harmonically", stacklevel=2)
    x = np.sqrt(2.0 * i0 / w) * np.sin(phi)
    p = np.sqrt(2.0 * i0 * w) * np.cos(phi)
    return PhaseState(x=x, p=p, t=t0, eps=eps)


def extract_invariant_harmonic(params: ModelParams, state: PhaseState, dof: int,
                               center: float, omega: float, drift: float = 0.0) -> float:
    """I = E / w for one degree of freedom in a local harmonic well.

    ``drift`` is the time derivative of the well center (0 for static wells).
    """
    if not (omega > 0):
        raise ValueError("omega must be positive")
    dx = state.x[..., dof] - center
    dp = state.p[..., dof] - drift
    return float((0.5 * dp * dp + 0.5 * omega ** 2 * dx * dx) / omega)


def _rising_crossings(tt, y, hysteresis_frac=0.2):
    """Times of rising zero crossings of y(t), filtered with hysteresis.

    A candidate crossing is accepted only if the signal has been below
    -hysteresis_frac * rms(y) since the previous accepted crossing, which
    rejects double-counting from fast, small-amplitude jitter.
    """
    thr = hysteresis_frac * float(np.sqrt(np.mean(y * y)))
    cand = np.where((y[:-1] < 0.0) & (y[1:] >= 0.0))[0]
    accepted = []
    last = 0
    armed = bool(np.any(y[: cand[0] + 1] < -thr)) if cand.size else False
    for i in cand:
        if not armed:
            armed = bool(np.any(y[last:i + 1] < -thr))
        if armed:
            accepted.append(i)
            armed = False
            last = i + 1
    idx = np.asarray(accepted, dtype=int)
    frac = y[idx] / (y[idx] - y[idx + 1])
    return idx, tt[idx] + frac * (tt[idx + 1] - tt[idx]), frac


def loop_action(tt, x, p, center=None, drift=None, hysteresis_frac=0.2):
    """Loop-area action from sampled 1-dof motion: (1/2pi) closed-contour p~ dx~.

    center / drift are arrays aligned with ``tt`` (or None for zero); they
    remove the slow well motion so the loop closes.  Integrates over every
    complete period between detected rising crossings and returns
    (mean per-period action, std over periods, n_periods).
    """
    tt = np.asarray(tt, float)
    xt = np.asarray(x, float) - (0.0 if center is None else np.asarray(center, float))
    pt = np.asarray(p, float) - (0.0 if drift is None else np.asarray(drift, float))
    if tt.size < 8:
        raise ExtractionError("too few samples for loop extraction")
    idx, tc, frac = _rising_crossings(tt, xt, hysteresis_frac)
    if idx.size < 2:
        raise ExtractionError(
            f"need at least one full oscillation, found {idx.size} crossings")
    # cumulative trapezoid of p~ dx~ lets per-period areas be read off at
    # interpolated crossing points
    cells = 0.5 * (pt[1:] + pt[:-1]) * np.diff(xt)
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    # value of the cumulative integral at each crossing (partial last cell);
    # integrand endpoint is the interpolated (x~=0, p~) point
    xc = xt[idx] + frac * (xt[idx + 1] - xt[idx])  # ~0 by construction
    pc = pt[idx] + frac * (pt[idx + 1] - pt[idx])
    cum_c = cum[idx] + 0.5 * (pt[idx] + pc) * (xc - xt[idx])
    areas = np.diff(cum_c) / (2.0 * np.pi)
    return float(np.mean(areas)), float(np.std(areas)), int(areas.size)


def extract_invariant_loop(traj: TrajectoryRecord, dof: int,
                           window: tuple[float, float] | None = None,
                           center=None, drift=None) -> float:
    """Loop-area invariant of one degree of freedom over a trajectory window.

    ``window`` selects t in [lo, hi] (default: whole record); it should span
    at least two oscillations.  ``center``/``drift`` follow
    :func:`loop_action` and default to a static well at the origin.
    """
    rec = traj if window is None else traj.window(*window)
    if rec.n_samples == 0:
        raise ExtractionError("window contains no samples")
    i, _, _ = loop_action(rec.t, rec.x[:, dof], rec.p[:, dof], center, drift)
    return i


def condensate_center(params: ModelParams, t, eps: float | None = None,
                      dof: int = 0, branch: float = 1.0):
    """Moving minimum of the post-transition double well: branch*sqrt(s/2)."""
    eps = params.epsilon if eps is None else eps
    s = np.asarray(t, float) - 2.0 * eps * params.e[dof]
    return branch * np.sqrt(np.maximum(s, 0.0) / 2.0)


def condensate_drift(params: ModelParams, t, eps: float | None = None,
                     dof: int = 0, branch: float = 1.0):
    """d/dt of the condensate center: branch / (2 sqrt(2 s))."""
    eps = params.epsilon if eps is None else eps
    s = np.asarray(t, float) - 2.0 * eps * params.e[dof]
    return branch / (2.0 * np.sqrt(2.0 * np.maximum(s, 1e-300)))


def condensate_frequency(params: ModelParams, t, eps: float | None = None,
                         dof: int = 0):
    """Oscillation frequency about the condensate minimum: sqrt(2 s)."""
    eps = params.epsilon if eps is None else eps
    s = np.asarray(t, float) - 2.0 * eps * params.e[dof]
    return np.sqrt(2.0 * np.maximum(s, 0.0))


def confined_frequency(params: ModelParams, dof: int, eps: float | None = None,
                       condensate_dof: int = 0):
    """Post-transition frequency of a confined dof: sqrt(2 eps (e_k - e_1))."""
    eps = params.epsilon if eps is None else eps
    return float(np.sqrt(2.0 * eps * (params.e[dof] - params.e[condensate_dof])))


def detect_branch(x_dof: np.ndarray) -> float:
    """Condensate branch sign from the running mean; ties go positive."""
    m = float(np.mean(x_dof))
    return 1.0 if m >= 0.0 else -1.0


def final_invariants(params: ModelParams, traj: TrajectoryRecord,
                     window: tuple[float, float] | None = None,
                     condensate_dofs: tuple[int, ...] = (0,),
                     eps: float | None = None) -> InvariantEstimate:
    """Post-transition invariants of every degree of freedom (loop method).

    Condensate degrees of freedom are centered on the drifting minimum with
    the branch detected from the data; confined ones on the origin.
    """
    rec = traj if window is None else traj.window(*window)
    if rec.n_samples < 8:
        raise ExtractionError("window contains too few samples")
    eps = params.epsilon if eps is None else eps
    n = params.n_dof
    iv = np.empty(n)
    un = np.empty(n)
    br = np.zeros(n)
    for k in range(n):
        if k in condensate_dofs:
            sign = detect_branch(rec.x[:, k])
            center = condensate_center(params, rec.t, eps, k, sign)
            drift = condensate_drift(params, rec.t, eps, k, sign)
            br[k] = sign
        else:
            center = None
            drift = None
        i, spread, nper = loop_action(rec.t, rec.x[:, k], rec.p[:, k], center, drift)
        iv[k] = i
        un[k] = spread / np.sqrt(nper)
    return InvariantEstimate(i_value=iv, method="loop_area", branch=br, uncertainty=un)


def delta_invariants(params: ModelParams, i_initial, i_final,
                     condensate_dofs: tuple[int, ...] = (0,)):
    """Invariant jumps with the separatrix half-factor.

    Degrees of freedom that cross into the double well lose half their
    initial phase-space volume: dI = I_final - I_initial / 2.  Confined
    ones keep it: dI = I_final - I_initial.
    """
    i_initial = np.asarray(i_initial, float)
    i_final = np.asarray(i_final, float)
    if i_initial.shape[-1] != params.n_dof or i_final.shape[-1] != params.n_dof:
        raise ValueError("invariant vectors must have n_dof entries")
    factor = np.ones(params.n_dof)
    for k in condensate_dofs:
        factor[k] = 0.5
    return i_final - factor * i_initial


def dominant_frequency(tt, y) -> float:
    """Angular frequency of the strongest spectral peak of y(t).

    Uses a Hann window and parabolic interpolation of the log magnitude;
    samples must be uniformly spaced.
    """
    tt = np.asarray(tt, float)
    y = np.asarray(y, float)
    dt = np.diff(tt)
    if dt.size < 7 or not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise ValueError("dominant_frequency needs uniform sampling")
    yw = (y - np.mean(y)) * np.hanning(y.size)
    mag = np.abs(np.fft.rfft(yw))
    k = int(np.argmax(mag[1:]) + 1)
    if 1 <= k < mag.size - 1 and mag[k - 1] > 0 and mag[k + 1] > 0:
        la, lb, lc = np.log(mag[k - 1]), np.log(mag[k]), np.log(mag[k + 1])
        denom = la - 2.0 * lb + lc
        delta = 0.5 * (la - lc) / denom if denom != 0 else 0.0
    else:
        delta = 0.0
    freq = (k + delta) / (y.size * dt[0])
    return float(2.0 * np.pi * freq)
