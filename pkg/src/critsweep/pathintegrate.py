"""Evolution along piecewise-linear paths in the (t, eps) plane.

A path is a list of waypoints; on each straight segment the state obeys

    dz/dsigma = tdot * J grad(H) + epsdot * J grad(H'),

with (tdot, epsdot) the constant segment velocity and sigma in [0, 1] the
segment parameter.  Three schemes are available per segment:

  splitting4        4th-order explicit symplectic splitting (Yoshida
                    composition of velocity Verlet, stage-time evaluation
                    of the potential).  Only valid on constant-eps
                    segments, where the flow is kinetic + potential.
  implicit_midpoint symplectic one-leg midpoint rule with fixed-point
                    iteration; handles the non-separable H' flow.
  rk_adaptive       high-order adaptive Runge-Kutta (scipy DOP853) at a
                    requested local tolerance.

The default ("auto") picks splitting4 on horizontal segments and
implicit_midpoint elsewhere.  Step sizes are measured in the dominant
coordinate of the segment (t for horizontal, eps for vertical legs).

All fixed-step integrators accept batched states of shape (..., N); a
divergence in any batch lane raises for the whole call (ensembles that
need lane isolation use their own kernels).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import model
from .model import ModelParams, PhaseState, TwoTimePoint

__all__ = [
    "SegmentSettings",
    "PathSpec",
    "TrajectoryRecord",
    "IntegrationError",
    "evolve_segment",
    "evolve_path",
    "physical_path",
    "detour_path",
    "splitting4_step",
    "implicit_midpoint_step",
]

SCHEMES = ("auto", "splitting4", "implicit_midpoint", "rk_adaptive")

# Yoshida 4th-order triple-jump composition of velocity Verlet
_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_W0 = 1.0 - 2.0 * _W1
# merged kick weights and their stage offsets (fractions of the step)
_KICK_W = np.array([_W1 / 2.0, (_W1 + _W0) / 2.0, (_W0 + _W1) / 2.0, _W1 / 2.0])
_KICK_C = np.array([0.0, _W1, _W1 + _W0, 1.0])
_DRIFT_W = np.array([_W1, _W0, _W1])

DIVERGENCE_LIMIT = 1.0e6


class IntegrationError(RuntimeError):
    """Integration failed; carries the (t, eps) location of the failure."""

    def __init__(self, msg, t=None, eps=None):
        if t is not None:
            msg = f"{msg} (at t = {t:.6g}, eps = {eps:.6g})"
        super().__init__(msg)
        self.t = t
        self.eps = eps


@dataclass(frozen=True)
class SegmentSettings:
    """Integrator selection for one path segment."""

    scheme: str = "auto"
    step: float = 0.001     # fixed-step size in the dominant coordinate
    tol: float = 1e-10      # local tolerance for rk_adaptive
    max_fp_iter: int = 100  # fixed-point iteration cap for implicit_midpoint

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not (self.step > 0):
            raise ValueError("step must be positive")
        if not (self.tol > 0):
            raise ValueError("tol must be positive")

    def resolve(self, a: TwoTimePoint, b: TwoTimePoint) -> str:
        if self.scheme != "auto":
            if self.scheme == "splitting4" and b.eps != a.eps:
                raise ValueError("splitting4 is only valid on constant-eps segments")
            return self.scheme
        return "splitting4" if b.eps == a.eps else "implicit_midpoint"


@dataclass(frozen=True)
class PathSpec:
    """Piecewise-linear route through the (t, eps) plane."""

    waypoints: tuple[TwoTimePoint, ...]
    settings: tuple[SegmentSettings, ...] = ()

    def __post_init__(self):
        wp = tuple(self.waypoints)
        if len(wp) < 2:
            raise ValueError("a path needs at least two waypoints")
        for a, b in zip(wp, wp[1:]):
            if a.t == b.t and a.eps == b.eps:
                raise ValueError("consecutive waypoints must differ")
        st = tuple(self.settings) or (SegmentSettings(),) * (len(wp) - 1)
        if len(st) == 1 and len(wp) > 2:
            st = st * (len(wp) - 1)
        if len(st) != len(wp) - 1:
            raise ValueError(
                f"need {len(wp) - 1} per-segment settings, got {len(st)}"
            )
        for (a, b), s in zip(zip(wp, wp[1:]), st):
            s.resolve(a, b)  # raises on splitting4 over varying eps
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "settings", st)

    @property
    def n_segments(self) -> int:
        return len(self.waypoints) - 1

    def segment(self, i: int):
        return self.waypoints[i], self.waypoints[i + 1], self.settings[i]

    def reversed(self) -> "PathSpec":
        return PathSpec(tuple(reversed(self.waypoints)), tuple(reversed(self.settings)))


def physical_path(params: ModelParams, t_start: float, t_end: float,
                  eps: float | None = None,
                  settings: SegmentSettings | None = None) -> PathSpec:
    """The physical sweep: t from t_start to t_end at fixed eps."""
    eps = params.epsilon if eps is None else eps
    return PathSpec(
        (TwoTimePoint(t_start, eps), TwoTimePoint(t_end, eps)),
        (settings or SegmentSettings(),),
    )


def detour_path(params: ModelParams, t_start: float, t_end: float,
                eps_high: float, eps: float | None = None,
                settings: SegmentSettings | tuple | None = None) -> PathSpec:
    """Three-leg detour: lift eps at t_start, sweep t at eps_high, lower at t_end."""
    eps = params.epsilon if eps is None else eps
    wp = (
        TwoTimePoint(t_start, eps),
        TwoTimePoint(t_start, eps_high),
        TwoTimePoint(t_end, eps_high),
        TwoTimePoint(t_end, eps),
    )
    if settings is None:
        st = ()
    elif isinstance(settings, SegmentSettings):
        st = (settings,) * 3
    else:
        st = tuple(settings)
    return PathSpec(wp, st)


# ---------------------------------------------------------------------------
# low-level steppers


def _force_H(params, x, t, eps):
    """-dV/dX for the primary Hamiltonian (V = -t|X|^2/2 + S^2/2 + eps e.X^2)."""
    e = params.e_arr
    s2 = np.sum(x * x, axis=-1, keepdims=True)
    return (t - 2.0 * s2 - 2.0 * eps * e) * x


def splitting4_step(params: ModelParams, x, p, t, h, eps):
    """One 4th-order symplectic splitting step of the pure-t flow.

    Advances (x, p) from time t to t + h; the potential is evaluated at the
    composition stage times, which preserves order 4 for the explicitly
    time-dependent quadratic term.
    """
    x = x + 0.0
    p = p + h * _KICK_W[0] * _force_H(params, x, t, eps)
    for i in range(3):
        x = x + h * _DRIFT_W[i] * p
        p = p + h * _KICK_W[i + 1] * _force_H(params, x, t + h * _KICK_C[i + 1], eps)
    return x, p


def _flow_rhs(params, x, p, t, eps, tdot, epsdot):
    """dz/dsigma for the two-Hamiltonian generator tdot*H + epsdot*H'."""
    hx, hp = model.grad_H(params, x, p=p, t=t, eps=eps)
    dx = tdot * hp
    dp = -tdot * hx
    if epsdot != 0.0:
        gx, gp = model.grad_Hprime(params, x, p=p, t=t, eps=eps)
        dx = dx + epsdot * gp
        dp = dp - epsdot * gx
    return dx, dp


def implicit_midpoint_step(params: ModelParams, x, p, sigma, h, a, b,
                           fp_tol=1e-13, max_iter=100):
    """One implicit-midpoint step of the combined segment flow.

    sigma is the segment parameter before the step; (a, b) are the segment
    endpoints.  Fixed-point iteration on the midpoint state to fp_tol
    (relative to the state scale).
    """
    tdot = b.t - a.t
    epsdot = b.eps - a.eps
    sm = sigma + 0.5 * h
    tm = a.t + sm * tdot
    em = a.eps + sm * epsdot
    if em <= 0:
        raise IntegrationError("segment crossed the eps = 0 singularity", tm, em)
    xm, pm = x, p
    scale = 1.0 + max(float(np.max(np.abs(x))), float(np.max(np.abs(p))))
    for _ in range(max_iter):
        dx, dp = _flow_rhs(params, xm, pm, tm, em, tdot, epsdot)
        xn = x + 0.5 * h * dx
        pn = p + 0.5 * h * dp
        delta = max(float(np.max(np.abs(xn - xm))), float(np.max(np.abs(pn - pm))))
        xm, pm = xn, pn
        if delta <= fp_tol * scale:
            break
    else:
        raise IntegrationError(
            f"implicit midpoint failed to contract below {fp_tol:g} "
            f"in {max_iter} iterations; reduce the step", tm, em)
    return 2.0 * xm - x, 2.0 * pm - p


def _check_finite(x, p, t, eps):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise IntegrationError("state became non-finite", t, eps)
    if max(float(np.max(np.abs(x))), float(np.max(np.abs(p)))) > DIVERGENCE_LIMIT:
        raise IntegrationError(f"state exceeded |z| = {DIVERGENCE_LIMIT:g}", t, eps)


def _integrate_fixed(params, x, p, a, b, settings, scheme, sample_sigmas):
    """Fixed-step integration of one segment, recording at snapped sigmas."""
    tdot = b.t - a.t
    epsdot = b.eps - a.eps
    span = max(abs(tdot), abs(epsdot))
    n_steps = max(1, int(np.ceil(span / settings.step)))
    h = 1.0 / n_steps  # in sigma units
    # snap requested sample points to step boundaries
    take = set()
    if len(sample_sigmas):
        idx = np.clip(np.rint(np.asarray(sample_sigmas) * n_steps), 0, n_steps)
        take = set(int(i) for i in np.unique(idx))
    samples = []
    if 0 in take:
        samples.append((0.0, a.t, a.eps, np.array(x, copy=True), np.array(p, copy=True)))
    check_every = max(1, n_steps // 64)
    for n in range(n_steps):
        sigma = n * h
        if scheme == "splitting4":
            t_here = a.t + sigma * tdot
            x, p = splitting4_step(params, x, p, t_here, h * tdot, b.eps)
        else:
            x, p = implicit_midpoint_step(params, x, p, sigma, h, a, b,
                                          max_iter=settings.max_fp_iter)
        if (n + 1) % check_every == 0 or n + 1 == n_steps:
            _check_finite(x, p, a.t + (n + 1) * h * tdot, a.eps + (n + 1) * h * epsdot)
        if (n + 1) in take:
            s = (n + 1) * h
            samples.append((s, a.t + s * tdot, a.eps + s * epsdot,
                            np.array(x, copy=True), np.array(p, copy=True)))
    return x, p, samples, {"n_steps": n_steps, "scheme": scheme}


def _integrate_adaptive(params, x, p, a, b, settings, sample_sigmas):
    """DOP853 on the segment generator, sigma in [0, 1]."""
    shape = x.shape
    n = x.size
    tdot = b.t - a.t
    epsdot = b.eps - a.eps

    def rhs(sigma, z):
        xx = z[:n].reshape(shape)
        pp = z[n:].reshape(shape)
        t_here = a.t + sigma * tdot
        eps_here = a.eps + sigma * epsdot
        if eps_here <= 0:
            raise IntegrationError("segment crossed the eps = 0 singularity",
                                   t_here, eps_here)
        dx, dp = _flow_rhs(params, xx, pp, t_here, eps_here, tdot, epsdot)
        return np.concatenate([dx.ravel(), dp.ravel()])

    z0 = np.concatenate([np.asarray(x, float).ravel(), np.asarray(p, float).ravel()])
    req = np.unique(np.clip(np.asarray(sample_sigmas, float), 0.0, 1.0)) \
        if len(sample_sigmas) else np.empty(0)
    t_eval = np.unique(np.concatenate([req, [1.0]]))
    sol = solve_ivp(rhs, (0.0, 1.0), z0, method="DOP853",
                    rtol=settings.tol, atol=settings.tol, t_eval=t_eval)
    if not sol.success:
        raise IntegrationError(f"adaptive integrator failed: {sol.message}",
                               a.t, a.eps)
    final_requested = req.size > 0 and req[-1] == 1.0
    samples = []
    for i, s in enumerate(sol.t):
        if s == 1.0 and not final_requested:
            continue
        zz = sol.y[:, i]
        samples.append((float(s), a.t + s * tdot, a.eps + s * epsdot,
                        zz[:n].reshape(shape).copy(), zz[n:].reshape(shape).copy()))
    zend = sol.y[:, -1]
    xf = zend[:n].reshape(shape).copy()
    pf = zend[n:].reshape(shape).copy()
    _check_finite(xf, pf, b.t, b.eps)
    return xf, pf, samples, {"nfev": int(sol.nfev), "scheme": "rk_adaptive"}


def evolve_segment(params: ModelParams, state: PhaseState, a: TwoTimePoint,
                   b: TwoTimePoint, settings: SegmentSettings | None = None) -> PhaseState:
    """Evolve a state along one straight segment of the (t, eps) plane.

    The state must sit at the segment start.  Returns the state at ``b``.
    A zero-length segment returns the state unchanged.
    """
    settings = settings or SegmentSettings()
    if not (np.isclose(state.t, a.t) and np.isclose(state.eps, a.eps)):
        raise ValueError(
            f"state is at (t, eps) = ({state.t}, {state.eps}), segment starts at "
            f"({a.t}, {a.eps})")
    if a.t == b.t and a.eps == b.eps:
        return state
    scheme = settings.resolve(a, b)
    if scheme == "rk_adaptive":
        x, p, _, _ = _integrate_adaptive(params, state.x, state.p, a, b, settings, [])
    else:
        x, p, _, _ = _integrate_fixed(params, state.x, state.p, a, b, settings,
                                      scheme, [])
    return PhaseState(x=x, p=p, t=b.t, eps=b.eps)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Sampled states along a path, ordered by global progress in [0, 1]."""

    sigma: np.ndarray      # (M,) global path progress
    t: np.ndarray          # (M,)
    eps: np.ndarray        # (M,)
    x: np.ndarray          # (M, N)
    p: np.ndarray          # (M, N)
    params: ModelParams
    path: PathSpec
    step_stats: tuple = ()
    energies: tuple[np.ndarray, np.ndarray] | None = None  # (H, H')

    @property
    def n_samples(self) -> int:
        return self.sigma.size

    def state(self, i: int) -> PhaseState:
        return PhaseState(x=self.x[i], p=self.p[i], t=float(self.t[i]),
                          eps=float(self.eps[i]))

    def window(self, t_lo: float, t_hi: float) -> "TrajectoryRecord":
        """Sub-record with t in [t_lo, t_hi]."""
        m = (self.t >= t_lo) & (self.t <= t_hi)
        en = None
        if self.energies is not None:
            en = (self.energies[0][m], self.energies[1][m])
        return TrajectoryRecord(self.sigma[m], self.t[m], self.eps[m],
                                self.x[m], self.p[m], self.params, self.path,
                                self.step_stats, en)

    def compute_energies(self) -> tuple[np.ndarray, np.ndarray]:
        if self.energies is not None:
            return self.energies
        h = np.array([model.eval_H(self.params, self.x[i], p=self.p[i],
                                   t=float(self.t[i]), eps=float(self.eps[i]))
                      for i in range(self.n_samples)])
        hp = np.array([model.eval_Hprime(self.params, self.x[i], p=self.p[i],
                                         t=float(self.t[i]), eps=float(self.eps[i]))
                       if self.eps[i] > 0 else np.nan
                       for i in range(self.n_samples)])
        return h, hp

    def to_csv(self, fileobj=None) -> str | None:
        """CSV with header sigma,t,eps,x1..xN,p1..pN,H,Hprime."""
        n = self.x.shape[1]
        h, hp = self.compute_energies()
        cols = ["sigma", "t", "eps"]
        cols += [f"x{k + 1}" for k in range(n)]
        cols += [f"p{k + 1}" for k in range(n)]
        cols += ["H", "Hprime"]
        data = np.column_stack([self.sigma, self.t, self.eps, self.x, self.p, h, hp])
        own = fileobj is None
        buf = io.StringIO() if own else fileobj
        buf.write(",".join(cols) + "\n")
        np.savetxt(buf, data, delimiter=",", fmt="%.17g")
        return buf.getvalue() if own else None


def evolve_path(params: ModelParams, state: PhaseState, path: PathSpec,
                n_samples: int = 10_000, record_energies: bool = False) -> TrajectoryRecord:
    """Chain segment evolutions, recording ~n_samples evenly spaced states.

    Sampling is even in global progress (equal weight per segment); fixed-step
    schemes snap samples to step boundaries and record the snapped location.
    """
    a0 = path.waypoints[0]
    if not (np.isclose(state.t, a0.t) and np.isclose(state.eps, a0.eps)):
        raise ValueError("state must start at the first waypoint")
    nseg = path.n_segments
    per_seg = max(2, int(np.ceil(n_samples / nseg)))
    sig, tt, ee, xs, ps = [], [], [], [], []
    stats = []
    x, p = state.x, state.p
    for i in range(nseg):
        a, b, st = path.segment(i)
        local = np.linspace(0.0, 1.0, per_seg + 1)
        if i > 0:
            local = local[1:]  # segment start duplicates previous end
        scheme = st.resolve(a, b)
        if scheme == "rk_adaptive":
            x, p, samples, info = _integrate_adaptive(params, x, p, a, b, st, local)
        else:
            x, p, samples, info = _integrate_fixed(params, x, p, a, b, st, scheme, local)
        stats.append(info)
        for s, t_here, eps_here, xx, pp in samples:
            sig.append((i + s) / nseg)
            tt.append(t_here)
            ee.append(eps_here)
            xs.append(xx)
            ps.append(pp)
    rec = TrajectoryRecord(
        sigma=np.asarray(sig), t=np.asarray(tt), eps=np.asarray(ee),
        x=np.asarray(xs), p=np.asarray(ps), params=params, path=path,
        step_stats=tuple(stats),
    )
    if record_energies:
        h, hp = rec.compute_energies()
        rec = TrajectoryRecord(rec.sigma, rec.t, rec.eps, rec.x, rec.p, params,
                               path, rec.step_stats, (h, hp))
    return rec
