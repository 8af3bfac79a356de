"""Model definition: the Hamiltonian pair, phase-space state, and unit conversions.

The dimensionless system has N degrees of freedom (X_k, P_k) and lives on a
two-parameter plane (t, eps).  The primary Hamiltonian is

    H = |P|^2/2 - t |X|^2/2 + (|X|^2)^2/2 + eps * sum_k e_k X_k^2

with e_1 < e_2 < ... < e_N fixed mass-splitting coefficients.  Its partner

    H' = t*A - 2*eps*B - C - A*S + |L|^2 / (2*eps)

with
    A = sum_k e_k X_k^2,   B = sum_k e_k^2 X_k^2,
    C = sum_k e_k P_k^2,   S = |X|^2,
    |L|^2 = sum_{j<k} (P_k X_j - P_j X_k)^2 = S*|P|^2 - (X.P)^2,

generates commuting flow in the eps direction ({H, H'} = 0 and
dH/deps = dH'/dt, both equal to A).  H' is singular at eps = 0.

For N = 2 this partner reduces to

    H' = t(e1 X1^2 + e2 X2^2) - 2 eps (e1^2 X1^2 + e2^2 X2^2)
         - e1 (P1^2 + X1^4 + X1^2 X2^2) - e2 (P2^2 + X1^2 X2^2 + X2^4)
         + L^2 / (2 eps),      L = P2 X1 - P1 X2.

All evaluation functions accept batched states: x and p may have shape
(..., N) and results broadcast over the leading axes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParams",
    "PhysicalParams",
    "PhaseState",
    "TwoTimePoint",
    "Scales",
    "eval_H",
    "eval_Hprime",
    "grad_H",
    "grad_Hprime",
    "eval_Hprime_literal",
    "grad_Hprime_literal",
    "angular_momentum_sq",
    "to_dimensionless",
    "to_physical",
    "action_to_physical",
    "action_from_physical",
    "initial_invariant",
    "quench_rate_parameter",
    "excitations_from_delta_I",
]


class SingularEpsilonError(ValueError):
    """Raised when the partner Hamiltonian is evaluated at eps <= 0."""


@dataclass(frozen=True)
class PhysicalParams:
    """Physical parameters of the underlying field model.

    ``eps_k`` holds the symmetry-breaking energies (the products of the
    breaking scale with the per-component coefficients); only these products
    enter the dynamics.  ``hbar`` sets the vacuum initial action.
    """

    mass: float
    rate: float          # sweep rate beta = k'(0)
    coupling: float      # quartic coupling g
    hbar: float
    eps_k: tuple[float, ...]

    def __post_init__(self):
        for name in ("mass", "rate", "coupling", "hbar"):
            v = getattr(self, name)
            if not (v > 0):
                raise ValueError(f"{name} must be strictly positive, got {v}")
        object.__setattr__(self, "eps_k", tuple(float(v) for v in self.eps_k))
        if len(self.eps_k) < 1:
            raise ValueError("eps_k must have at least one entry")

    def weak_breaking(self, margin: float = 10.0) -> bool:
        """Diagnostic: is the breaking scale small against sqrt(rate) and coupling?

        True when margin * max|eps_k| <= min(sqrt(rate), coupling).  Advisory
        only; nothing enforces this regime.
        """
        scale = max(abs(v) for v in self.eps_k)
        return margin * scale <= min(math.sqrt(self.rate), self.coupling)


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless model definition.

    e must be strictly increasing; epsilon is the nominal symmetry-breaking
    scale of the physical path (states carry their own current eps, so
    evaluation at other eps values is still possible).
    """

    epsilon: float
    e: tuple[float, ...]
    physical: PhysicalParams | None = None

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0 (H' is singular at 0), got {self.epsilon}")
        object.__setattr__(self, "e", tuple(float(v) for v in self.e))
        if len(self.e) < 1:
            raise ValueError("e must have at least one entry")
        if any(a >= b for a, b in zip(self.e, self.e[1:])):
            raise ValueError(f"e must be strictly increasing, got {self.e}")

    @property
    def n_dof(self) -> int:
        return len(self.e)

    @property
    def e_arr(self) -> np.ndarray:
        return np.asarray(self.e, dtype=float)

    def to_config_dict(self) -> dict:
        """Flat key/value form (the on-disk config contract)."""
        d = {
            "n_dof": self.n_dof,
            "epsilon": self.epsilon,
            "e": ", ".join(repr(v) for v in self.e),
        }
        if self.physical is not None:
            d.update(
                m=self.physical.mass,
                beta=self.physical.rate,
                g=self.physical.coupling,
                hbar=self.physical.hbar,
            )
        return d

    @classmethod
    def from_config_dict(cls, d: dict) -> "ModelParams":
        e = d["e"]
        if isinstance(e, str):
            e = tuple(float(v) for v in e.replace(",", " ").split())
        else:
            e = tuple(float(v) for v in np.atleast_1d(e))
        if "n_dof" in d and int(d["n_dof"]) != len(e):
            raise ValueError(f"n_dof = {d['n_dof']} inconsistent with e of length {len(e)}")
        phys = None
        if any(k in d for k in ("m", "beta", "g", "hbar")):
            phys = PhysicalParams(
                mass=float(d["m"]),
                rate=float(d["beta"]),
                coupling=float(d["g"]),
                hbar=float(d.get("hbar", 1.0)),
                eps_k=tuple(float(d["epsilon"]) * v for v in e),
            )
        return cls(epsilon=float(d["epsilon"]), e=e, physical=phys)


@dataclass(frozen=True)
class TwoTimePoint:
    """A point in the (t, eps) evolution plane; eps > 0 away from the H' singularity."""

    t: float
    eps: float

    def __post_init__(self):
        if not (self.eps > 0):
            raise ValueError(f"eps must be > 0, got {self.eps}")

    def as_array(self) -> np.ndarray:
        return np.array([self.t, self.eps])


@dataclass(frozen=True)
class PhaseState:
    """Phase-space point tagged with its location in the (t, eps) plane."""

    x: np.ndarray
    p: np.ndarray
    t: float
    eps: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        p = np.array(self.p, dtype=float)
        if x.shape != p.shape:
            raise ValueError(f"x and p must have the same shape, got {x.shape} vs {p.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise ValueError("state entries must be finite")
        x.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)

    @property
    def n_dof(self) -> int:
        return self.x.shape[-1]

    def point(self) -> TwoTimePoint:
        return TwoTimePoint(self.t, self.eps)


def _check_dims(params: ModelParams, x: np.ndarray):
    if x.shape[-1] != params.n_dof:
        raise ValueError(
            f"state has {x.shape[-1]} degrees of freedom, params expect {params.n_dof}"
        )


def _as_xp(params, state_or_x, p=None, t=None, eps=None):
    """Normalize the (params, state) / (params, x, p, t, eps) calling conventions."""
    if isinstance(state_or_x, PhaseState):
        s = state_or_x
        x, p, t, eps = s.x, s.p, s.t, s.eps
    else:
        x = np.asarray(state_or_x, dtype=float)
        p = np.asarray(p, dtype=float)
    _check_dims(params, x)
    return x, p, t, eps


def eval_H(params: ModelParams, state, p=None, t=None, eps=None):
    """H = |P|^2/2 - t |X|^2/2 + (|X|^2)^2/2 + eps * sum_k e_k X_k^2."""
    x, p, t, eps = _as_xp(params, state, p, t, eps)
    e = params.e_arr
    s2 = np.sum(x * x, axis=-1)
    return (
        0.5 * np.sum(p * p, axis=-1)
        - 0.5 * t * s2
        + 0.5 * s2 * s2
        + eps * np.sum(e * x * x, axis=-1)
    )


def grad_H(params: ModelParams, state, p=None, t=None, eps=None):
    """Analytic (dH/dX, dH/dP)."""
    x, p, t, eps = _as_xp(params, state, p, t, eps)
    e = params.e_arr
    s2 = np.sum(x * x, axis=-1, keepdims=True)
    dx = (-t + 2.0 * s2 + 2.0 * eps * e) * x
    return dx, p.copy()


def angular_momentum_sq(x: np.ndarray, p: np.ndarray):
    """|L|^2 = sum_{j<k} (P_k X_j - P_j X_k)^2 = |X|^2 |P|^2 - (X.P)^2."""
    s2 = np.sum(x * x, axis=-1)
    p2 = np.sum(p * p, axis=-1)
    xp = np.sum(x * p, axis=-1)
    return s2 * p2 - xp * xp


def eval_Hprime(params: ModelParams, state, p=None, t=None, eps=None):
    """Partner Hamiltonian H' (corrected N-dimensional form, see module docstring)."""
    x, p, t, eps = _as_xp(params, state, p, t, eps)
    if not np.all(np.asarray(eps) > 0):
        raise SingularEpsilonError(f"H' is singular at eps <= 0, got eps = {eps}")
    e = params.e_arr
    x2 = x * x
    a = np.sum(e * x2, axis=-1)
    b = np.sum(e * e * x2, axis=-1)
    c = np.sum(e * p * p, axis=-1)
    s2 = np.sum(x2, axis=-1)
    return t * a - 2.0 * eps * b - c - a * s2 + angular_momentum_sq(x, p) / (2.0 * eps)


def grad_Hprime(params: ModelParams, state, p=None, t=None, eps=None):
    """Analytic (dH'/dX, dH'/dP), including the angular-momentum coupling.

    dH'/dX_m = 2 t e_m X_m - 4 eps e_m^2 X_m - 2 e_m X_m S - 2 A X_m
               + (X_m |P|^2 - P_m (X.P)) / eps
    dH'/dP_m = -2 e_m P_m + (P_m S - X_m (X.P)) / eps
    """
    x, p, t, eps = _as_xp(params, state, p, t, eps)
    if not np.all(np.asarray(eps) > 0):
        raise SingularEpsilonError(f"H' is singular at eps <= 0, got eps = {eps}")
    e = params.e_arr
    x2 = x * x
    a = np.sum(e * x2, axis=-1, keepdims=True)
    s2 = np.sum(x2, axis=-1, keepdims=True)
    p2 = np.sum(p * p, axis=-1, keepdims=True)
    xp = np.sum(x * p, axis=-1, keepdims=True)
    dx = (2.0 * t * e - 4.0 * eps * e * e - 2.0 * e * s2) * x - 2.0 * a * x \
        + (x * p2 - p * xp) / eps
    dp = -2.0 * e * p + (p * s2 - x * xp) / eps
    return dx, dp


def eval_Hprime_literal(params: ModelParams, state, p=None, t=None, eps=None):
    """Partner candidate with the quartic term exactly as printed for general N.

    Differs from :func:`eval_Hprime` by using sum_k e_k X_k^4 * S for the
    quartic part.  It does not commute with H for N >= 2; it is kept so the
    pair-verification report can document that failure.
    """
    x, p, t, eps = _as_xp(params, state, p, t, eps)
    if not np.all(np.asarray(eps) > 0):
        raise SingularEpsilonError(f"H' is singular at eps <= 0, got eps = {eps}")
    e = params.e_arr
    x2 = x * x
    a = np.sum(e * x2, axis=-1)
    b = np.sum(e * e * x2, axis=-1)
    c = np.sum(e * p * p, axis=-1)
    s2 = np.sum(x2, axis=-1)
    d4 = np.sum(e * x2 * x2, axis=-1)
    return t * a - 2.0 * eps * b - c - d4 * s2 + angular_momentum_sq(x, p) / (2.0 * eps)


def grad_Hprime_literal(params: ModelParams, state, p=None, t=None, eps=None):
    x, p, t, eps = _as_xp(params, state, p, t, eps)
    if not np.all(np.asarray(eps) > 0):
        raise SingularEpsilonError(f"H' is singular at eps <= 0, got eps = {eps}")
    e = params.e_arr
    x2 = x * x
    s2 = np.sum(x2, axis=-1, keepdims=True)
    d4 = np.sum(e * x2 * x2, axis=-1, keepdims=True)
    p2 = np.sum(p * p, axis=-1, keepdims=True)
    xp = np.sum(x * p, axis=-1, keepdims=True)
    dx = (2.0 * t * e - 4.0 * eps * e * e) * x - 4.0 * e * x2 * x * s2 - 2.0 * d4 * x \
        + (x * p2 - p * xp) / eps
    dp = -2.0 * e * p + (p * s2 - x * xp) / eps
    return dx, dp


@dataclass(frozen=True)
class Scales:
    """Rescaling factors between physical and dimensionless variables.

    t_phys = lam * t,  phi_k = u * X_k,  pi_k = v * P_k.
    """

    lam: float
    u: float
    v: float


def to_dimensionless(phys: PhysicalParams) -> tuple[ModelParams, Scales]:
    """Rescale physical parameters so the symmetric terms have unit coefficients.

    lam = (m/beta)^(1/3), u = m^(1/6) beta^(1/3) / sqrt(g),
    v = m^(5/6) beta^(2/3) / sqrt(g), and the breaking energies map to
    eps * e_k = eps_k / (beta^2 m)^(1/3).  The scalar/vector split of that
    product is conventional; this function fixes epsilon = 1 so that e_k
    carries the full rescaled breaking energy.
    """
    m, beta, g = phys.mass, phys.rate, phys.coupling
    lam = (m / beta) ** (1.0 / 3.0)
    u = m ** (1.0 / 6.0) * beta ** (1.0 / 3.0) / math.sqrt(g)
    v = m ** (5.0 / 6.0) * beta ** (2.0 / 3.0) / math.sqrt(g)
    e = tuple(ek / (beta * beta * m) ** (1.0 / 3.0) for ek in phys.eps_k)
    return ModelParams(epsilon=1.0, e=e, physical=phys), Scales(lam, u, v)


def to_physical(params: ModelParams, scales: Scales) -> PhysicalParams:
    """Inverse of :func:`to_dimensionless`; roundtrip is the identity."""
    if params.physical is None:
        raise ValueError("params carries no physical parameters to restore")
    phys = params.physical
    m, beta = phys.mass, phys.rate
    eps_k = tuple(params.epsilon * ek * (beta * beta * m) ** (1.0 / 3.0) for ek in params.e)
    return PhysicalParams(mass=m, rate=beta, coupling=phys.coupling,
                          hbar=phys.hbar, eps_k=eps_k)


def action_to_physical(phys: PhysicalParams, i_value):
    """Dimensionless action -> physical action: I_phys = u*v*I = (m beta / g) I."""
    return np.asarray(i_value) * phys.mass * phys.rate / phys.coupling


def action_from_physical(phys: PhysicalParams, i_phys):
    return np.asarray(i_phys) * phys.coupling / (phys.mass * phys.rate)


def initial_invariant(phys: PhysicalParams) -> float:
    """Vacuum initial action in dimensionless units: I^(-inf) = hbar g / (2 beta m)."""
    return phys.hbar * phys.coupling / (2.0 * phys.rate * phys.mass)


def quench_rate_parameter(phys: PhysicalParams) -> float:
    """Gamma = beta m / (g hbar); controls the excitation numbers."""
    return phys.rate * phys.mass / (phys.coupling * phys.hbar)


def excitations_from_delta_I(phys: PhysicalParams, delta_I):
    """Nonadiabatic excitation numbers n_k = beta m dI_k / (hbar g)."""
    return quench_rate_parameter(phys) * np.asarray(delta_I, dtype=float)
